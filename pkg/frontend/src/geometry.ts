/** Patch-grid geometry mirroring the service's grid semantics.
 *
 * A slide of base_width x base_height pixels is partitioned into square
 * patches of patchSize pixels anchored at (0, 0); the last row/column is
 * clipped at the slide edge. Heatmap renders are one pixel per patch, so a
 * heatmap pixel (px, py) IS the patch at column px, row py.
 */

export interface PatchRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface PatchIndex {
  row: number;
  col: number;
}

export class GridGeometry {
  readonly cols: number;
  readonly rows: number;

  constructor(
    readonly baseWidth: number,
    readonly baseHeight: number,
    readonly patchSize: number,
  ) {
    if (baseWidth <= 0 || baseHeight <= 0 || patchSize <= 0) {
      throw new RangeError("slide dimensions and patch size must be positive");
    }
    this.cols = Math.ceil(baseWidth / patchSize);
    this.rows = Math.ceil(baseHeight / patchSize);
  }

  contains(index: PatchIndex): boolean {
    return (
      Number.isInteger(index.row) &&
      Number.isInteger(index.col) &&
      index.row >= 0 &&
      index.row < this.rows &&
      index.col >= 0 &&
      index.col < this.cols
    );
  }

  /** Pixel rect of a patch, clipped at the slide edge. */
  patchRect(index: PatchIndex): PatchRect {
    if (!this.contains(index)) {
      throw new RangeError(`patch (${index.row}, ${index.col}) outside grid`);
    }
    const x = index.col * this.patchSize;
    const y = index.row * this.patchSize;
    return {
      x,
      y,
      w: Math.min(this.patchSize, this.baseWidth - x),
      h: Math.min(this.patchSize, this.baseHeight - y),
    };
  }

  /** Center of the patch's unclipped rect in base pixels. */
  patchCenter(index: PatchIndex): { cx: number; cy: number } {
    if (!this.contains(index)) {
      throw new RangeError(`patch (${index.row}, ${index.col}) outside grid`);
    }
    return {
      cx: (index.col + 0.5) * this.patchSize,
      cy: (index.row + 0.5) * this.patchSize,
    };
  }

  /** Patch under a base pixel, or null outside the slide. */
  indexForPixel(x: number, y: number): PatchIndex | null {
    if (x < 0 || y < 0 || x >= this.baseWidth || y >= this.baseHeight) {
      return null;
    }
    return {
      row: Math.floor(y / this.patchSize),
      col: Math.floor(x / this.patchSize),
    };
  }
}

/** Pyramid level dimensions: each level halves with ceiling rounding. */
export function levelDims(
  baseWidth: number,
  baseHeight: number,
  z: number,
): { w: number; h: number } {
  const f = 2 ** z;
  return { w: Math.ceil(baseWidth / f), h: Math.ceil(baseHeight / f) };
}

/** Levels until the whole slide fits a single tile (matches the service). */
export function pyramidLevels(
  baseWidth: number,
  baseHeight: number,
  tileSize = 256,
): number {
  let n = 1;
  let { w, h } = { w: baseWidth, h: baseHeight };
  while (w > tileSize || h > tileSize) {
    w = Math.ceil(w / 2);
    h = Math.ceil(h / 2);
    n += 1;
  }
  return n;
}

/** A click on a 1-px-per-patch heatmap names the patch directly. */
export function clickToPatch(
  geometry: GridGeometry,
  px: number,
  py: number,
): PatchIndex | null {
  const index = { row: Math.floor(py), col: Math.floor(px) };
  return geometry.contains(index) ? index : null;
}

/** Click on the heatmap -> base-pixel center the slide pane should jump to. */
export function clickToCenter(
  geometry: GridGeometry,
  px: number,
  py: number,
): { cx: number; cy: number } | null {
  const index = clickToPatch(geometry, px, py);
  return index === null ? null : geometry.patchCenter(index);
}

/** Zoom level whose scale shows about `targetPatches` patches across the
 * viewport; clamped to the pyramid range. */
export function zoomForPatchSpan(
  geometry: GridGeometry,
  viewportWidthPx: number,
  targetPatches = 32,
): number {
  const nLevels = pyramidLevels(geometry.baseWidth, geometry.baseHeight);
  const spanBasePx = targetPatches * geometry.patchSize;
  let best = 0;
  let bestErr = Infinity;
  for (let z = 0; z < nLevels; z++) {
    const err = Math.abs(spanBasePx / 2 ** z - viewportWidthPx);
    if (err < bestErr) {
      best = z;
      bestErr = err;
    }
  }
  return best;
}
