/** Client-side recomposition of the losslessly encoded combined map.
 *
 * The service's encoded.png stores, per patch, R = quantized TIL
 * probability, G = quantized cancer probability, B = 255 for tissue / 0 for
 * glass. Rebuilding the display locally means threshold changes and channel
 * toggles never refetch anything.
 */

export const TIL_COLOR: readonly [number, number, number] = [255, 0, 0];
export const TUMOR_COLOR: readonly [number, number, number] = [255, 255, 0];
export const TISSUE_COLOR: readonly [number, number, number] = [128, 128, 128];
export const BACKGROUND_COLOR: readonly [number, number, number] = [255, 255, 255];

export interface EncodedCombined {
  cols: number;
  rows: number;
  /** Row-major channel planes, length cols*rows, values 0..255. */
  r: Uint8Array;
  g: Uint8Array;
  b: Uint8Array;
}

export interface ChannelToggles {
  til: boolean;
  tumor: boolean;
  tissue: boolean;
}

export interface CompositeResult {
  /** RGBA, row-major, length cols*rows*4 (drop-in for ImageData.data). */
  rgba: Uint8ClampedArray;
  /** Patches painted red or yellow (the visible positive area). */
  positiveArea: number;
  tilPositive: number;
  tumorPositive: number;
}

function assertUnit(name: string, value: number): void {
  if (!(value >= 0 && value <= 1)) {
    throw new RangeError(`${name} must lie in [0, 1], got ${value}`);
  }
}

/** Extract channel planes from decoded RGBA pixels (e.g. canvas ImageData). */
export function planesFromRgba(
  pixels: Uint8ClampedArray | Uint8Array,
  cols: number,
  rows: number,
): EncodedCombined {
  const n = cols * rows;
  if (pixels.length !== n * 4) {
    throw new RangeError(`expected ${n * 4} RGBA bytes, got ${pixels.length}`);
  }
  const r = new Uint8Array(n);
  const g = new Uint8Array(n);
  const b = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    r[i] = pixels[i * 4]!;
    g[i] = pixels[i * 4 + 1]!;
    b[i] = pixels[i * 4 + 2]!;
  }
  return { cols, rows, r, g, b };
}

/** Red over yellow over grey over white, honoring toggles and thresholds. */
export function composeDisplay(
  encoded: EncodedCombined,
  toggles: ChannelToggles,
  tilThreshold: number,
  tumorThreshold: number,
): CompositeResult {
  assertUnit("tilThreshold", tilThreshold);
  assertUnit("tumorThreshold", tumorThreshold);
  const n = encoded.cols * encoded.rows;
  const rgba = new Uint8ClampedArray(n * 4);
  let positiveArea = 0;
  let tilPositive = 0;
  let tumorPositive = 0;
  for (let i = 0; i < n; i++) {
    const tilOn = toggles.til && encoded.r[i]! / 255 >= tilThreshold;
    const tumorOn = toggles.tumor && encoded.g[i]! / 255 >= tumorThreshold;
    const tissueOn = toggles.tissue && encoded.b[i]! === 255;
    let color: readonly [number, number, number];
    if (tilOn) {
      color = TIL_COLOR;
    } else if (tumorOn) {
      color = TUMOR_COLOR;
    } else if (tissueOn) {
      color = TISSUE_COLOR;
    } else {
      color = BACKGROUND_COLOR;
    }
    if (tilOn) tilPositive++;
    if (tumorOn) tumorPositive++;
    if (tilOn || tumorOn) positiveArea++;
    rgba[i * 4] = color[0];
    rgba[i * 4 + 1] = color[1];
    rgba[i * 4 + 2] = color[2];
    rgba[i * 4 + 3] = 255;
  }
  return { rgba, positiveArea, tilPositive, tumorPositive };
}

/** Visible positive patches of a single-map heatmap at a threshold.
 *
 * Mirrors the service's render rule (value >= t shows, below hides) on the
 * quantized probabilities, so slider moves can be previewed locally.
 */
export function positiveAreaAtThreshold(
  quantized: Uint8Array,
  coverage: Uint8Array,
  t: number,
): number {
  assertUnit("threshold", t);
  if (quantized.length !== coverage.length) {
    throw new RangeError("quantized and coverage lengths differ");
  }
  let area = 0;
  for (let i = 0; i < quantized.length; i++) {
    if (coverage[i] !== 0 && quantized[i]! / 255 >= t) area++;
  }
  return area;
}
