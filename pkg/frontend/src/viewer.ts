/** Linked dual-pane view: heatmap/combined map on the left, deep-zoom slide
 * tiles on the right, with click-to-zoom from map to slide. */

import type { AtlasClient, MapOut, SlideOut } from "./api.js";
import {
  composeDisplay,
  planesFromRgba,
  type ChannelToggles,
  type EncodedCombined,
} from "./composite.js";
import {
  clickToCenter,
  clickToPatch,
  GridGeometry,
  levelDims,
  zoomForPatchSpan,
  type PatchIndex,
} from "./geometry.js";
import { clampState, debounce, RequestGate, type ViewState } from "./state.js";

const TILE_SIZE = 256;

async function fetchBitmap(url: string): Promise<ImageBitmap> {
  const resp = await fetch(url);
  if (!resp.ok) throw new Error(`GET ${url} -> ${resp.status}`);
  return createImageBitmap(await resp.blob());
}

async function fetchRgba(
  url: string,
  cols: number,
  rows: number,
): Promise<Uint8ClampedArray> {
  const bitmap = await fetchBitmap(url);
  const canvas = document.createElement("canvas");
  canvas.width = cols;
  canvas.height = rows;
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas unsupported");
  ctx.drawImage(bitmap, 0, 0);
  return ctx.getImageData(0, 0, cols, rows).data;
}

export interface ViewerElements {
  mapCanvas: HTMLCanvasElement;
  slideCanvas: HTMLCanvasElement;
  thresholdSlider: HTMLInputElement;
  thresholdLabel: HTMLElement;
  toggleInputs: { til: HTMLInputElement; tumor: HTMLInputElement; tissue: HTMLInputElement };
  statusLine: HTMLElement;
}

export interface ViewerSelection {
  slide: SlideOut;
  map: MapOut;
  /** Present when a til+cancer pair exists on the slide: combined mode. */
  partnerMap: MapOut | null;
}

export class LinkedViewer {
  private geometry: GridGeometry | null = null;
  private selection: ViewerSelection | null = null;
  private encoded: EncodedCombined | null = null;
  private highlighted: PatchIndex | null = null;
  private readonly gate = new RequestGate();
  private readonly applyThresholdDebounced: (t: number) => void;

  constructor(
    private readonly els: ViewerElements,
    private readonly client: AtlasClient,
    private state: ViewState,
    private readonly onStateChange: (state: ViewState) => void,
  ) {
    this.applyThresholdDebounced = debounce((t: number) => {
      void this.applyThreshold(t);
    }, 150);
    els.mapCanvas.addEventListener("click", (ev) => this.handleMapClick(ev));
    els.thresholdSlider.addEventListener("input", () => {
      const t = Number(els.thresholdSlider.value);
      els.thresholdLabel.textContent = t.toFixed(2);
      this.applyThresholdDebounced(t);
    });
    for (const key of ["til", "tumor", "tissue"] as const) {
      els.toggleInputs[key].addEventListener("change", () => {
        this.setToggles({
          til: els.toggleInputs.til.checked,
          tumor: els.toggleInputs.tumor.checked,
          tissue: els.toggleInputs.tissue.checked,
        });
      });
    }
  }

  currentState(): ViewState {
    return this.state;
  }

  async show(selection: ViewerSelection): Promise<void> {
    this.selection = selection;
    this.geometry = new GridGeometry(
      selection.slide.base_width,
      selection.slide.base_height,
      selection.map.patch_size_px,
    );
    this.encoded = null;
    this.highlighted = null;
    this.state = clampState(
      {
        ...this.state,
        slideId: selection.slide.slide_id,
        mapId: selection.map.map_id,
        centerX: selection.slide.base_width / 2,
        centerY: selection.slide.base_height / 2,
      },
      { baseWidth: selection.slide.base_width, baseHeight: selection.slide.base_height },
    );
    this.syncControls();
    await Promise.all([this.redrawMapPane(), this.redrawSlidePane()]);
    this.emit();
  }

  private get combinedMode(): boolean {
    return this.selection?.partnerMap != null;
  }

  private tilTumorIds(): { til: string; tumor: string } | null {
    const sel = this.selection;
    if (sel === null || sel.partnerMap === null) return null;
    const a = sel.map;
    const b = sel.partnerMap;
    return a.label_kind === "til"
      ? { til: a.map_id, tumor: b.map_id }
      : { til: b.map_id, tumor: a.map_id };
  }

  private syncControls(): void {
    this.els.thresholdSlider.value = String(this.state.threshold);
    this.els.thresholdLabel.textContent = this.state.threshold.toFixed(2);
    this.els.toggleInputs.til.checked = this.state.toggles.til;
    this.els.toggleInputs.tumor.checked = this.state.toggles.tumor;
    this.els.toggleInputs.tissue.checked = this.state.toggles.tissue;
  }

  private emit(): void {
    this.onStateChange(this.state);
  }

  private async applyThreshold(t: number): Promise<void> {
    this.state = { ...this.state, threshold: Math.min(Math.max(t, 0), 1) };
    await this.redrawMapPane();
    this.emit();
  }

  private setToggles(toggles: ChannelToggles): void {
    this.state = { ...this.state, toggles };
    // Recomposition only; the encoded fusion stays cached.
    void this.redrawMapPane();
    this.emit();
  }

  private handleMapClick(ev: MouseEvent): void {
    if (this.geometry === null) return;
    const rect = this.els.mapCanvas.getBoundingClientRect();
    const scaleX = this.els.mapCanvas.width / rect.width;
    const scaleY = this.els.mapCanvas.height / rect.height;
    const px = (ev.clientX - rect.left) * scaleX;
    const py = (ev.clientY - rect.top) * scaleY;
    const patch = clickToPatch(this.geometry, px, py);
    if (patch === null) return; // clicks outside the map are ignored
    const center = clickToCenter(this.geometry, px, py);
    if (center === null) return;
    this.highlighted = patch;
    const zoom = zoomForPatchSpan(this.geometry, this.els.slideCanvas.width);
    this.state = clampState(
      { ...this.state, centerX: center.cx, centerY: center.cy, zoom },
      {
        baseWidth: this.geometry.baseWidth,
        baseHeight: this.geometry.baseHeight,
      },
    );
    void this.redrawSlidePane();
    void this.redrawMapPane();
    this.emit();
  }

  private async redrawMapPane(): Promise<void> {
    const sel = this.selection;
    const geometry = this.geometry;
    if (sel === null || geometry === null) return;
    const token = this.gate.bump();
    const ctx = this.els.mapCanvas.getContext("2d");
    if (ctx === null) return;
    this.els.mapCanvas.width = geometry.cols;
    this.els.mapCanvas.height = geometry.rows;

    if (this.combinedMode) {
      const ids = this.tilTumorIds();
      if (ids === null) return;
      if (this.encoded === null) {
        const rgba = await fetchRgba(
          this.client.combinedEncodedUrl(ids.til, ids.tumor),
          geometry.cols,
          geometry.rows,
        );
        if (!this.gate.isCurrent(token)) return;
        this.encoded = planesFromRgba(rgba, geometry.cols, geometry.rows);
      }
      const tilT = sel.map.label_kind === "til" ? this.state.threshold : 0.5;
      const tumorT = sel.map.label_kind === "cancer" ? this.state.threshold : 0.6;
      const result = composeDisplay(this.encoded, this.state.toggles, tilT, tumorT);
      // Copy into a fresh buffer: ImageData rejects views over ArrayBufferLike.
      ctx.putImageData(
        new ImageData(new Uint8ClampedArray(result.rgba), geometry.cols, geometry.rows),
        0,
        0,
      );
      this.els.statusLine.textContent =
        `${result.tilPositive} TIL+ / ${result.tumorPositive} tumor+ patches`;
    } else {
      const url = this.client.mapPngUrl(sel.map.map_id, {
        colormap: this.state.colormap,
        threshold: this.state.threshold,
      });
      const bitmap = await fetchBitmap(url);
      if (!this.gate.isCurrent(token)) return;
      ctx.clearRect(0, 0, geometry.cols, geometry.rows);
      ctx.drawImage(bitmap, 0, 0);
      this.els.statusLine.textContent = `${sel.map.label_kind} map at t=${this.state.threshold.toFixed(2)}`;
    }
    this.drawHighlight(ctx);
  }

  private drawHighlight(ctx: CanvasRenderingContext2D): void {
    if (this.highlighted === null) return;
    ctx.strokeStyle = "#00e5ff";
    ctx.lineWidth = 0.5;
    ctx.strokeRect(this.highlighted.col - 0.25, this.highlighted.row - 0.25, 1.5, 1.5);
  }

  private async redrawSlidePane(): Promise<void> {
    const sel = this.selection;
    const geometry = this.geometry;
    if (sel === null || geometry === null) return;
    const token = this.gate.bump();
    const canvas = this.els.slideCanvas;
    const ctx = canvas.getContext("2d");
    if (ctx === null) return;
    const z = this.state.zoom;
    const dims = levelDims(geometry.baseWidth, geometry.baseHeight, z);
    const scale = 2 ** z;
    const cx = this.state.centerX / scale;
    const cy = this.state.centerY / scale;
    const left = cx - canvas.width / 2;
    const top = cy - canvas.height / 2;

    const x0 = Math.max(0, Math.floor(left / TILE_SIZE));
    const y0 = Math.max(0, Math.floor(top / TILE_SIZE));
    const x1 = Math.min(
      Math.ceil(dims.w / TILE_SIZE) - 1,
      Math.floor((left + canvas.width) / TILE_SIZE),
    );
    const y1 = Math.min(
      Math.ceil(dims.h / TILE_SIZE) - 1,
      Math.floor((top + canvas.height) / TILE_SIZE),
    );
    ctx.fillStyle = "#ddd";
    ctx.fillRect(0, 0, canvas.width, canvas.height);

    const fetches: Promise<void>[] = [];
    for (let ty = y0; ty <= y1; ty++) {
      for (let tx = x0; tx <= x1; tx++) {
        const url = sel.slide.has_raster
          ? this.client.slideTileUrl(sel.slide.slide_id, z, tx, ty)
          : this.client.mapTileUrl(sel.map.map_id, z, tx, ty);
        fetches.push(
          fetchBitmap(url).then((bitmap) => {
            // Drop tiles that arrive after the viewport moved on.
            if (!this.gate.isCurrent(token)) return;
            ctx.drawImage(bitmap, tx * TILE_SIZE - left, ty * TILE_SIZE - top);
          }),
        );
      }
    }
    await Promise.allSettled(fetches);
  }
}
