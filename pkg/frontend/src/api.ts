/** Typed client for the atlas HTTP API. Read-only: the viewer never mutates
 * server state. */

export interface SlideOut {
  slide_id: string;
  base_width: number;
  base_height: number;
  patch_sizes: number[];
  mpp: number | null;
  tile_size: number;
  n_levels: number;
  has_raster: boolean;
}

export interface MapOut {
  map_id: string;
  slide_id: string;
  label_kind: "cancer" | "til";
  provenance: string;
  patch_size_px: number;
  created_at: string;
  agg_window: number | null;
  agg_func: string | null;
  grid_cols: number;
  grid_rows: number;
}

export interface StatsOut {
  til_map_id: string;
  tumor_map_id: string;
  til_in_tumor_fraction: number | null;
  fraction_undefined_reason: string | null;
  tumor_patch_count: number;
  til_patch_count: number;
  both_positive_count: number;
  tissue_patch_count: number;
}

export interface ApiError {
  code: string;
  message: string;
  detail: string;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly body: ApiError,
  ) {
    super(`${body.code}: ${body.message}`);
    this.name = "ServiceError";
  }
}

export interface RenderParams {
  colormap?: "heat" | "grayscale";
  threshold?: number;
  aggW?: number;
  aggF?: "max" | "median" | "average";
  raw?: boolean;
}

function renderQuery(params: RenderParams): string {
  const q = new URLSearchParams();
  if (params.colormap !== undefined) q.set("colormap", params.colormap);
  if (params.threshold !== undefined) q.set("threshold", String(params.threshold));
  if (params.aggW !== undefined) q.set("agg_w", String(params.aggW));
  if (params.aggF !== undefined) q.set("agg_f", params.aggF);
  if (params.raw) q.set("raw", "true");
  const s = q.toString();
  return s === "" ? "" : `?${s}`;
}

export class AtlasClient {
  constructor(readonly baseUrl: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.baseUrl + path);
    if (!resp.ok) {
      let body: ApiError;
      try {
        body = (await resp.json()) as ApiError;
      } catch {
        body = { code: "http_error", message: resp.statusText, detail: "" };
      }
      throw new ServiceError(resp.status, body);
    }
    return (await resp.json()) as T;
  }

  listSlides(): Promise<SlideOut[]> {
    return this.getJson<SlideOut[]>("/slides");
  }

  getSlide(slideId: string): Promise<SlideOut> {
    return this.getJson<SlideOut>(`/slides/${encodeURIComponent(slideId)}`);
  }

  listMaps(): Promise<MapOut[]> {
    return this.getJson<MapOut[]>("/maps");
  }

  listSlideMaps(slideId: string): Promise<MapOut[]> {
    return this.getJson<MapOut[]>(
      `/slides/${encodeURIComponent(slideId)}/maps`,
    );
  }

  getStats(
    tilMapId: string,
    tumorMapId: string,
    tilThreshold?: number,
    tumorThreshold?: number,
  ): Promise<StatsOut> {
    const q = new URLSearchParams({ tumor: tumorMapId });
    if (tilThreshold !== undefined) q.set("til_threshold", String(tilThreshold));
    if (tumorThreshold !== undefined) {
      q.set("tumor_threshold", String(tumorThreshold));
    }
    return this.getJson<StatsOut>(
      `/maps/${encodeURIComponent(tilMapId)}/stats?${q.toString()}`,
    );
  }

  /** Full heatmap render, one pixel per patch (gallery thumbnails too). */
  mapPngUrl(mapId: string, params: RenderParams = {}): string {
    return `${this.baseUrl}/maps/${encodeURIComponent(mapId)}/png${renderQuery(params)}`;
  }

  mapTileUrl(
    mapId: string,
    z: number,
    x: number,
    y: number,
    params: RenderParams = {},
  ): string {
    const base = `${this.baseUrl}/maps/${encodeURIComponent(mapId)}/tiles/${z}/${x}/${y}.png`;
    return base + renderQuery(params);
  }

  slideTileUrl(slideId: string, z: number, x: number, y: number): string {
    return `${this.baseUrl}/slides/${encodeURIComponent(slideId)}/tiles/${z}/${x}/${y}.png`;
  }

  combinedDisplayUrl(tilMapId: string, tumorMapId: string): string {
    return `${this.baseUrl}/maps/${encodeURIComponent(tilMapId)}/combined/${encodeURIComponent(tumorMapId)}/png`;
  }

  /** Lossless RGB-encoded fusion; fetched once and recomposed client-side. */
  combinedEncodedUrl(tilMapId: string, tumorMapId: string): string {
    return `${this.baseUrl}/maps/${encodeURIComponent(tilMapId)}/combined/${encodeURIComponent(tumorMapId)}/encoded.png`;
  }
}
