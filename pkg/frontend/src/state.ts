/** Viewer state: selection, viewport, threshold, channel toggles.
 *
 * The state is URL-encodable for shareable links, and every mutation bumps a
 * version so in-flight responses for stale states can be discarded.
 */

import type { ChannelToggles } from "./composite.js";
import { pyramidLevels } from "./geometry.js";

export type ColormapId = "heat" | "grayscale";

export interface ViewState {
  slideId: string | null;
  mapId: string | null;
  /** Viewport center in base pixels. */
  centerX: number;
  centerY: number;
  /** Pyramid level; 0 is full resolution. */
  zoom: number;
  threshold: number;
  toggles: ChannelToggles;
  colormap: ColormapId;
}

export const DEFAULT_STATE: ViewState = {
  slideId: null,
  mapId: null,
  centerX: 0,
  centerY: 0,
  zoom: 0,
  threshold: 0.6,
  toggles: { til: true, tumor: true, tissue: true },
  colormap: "heat",
};

export interface SlideBounds {
  baseWidth: number;
  baseHeight: number;
}

/** Enforce invariants: center inside the slide, zoom inside the pyramid,
 * threshold in [0, 1]. */
export function clampState(state: ViewState, bounds: SlideBounds): ViewState {
  const nLevels = pyramidLevels(bounds.baseWidth, bounds.baseHeight);
  return {
    ...state,
    centerX: Math.min(Math.max(state.centerX, 0), bounds.baseWidth - 1),
    centerY: Math.min(Math.max(state.centerY, 0), bounds.baseHeight - 1),
    zoom: Math.min(Math.max(Math.round(state.zoom), 0), nLevels - 1),
    threshold: Math.min(Math.max(state.threshold, 0), 1),
  };
}

export function encodeState(state: ViewState): string {
  const params = new URLSearchParams();
  if (state.slideId !== null) params.set("slide", state.slideId);
  if (state.mapId !== null) params.set("map", state.mapId);
  params.set("cx", String(state.centerX));
  params.set("cy", String(state.centerY));
  params.set("z", String(state.zoom));
  params.set("t", String(state.threshold));
  const channels =
    (state.toggles.til ? "l" : "") +
    (state.toggles.tumor ? "c" : "") +
    (state.toggles.tissue ? "t" : "");
  params.set("ch", channels);
  params.set("cm", state.colormap);
  return params.toString();
}

export function decodeState(encoded: string): ViewState {
  const params = new URLSearchParams(encoded);
  const num = (key: string, fallback: number): number => {
    const raw = params.get(key);
    if (raw === null) return fallback;
    const value = Number(raw);
    return Number.isFinite(value) ? value : fallback;
  };
  const channels = params.get("ch");
  const colormap = params.get("cm");
  return {
    slideId: params.get("slide"),
    mapId: params.get("map"),
    centerX: num("cx", DEFAULT_STATE.centerX),
    centerY: num("cy", DEFAULT_STATE.centerY),
    zoom: num("z", DEFAULT_STATE.zoom),
    threshold: num("t", DEFAULT_STATE.threshold),
    toggles:
      channels === null
        ? { ...DEFAULT_STATE.toggles }
        : {
            til: channels.includes("l"),
            tumor: channels.includes("c"),
            tissue: channels.includes("t"),
          },
    colormap: colormap === "grayscale" ? "grayscale" : "heat",
  };
}

/** Monotone version counter for discarding stale async responses. */
export class RequestGate {
  private version = 0;

  /** Mark a new state; returns the token responses must present. */
  bump(): number {
    this.version += 1;
    return this.version;
  }

  current(): number {
    return this.version;
  }

  isCurrent(token: number): boolean {
    return token === this.version;
  }
}

/** Trailing debounce; the slider uses 150 ms to bound render requests. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs = 150,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, delayMs);
  };
}
