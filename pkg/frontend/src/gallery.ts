/** Low-res heatmap gallery: one card per map for rapid scanning. */

import type { AtlasClient, MapOut } from "./api.js";

export interface GalleryCallbacks {
  onSelect: (map: MapOut) => void;
}

function cardLabel(map: MapOut): string {
  const agg =
    map.agg_window === null ? "raw" : `${map.agg_func} w=${map.agg_window}`;
  return `${map.slide_id} · ${map.label_kind} · ${agg}`;
}

export class Gallery {
  private maps: MapOut[] = [];

  constructor(
    private readonly root: HTMLElement,
    private readonly client: AtlasClient,
    private readonly callbacks: GalleryCallbacks,
  ) {}

  async refresh(): Promise<void> {
    this.root.replaceChildren();
    let maps: MapOut[];
    try {
      maps = await this.client.listMaps();
    } catch (err) {
      this.renderRetryBanner(err);
      return;
    }
    this.maps = maps;
    if (maps.length === 0) {
      const empty = document.createElement("p");
      empty.className = "empty-state";
      empty.textContent =
        "No maps in the catalog yet. Ingest a prediction file to get started.";
      this.root.appendChild(empty);
      return;
    }
    for (const map of maps) {
      this.root.appendChild(this.buildCard(map));
    }
  }

  count(): number {
    return this.maps.length;
  }

  private buildCard(map: MapOut): HTMLElement {
    const card = document.createElement("button");
    card.className = "map-card";
    card.type = "button";
    const thumb = document.createElement("img");
    // The per-patch render is already low resolution (one pixel per patch).
    thumb.src = this.client.mapPngUrl(map.map_id);
    thumb.alt = cardLabel(map);
    thumb.loading = "lazy";
    const label = document.createElement("span");
    label.textContent = cardLabel(map);
    card.append(thumb, label);
    card.addEventListener("click", () => this.callbacks.onSelect(map));
    return card;
  }

  private renderRetryBanner(err: unknown): void {
    const banner = document.createElement("div");
    banner.className = "retry-banner";
    const message = document.createElement("span");
    message.textContent = `Service unreachable: ${err instanceof Error ? err.message : String(err)}`;
    const retry = document.createElement("button");
    retry.type = "button";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => void this.refresh());
    banner.append(message, retry);
    this.root.appendChild(banner);
  }
}
