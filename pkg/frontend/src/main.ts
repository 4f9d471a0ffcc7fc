/** Bootstrap: wire the gallery and linked viewer, sync state to the URL. */

import { AtlasClient, type MapOut } from "./api.js";
import { Gallery } from "./gallery.js";
import { decodeState, DEFAULT_STATE, encodeState, type ViewState } from "./state.js";
import { LinkedViewer } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const client = new AtlasClient("");
  const initial: ViewState = window.location.hash.length > 1
    ? decodeState(window.location.hash.slice(1))
    : { ...DEFAULT_STATE };

  const viewer = new LinkedViewer(
    {
      mapCanvas: el<HTMLCanvasElement>("map-canvas"),
      slideCanvas: el<HTMLCanvasElement>("slide-canvas"),
      thresholdSlider: el<HTMLInputElement>("threshold-slider"),
      thresholdLabel: el("threshold-label"),
      toggleInputs: {
        til: el<HTMLInputElement>("toggle-til"),
        tumor: el<HTMLInputElement>("toggle-tumor"),
        tissue: el<HTMLInputElement>("toggle-tissue"),
      },
      statusLine: el("status-line"),
    },
    client,
    initial,
    (state) => {
      history.replaceState(null, "", `#${encodeState(state)}`);
    },
  );

  const openMap = async (map: MapOut): Promise<void> => {
    const slide = await client.getSlide(map.slide_id);
    const siblings = await client.listSlideMaps(map.slide_id);
    // Prefer a combined view when the slide has the opposite kind too.
    const partner =
      siblings.find(
        (m) => m.label_kind !== map.label_kind && m.map_id !== map.map_id,
      ) ?? null;
    el("viewer-pane").hidden = false;
    await viewer.show({ slide, map, partnerMap: partner });
  };

  const gallery = new Gallery(el("gallery"), client, {
    onSelect: (map) => void openMap(map),
  });
  await gallery.refresh();

  if (initial.mapId !== null) {
    const maps = await client.listMaps().catch(() => []);
    const target = maps.find((m) => m.map_id === initial.mapId);
    if (target !== undefined) await openMap(target);
  }
}

void boot();
