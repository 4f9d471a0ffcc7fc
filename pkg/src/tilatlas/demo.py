"""Bundled synthetic slide for end-to-end runs without real data.

Draws a 3500 x 3500 stained-tissue look-alike (pink tissue disc on a white
glass background, dark blue-purple nuclei clusters), annotates a hand
polygon as the cancer region, and derives the two prediction files: cancer
probabilities from the patch/polygon overlap fraction and TIL probabilities
from the heuristic nuclei scorer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from shapely.geometry import box as shapely_box

from .gridmap import PredictionRecord, grid_from_slide
from .patchprep import AnnotationSet, Region, baseline_til_score, save_annotations
from .predfile import PredictionHeader, format_prediction_file

SLIDE_ID = "demo-slide"
SLIDE_SIZE = 3500
PATCH_SIZE = 350

TISSUE_COLOR = (238, 192, 202)
NUCLEUS_COLOR = (88, 58, 142)

# Hand polygon enclosing the cancer region, in base pixels.
CANCER_POLYGON = (
    (700.0, 900.0),
    (2100.0, 700.0),
    (2700.0, 1500.0),
    (2300.0, 2600.0),
    (1100.0, 2400.0),
)


def demo_annotations() -> AnnotationSet:
    return AnnotationSet(SLIDE_ID, (Region("cancer_region", CANCER_POLYGON),))


def build_raster(seed: int = 0) -> np.ndarray:
    """Synthetic slide pixels: glass, tissue disc, nuclei inside the region."""
    rng = np.random.default_rng(seed)
    img = Image.new("RGB", (SLIDE_SIZE, SLIDE_SIZE), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    draw.ellipse((300, 300, 3200, 3200), fill=TISSUE_COLOR)

    # Nuclei clusters concentrated in the left half of the cancer polygon so
    # TIL density varies across tumor patches.
    draw.polygon(CANCER_POLYGON, outline=(200, 120, 140))
    centers = rng.uniform(800, 2200, size=(60, 2))
    for cx, cy in centers:
        n_dots = int(rng.integers(40, 140))
        dx = rng.normal(0.0, 60.0, n_dots)
        dy = rng.normal(0.0, 60.0, n_dots)
        for ox, oy in zip(dx, dy):
            x, y = cx + ox, cy + oy
            r = float(rng.uniform(3.0, 7.0))
            draw.ellipse((x - r, y - r, x + r, y + r), fill=NUCLEUS_COLOR)
    return np.asarray(img)


def cancer_prediction_records(geometry) -> list[PredictionRecord]:
    """Cancer probability = fraction of the patch area inside the polygon."""
    from shapely.geometry import Polygon

    poly = Polygon(CANCER_POLYGON)
    records = []
    for i in range(geometry.rows):
        for j in range(geometry.cols):
            x, y, w, h = geometry.patch_rect(i, j)
            frac = shapely_box(x, y, x + w, y + h).intersection(poly).area / (w * h)
            records.append(PredictionRecord(x, y, float(frac)))
    return records


def til_prediction_records(raster: np.ndarray, geometry) -> list[PredictionRecord]:
    records = []
    for i in range(geometry.rows):
        for j in range(geometry.cols):
            x, y, w, h = geometry.patch_rect(i, j)
            score = baseline_til_score(raster[y:y + h, x:x + w])
            records.append(PredictionRecord(x, y, score))
    return records


@dataclass(frozen=True)
class DemoAssets:
    slide_id: str
    raster_path: Path
    annotation_path: Path
    cancer_pred_path: Path
    til_pred_path: Path


def build_demo_assets(out_dir, seed: int = 0) -> DemoAssets:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geometry = grid_from_slide(SLIDE_SIZE, SLIDE_SIZE, PATCH_SIZE)
    raster = build_raster(seed)

    raster_path = out_dir / f"{SLIDE_ID}.png"
    Image.fromarray(raster).save(raster_path, format="PNG", optimize=False)

    annotation_path = out_dir / f"{SLIDE_ID}.annotations.json"
    save_annotations(demo_annotations(), annotation_path)

    def write_predictions(records, label_kind, model_id, path):
        header = PredictionHeader(
            slide_id=SLIDE_ID, patch_size_px=PATCH_SIZE,
            base_width=SLIDE_SIZE, base_height=SLIDE_SIZE,
            label_kind=label_kind, model_id=model_id,
        )
        path.write_text(format_prediction_file(header, records), encoding="utf-8")

    cancer_pred_path = out_dir / f"{SLIDE_ID}.cancer.pred"
    write_predictions(cancer_prediction_records(geometry), "cancer",
                      "polygon-overlap-v1", cancer_pred_path)
    til_pred_path = out_dir / f"{SLIDE_ID}.til.pred"
    write_predictions(til_prediction_records(raster, geometry), "til",
                      "baseline-nuclei-v1", til_pred_path)

    return DemoAssets(SLIDE_ID, raster_path, annotation_path,
                      cancer_pred_path, til_pred_path)
