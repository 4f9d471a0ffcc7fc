"""Rasterization of maps to PNG heatmaps, combined overlays, and tiles.

Renders are pure functions of their inputs: fixed PNG encoder settings and
a fixed box-filter pyramid keep bytes reproducible across calls.
"""

from __future__ import annotations

import io
import math
from typing import Optional

import numpy as np
from PIL import Image

from .errors import GeometryMismatchError, NotFoundError
from .gridmap import (
    POSITIVE,
    AggregationConfig,
    CombinedMap,
    LabelMap,
    ProbabilityMap,
    TissueMask,
    aggregate,
    combine,
    quantize_probability,
    threshold as threshold_map,
)

TILE_SIZE = 256

PROBABILITY_COLORMAPS = ("grayscale", "heat")

# Combined display palette with overlay precedence red > yellow > grey > white.
TIL_COLOR = (255, 0, 0)
TUMOR_COLOR = (255, 255, 0)
TISSUE_COLOR = (128, 128, 128)
BACKGROUND_COLOR = (255, 255, 255)

DEFAULT_CANCER_AGG = AggregationConfig(4, "max")
DEFAULT_CANCER_THRESHOLD = 0.6
DEFAULT_TIL_THRESHOLD = 0.5


def default_render_params(
    label_kind: str,
) -> tuple[Optional[AggregationConfig], Optional[float]]:
    """Display defaults: cancer maps are block-pooled then cut at 0.6; TIL raw."""
    if label_kind == "cancer":
        return DEFAULT_CANCER_AGG, DEFAULT_CANCER_THRESHOLD
    return None, None


def png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def render_heatmap(
    pmap: ProbabilityMap,
    colormap: str = "heat",
    threshold: Optional[float] = None,
    agg: Optional[AggregationConfig] = None,
    workers: int = 1,
) -> np.ndarray:
    """RGBA raster at one pixel per patch.

    Optional aggregation runs first, then thresholding hides patches below
    the cut; hidden and uncovered patches are fully transparent. Visible
    patches show the colormap of their probability.
    """
    if colormap not in PROBABILITY_COLORMAPS:
        raise ValueError(
            f"colormap must be one of {PROBABILITY_COLORMAPS}, got {colormap!r}"
        )
    if agg is not None:
        pmap = aggregate(pmap, agg, workers=workers)
    visible = pmap.coverage.copy()
    if threshold is not None:
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold outside [0, 1]")
        visible &= pmap.values >= threshold
    q = quantize_probability(np.where(pmap.coverage, pmap.values, 0.0))
    out = np.zeros(pmap.geometry.shape + (4,), dtype=np.uint8)
    if colormap == "grayscale":
        for c in range(3):
            out[:, :, c] = q
    else:  # heat: blue through red
        out[:, :, 0] = q
        out[:, :, 2] = 255 - q
    out[~visible] = 0
    out[:, :, 3] = np.where(visible, 255, 0)
    return out


def render_combined_display(
    til_labels: LabelMap, tumor_labels: LabelMap, mask: TissueMask
) -> np.ndarray:
    """RGB overlay: TIL red over tumor yellow over tissue grey over white."""
    if til_labels.geometry != tumor_labels.geometry:
        raise GeometryMismatchError(
            til_labels.geometry, tumor_labels.geometry, "render_combined_display"
        )
    if mask.geometry != til_labels.geometry:
        raise GeometryMismatchError(
            til_labels.geometry, mask.geometry, "render_combined_display"
        )
    out = np.empty(til_labels.geometry.shape + (3,), dtype=np.uint8)
    out[:] = BACKGROUND_COLOR
    out[mask.tissue] = TISSUE_COLOR
    out[tumor_labels.labels == POSITIVE] = TUMOR_COLOR
    out[til_labels.labels == POSITIVE] = TIL_COLOR
    return out


def combined_pipeline(
    til_map: ProbabilityMap,
    tumor_map: ProbabilityMap,
    mask: TissueMask,
    til_threshold: float = DEFAULT_TIL_THRESHOLD,
    tumor_threshold: float = DEFAULT_CANCER_THRESHOLD,
    tumor_agg: Optional[AggregationConfig] = DEFAULT_CANCER_AGG,
) -> tuple[CombinedMap, np.ndarray]:
    """Default display pipeline: pooled tumor map, raw TIL map.

    Returns the lossless RGB-encoded CombinedMap of the (post-aggregation)
    probabilities together with the display overlay raster.
    """
    if tumor_agg is not None:
        tumor_map = aggregate(tumor_map, tumor_agg)
    encoded = combine(til_map, tumor_map, mask)
    display = render_combined_display(
        threshold_map(til_map, til_threshold),
        threshold_map(tumor_map, tumor_threshold),
        mask,
    )
    return encoded, display


def to_rgba(array: np.ndarray) -> np.ndarray:
    if array.ndim == 3 and array.shape[2] == 4:
        return array
    if array.ndim == 3 and array.shape[2] == 3:
        out = np.empty(array.shape[:2] + (4,), dtype=np.uint8)
        out[:, :, :3] = array
        out[:, :, 3] = 255
        return out
    raise ValueError("expected an RGB or RGBA raster")


def level_dims(width: int, height: int, z: int) -> tuple[int, int]:
    scale = 2 ** z
    return -(-width // scale), -(-height // scale)


def n_pyramid_levels(width: int, height: int, tile_size: int = TILE_SIZE) -> int:
    levels = 1
    w, h = width, height
    while w > tile_size or h > tile_size:
        w, h = -(-w // 2), -(-h // 2)
        levels += 1
    return levels


def downsample_to_level(base: np.ndarray, z: int) -> np.ndarray:
    """Level z raster; box filter halving, repeated, keeps bytes deterministic."""
    if z == 0:
        return base
    h, w = base.shape[:2]
    img = Image.fromarray(base)
    for level in range(1, z + 1):
        lw, lh = level_dims(w, h, level)
        img = img.resize((lw, lh), resample=Image.Resampling.BOX)
    return np.asarray(img)


def tile_from_base(base: np.ndarray, z: int, x: int, y: int,
                   tile_size: int = TILE_SIZE) -> np.ndarray:
    """256x256 RGBA tile at pyramid level z; partial tiles pad transparent."""
    base = to_rgba(base)
    h, w = base.shape[:2]
    levels = n_pyramid_levels(w, h, tile_size)
    if not 0 <= z < levels:
        raise NotFoundError(f"pyramid level {z} outside [0, {levels - 1}]")
    lw, lh = level_dims(w, h, z)
    tiles_x = -(-lw // tile_size)
    tiles_y = -(-lh // tile_size)
    if not (0 <= x < tiles_x and 0 <= y < tiles_y):
        raise NotFoundError(
            f"tile ({x}, {y}) outside level {z} grid {tiles_x}x{tiles_y}"
        )
    level_arr = downsample_to_level(base, z)
    crop = level_arr[y * tile_size:(y + 1) * tile_size,
                     x * tile_size:(x + 1) * tile_size]
    if crop.shape[:2] == (tile_size, tile_size):
        return np.ascontiguousarray(crop)
    out = np.zeros((tile_size, tile_size, 4), dtype=np.uint8)
    out[:crop.shape[0], :crop.shape[1]] = crop
    return out


def stitch_level(base: np.ndarray, z: int, tile_size: int = TILE_SIZE) -> np.ndarray:
    """Reassemble a level from its tiles, cropped back to level dims."""
    rgba = to_rgba(base)
    h, w = rgba.shape[:2]
    lw, lh = level_dims(w, h, z)
    tiles_x = -(-lw // tile_size)
    tiles_y = -(-lh // tile_size)
    out = np.zeros((tiles_y * tile_size, tiles_x * tile_size, 4), dtype=np.uint8)
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            out[ty * tile_size:(ty + 1) * tile_size,
                tx * tile_size:(tx + 1) * tile_size] = tile_from_base(
                    base, z, tx, ty, tile_size)
    return out[:lh, :lw]
