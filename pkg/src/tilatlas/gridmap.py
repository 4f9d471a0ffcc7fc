"""Patch-grid data model: probability maps, block aggregation, tumor-TIL fusion.

The unit of analysis is the patch: a square crop on a fixed grid at base
magnification. Maps are dense rows x cols arrays indexed (i, j) = (row, col);
patch (i, j) covers pixels x in [j*p, (j+1)*p) and y in [i*p, (i+1)*p),
clipped at the right/bottom slide edges.

All types are immutable after construction (backing arrays are marked
read-only) and every operation is a pure function, so values can be shared
freely across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    GeometryMismatchError,
    MalformedMapError,
    PredictionRecordError,
)

LABEL_KINDS = ("cancer", "til")
AGGREGATION_FUNCS = ("max", "median", "average")

# Label codes used in LabelMap.labels.
NEGATIVE = 0
POSITIVE = 1
UNCOVERED = 2


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GridGeometry:
    """Maps patch indices (i, j) to pixel rectangles at base magnification."""

    slide_width_px: int
    slide_height_px: int
    patch_size_px: int
    base_mpp: Optional[float] = None
    cols: int = field(init=False)
    rows: int = field(init=False)

    def __post_init__(self):
        for name in ("slide_width_px", "slide_height_px", "patch_size_px"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        object.__setattr__(
            self, "cols", math.ceil(self.slide_width_px / self.patch_size_px)
        )
        object.__setattr__(
            self, "rows", math.ceil(self.slide_height_px / self.patch_size_px)
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def patch_rect(self, i: int, j: int) -> tuple[int, int, int, int]:
        """Pixel rectangle (x, y, w, h) of patch (i, j), clipped to the slide."""
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise ValueError(f"patch index ({i}, {j}) outside {self.rows}x{self.cols} grid")
        p = self.patch_size_px
        x, y = j * p, i * p
        return (x, y, min(p, self.slide_width_px - x), min(p, self.slide_height_px - y))

    def index_for_pixel(self, x: int, y: int) -> tuple[int, int]:
        """Patch index (i, j) containing base pixel (x, y)."""
        if not (0 <= x < self.slide_width_px and 0 <= y < self.slide_height_px):
            raise ValueError(f"pixel ({x}, {y}) outside slide bounds")
        p = self.patch_size_px
        return (y // p, x // p)


def grid_from_slide(
    slide_width_px: int,
    slide_height_px: int,
    patch_size_px: int,
    base_mpp: Optional[float] = None,
) -> GridGeometry:
    """Grid covering a slide by uniform partitioning into square patches."""
    return GridGeometry(slide_width_px, slide_height_px, patch_size_px, base_mpp)


class PredictionRecord(NamedTuple):
    """One per-patch prediction keyed by the patch's top-left base pixel."""

    x: int
    y: int
    prob: float


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Dense per-patch probabilities over a grid, with explicit coverage.

    `values` holds a probability in [0, 1] wherever `coverage` is True;
    values under uncovered cells are meaningless placeholders, never implied
    zeros.
    """

    geometry: GridGeometry
    values: np.ndarray
    coverage: np.ndarray
    label_kind: str
    provenance: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        coverage = np.asarray(self.coverage, dtype=bool).copy()
        if values.shape != self.geometry.shape:
            raise ValueError(
                f"values shape {values.shape} != grid shape {self.geometry.shape}"
            )
        if coverage.shape != self.geometry.shape:
            raise ValueError(
                f"coverage shape {coverage.shape} != grid shape {self.geometry.shape}"
            )
        covered = values[coverage]
        if covered.size and (covered.min() < 0.0 or covered.max() > 1.0):
            raise ValueError("covered probabilities must lie in [0, 1]")
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {LABEL_KINDS}, got {self.label_kind!r}")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "coverage", _freeze(coverage))

    @property
    def n_covered(self) -> int:
        return int(self.coverage.sum())


@dataclass(frozen=True)
class AggregationConfig:
    """Block-pooling configuration: window size in patches and pooling function."""

    window_w: int = 4
    func: str = "max"

    def __post_init__(self):
        if not isinstance(self.window_w, (int, np.integer)) or self.window_w < 1:
            raise ValueError(f"window_w must be a positive integer, got {self.window_w!r}")
        if self.func not in AGGREGATION_FUNCS:
            raise ValueError(f"func must be one of {AGGREGATION_FUNCS}, got {self.func!r}")


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-patch labels (NEGATIVE / POSITIVE / UNCOVERED codes)."""

    geometry: GridGeometry
    labels: np.ndarray
    threshold_used: float

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8).copy()
        if labels.shape != self.geometry.shape:
            raise ValueError(f"labels shape {labels.shape} != grid shape {self.geometry.shape}")
        if not np.isin(labels, (NEGATIVE, POSITIVE, UNCOVERED)).all():
            raise ValueError("labels must contain only NEGATIVE/POSITIVE/UNCOVERED codes")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def positive(self) -> np.ndarray:
        return self.labels == POSITIVE

    @property
    def negative(self) -> np.ndarray:
        return self.labels == NEGATIVE

    @property
    def covered(self) -> np.ndarray:
        return self.labels != UNCOVERED

    @property
    def n_positive(self) -> int:
        return int(self.positive.sum())


@dataclass(frozen=True, eq=False)
class TissueMask:
    """Per-patch tissue/glass flag."""

    geometry: GridGeometry
    tissue: np.ndarray

    def __post_init__(self):
        tissue = np.asarray(self.tissue, dtype=bool).copy()
        if tissue.shape != self.geometry.shape:
            raise ValueError(f"tissue shape {tissue.shape} != grid shape {self.geometry.shape}")
        object.__setattr__(self, "tissue", _freeze(tissue))

    @property
    def n_tissue(self) -> int:
        return int(self.tissue.sum())


@dataclass(frozen=True, eq=False)
class CombinedMap:
    """Per-patch RGB fusion: R = TIL prob, G = cancer prob, B = tissue flag.

    R and G are probabilities quantized to 0-255; B is 255 for tissue and 0
    for glass. Quantization loses at most 1/510 per probability.
    """

    geometry: GridGeometry
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        channels = {}
        for name in ("r", "g", "b"):
            ch = np.asarray(getattr(self, name))
            if ch.shape != self.geometry.shape:
                raise ValueError(f"{name} shape {ch.shape} != grid shape {self.geometry.shape}")
            if ch.min(initial=0) < 0 or ch.max(initial=0) > 255:
                raise ValueError(f"{name} channel values must lie in [0, 255]")
            channels[name] = ch.astype(np.uint8)
        if not np.isin(channels["b"], (0, 255)).all():
            raise MalformedMapError("b channel must contain only 0 or 255")
        for name, ch in channels.items():
            object.__setattr__(self, name, _freeze(ch))

    def to_rgb_array(self) -> np.ndarray:
        """(rows, cols, 3) uint8 array of the raw channel encoding."""
        return np.stack([self.r, self.g, self.b], axis=-1)


def map_from_predictions(
    records: Sequence[PredictionRecord],
    geometry: GridGeometry,
    label_kind: str = "cancer",
    provenance: str = "",
) -> ProbabilityMap:
    """Place per-patch predictions onto the grid.

    Records are keyed by the top-left base pixel of their patch, which must
    be aligned to the grid. Cells without a record are flagged uncovered;
    a second record for the same cell is an error, never an overwrite.
    """
    p = geometry.patch_size_px
    values = np.zeros(geometry.shape, dtype=np.float64)
    coverage = np.zeros(geometry.shape, dtype=bool)
    for rec in records:
        x, y, prob = rec
        if not (0 <= x < geometry.slide_width_px and 0 <= y < geometry.slide_height_px):
            raise PredictionRecordError(
                f"record at ({x}, {y}) outside slide bounds "
                f"{geometry.slide_width_px}x{geometry.slide_height_px}"
            )
        if x % p != 0 or y % p != 0:
            raise PredictionRecordError(
                f"record at ({x}, {y}) not aligned to patch size {p}"
            )
        if not (0.0 <= prob <= 1.0):
            raise PredictionRecordError(
                f"record at ({x}, {y}) has probability {prob!r} outside [0, 1]"
            )
        i, j = y // p, x // p
        if coverage[i, j]:
            raise PredictionRecordError(
                f"duplicate record for cell (i={i}, j={j}) at ({x}, {y})"
            )
        values[i, j] = prob
        coverage[i, j] = True
    return ProbabilityMap(geometry, values, coverage, label_kind, provenance)


def _block_gather(vals: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Gather a rows x cols array into (R, C, w*w) blocks plus per-block counts.

    Blocks are anchored at index multiples of w; out-of-grid positions are
    NaN-padded. Within a block, position k = m*w + n walks the block in
    row-major order, which downstream reductions rely on for reproducible
    summation order.
    """
    rows, cols = vals.shape
    R, C = math.ceil(rows / w), math.ceil(cols / w)
    padded = np.full((R * w, C * w), np.nan)
    padded[:rows, :cols] = vals
    blocks = padded.reshape(R, w, C, w).swapaxes(1, 2).reshape(R, C, w * w)
    counts = np.count_nonzero(~np.isnan(blocks), axis=2)
    return blocks, counts


def _block_reduce(vals: np.ndarray, w: int, func: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-block pooled value (R, C) and count of contributing cells.

    NaN marks a cell with no value; blocks with no values pool to 0.0 with
    count 0 (callers mask those out). The average accumulates cells in
    block-row-major order so results are bit-reproducible regardless of how
    the grid is split across workers.
    """
    blocks, counts = _block_gather(vals, w)
    empty = counts == 0
    if func == "average":
        acc = np.zeros(counts.shape, dtype=np.float64)
        for k in range(blocks.shape[2]):
            col = blocks[:, :, k]
            acc = acc + np.where(np.isnan(col), 0.0, col)
        agg = np.divide(acc, counts, out=np.zeros_like(acc), where=~empty)
    else:
        safe = np.where(empty[:, :, None], 0.0, blocks)
        if func == "max":
            agg = np.nanmax(safe, axis=2)
        elif func == "median":
            agg = np.nanmedian(safe, axis=2)
        else:
            raise ValueError(f"unknown aggregation func {func!r}")
    return agg, counts


def _aggregate_span(vals: np.ndarray, w: int, func: str) -> tuple[np.ndarray, np.ndarray]:
    """Block-pool a span of full block rows; returns expanded values and coverage."""
    rows, cols = vals.shape
    agg, counts = _block_reduce(vals, w, func)
    out_vals = np.repeat(np.repeat(agg, w, axis=0), w, axis=1)[:rows, :cols]
    out_cov = np.repeat(np.repeat(counts > 0, w, axis=0), w, axis=1)[:rows, :cols]
    return np.where(out_cov, out_vals, 0.0), out_cov


def aggregate(
    pmap: ProbabilityMap, cfg: AggregationConfig, workers: int = 1
) -> ProbabilityMap:
    """Block-pool a probability map into non-overlapping w x w windows.

    The grid is tiled into blocks anchored at index multiples of w; every
    cell in a block receives the pooling function applied to the covered
    values of that block, so all patches in a window share one score. Edge
    blocks pool over in-grid cells only. Fully uncovered blocks stay
    uncovered. A window of 1 returns a value-identical map.

    With ``workers > 1`` block rows are pooled in parallel; results are
    bit-identical to the sequential evaluation.
    """
    w = cfg.window_w
    if w == 1:
        return ProbabilityMap(
            pmap.geometry, pmap.values, pmap.coverage, pmap.label_kind, pmap.provenance
        )
    vals = np.where(pmap.coverage, pmap.values, np.nan)
    rows, cols = vals.shape
    R = math.ceil(rows / w)
    workers = max(1, min(workers, R))
    if workers == 1:
        out_vals, out_cov = _aggregate_span(vals, w, cfg.func)
    else:
        out_vals = np.empty((rows, cols), dtype=np.float64)
        out_cov = np.empty((rows, cols), dtype=bool)
        spans = [
            (band[0] * w, min((band[-1] + 1) * w, rows))
            for band in np.array_split(np.arange(R), workers)
            if band.size
        ]

        def run(span):
            r0, r1 = span
            v, c = _aggregate_span(vals[r0:r1], w, cfg.func)
            out_vals[r0:r1] = v
            out_cov[r0:r1] = c

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    return ProbabilityMap(pmap.geometry, out_vals, out_cov, pmap.label_kind, pmap.provenance)


def threshold(pmap: ProbabilityMap, t: float) -> LabelMap:
    """Label covered cells positive iff value >= t; uncovered cells stay uncovered."""
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"threshold must lie in [0, 1], got {t!r}")
    labels = np.full(pmap.geometry.shape, UNCOVERED, dtype=np.int8)
    labels[pmap.coverage] = np.where(
        pmap.values[pmap.coverage] >= t, POSITIVE, NEGATIVE
    )
    return LabelMap(pmap.geometry, labels, t)


@dataclass(frozen=True)
class PatchStats:
    """Pixel statistics of one patch used for tissue detection."""

    mean_rgb: tuple[float, float, float]
    near_white_fraction: float


@dataclass(frozen=True)
class TissueConfig:
    """Glass detection thresholds: a pixel is near-white when min(R,G,B) > white_level;
    a patch is glass when the near-white fraction exceeds glass_fraction."""

    white_level: int = 220
    glass_fraction: float = 0.90


def compute_patch_stats(pixels: np.ndarray, white_level: int = 220) -> PatchStats:
    """Mean RGB and near-white pixel fraction of an (h, w, 3) patch."""
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] != 3 or px.size == 0:
        raise ValueError(f"expected non-empty (h, w, 3) pixel array, got shape {px.shape}")
    flat = px.reshape(-1, 3).astype(np.float64)
    near_white = px.min(axis=2) > white_level
    return PatchStats(tuple(flat.mean(axis=0)), float(near_white.mean()))


def tissue_mask_from_patch_stats(
    stats: Mapping[tuple[int, int], PatchStats],
    geometry: GridGeometry,
    config: TissueConfig = TissueConfig(),
) -> tuple[TissueMask, int]:
    """Build a tissue mask from per-patch stats.

    A patch is glass iff its near-white fraction strictly exceeds
    ``config.glass_fraction``. Cells with missing stats default to glass;
    the count of such cells is returned alongside the mask.
    """
    tissue = np.zeros(geometry.shape, dtype=bool)
    missing = 0
    for i in range(geometry.rows):
        for j in range(geometry.cols):
            s = stats.get((i, j))
            if s is None:
                missing += 1
            else:
                tissue[i, j] = not (s.near_white_fraction > config.glass_fraction)
    return TissueMask(geometry, tissue), missing


def tissue_mask_from_raster(
    raster: np.ndarray,
    geometry: GridGeometry,
    config: TissueConfig = TissueConfig(),
) -> TissueMask:
    """Tissue mask computed directly from a full-slide raster (h, w, 3)."""
    px = np.asarray(raster)
    if px.shape[0] != geometry.slide_height_px or px.shape[1] != geometry.slide_width_px:
        raise ValueError(
            f"raster shape {px.shape[:2]} does not match slide "
            f"{geometry.slide_height_px}x{geometry.slide_width_px}"
        )
    near = (px.min(axis=2) > config.white_level).astype(np.float64)
    fraction, _ = _block_reduce(near, geometry.patch_size_px, "average")
    return TissueMask(geometry, ~(fraction > config.glass_fraction))


def quantize_probability(p: np.ndarray) -> np.ndarray:
    """Quantize probabilities in [0, 1] to 0-255 with round-half-up."""
    return np.floor(np.asarray(p, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def combine(
    til: ProbabilityMap, tumor: ProbabilityMap, mask: TissueMask
) -> CombinedMap:
    """Fuse a TIL map, a cancer map, and a tissue mask into one RGB map.

    R = quantized TIL probability, G = quantized cancer probability,
    B = 255 for tissue / 0 for glass. Uncovered cells encode as 0 in their
    channel.
    """
    if til.geometry != tumor.geometry:
        raise GeometryMismatchError(til.geometry, tumor.geometry, "til vs tumor")
    if til.geometry != mask.geometry:
        raise GeometryMismatchError(til.geometry, mask.geometry, "maps vs tissue mask")
    r = np.where(til.coverage, quantize_probability(til.values), 0).astype(np.uint8)
    g = np.where(tumor.coverage, quantize_probability(tumor.values), 0).astype(np.uint8)
    b = np.where(mask.tissue, 255, 0).astype(np.uint8)
    return CombinedMap(til.geometry, r, g, b)


def decode_combined(cm: CombinedMap) -> tuple[ProbabilityMap, ProbabilityMap, TissueMask]:
    """Invert the RGB fusion back to probability maps and a tissue mask.

    Probabilities come back as channel/255, within 1/510 of the encoded
    value. Coverage cannot be reconstructed, so the decoded maps are fully
    covered.
    """
    full = np.ones(cm.geometry.shape, dtype=bool)
    til = ProbabilityMap(cm.geometry, cm.r / 255.0, full, "til", "decoded")
    tumor = ProbabilityMap(cm.geometry, cm.g / 255.0, full, "cancer", "decoded")
    mask = TissueMask(cm.geometry, cm.b == 255)
    return til, tumor, mask


@dataclass(frozen=True)
class TilTumorStats:
    """TIL-in-tumor quantification: counts plus the fraction of tumor-positive
    patches that are also TIL-positive. The fraction is None when there are
    no tumor-positive patches."""

    both_positive: int
    tumor_positive: int
    til_positive: int
    fraction: Optional[float]

    @property
    def defined(self) -> bool:
        return self.fraction is not None


def til_in_tumor_fraction(til_labels: LabelMap, tumor_labels: LabelMap) -> TilTumorStats:
    """Fraction of tumor-positive patches that are TIL-positive, with counts."""
    if til_labels.geometry != tumor_labels.geometry:
        raise GeometryMismatchError(
            til_labels.geometry, tumor_labels.geometry, "til vs tumor labels"
        )
    tumor_pos = tumor_labels.positive
    til_pos = til_labels.positive
    both = int((tumor_pos & til_pos).sum())
    n_tumor = int(tumor_pos.sum())
    fraction = both / n_tumor if n_tumor > 0 else None
    return TilTumorStats(both, n_tumor, int(til_pos.sum()), fraction)
