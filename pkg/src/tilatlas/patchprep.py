"""Polygon annotations to labeled patch datasets, plus patch transforms.

Covers the steps between a pathologist's region annotations and a training
set: intersect-based patch labeling on the aligned grid, negative:positive
ratio sampling, channel standardization, seeded augmentation, and a
heuristic nuclei-density scorer used by demos in place of a trained model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage
from shapely.geometry import Polygon, box

from .errors import TilAtlasError
from .gridmap import NEGATIVE, POSITIVE, GridGeometry, LabelMap

REGION_LABELS = ("cancer_region",)
SPLITS = ("train", "val", "test")

# Rec. 601 luma weights, used for saturation jitter and the baseline scorer.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Region:
    """One closed annotation polygon in base-magnification pixels."""

    label: str
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.label not in REGION_LABELS:
            raise ValueError(f"unknown region label {self.label!r}")
        pts = [(float(x), float(y)) for x, y in self.points]
        if pts and pts[0] == pts[-1]:
            pts = pts[:-1]
        if len(pts) < 3:
            raise ValueError("region polygon needs at least 3 distinct points")
        object.__setattr__(self, "points", tuple(pts))

    def polygon(self) -> Polygon:
        return Polygon(self.points)


@dataclass(frozen=True)
class AnnotationSet:
    slide_id: str
    regions: tuple[Region, ...]

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))

    def polygons(self, label: str = "cancer_region") -> list[Polygon]:
        return [r.polygon() for r in self.regions if r.label == label]


def annotations_to_dict(aset: AnnotationSet) -> dict:
    return {
        "slide_id": aset.slide_id,
        "regions": [
            {"label": r.label, "points": [[x, y] for x, y in r.points]}
            for r in aset.regions
        ],
    }


def annotations_from_dict(data: Mapping) -> AnnotationSet:
    regions = tuple(
        Region(r["label"], tuple((p[0], p[1]) for p in r["points"]))
        for r in data["regions"]
    )
    return AnnotationSet(str(data["slide_id"]), regions)


def load_annotations(path) -> AnnotationSet:
    with open(path, encoding="utf-8") as fh:
        return annotations_from_dict(json.load(fh))


def save_annotations(aset: AnnotationSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(annotations_to_dict(aset), fh)
        fh.write("\n")


def label_patch(rect: tuple[int, int, int, int], annotations: AnnotationSet,
                label: str = "cancer_region") -> bool:
    """True iff the rect touches any annotated region; boundary contact counts."""
    x, y, w, h = rect
    patch = box(x, y, x + w, y + h)
    return any(patch.intersects(poly) for poly in annotations.polygons(label))


@dataclass(frozen=True)
class PatchLabelRecord:
    slide_id: str
    i: int
    j: int
    rect: tuple[int, int, int, int]
    label: str  # "positive" | "negative"
    source_split: str = "train"

    def __post_init__(self):
        if self.label not in ("positive", "negative"):
            raise ValueError(f"bad patch label {self.label!r}")
        if self.source_split not in SPLITS:
            raise ValueError(f"bad split {self.source_split!r}")


def label_patches(annotations: AnnotationSet, geometry: GridGeometry,
                  split: str = "train") -> list[PatchLabelRecord]:
    """Label every grid patch by the intersect rule, in row-major order."""
    polys = annotations.polygons()
    records = []
    for i in range(geometry.rows):
        for j in range(geometry.cols):
            rect = geometry.patch_rect(i, j)
            x, y, w, h = rect
            patch = box(x, y, x + w, y + h)
            positive = any(patch.intersects(p) for p in polys)
            records.append(PatchLabelRecord(
                annotations.slide_id, i, j, rect,
                "positive" if positive else "negative", split,
            ))
    return records


def rasterize_annotations(annotations: AnnotationSet,
                          geometry: GridGeometry) -> LabelMap:
    """Grid-resolution truth mask: positive where a patch touches a region."""
    labels = np.full((geometry.rows, geometry.cols), NEGATIVE, dtype=np.int8)
    for rec in label_patches(annotations, geometry):
        if rec.label == "positive":
            labels[rec.i, rec.j] = POSITIVE
    return LabelMap(geometry, labels, 0.5)


@dataclass(frozen=True)
class DatasetManifest:
    slides: tuple[str, ...]
    records: tuple[PatchLabelRecord, ...]
    n_patches: int
    n_positive: int
    n_negative: int
    neg_pos_ratio_target: float
    seed: int
    warnings: tuple[str, ...] = ()


def sample_training_set(records: Sequence[PatchLabelRecord],
                        neg_pos_ratio: float, seed: int) -> DatasetManifest:
    """Keep every positive; sample negatives to the target ratio, seeded.

    Sampling is without replacement. When there are too few negatives all of
    them are kept and a warning is recorded. Output order is row-major per
    slide regardless of which negatives were drawn.
    """
    if neg_pos_ratio <= 0:
        raise ValueError("neg_pos_ratio must be positive")
    positives = [r for r in records if r.label == "positive"]
    negatives = [r for r in records if r.label == "negative"]
    if not positives:
        raise TilAtlasError("no positive patches to sample around")

    target = int(round(neg_pos_ratio * len(positives)))
    warnings = []
    if target >= len(negatives):
        chosen = list(negatives)
        if target > len(negatives):
            warnings.append(
                f"wanted {target} negatives, only {len(negatives)} available"
            )
    else:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(negatives), size=target, replace=False)
        chosen = [negatives[k] for k in sorted(idx)]

    kept = sorted(positives + chosen, key=lambda r: (r.slide_id, r.i, r.j))
    slides = tuple(sorted({r.slide_id for r in kept}))
    return DatasetManifest(
        slides=slides,
        records=tuple(kept),
        n_patches=len(kept),
        n_positive=len(positives),
        n_negative=len(chosen),
        neg_pos_ratio_target=float(neg_pos_ratio),
        seed=int(seed),
        warnings=tuple(warnings),
    )


def manifest_to_jsonl(manifest: DatasetManifest) -> str:
    """Header object then one record per line; byte-stable for a given seed."""
    header = {
        "slides": list(manifest.slides),
        "n_patches": manifest.n_patches,
        "n_positive": manifest.n_positive,
        "n_negative": manifest.n_negative,
        "neg_pos_ratio_target": manifest.neg_pos_ratio_target,
        "seed": manifest.seed,
        "warnings": list(manifest.warnings),
    }
    lines = [json.dumps(header)]
    for r in manifest.records:
        lines.append(json.dumps({
            "slide_id": r.slide_id,
            "i": r.i,
            "j": r.j,
            "rect": list(r.rect),
            "label": r.label,
            "split": r.source_split,
        }))
    return "\n".join(lines) + "\n"


def manifest_from_jsonl(text: str) -> DatasetManifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = json.loads(lines[0])
    records = []
    for ln in lines[1:]:
        d = json.loads(ln)
        records.append(PatchLabelRecord(
            d["slide_id"], d["i"], d["j"], tuple(d["rect"]), d["label"], d["split"]
        ))
    return DatasetManifest(
        slides=tuple(header["slides"]),
        records=tuple(records),
        n_patches=header["n_patches"],
        n_positive=header["n_positive"],
        n_negative=header["n_negative"],
        neg_pos_ratio_target=header["neg_pos_ratio_target"],
        seed=header["seed"],
        warnings=tuple(header.get("warnings", ())),
    )


def normalize_channels(patch: np.ndarray) -> np.ndarray:
    """Standardize each channel to mean 0, population std 1; flat channels to 0."""
    arr = np.asarray(patch, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty patch")
    if arr.ndim == 2:
        arr = arr[:, :, None]
        squeeze = True
    else:
        squeeze = False
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        chan = arr[:, :, c]
        std = chan.std()
        out[:, :, c] = 0.0 if std == 0 else (chan - chan.mean()) / std
    return out[:, :, 0] if squeeze else out


@dataclass(frozen=True)
class TransformConfig:
    rotation_max_deg: float = 22.5
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    brightness: float = 0.1
    contrast: float = 0.1
    saturation: float = 0.1
    normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rotation_max_deg <= 22.5:
            raise ValueError("rotation_max_deg outside [0, 22.5]")
        for name in ("hflip_p", "vflip_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


IDENTITY_TRANSFORM = TransformConfig(
    rotation_max_deg=0.0, hflip_p=0.0, vflip_p=0.0,
    brightness=0.0, contrast=0.0, saturation=0.0,
)


def draw_transform_params(cfg: TransformConfig, draw_seed: int) -> dict:
    """Deterministic parameter draw for (cfg.seed, draw_seed).

    The draw order is fixed so adding or disabling an op never shifts the
    randomness of the others.
    """
    rng = np.random.default_rng([cfg.seed, draw_seed])
    return {
        "angle": float(rng.uniform(0.0, cfg.rotation_max_deg)),
        "hflip": bool(rng.random() < cfg.hflip_p),
        "vflip": bool(rng.random() < cfg.vflip_p),
        "brightness": 1.0 + float(rng.uniform(-cfg.brightness, cfg.brightness)),
        "contrast": 1.0 + float(rng.uniform(-cfg.contrast, cfg.contrast)),
        "saturation": 1.0 + float(rng.uniform(-cfg.saturation, cfg.saturation)),
    }


def augment(patch: np.ndarray, cfg: TransformConfig, draw_seed: int = 0) -> np.ndarray:
    """Seeded rotation, flips, and photometric jitter; dims preserved.

    Rotation resamples bilinearly with reflected borders so the output stays
    the input size. With every amplitude at zero the patch comes back as a
    byte-identical copy. Optionally ends in channel standardization, which is
    the only transform applied at prediction time.
    """
    params = draw_transform_params(cfg, draw_seed)
    arr = np.asarray(patch)
    orig_dtype = arr.dtype
    out = arr.astype(np.float64)

    if params["angle"] != 0.0:
        out = ndimage.rotate(out, params["angle"], axes=(1, 0),
                             reshape=False, order=1, mode="reflect")
    if params["hflip"]:
        out = np.flip(out, axis=1)
    if params["vflip"]:
        out = np.flip(out, axis=0)
    if params["brightness"] != 1.0:
        out = out * params["brightness"]
    if params["contrast"] != 1.0:
        mean = out.mean()
        out = mean + (out - mean) * params["contrast"]
    if params["saturation"] != 1.0 and out.ndim == 3 and out.shape[2] == 3:
        gray = out @ _LUMA
        out = gray[:, :, None] + (out - gray[:, :, None]) * params["saturation"]

    if cfg.normalize:
        return normalize_channels(out)
    if np.issubdtype(orig_dtype, np.integer):
        info = np.iinfo(orig_dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return np.ascontiguousarray(out).astype(orig_dtype)


def baseline_til_score(patch: np.ndarray) -> float:
    """Heuristic lymphocyte probability from dark blue-purple pixel density.

    Hematoxylin-stained nuclei are dark with blue over red dominance; the
    score is a logistic ramp in the fraction of such pixels, so it is
    monotone and stays strictly inside (0, 1). The ramp is centered at 12%
    density: lymphocyte-rich regions are nucleus-dense but nowhere near
    majority-nucleus, so a patch crosses 0.5 once about an eighth of its
    pixels look like nuclei. Demo-quality stand-in for a trained classifier.
    """
    arr = np.asarray(patch, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("baseline_til_score expects an RGB patch")
    luma = arr @ _LUMA
    dark_purple = (luma < 120.0) & (arr[:, :, 2] > arr[:, :, 0])
    frac = float(dark_purple.mean())
    return float(1.0 / (1.0 + np.exp(-20.0 * (frac - 0.12))))
