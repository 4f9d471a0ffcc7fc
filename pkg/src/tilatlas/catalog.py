"""On-disk catalog of slides and probability maps.

Single-directory store: a JSON index plus content-addressed prediction-file
blobs. The map id is a digest of the canonical bytes, which makes re-ingest
of an identical file a no-op. All writes go through one lock and land via
atomic rename, so readers never observe a partially ingested map.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ConflictError, NotFoundError
from .gridmap import (
    AggregationConfig,
    ProbabilityMap,
    aggregate,
    map_from_predictions,
)
from .predfile import (
    PredictionHeader,
    map_to_prediction_file,
    parse_prediction_file,
)

TILE_SIZE = 256


def pyramid_levels(width: int, height: int, tile_size: int = TILE_SIZE) -> int:
    """Number of levels; level L halves dims (ceil), top level fits one tile."""
    levels = 1
    w, h = width, height
    while w > tile_size or h > tile_size:
        w = -(-w // 2)
        h = -(-h // 2)
        levels += 1
    return levels


@dataclass(frozen=True)
class SlideManifest:
    slide_id: str
    base_width: int
    base_height: int
    patch_sizes: tuple[int, ...] = ()
    mpp: Optional[float] = None
    raster_path: Optional[str] = None
    tile_size: int = TILE_SIZE

    def __post_init__(self):
        if self.base_width <= 0 or self.base_height <= 0:
            raise ValueError("slide dimensions must be positive")
        object.__setattr__(self, "patch_sizes", tuple(sorted(set(self.patch_sizes))))

    @property
    def n_levels(self) -> int:
        return pyramid_levels(self.base_width, self.base_height, self.tile_size)

    def to_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "base_width": self.base_width,
            "base_height": self.base_height,
            "patch_sizes": list(self.patch_sizes),
            "mpp": self.mpp,
            "raster_path": self.raster_path,
            "tile_size": self.tile_size,
            "n_levels": self.n_levels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlideManifest":
        return cls(
            slide_id=d["slide_id"],
            base_width=d["base_width"],
            base_height=d["base_height"],
            patch_sizes=tuple(d.get("patch_sizes", ())),
            mpp=d.get("mpp"),
            raster_path=d.get("raster_path"),
            tile_size=d.get("tile_size", TILE_SIZE),
        )


@dataclass(frozen=True)
class MapRecord:
    map_id: str
    slide_id: str
    label_kind: str
    provenance: str
    patch_size_px: int
    path: str
    created_at: str
    agg_window: Optional[int] = None
    agg_func: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "map_id": self.map_id,
            "slide_id": self.slide_id,
            "label_kind": self.label_kind,
            "provenance": self.provenance,
            "patch_size_px": self.patch_size_px,
            "path": self.path,
            "created_at": self.created_at,
            "agg_window": self.agg_window,
            "agg_func": self.agg_func,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MapRecord":
        return cls(
            map_id=d["map_id"],
            slide_id=d["slide_id"],
            label_kind=d["label_kind"],
            provenance=d["provenance"],
            patch_size_px=d["patch_size_px"],
            path=d["path"],
            created_at=d["created_at"],
            agg_window=d.get("agg_window"),
            agg_func=d.get("agg_func"),
        )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class Catalog:
    """Slide/map index over a data directory; safe for concurrent readers."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.blob_dir = self.data_dir / "blobs"
        self.index_path = self.data_dir / "index.json"
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.blob_dir.mkdir(exist_ok=True)
        self._lock = threading.Lock()
        self._slides: dict[str, SlideManifest] = {}
        self._maps: dict[str, MapRecord] = {}
        self._load_index()

    def _load_index(self) -> None:
        if not self.index_path.exists():
            return
        data = json.loads(self.index_path.read_text(encoding="utf-8"))
        self._slides = {
            k: SlideManifest.from_dict(v) for k, v in data.get("slides", {}).items()
        }
        self._maps = {
            k: MapRecord.from_dict(v) for k, v in data.get("maps", {}).items()
        }

    def _save_index(self) -> None:
        data = {
            "slides": {k: v.to_dict() for k, v in sorted(self._slides.items())},
            "maps": {k: v.to_dict() for k, v in sorted(self._maps.items())},
        }
        _atomic_write(self.index_path,
                      json.dumps(data, indent=2, sort_keys=True).encode("utf-8"))

    # -- slides --------------------------------------------------------------

    def register_slide(self, manifest: SlideManifest) -> SlideManifest:
        with self._lock:
            existing = self._slides.get(manifest.slide_id)
            if existing is not None:
                if (existing.base_width, existing.base_height) != (
                    manifest.base_width, manifest.base_height
                ):
                    raise ConflictError(
                        f"slide {manifest.slide_id!r} already registered with "
                        f"dims {existing.base_width}x{existing.base_height}, "
                        f"got {manifest.base_width}x{manifest.base_height}"
                    )
                merged = replace(
                    existing,
                    patch_sizes=tuple(set(existing.patch_sizes) | set(manifest.patch_sizes)),
                    mpp=manifest.mpp if manifest.mpp is not None else existing.mpp,
                    raster_path=manifest.raster_path or existing.raster_path,
                )
                if merged != existing:
                    self._slides[manifest.slide_id] = merged
                    self._save_index()
                return self._slides[manifest.slide_id]
            self._slides[manifest.slide_id] = manifest
            self._save_index()
            return manifest

    def list_slides(self) -> list[SlideManifest]:
        return [self._slides[k] for k in sorted(self._slides)]

    def get_slide(self, slide_id: str) -> SlideManifest:
        try:
            return self._slides[slide_id]
        except KeyError:
            raise NotFoundError(f"slide {slide_id!r} not found")

    def load_slide_raster(self, slide_id: str) -> np.ndarray:
        manifest = self.get_slide(slide_id)
        if manifest.raster_path is None:
            raise NotFoundError(f"slide {slide_id!r} has no raster attached")
        path = Path(manifest.raster_path)
        if not path.is_absolute():
            path = self.data_dir / path
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))

    # -- maps ----------------------------------------------------------------

    def ingest(self, text: str) -> MapRecord:
        """Parse, canonicalize, and store a prediction file.

        Returns the existing record when the canonical bytes are already
        stored (idempotent re-ingest).
        """
        header, records = parse_prediction_file(text)
        geometry = header.geometry()
        pmap = map_from_predictions(
            records, geometry,
            label_kind=header.label_kind, provenance=header.model_id,
        )
        canonical = map_to_prediction_file(pmap, header.slide_id)
        return self._store(header, canonical)

    def _store(self, header: PredictionHeader, canonical: str,
               agg: Optional[AggregationConfig] = None) -> MapRecord:
        payload = canonical.encode("utf-8")
        map_id = hashlib.sha256(payload).hexdigest()[:16]
        with self._lock:
            if map_id in self._maps:
                return self._maps[map_id]
            existing = self._slides.get(header.slide_id)
            if existing is not None:
                if (existing.base_width, existing.base_height) != (
                    header.base_width, header.base_height
                ):
                    raise ConflictError(
                        f"prediction file dims {header.base_width}x{header.base_height} "
                        f"conflict with registered slide {header.slide_id!r} "
                        f"({existing.base_width}x{existing.base_height})"
                    )
                if header.patch_size_px not in existing.patch_sizes:
                    self._slides[header.slide_id] = replace(
                        existing,
                        patch_sizes=existing.patch_sizes + (header.patch_size_px,),
                    )
            else:
                self._slides[header.slide_id] = SlideManifest(
                    slide_id=header.slide_id,
                    base_width=header.base_width,
                    base_height=header.base_height,
                    patch_sizes=(header.patch_size_px,),
                )
            blob_name = f"{map_id}.pred"
            _atomic_write(self.blob_dir / blob_name, payload)
            record = MapRecord(
                map_id=map_id,
                slide_id=header.slide_id,
                label_kind=header.label_kind,
                provenance=header.model_id,
                patch_size_px=header.patch_size_px,
                path=f"blobs/{blob_name}",
                created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
                agg_window=agg.window_w if agg else None,
                agg_func=agg.func if agg else None,
            )
            self._maps[map_id] = record
            self._save_index()
            return record

    def list_maps(self, slide_id: Optional[str] = None) -> list[MapRecord]:
        if slide_id is not None and slide_id not in self._slides:
            raise NotFoundError(f"slide {slide_id!r} not found")
        records = [
            r for r in self._maps.values()
            if slide_id is None or r.slide_id == slide_id
        ]
        return sorted(records, key=lambda r: r.map_id)

    def get_map(self, map_id: str) -> MapRecord:
        try:
            return self._maps[map_id]
        except KeyError:
            raise NotFoundError(f"map {map_id!r} not found")

    def export(self, map_id: str) -> str:
        record = self.get_map(map_id)
        return (self.data_dir / record.path).read_text(encoding="utf-8")

    def load_map(self, map_id: str) -> ProbabilityMap:
        header, records = parse_prediction_file(self.export(map_id))
        return map_from_predictions(
            records, header.geometry(),
            label_kind=header.label_kind, provenance=header.model_id,
        )

    def ingest_aggregated(self, map_id: str, cfg: AggregationConfig,
                          workers: int = 1) -> MapRecord:
        """Store the block-aggregated version of a map as a derived map.

        Values re-enter the wire format, so they are rounded to its six
        fractional digits.
        """
        record = self.get_map(map_id)
        pmap = aggregate(self.load_map(map_id), cfg, workers=workers)
        derived = ProbabilityMap(
            pmap.geometry, pmap.values, pmap.coverage, pmap.label_kind,
            provenance=f"{record.provenance}+agg_w{cfg.window_w}_{cfg.func}",
        )
        canonical = map_to_prediction_file(derived, record.slide_id)
        header, _ = parse_prediction_file(canonical)
        return self._store(header, canonical, agg=cfg)
