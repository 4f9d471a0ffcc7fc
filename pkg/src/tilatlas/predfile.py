"""Prediction file wire format: one JSON header line, then x/y/prob TSV.

The canonical form is byte-stable so files can be content-addressed and
round-tripped: fixed header key order, records sorted row-major (y, then x),
probabilities printed with up to six fractional digits and no trailing
zeros, UTF-8 with LF endings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import PredictionFileError
from .gridmap import (
    LABEL_KINDS,
    GridGeometry,
    PredictionRecord,
    ProbabilityMap,
    grid_from_slide,
)

FORMAT_VERSION = 1

_HEADER_KEYS = (
    "format_version", "slide_id", "patch_size_px",
    "base_width", "base_height", "label_kind", "model_id",
)


@dataclass(frozen=True)
class PredictionHeader:
    slide_id: str
    patch_size_px: int
    base_width: int
    base_height: int
    label_kind: str
    model_id: str
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.label_kind not in LABEL_KINDS:
            raise PredictionFileError(
                f"label_kind must be one of {LABEL_KINDS}, got {self.label_kind!r}"
            )
        for name in ("patch_size_px", "base_width", "base_height"):
            if int(getattr(self, name)) <= 0:
                raise PredictionFileError(f"{name} must be a positive integer")

    def geometry(self) -> GridGeometry:
        return grid_from_slide(self.base_width, self.base_height, self.patch_size_px)


def _format_prob(p: float) -> str:
    text = f"{p:.6f}".rstrip("0").rstrip(".")
    return text or "0"


def format_prediction_file(header: PredictionHeader,
                           records: Iterable[PredictionRecord]) -> str:
    head = {
        "format_version": header.format_version,
        "slide_id": header.slide_id,
        "patch_size_px": header.patch_size_px,
        "base_width": header.base_width,
        "base_height": header.base_height,
        "label_kind": header.label_kind,
        "model_id": header.model_id,
    }
    lines = [json.dumps(head)]
    for rec in sorted(records, key=lambda r: (r.y, r.x)):
        lines.append(f"{rec.x}\t{rec.y}\t{_format_prob(rec.prob)}")
    return "\n".join(lines) + "\n"


def map_to_prediction_file(pmap: ProbabilityMap, slide_id: str) -> str:
    """Canonical serialization of a map's covered cells.

    Probabilities are rounded to the wire precision of six fractional
    digits, which is also why re-exported files stay byte-stable.
    """
    geom = pmap.geometry
    header = PredictionHeader(
        slide_id=slide_id,
        patch_size_px=geom.patch_size_px,
        base_width=geom.slide_width_px,
        base_height=geom.slide_height_px,
        label_kind=pmap.label_kind,
        model_id=pmap.provenance,
    )
    records = []
    for i in range(geom.rows):
        for j in range(geom.cols):
            if pmap.coverage[i, j]:
                x, y, _, _ = geom.patch_rect(i, j)
                records.append(PredictionRecord(x, y, float(pmap.values[i, j])))
    return format_prediction_file(header, records)


def _parse_header(line: str) -> PredictionHeader:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise PredictionFileError(f"header is not valid JSON: {exc}", line_no=1)
    if not isinstance(data, dict):
        raise PredictionFileError("header must be a JSON object", line_no=1)
    missing = [k for k in _HEADER_KEYS if k not in data]
    if missing:
        raise PredictionFileError(f"header missing keys: {missing}", line_no=1)
    if data["format_version"] != FORMAT_VERSION:
        raise PredictionFileError(
            f"unsupported format_version {data['format_version']!r}", line_no=1
        )
    try:
        return PredictionHeader(
            slide_id=str(data["slide_id"]),
            patch_size_px=int(data["patch_size_px"]),
            base_width=int(data["base_width"]),
            base_height=int(data["base_height"]),
            label_kind=str(data["label_kind"]),
            model_id=str(data["model_id"]),
        )
    except (TypeError, ValueError) as exc:
        raise PredictionFileError(f"bad header field: {exc}", line_no=1)


def _parse_record(line: str, line_no: int, header: PredictionHeader) -> PredictionRecord:
    parts = line.split("\t")
    if len(parts) != 3:
        raise PredictionFileError(
            f"expected 3 tab-separated fields, got {len(parts)}", line_no=line_no
        )
    try:
        x, y = int(parts[0]), int(parts[1])
    except ValueError:
        raise PredictionFileError(
            f"coordinates must be integers: {parts[0]!r}, {parts[1]!r}",
            line_no=line_no,
        )
    frac = parts[2].partition(".")[2]
    if len(frac) > 6:
        raise PredictionFileError(
            f"probability {parts[2]!r} has more than 6 fractional digits",
            line_no=line_no,
        )
    try:
        prob = float(parts[2])
    except ValueError:
        raise PredictionFileError(
            f"probability {parts[2]!r} is not a number", line_no=line_no
        )
    if not 0.0 <= prob <= 1.0:
        raise PredictionFileError(
            f"probability {prob} outside [0, 1]", line_no=line_no
        )
    p = header.patch_size_px
    if x % p != 0 or y % p != 0:
        raise PredictionFileError(
            f"coordinate ({x}, {y}) not aligned to patch size {p}", line_no=line_no
        )
    if not (0 <= x < header.base_width and 0 <= y < header.base_height):
        raise PredictionFileError(
            f"coordinate ({x}, {y}) outside slide bounds "
            f"{header.base_width}x{header.base_height}",
            line_no=line_no,
        )
    return PredictionRecord(x, y, prob)


def parse_prediction_file(text: str) -> tuple[PredictionHeader, list[PredictionRecord]]:
    """Parse and validate; every error carries the 1-based line number."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise PredictionFileError("empty prediction file", line_no=1)
    header = _parse_header(lines[0])
    records = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        records.append(_parse_record(line, line_no, header))
    return header, records
