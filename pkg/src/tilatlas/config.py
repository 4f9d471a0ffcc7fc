"""Flat key=value configuration with typed defaults.

Accepts INI-style sections or dotted keys; values are coerced to the type
of the corresponding default. Unknown keys fail loudly rather than being
silently ignored.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from .gridmap import AggregationConfig, TissueConfig

DEFAULTS = {
    "aggregation.window": 4,
    "aggregation.func": "max",
    "tissue.white_level": 220,
    "tissue.glass_fraction": 0.90,
    "render.colormap": "heat",
    "render.cancer_threshold": 0.6,
    "render.til_threshold": 0.5,
    "patch.cancer_size_px": 350,
    "patch.til_size_px": 100,
    "sampling.neg_pos_ratio": 2.0,
    "service.port": 8077,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    raw = raw.strip().strip('"').strip("'")
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key}: expected boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    values = dict(DEFAULTS)
    section = ""
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {line_no}: expected key=value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if section and "." not in key:
            key = f"{section}.{key}"
        if key not in DEFAULTS:
            raise ValueError(f"config line {line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path: Optional[str] = None) -> dict:
    if path is None:
        return dict(DEFAULTS)
    return parse_config(Path(path).read_text(encoding="utf-8"))


def aggregation_from_config(cfg: dict) -> AggregationConfig:
    return AggregationConfig(cfg["aggregation.window"], cfg["aggregation.func"])


def tissue_from_config(cfg: dict) -> TissueConfig:
    return TissueConfig(cfg["tissue.white_level"], cfg["tissue.glass_fraction"])
