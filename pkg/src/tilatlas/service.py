"""HTTP API over the catalog: listing, ingestion, renders, tiles, stats.

Read endpoints are pure functions of the stored map bytes plus query
parameters, so responses are byte-deterministic and safely cacheable.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import render as rd
from .catalog import Catalog, MapRecord, SlideManifest
from .errors import (
    ConflictError,
    GeometryMismatchError,
    NotFoundError,
    PredictionFileError,
    PredictionRecordError,
    TilAtlasError,
)
from .gridmap import (
    AggregationConfig,
    ProbabilityMap,
    TissueMask,
    threshold as threshold_map,
    til_in_tumor_fraction,
    tissue_mask_from_raster,
)


class SlideOut(BaseModel):
    slide_id: str
    base_width: int
    base_height: int
    patch_sizes: list[int]
    mpp: Optional[float] = None
    tile_size: int
    n_levels: int
    has_raster: bool

    @classmethod
    def from_manifest(cls, m: SlideManifest) -> "SlideOut":
        return cls(
            slide_id=m.slide_id,
            base_width=m.base_width,
            base_height=m.base_height,
            patch_sizes=list(m.patch_sizes),
            mpp=m.mpp,
            tile_size=m.tile_size,
            n_levels=m.n_levels,
            has_raster=m.raster_path is not None,
        )


class MapOut(BaseModel):
    map_id: str
    slide_id: str
    label_kind: str
    provenance: str
    patch_size_px: int
    created_at: str
    agg_window: Optional[int] = None
    agg_func: Optional[str] = None
    grid_cols: int
    grid_rows: int

    @classmethod
    def from_record(cls, r: MapRecord, catalog: Catalog) -> "MapOut":
        slide = catalog.get_slide(r.slide_id)
        cols = -(-slide.base_width // r.patch_size_px)
        rows = -(-slide.base_height // r.patch_size_px)
        return cls(
            map_id=r.map_id,
            slide_id=r.slide_id,
            label_kind=r.label_kind,
            provenance=r.provenance,
            patch_size_px=r.patch_size_px,
            created_at=r.created_at,
            agg_window=r.agg_window,
            agg_func=r.agg_func,
            grid_cols=cols,
            grid_rows=rows,
        )


class StatsOut(BaseModel):
    til_map_id: str
    tumor_map_id: str
    til_in_tumor_fraction: Optional[float]
    fraction_undefined_reason: Optional[str] = None
    tumor_patch_count: int
    til_patch_count: int
    both_positive_count: int
    tissue_patch_count: int


def _error_response(status: int, code: str, exc: Exception) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": str(exc), "detail": type(exc).__name__},
    )


def _png(array: np.ndarray) -> Response:
    return Response(content=rd.png_bytes(array), media_type="image/png")


def _resolve_agg(record: MapRecord, agg_w: Optional[int], agg_f: Optional[str],
                 raw: bool) -> Optional[AggregationConfig]:
    if raw:
        if agg_w is not None:
            return AggregationConfig(agg_w, agg_f or "max")
        return None
    if agg_w is None and agg_f is None:
        default_agg, _ = rd.default_render_params(record.label_kind)
        # A stored map that is already aggregated is not pooled again.
        if record.agg_window is not None:
            return None
        return default_agg
    return AggregationConfig(agg_w if agg_w is not None else 4, agg_f or "max")


def _resolve_threshold(record: MapRecord, threshold: Optional[float],
                       raw: bool) -> Optional[float]:
    if threshold is not None:
        return threshold
    if raw:
        return None
    _, default_t = rd.default_render_params(record.label_kind)
    return default_t


def create_app(data_dir) -> FastAPI:
    catalog = Catalog(data_dir)
    app = FastAPI(title="tilatlas", docs_url=None, redoc_url=None)
    app.state.catalog = catalog

    @app.exception_handler(NotFoundError)
    async def on_not_found(request: Request, exc: NotFoundError):
        return _error_response(404, "not_found", exc)

    @app.exception_handler(ConflictError)
    async def on_conflict(request: Request, exc: ConflictError):
        return _error_response(409, "conflict", exc)

    @app.exception_handler(PredictionFileError)
    async def on_bad_file(request: Request, exc: PredictionFileError):
        return _error_response(400, "bad_prediction_file", exc)

    @app.exception_handler(PredictionRecordError)
    async def on_bad_record(request: Request, exc: PredictionRecordError):
        return _error_response(400, "bad_prediction_record", exc)

    @app.exception_handler(GeometryMismatchError)
    async def on_mismatch(request: Request, exc: GeometryMismatchError):
        return _error_response(400, "geometry_mismatch", exc)

    @app.exception_handler(TilAtlasError)
    async def on_domain_error(request: Request, exc: TilAtlasError):
        return _error_response(400, "bad_request", exc)

    @app.exception_handler(ValueError)
    async def on_value_error(request: Request, exc: ValueError):
        return _error_response(400, "bad_request", exc)

    # -- catalog -------------------------------------------------------------

    @app.get("/slides", response_model=list[SlideOut])
    def list_slides():
        return [SlideOut.from_manifest(m) for m in catalog.list_slides()]

    @app.get("/slides/{slide_id}", response_model=SlideOut)
    def get_slide(slide_id: str):
        return SlideOut.from_manifest(catalog.get_slide(slide_id))

    @app.get("/slides/{slide_id}/maps", response_model=list[MapOut])
    def list_slide_maps(slide_id: str):
        return [MapOut.from_record(r, catalog) for r in catalog.list_maps(slide_id)]

    @app.get("/maps", response_model=list[MapOut])
    def list_maps():
        return [MapOut.from_record(r, catalog) for r in catalog.list_maps()]

    @app.get("/maps/{map_id}", response_model=MapOut)
    def get_map(map_id: str):
        return MapOut.from_record(catalog.get_map(map_id), catalog)

    @app.post("/maps", response_model=MapOut)
    async def ingest_map(request: Request):
        text = (await request.body()).decode("utf-8")
        record = catalog.ingest(text)
        return MapOut.from_record(record, catalog)

    @app.get("/maps/{map_id}/export")
    def export_map(map_id: str):
        return Response(content=catalog.export(map_id),
                        media_type="text/plain; charset=utf-8")

    # -- renders -------------------------------------------------------------

    def _render_array(map_id: str, colormap: str, threshold: Optional[float],
                      agg_w: Optional[int], agg_f: Optional[str],
                      raw: bool) -> np.ndarray:
        record = catalog.get_map(map_id)
        pmap = catalog.load_map(map_id)
        agg = _resolve_agg(record, agg_w, agg_f, raw)
        t = _resolve_threshold(record, threshold, raw)
        return rd.render_heatmap(pmap, colormap=colormap, threshold=t, agg=agg)

    @app.get("/maps/{map_id}/png")
    def map_png(map_id: str, colormap: str = "heat",
                threshold: Optional[float] = Query(default=None, ge=0.0, le=1.0),
                agg_w: Optional[int] = Query(default=None, ge=1),
                agg_f: Optional[str] = None, raw: bool = False):
        return _png(_render_array(map_id, colormap, threshold, agg_w, agg_f, raw))

    def _combined_parts(map_id: str, other_id: str) -> tuple[
        ProbabilityMap, ProbabilityMap, MapRecord, MapRecord
    ]:
        rec_a = catalog.get_map(map_id)
        rec_b = catalog.get_map(other_id)
        kinds = {rec_a.label_kind, rec_b.label_kind}
        if kinds != {"til", "cancer"}:
            raise TilAtlasError(
                "combined rendering needs one til map and one cancer map, got "
                f"{rec_a.label_kind!r} and {rec_b.label_kind!r}"
            )
        if rec_a.label_kind == "til":
            til_rec, tumor_rec = rec_a, rec_b
        else:
            til_rec, tumor_rec = rec_b, rec_a
        return (catalog.load_map(til_rec.map_id), catalog.load_map(tumor_rec.map_id),
                til_rec, tumor_rec)

    def _tissue_mask(til_map: ProbabilityMap, tumor_map: ProbabilityMap,
                     slide_id: str) -> TissueMask:
        manifest = catalog.get_slide(slide_id)
        if manifest.raster_path is not None:
            raster = catalog.load_slide_raster(slide_id)
            return tissue_mask_from_raster(raster, til_map.geometry)
        # Without pixels to inspect, treat every covered patch as tissue.
        return TissueMask(til_map.geometry, til_map.coverage | tumor_map.coverage)

    @app.get("/maps/{map_id}/combined/{other_id}/png")
    def combined_png(map_id: str, other_id: str,
                     til_threshold: float = Query(default=rd.DEFAULT_TIL_THRESHOLD,
                                                  ge=0.0, le=1.0),
                     tumor_threshold: float = Query(default=rd.DEFAULT_CANCER_THRESHOLD,
                                                    ge=0.0, le=1.0)):
        til_map, tumor_map, til_rec, tumor_rec = _combined_parts(map_id, other_id)
        mask = _tissue_mask(til_map, tumor_map, til_rec.slide_id)
        tumor_agg = None if tumor_rec.agg_window is not None else rd.DEFAULT_CANCER_AGG
        _, display = rd.combined_pipeline(
            til_map, tumor_map, mask,
            til_threshold=til_threshold, tumor_threshold=tumor_threshold,
            tumor_agg=tumor_agg,
        )
        return _png(display)

    @app.get("/maps/{map_id}/combined/{other_id}/encoded.png")
    def combined_encoded_png(map_id: str, other_id: str):
        til_map, tumor_map, til_rec, tumor_rec = _combined_parts(map_id, other_id)
        mask = _tissue_mask(til_map, tumor_map, til_rec.slide_id)
        tumor_agg = None if tumor_rec.agg_window is not None else rd.DEFAULT_CANCER_AGG
        encoded, _ = rd.combined_pipeline(til_map, tumor_map, mask,
                                          tumor_agg=tumor_agg)
        return _png(encoded.to_rgb_array())

    # -- tiles ---------------------------------------------------------------

    @app.get("/maps/{map_id}/tiles/{z}/{x}/{y}.png")
    def map_tile(map_id: str, z: int, x: int, y: int, colormap: str = "heat",
                 threshold: Optional[float] = Query(default=None, ge=0.0, le=1.0),
                 agg_w: Optional[int] = Query(default=None, ge=1),
                 agg_f: Optional[str] = None, raw: bool = False):
        base = _render_array(map_id, colormap, threshold, agg_w, agg_f, raw)
        return _png(rd.tile_from_base(base, z, x, y))

    @app.get("/slides/{slide_id}/tiles/{z}/{x}/{y}.png")
    def slide_tile(slide_id: str, z: int, x: int, y: int):
        raster = catalog.load_slide_raster(slide_id)
        return _png(rd.tile_from_base(raster, z, x, y))

    # -- stats ---------------------------------------------------------------

    @app.get("/maps/{map_id}/stats", response_model=StatsOut)
    def map_stats(map_id: str, tumor: str,
                  til_threshold: float = Query(default=rd.DEFAULT_TIL_THRESHOLD,
                                               ge=0.0, le=1.0),
                  tumor_threshold: float = Query(default=rd.DEFAULT_CANCER_THRESHOLD,
                                                 ge=0.0, le=1.0)):
        til_map, tumor_map, til_rec, tumor_rec = _combined_parts(map_id, tumor)
        if tumor_rec.agg_window is None:
            tumor_map = rd.aggregate(tumor_map, rd.DEFAULT_CANCER_AGG)
        til_labels = threshold_map(til_map, til_threshold)
        tumor_labels = threshold_map(tumor_map, tumor_threshold)
        stats = til_in_tumor_fraction(til_labels, tumor_labels)
        mask = _tissue_mask(til_map, tumor_map, til_rec.slide_id)
        return StatsOut(
            til_map_id=til_rec.map_id,
            tumor_map_id=tumor_rec.map_id,
            til_in_tumor_fraction=stats.fraction,
            fraction_undefined_reason=(
                None if stats.defined else "no tumor-positive patches"
            ),
            tumor_patch_count=stats.tumor_positive,
            til_patch_count=stats.til_positive,
            both_positive_count=stats.both_positive,
            tissue_patch_count=mask.n_tissue,
        )

    return app
