"""Command-line interface: a thin client over the core package.

Every verb calls the same library code paths the HTTP service uses, so
offline runs and served results agree byte-for-byte.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import concord as cc
from . import evaluate as ev
from . import patchprep as pp
from . import render as rd
from .catalog import Catalog, SlideManifest
from .config import aggregation_from_config, load_config
from .demo import PATCH_SIZE, SLIDE_SIZE, build_demo_assets
from .gridmap import (
    AggregationConfig,
    aggregate as aggregate_map,
    grid_from_slide,
    threshold as threshold_map,
    til_in_tumor_fraction,
    tissue_mask_from_raster,
)
from .predfile import parse_prediction_file
from .gridmap import map_from_predictions


def _load_map_file(path):
    header, records = parse_prediction_file(Path(path).read_text(encoding="utf-8"))
    pmap = map_from_predictions(records, header.geometry(),
                                label_kind=header.label_kind,
                                provenance=header.model_id)
    return header, pmap


def _truth_for(pmap, annotation_path):
    aset = pp.load_annotations(annotation_path)
    return pp.rasterize_annotations(aset, pmap.geometry)


def _parse_ordinal(value: str) -> int:
    value = value.strip().lower()
    if value in cc.ORDINAL_LEVELS:
        return cc.ORDINAL_LEVELS[value]
    return int(value)


def _read_csv_columns(path) -> dict[str, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list[str]] = {name: [] for name in reader.fieldnames or ()}
        for row in reader:
            for name in columns:
                columns[name].append(row[name])
    return columns


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="key=value config file overriding defaults.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for all randomized verbs.")
@click.pass_context
def main(ctx, config_path, seed):
    """Patch-grid probability map toolkit: ingest, aggregate, render, evaluate."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = load_config(config_path)
    ctx.obj["seed"] = seed


@main.command()
@click.argument("pred_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
def ingest(pred_file, data_dir):
    """Parse a prediction file and store it in the catalog."""
    record = Catalog(data_dir).ingest(Path(pred_file).read_text(encoding="utf-8"))
    click.echo(json.dumps(record.to_dict()))


@main.command()
@click.argument("map_id")
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("-w", "--window", type=int, default=None, help="Block window size.")
@click.option("-f", "--func", type=click.Choice(["max", "median", "average"]),
              default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.pass_context
def aggregate(ctx, map_id, data_dir, window, func, workers):
    """Store the block-aggregated version of a catalog map."""
    cfg_default = aggregation_from_config(ctx.obj["config"])
    cfg = AggregationConfig(
        window if window is not None else cfg_default.window_w,
        func if func is not None else cfg_default.func,
    )
    record = Catalog(data_dir).ingest_aggregated(map_id, cfg, workers=workers)
    click.echo(json.dumps(record.to_dict()))


@main.command()
@click.argument("til_map_id")
@click.argument("tumor_map_id")
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False),
              help="Display overlay PNG path.")
@click.option("--encoded-out", type=click.Path(dir_okay=False), default=None,
              help="Optional lossless RGB-encoded combined map PNG.")
@click.option("--til-threshold", type=float, default=rd.DEFAULT_TIL_THRESHOLD,
              show_default=True)
@click.option("--tumor-threshold", type=float, default=rd.DEFAULT_CANCER_THRESHOLD,
              show_default=True)
def combine(til_map_id, tumor_map_id, data_dir, out, encoded_out,
            til_threshold, tumor_threshold):
    """Fuse a TIL map and a cancer map into the red/yellow/grey/white overlay."""
    catalog = Catalog(data_dir)
    til_rec = catalog.get_map(til_map_id)
    tumor_rec = catalog.get_map(tumor_map_id)
    til_map = catalog.load_map(til_map_id)
    tumor_map = catalog.load_map(tumor_map_id)
    slide = catalog.get_slide(til_rec.slide_id)
    if slide.raster_path is not None:
        mask = tissue_mask_from_raster(catalog.load_slide_raster(slide.slide_id),
                                       til_map.geometry)
    else:
        from .gridmap import TissueMask
        mask = TissueMask(til_map.geometry, til_map.coverage | tumor_map.coverage)
    tumor_agg = None if tumor_rec.agg_window is not None else rd.DEFAULT_CANCER_AGG
    encoded, display = rd.combined_pipeline(
        til_map, tumor_map, mask,
        til_threshold=til_threshold, tumor_threshold=tumor_threshold,
        tumor_agg=tumor_agg,
    )
    Image.fromarray(display).save(out, format="PNG", optimize=False)
    if encoded_out:
        Image.fromarray(encoded.to_rgb_array()).save(encoded_out, format="PNG",
                                                     optimize=False)
    click.echo(json.dumps({"display": out, "encoded": encoded_out}))


@main.command()
@click.argument("map_id")
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--colormap", type=click.Choice(["grayscale", "heat"]), default="heat",
              show_default=True)
@click.option("--threshold", type=float, default=None)
@click.option("--agg-w", type=int, default=None)
@click.option("--agg-f", type=click.Choice(["max", "median", "average"]), default=None)
@click.option("--raw", is_flag=True, help="Disable the per-kind display defaults.")
def render(map_id, data_dir, out, colormap, threshold, agg_w, agg_f, raw):
    """Render a catalog map to a heatmap PNG (one pixel per patch)."""
    catalog = Catalog(data_dir)
    record = catalog.get_map(map_id)
    pmap = catalog.load_map(map_id)
    if raw or agg_w is not None or agg_f is not None or threshold is not None:
        agg = AggregationConfig(agg_w, agg_f or "max") if agg_w else None
        t = threshold
    else:
        agg, t = rd.default_render_params(record.label_kind)
        if record.agg_window is not None:
            agg = None
    array = rd.render_heatmap(pmap, colormap=colormap, threshold=t, agg=agg)
    Path(out).write_bytes(rd.png_bytes(array))
    click.echo(json.dumps({"out": out, "threshold": t,
                           "agg": None if agg is None else [agg.window_w, agg.func]}))


@main.group(name="eval")
def eval_group():
    """Evaluate prediction files against polygon-annotation truth."""


@eval_group.command()
@click.argument("pred_files", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_files", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Annotation JSON; give one per prediction file or a single "
                   "one shared by all.")
@click.option("-o", "--out", type=click.Path(dir_okay=False), default=None,
              help="CSV output path (default: stdout).")
def sweep(pred_files, truth_files, out):
    """Threshold sweep 0.00..1.00; reports mean F1 and the best threshold."""
    if len(truth_files) == 1:
        truth_files = truth_files * len(pred_files)
    if len(truth_files) != len(pred_files):
        raise click.UsageError("give one --truth per prediction file, or one total")
    pairs = []
    for pred_path, truth_path in zip(pred_files, truth_files):
        _, pmap = _load_map_file(pred_path)
        pairs.append((pmap, _truth_for(pmap, truth_path)))
    result = ev.threshold_sweep(pairs)
    csv_text = ev.sweep_to_csv(result)
    if out:
        Path(out).write_text(csv_text, encoding="utf-8")
    else:
        click.echo(csv_text, nl=False)
    best_idx = result.thresholds.index(result.best_threshold)
    click.echo(json.dumps({
        "best_threshold": round(result.best_threshold, 2),
        "best_mean_f1": result.mean_f1[best_idx],
        "n_images": len(pairs),
    }))


@eval_group.command()
@click.argument("pred_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=float, default=rd.DEFAULT_CANCER_THRESHOLD,
              show_default=True)
@click.option("--agg-w", type=int, default=None,
              help="Pool with this window before thresholding.")
@click.option("--agg-f", type=click.Choice(["max", "median", "average"]),
              default="max", show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), default=None,
              help="Confusion render PNG (TP green, FN red, FP yellow, TN blue).")
@click.option("--metrics-out", type=click.Path(dir_okay=False), default=None)
def confusion(pred_file, truth_file, threshold, agg_w, agg_f, out, metrics_out):
    """Confusion counts and the metric suite at one threshold."""
    _, pmap = _load_map_file(pred_file)
    if agg_w:
        pmap = aggregate_map(pmap, AggregationConfig(agg_w, agg_f))
    truth = _truth_for(pmap, truth_file)
    pred_labels = threshold_map(pmap, threshold)
    counts = ev.confusion(pred_labels, truth)
    report = ev.metrics(counts)
    payload = {
        "threshold": threshold,
        "counts": {"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn},
        "metrics": report.to_json_dict(),
    }
    if out:
        img = ev.render_confusion(pred_labels, truth)
        Image.fromarray(img).save(out, format="PNG", optimize=False)
        payload["render"] = out
    if metrics_out:
        Path(metrics_out).write_text(json.dumps(payload, indent=2) + "\n",
                                     encoding="utf-8")
    click.echo(json.dumps(payload))


@main.group()
def concord():
    """Super-patch scoring and correlation estimators."""


@concord.command()
@click.argument("ratings_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--col-a", required=True, help="First ordinal rating column.")
@click.option("--col-b", required=True, help="Second ordinal rating column.")
@click.option("--ci/--no-ci", default=True, show_default=True)
@click.option("--resamples", type=int, default=2000, show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.pass_context
def polychoric(ctx, ratings_csv, col_a, col_b, ci, resamples, level):
    """Polychoric correlation between two ordinal rating columns."""
    columns = _read_csv_columns(ratings_csv)
    a = [_parse_ordinal(v) for v in columns[col_a]]
    b = [_parse_ordinal(v) for v in columns[col_b]]
    if ci:
        est = cc.polychoric_with_ci(a, b, n_resamples=resamples, level=level,
                                    seed=ctx.obj["seed"])
    else:
        est = cc.polychoric(cc.contingency_table(a, b))
    click.echo(json.dumps(est.to_json_dict()))


@concord.command()
@click.argument("ratings_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--machine-col", required=True, help="Continuous machine-score column.")
@click.option("--rater-col", required=True, help="Ordinal rating column.")
@click.option("--ci/--no-ci", default=True, show_default=True)
@click.option("--resamples", type=int, default=2000, show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.pass_context
def polyserial(ctx, ratings_csv, machine_col, rater_col, ci, resamples, level):
    """Polyserial correlation between machine scores and an ordinal column."""
    columns = _read_csv_columns(ratings_csv)
    x = [float(v) for v in columns[machine_col]]
    y = [_parse_ordinal(v) for v in columns[rater_col]]
    if ci:
        est = cc.polyserial_with_ci(x, y, n_resamples=resamples, level=level,
                                    seed=ctx.obj["seed"])
    else:
        est = cc.polyserial(x, y)
    click.echo(json.dumps(est.to_json_dict()))


@concord.command()
@click.argument("pred_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", type=float, default=rd.DEFAULT_TIL_THRESHOLD,
              show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), default=None,
              help="CSV output path (default: stdout).")
def superpatch(pred_file, threshold, out):
    """Count TIL-positive patches per 8x8 super-patch block."""
    _, pmap = _load_map_file(pred_file)
    labels = threshold_map(pmap, threshold)
    scores = cc.super_patch_scores(labels)
    buf = io.StringIO()
    buf.write("block_i,block_j,machine_count,n_cells\n")
    for s in scores:
        buf.write(f"{s.block_i},{s.block_j},{s.machine_count},{s.n_cells}\n")
    if out:
        Path(out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        click.echo(buf.getvalue(), nl=False)
    click.echo(json.dumps({
        "n_blocks": len(scores),
        "total_positive": sum(s.machine_count for s in scores),
    }))


@main.group()
def patchprep():
    """Annotation labeling, ratio sampling, and patch transforms."""


@patchprep.command()
@click.argument("annotation_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--width", type=int, required=True, help="Slide width in px.")
@click.option("--height", type=int, required=True, help="Slide height in px.")
@click.option("--patch", "patch_size", type=int, required=True)
@click.option("--split", type=click.Choice(list(pp.SPLITS)), default="train",
              show_default=True)
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
def label(annotation_json, width, height, patch_size, split, out):
    """Label every grid patch by the polygon-intersection rule."""
    aset = pp.load_annotations(annotation_json)
    geometry = grid_from_slide(width, height, patch_size)
    records = pp.label_patches(aset, geometry, split=split)
    lines = [json.dumps({
        "slide_id": r.slide_id, "i": r.i, "j": r.j, "rect": list(r.rect),
        "label": r.label, "split": r.source_split,
    }) for r in records]
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    n_pos = sum(r.label == "positive" for r in records)
    click.echo(json.dumps({"patches": len(records), "positive": n_pos,
                           "negative": len(records) - n_pos, "out": out}))


@patchprep.command()
@click.argument("labels_jsonl", type=click.Path(exists=True, dir_okay=False))
@click.option("--ratio", type=float, required=True,
              help="Target negatives per positive.")
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def sample(ctx, labels_jsonl, ratio, out):
    """Sample a training set: all positives plus seeded negatives at the ratio."""
    records = []
    for line in Path(labels_jsonl).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if "n_patches" in d:  # manifest header from a previous sampling pass
            continue
        records.append(pp.PatchLabelRecord(
            d["slide_id"], d["i"], d["j"], tuple(d["rect"]), d["label"], d["split"]
        ))
    manifest = pp.sample_training_set(records, ratio, seed=ctx.obj["seed"])
    Path(out).write_text(pp.manifest_to_jsonl(manifest), encoding="utf-8")
    click.echo(json.dumps({
        "n_patches": manifest.n_patches,
        "n_positive": manifest.n_positive,
        "n_negative": manifest.n_negative,
        "warnings": list(manifest.warnings),
        "out": out,
    }))


@patchprep.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out", required=True, type=click.Path(dir_okay=False))
@click.option("--draw-seed", type=int, default=0, show_default=True)
@click.option("--rotation-max", type=float, default=22.5, show_default=True)
@click.option("--hflip-p", type=float, default=0.5, show_default=True)
@click.option("--vflip-p", type=float, default=0.5, show_default=True)
@click.option("--brightness", type=float, default=0.1, show_default=True)
@click.option("--contrast", type=float, default=0.1, show_default=True)
@click.option("--saturation", type=float, default=0.1, show_default=True)
@click.pass_context
def transform(ctx, image, out, draw_seed, rotation_max, hflip_p, vflip_p,
              brightness, contrast, saturation):
    """Apply the seeded augmentation pipeline to one image."""
    cfg = pp.TransformConfig(
        rotation_max_deg=rotation_max, hflip_p=hflip_p, vflip_p=vflip_p,
        brightness=brightness, contrast=contrast, saturation=saturation,
        seed=ctx.obj["seed"],
    )
    with Image.open(image) as img:
        patch = np.asarray(img.convert("RGB"))
    result = pp.augment(patch, cfg, draw_seed=draw_seed)
    Image.fromarray(result).save(out, format="PNG", optimize=False)
    click.echo(json.dumps({"out": out,
                           "params": pp.draw_transform_params(cfg, draw_seed)}))


@main.command()
@click.option("--port", type=int, default=None, help="Defaults to service.port.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
def serve(ctx, port, host, data_dir):
    """Run the HTTP API."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_dir), host=host,
                port=port if port is not None else ctx.obj["config"]["service.port"],
                log_level="warning")


@main.command()
@click.option("--data-dir", required=True, type=click.Path(file_okay=False))
@click.pass_context
def demo(ctx, data_dir):
    """Build the synthetic slide and run ingest through stats end to end."""
    data_dir = Path(data_dir)
    assets = build_demo_assets(data_dir / "demo", seed=ctx.obj["seed"])
    catalog = Catalog(data_dir)
    catalog.register_slide(SlideManifest(
        slide_id=assets.slide_id, base_width=SLIDE_SIZE, base_height=SLIDE_SIZE,
        patch_sizes=(PATCH_SIZE,), raster_path=str(assets.raster_path),
    ))
    cancer_rec = catalog.ingest(assets.cancer_pred_path.read_text(encoding="utf-8"))
    til_rec = catalog.ingest(assets.til_pred_path.read_text(encoding="utf-8"))
    agg_rec = catalog.ingest_aggregated(cancer_rec.map_id, rd.DEFAULT_CANCER_AGG)

    til_map = catalog.load_map(til_rec.map_id)
    agg_map = catalog.load_map(agg_rec.map_id)
    mask = tissue_mask_from_raster(catalog.load_slide_raster(assets.slide_id),
                                   til_map.geometry)
    encoded, display = rd.combined_pipeline(til_map, agg_map, mask, tumor_agg=None)
    display_path = data_dir / "demo" / "combined.png"
    Image.fromarray(display).save(display_path, format="PNG", optimize=False)

    raw_cancer = catalog.load_map(cancer_rec.map_id)
    truth = pp.rasterize_annotations(pp.load_annotations(assets.annotation_path),
                                     raw_cancer.geometry)
    sweep_result = ev.threshold_sweep([(agg_map, truth)])
    counts = ev.confusion(threshold_map(agg_map, rd.DEFAULT_CANCER_THRESHOLD), truth)
    report = ev.metrics(counts)

    stats = til_in_tumor_fraction(
        threshold_map(til_map, rd.DEFAULT_TIL_THRESHOLD),
        threshold_map(agg_map, rd.DEFAULT_CANCER_THRESHOLD),
    )
    best_idx = sweep_result.thresholds.index(sweep_result.best_threshold)
    click.echo(json.dumps({
        "slide_id": assets.slide_id,
        "cancer_map": cancer_rec.map_id,
        "til_map": til_rec.map_id,
        "aggregated_map": agg_rec.map_id,
        "combined_png": str(display_path),
        "best_threshold": round(sweep_result.best_threshold, 2),
        "best_mean_f1": sweep_result.mean_f1[best_idx],
        "f1_at_default": report.f1,
        "til_in_tumor_fraction": stats.fraction,
        "tumor_patches": stats.tumor_positive,
        "til_patches": stats.til_positive,
        "tissue_patches": mask.n_tissue,
    }))


if __name__ == "__main__":
    main()
