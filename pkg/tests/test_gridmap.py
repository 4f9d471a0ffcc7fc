"""Grid model and block aggregation tests, checked against nested-loop oracles."""

import statistics

import numpy as np
import pytest

from tilatlas import gridmap as gm
from tilatlas.errors import (
    GeometryMismatchError,
    MalformedMapError,
    PredictionRecordError,
)


def oracle_block_aggregate(values, coverage, w, func):
    """Independent nested-loop evaluation of the block pooling rule.

    Tiles the grid into w x w blocks anchored at index multiples of w,
    pools the covered values of each block, and writes the pooled value to
    every cell of the block. Deliberately plain Python.
    """
    rows, cols = values.shape
    out = np.zeros((rows, cols))
    cov = np.zeros((rows, cols), dtype=bool)
    for bi in range(0, rows, w):
        for bj in range(0, cols, w):
            block = []
            for m in range(bi, min(bi + w, rows)):
                for n in range(bj, min(bj + w, cols)):
                    if coverage[m, n]:
                        block.append(values[m, n])
            if not block:
                continue
            if func == "max":
                v = max(block)
            elif func == "median":
                v = statistics.median(block)
            else:
                total = 0.0
                for x in block:
                    total = total + x
                v = total / len(block)
            for m in range(bi, min(bi + w, rows)):
                for n in range(bj, min(bj + w, cols)):
                    out[m, n] = v
                    cov[m, n] = True
    return out, cov


def random_map(rng, rows=None, cols=None, coverage_p=1.0, kind="cancer"):
    rows = rows or int(rng.integers(1, 65))
    cols = cols or int(rng.integers(1, 65))
    geom = gm.GridGeometry(cols * 350, rows * 350, 350)
    values = rng.random((rows, cols))
    coverage = rng.random((rows, cols)) < coverage_p
    return gm.ProbabilityMap(geom, values, coverage, kind)


class TestGridGeometry:
    def test_ceil_division(self):
        g = gm.grid_from_slide(3500, 3500, 350)
        assert (g.cols, g.rows) == (10, 10)

    def test_single_patch(self):
        g = gm.grid_from_slide(350, 350, 350)
        assert (g.cols, g.rows) == (1, 1)
        assert g.patch_rect(0, 0) == (0, 0, 350, 350)

    def test_edge_clipping(self):
        g = gm.grid_from_slide(3501, 3500, 350)
        assert (g.cols, g.rows) == (11, 10)
        x, y, w, h = g.patch_rect(0, 10)
        assert (x, y, w, h) == (3500, 0, 1, 350)

    @pytest.mark.parametrize("dims", [(0, 10, 5), (10, -1, 5), (10, 10, 0)])
    def test_invalid_dimensions(self, dims):
        with pytest.raises(ValueError):
            gm.grid_from_slide(*dims)

    def test_index_for_pixel_inverts_rect(self):
        g = gm.grid_from_slide(3501, 3500, 350)
        rng = np.random.default_rng(0)
        for _ in range(50):
            i = int(rng.integers(0, g.rows))
            j = int(rng.integers(0, g.cols))
            x, y, w, h = g.patch_rect(i, j)
            assert g.index_for_pixel(x, y) == (i, j)
            assert g.index_for_pixel(x + w - 1, y + h - 1) == (i, j)

    def test_out_of_grid_rect_rejected(self):
        g = gm.grid_from_slide(700, 700, 350)
        with pytest.raises(ValueError):
            g.patch_rect(2, 0)


class TestMapFromPredictions:
    def test_direct_placement(self):
        geom = gm.grid_from_slide(700, 350, 350)
        records = [gm.PredictionRecord(0, 0, 0.9), gm.PredictionRecord(350, 0, 0.1)]
        pmap = gm.map_from_predictions(records, geom)
        assert np.array_equal(pmap.values, [[0.9, 0.1]])
        assert pmap.coverage.all()

    def test_empty_records_all_uncovered(self):
        geom = gm.grid_from_slide(700, 350, 350)
        pmap = gm.map_from_predictions([], geom)
        assert not pmap.coverage.any()

    def test_misaligned_record(self):
        geom = gm.grid_from_slide(700, 350, 350)
        with pytest.raises(PredictionRecordError, match="aligned"):
            gm.map_from_predictions([gm.PredictionRecord(175, 0, 0.5)], geom)

    def test_out_of_bounds_record(self):
        geom = gm.grid_from_slide(700, 350, 350)
        with pytest.raises(PredictionRecordError, match="700, 0"):
            gm.map_from_predictions([gm.PredictionRecord(700, 0, 0.5)], geom)

    def test_duplicate_cell_named(self):
        geom = gm.grid_from_slide(700, 350, 350)
        recs = [gm.PredictionRecord(0, 0, 0.5), gm.PredictionRecord(0, 0, 0.7)]
        with pytest.raises(PredictionRecordError, match=r"i=0, j=0"):
            gm.map_from_predictions(recs, geom)

    def test_probability_out_of_range(self):
        geom = gm.grid_from_slide(700, 350, 350)
        with pytest.raises(PredictionRecordError, match="outside"):
            gm.map_from_predictions([gm.PredictionRecord(0, 0, 1.5)], geom)


class TestAggregate:
    def test_window_one_is_identity(self):
        rng = np.random.default_rng(7)
        pmap = random_map(rng, 9, 13, coverage_p=0.8)
        for func in gm.AGGREGATION_FUNCS:
            out = gm.aggregate(pmap, gm.AggregationConfig(1, func))
            assert np.array_equal(out.values, pmap.values)
            assert np.array_equal(out.coverage, pmap.coverage)

    def test_two_by_two_max(self):
        geom = gm.grid_from_slide(700, 700, 350)
        pmap = gm.ProbabilityMap(
            geom, [[0.1, 0.9], [0.2, 0.4]], np.ones((2, 2), bool), "cancer"
        )
        out = gm.aggregate(pmap, gm.AggregationConfig(2, "max"))
        assert np.array_equal(out.values, np.full((2, 2), 0.9))

    def test_two_by_two_average(self):
        geom = gm.grid_from_slide(700, 700, 350)
        pmap = gm.ProbabilityMap(
            geom, [[0.1, 0.9], [0.2, 0.4]], np.ones((2, 2), bool), "cancer"
        )
        out = gm.aggregate(pmap, gm.AggregationConfig(2, "average"))
        assert np.allclose(out.values, 0.4)
        assert (out.values == out.values[0, 0]).all()

    def test_default_config_is_max_window_four(self):
        cfg = gm.AggregationConfig()
        assert (cfg.window_w, cfg.func) == (4, "max")

    @pytest.mark.parametrize("func", gm.AGGREGATION_FUNCS)
    def test_matches_oracle_exactly(self, func):
        rng = np.random.default_rng(42)
        for _ in range(12):
            pmap = random_map(rng, coverage_p=float(rng.uniform(0.3, 1.0)))
            for w in range(1, 9):
                out = gm.aggregate(pmap, gm.AggregationConfig(w, func))
                exp_vals, exp_cov = oracle_block_aggregate(
                    pmap.values, pmap.coverage, w, func
                )
                assert np.array_equal(out.coverage, exp_cov)
                assert np.array_equal(
                    out.values[exp_cov], exp_vals[exp_cov]
                ), f"mismatch for w={w} func={func}"

    def test_max_is_monotone(self):
        rng = np.random.default_rng(3)
        pmap = random_map(rng, 16, 16)
        base = gm.aggregate(pmap, gm.AggregationConfig(4, "max"))
        for _ in range(20):
            i = int(rng.integers(0, 16))
            j = int(rng.integers(0, 16))
            bumped_vals = pmap.values.copy()
            bumped_vals[i, j] = min(1.0, bumped_vals[i, j] + float(rng.random()))
            bumped = gm.ProbabilityMap(
                pmap.geometry, bumped_vals, pmap.coverage, "cancer"
            )
            out = gm.aggregate(bumped, gm.AggregationConfig(4, "max"))
            assert (out.values >= base.values).all()

    def test_blocks_are_constant(self):
        rng = np.random.default_rng(11)
        pmap = random_map(rng, 13, 10)
        out = gm.aggregate(pmap, gm.AggregationConfig(4, "median"))
        for bi in range(0, 13, 4):
            for bj in range(0, 10, 4):
                block = out.values[bi : bi + 4, bj : bj + 4]
                assert (block == block.flat[0]).all()

    def test_uncovered_block_stays_uncovered(self):
        geom = gm.grid_from_slide(4 * 350, 4 * 350, 350)
        coverage = np.zeros((4, 4), bool)
        coverage[0, 0] = True
        pmap = gm.ProbabilityMap(geom, np.full((4, 4), 0.5), coverage, "til")
        out = gm.aggregate(pmap, gm.AggregationConfig(2, "max"))
        assert out.coverage[:2, :2].all()
        assert not out.coverage[2:, :].any()
        assert not out.coverage[:, 2:].any()

    def test_parallel_bit_identical(self):
        rng = np.random.default_rng(23)
        pmap = random_map(rng, 61, 47, coverage_p=0.7)
        for func in gm.AGGREGATION_FUNCS:
            seq = gm.aggregate(pmap, gm.AggregationConfig(3, func), workers=1)
            par = gm.aggregate(pmap, gm.AggregationConfig(3, func), workers=4)
            assert np.array_equal(seq.values, par.values)
            assert np.array_equal(seq.coverage, par.coverage)


class TestThreshold:
    def test_boundary_is_inclusive(self):
        geom = gm.grid_from_slide(700, 350, 350)
        pmap = gm.ProbabilityMap(geom, [[0.59, 0.60]], np.ones((1, 2), bool), "cancer")
        labels = gm.threshold(pmap, 0.6)
        assert labels.labels[0, 0] == gm.NEGATIVE
        assert labels.labels[0, 1] == gm.POSITIVE

    def test_zero_threshold_all_positive(self):
        rng = np.random.default_rng(5)
        pmap = random_map(rng, 8, 8, coverage_p=0.6)
        labels = gm.threshold(pmap, 0.0)
        assert (labels.labels[pmap.coverage] == gm.POSITIVE).all()
        assert (labels.labels[~pmap.coverage] == gm.UNCOVERED).all()

    def test_out_of_range_threshold(self):
        rng = np.random.default_rng(5)
        pmap = random_map(rng, 2, 2)
        with pytest.raises(ValueError):
            gm.threshold(pmap, 1.5)

    def test_positives_shrink_as_threshold_grows(self):
        rng = np.random.default_rng(19)
        pmap = random_map(rng, 20, 20, coverage_p=0.9)
        previous = None
        for t in np.linspace(0.0, 1.0, 21):
            pos = set(map(tuple, np.argwhere(gm.threshold(pmap, float(t)).positive)))
            if previous is not None:
                assert pos <= previous
            previous = pos


class TestTissueMask:
    def test_white_patch_is_glass(self):
        geom = gm.grid_from_slide(350, 350, 350)
        stats = {(0, 0): gm.PatchStats((250.0, 250.0, 250.0), 1.0)}
        mask, missing = gm.tissue_mask_from_patch_stats(stats, geom)
        assert not mask.tissue[0, 0]
        assert missing == 0

    def test_stained_patch_is_tissue(self):
        geom = gm.grid_from_slide(350, 350, 350)
        stats = {(0, 0): gm.PatchStats((180.0, 120.0, 160.0), 0.05)}
        mask, _ = gm.tissue_mask_from_patch_stats(stats, geom)
        assert mask.tissue[0, 0]

    def test_exact_boundary_is_tissue(self):
        geom = gm.grid_from_slide(350, 350, 350)
        stats = {(0, 0): gm.PatchStats((240.0, 240.0, 240.0), 0.90)}
        mask, _ = gm.tissue_mask_from_patch_stats(stats, geom)
        assert mask.tissue[0, 0]

    def test_missing_stats_default_glass_with_count(self):
        geom = gm.grid_from_slide(700, 350, 350)
        stats = {(0, 0): gm.PatchStats((180.0, 120.0, 160.0), 0.0)}
        mask, missing = gm.tissue_mask_from_patch_stats(stats, geom)
        assert missing == 1
        assert mask.tissue[0, 0] and not mask.tissue[0, 1]

    def test_raster_matches_patch_stats_route(self):
        rng = np.random.default_rng(4)
        geom = gm.grid_from_slide(40, 30, 10)
        raster = rng.integers(0, 256, size=(30, 40, 3), dtype=np.uint8)
        raster[:10, :10] = 255  # one pure glass patch
        from_raster = gm.tissue_mask_from_raster(raster, geom)
        stats = {}
        for i in range(geom.rows):
            for j in range(geom.cols):
                x, y, w, h = geom.patch_rect(i, j)
                stats[(i, j)] = gm.compute_patch_stats(raster[y : y + h, x : x + w])
        from_stats, _ = gm.tissue_mask_from_patch_stats(stats, geom)
        assert np.array_equal(from_raster.tissue, from_stats.tissue)
        assert not from_raster.tissue[0, 0]


class TestCombinedMap:
    def build(self, til_vals, tumor_vals, tissue, til_cov=None, tumor_cov=None):
        til_vals = np.atleast_2d(til_vals)
        geom = gm.grid_from_slide(til_vals.shape[1] * 350, til_vals.shape[0] * 350, 350)
        til = gm.ProbabilityMap(
            geom, til_vals, np.ones_like(til_vals, bool) if til_cov is None else til_cov, "til"
        )
        tumor = gm.ProbabilityMap(
            geom,
            np.atleast_2d(tumor_vals),
            np.ones_like(til_vals, bool) if tumor_cov is None else tumor_cov,
            "cancer",
        )
        mask = gm.TissueMask(geom, np.atleast_2d(tissue))
        return til, tumor, mask

    def test_endpoint_quantization(self):
        til, tumor, mask = self.build([[0.0]], [[1.0]], [[True]])
        cm = gm.combine(til, tumor, mask)
        assert (cm.r[0, 0], cm.g[0, 0], cm.b[0, 0]) == (0, 255, 255)

    def test_round_half_up(self):
        til, tumor, mask = self.build([[0.5]], [[0.5]], [[False]])
        cm = gm.combine(til, tumor, mask)
        assert cm.r[0, 0] == 128  # 127.5 rounds up
        assert cm.b[0, 0] == 0

    def test_uncovered_encodes_zero(self):
        til, tumor, mask = self.build(
            [[0.8]], [[0.8]], [[True]], til_cov=np.array([[False]])
        )
        cm = gm.combine(til, tumor, mask)
        assert cm.r[0, 0] == 0
        assert cm.g[0, 0] == 204

    def test_geometry_mismatch(self):
        til, tumor, mask = self.build([[0.1]], [[0.2]], [[True]])
        other_geom = gm.grid_from_slide(700, 350, 350)
        other = gm.ProbabilityMap(other_geom, [[0.1, 0.2]], np.ones((1, 2), bool), "cancer")
        with pytest.raises(GeometryMismatchError):
            gm.combine(til, other, mask)

    def test_decode_endpoints(self):
        til, tumor, mask = self.build([[0.0]], [[1.0]], [[True]])
        d_til, d_tumor, d_mask = gm.decode_combined(gm.combine(til, tumor, mask))
        assert d_til.values[0, 0] == 0.0
        assert d_tumor.values[0, 0] == 1.0
        assert d_mask.tissue[0, 0]

    def test_decode_midpoint(self):
        til, tumor, mask = self.build([[0.5]], [[0.5]], [[True]])
        d_til, _, _ = gm.decode_combined(gm.combine(til, tumor, mask))
        assert abs(d_til.values[0, 0] - 128 / 255) < 1e-12

    def test_round_trip_within_half_quantum_all_levels(self):
        # decode(quantize(c/255)) is exact for every channel value c.
        levels = np.arange(256) / 255.0
        assert np.array_equal(gm.quantize_probability(levels), np.arange(256))
        rng = np.random.default_rng(8)
        probs = rng.random((16, 16))
        geom = gm.grid_from_slide(16 * 350, 16 * 350, 350)
        til = gm.ProbabilityMap(geom, probs, np.ones((16, 16), bool), "til")
        tumor = gm.ProbabilityMap(geom, probs.T, np.ones((16, 16), bool), "cancer")
        mask = gm.TissueMask(geom, rng.random((16, 16)) < 0.5)
        d_til, d_tumor, d_mask = gm.decode_combined(gm.combine(til, tumor, mask))
        assert np.abs(d_til.values - probs).max() <= 1 / 510
        assert np.abs(d_tumor.values - probs.T).max() <= 1 / 510
        assert np.array_equal(d_mask.tissue, mask.tissue)

    def test_malformed_blue_channel(self):
        geom = gm.grid_from_slide(350, 350, 350)
        with pytest.raises(MalformedMapError):
            gm.CombinedMap(geom, [[0]], [[0]], [[7]])


class TestTilInTumor:
    def test_hand_count(self):
        geom = gm.grid_from_slide(3500, 3500, 350)
        tumor_labels = np.full((10, 10), gm.NEGATIVE, dtype=np.int8)
        tumor_labels[0, :10] = gm.POSITIVE
        til_labels = np.full((10, 10), gm.NEGATIVE, dtype=np.int8)
        til_labels[0, :3] = gm.POSITIVE
        stats = gm.til_in_tumor_fraction(
            gm.LabelMap(geom, til_labels, 0.5), gm.LabelMap(geom, tumor_labels, 0.5)
        )
        assert stats.fraction == pytest.approx(0.3)
        assert (stats.both_positive, stats.tumor_positive) == (3, 10)

    def test_zero_tumor_is_undefined(self):
        geom = gm.grid_from_slide(700, 700, 350)
        neg = gm.LabelMap(geom, np.full((2, 2), gm.NEGATIVE, np.int8), 0.5)
        stats = gm.til_in_tumor_fraction(neg, neg)
        assert stats.fraction is None
        assert not stats.defined

    def test_identical_maps_give_one(self):
        geom = gm.grid_from_slide(700, 700, 350)
        labels = np.array([[gm.POSITIVE, gm.NEGATIVE], [gm.POSITIVE, gm.UNCOVERED]], np.int8)
        lm = gm.LabelMap(geom, labels, 0.5)
        assert gm.til_in_tumor_fraction(lm, lm).fraction == 1.0

    def test_invariant_under_non_tumor_relabeling(self):
        rng = np.random.default_rng(31)
        geom = gm.grid_from_slide(3500, 3500, 350)
        tumor = np.where(rng.random((10, 10)) < 0.4, gm.POSITIVE, gm.NEGATIVE).astype(np.int8)
        til = np.where(rng.random((10, 10)) < 0.5, gm.POSITIVE, gm.NEGATIVE).astype(np.int8)
        base = gm.til_in_tumor_fraction(
            gm.LabelMap(geom, til, 0.5), gm.LabelMap(geom, tumor, 0.5)
        )
        flipped = til.copy()
        outside = tumor != gm.POSITIVE
        flipped[outside] = np.where(
            rng.random((10, 10)) < 0.5, gm.POSITIVE, gm.NEGATIVE
        ).astype(np.int8)[outside]
        again = gm.til_in_tumor_fraction(
            gm.LabelMap(geom, flipped, 0.5), gm.LabelMap(geom, tumor, 0.5)
        )
        assert again.fraction == base.fraction
        assert again.both_positive == base.both_positive

    def test_geometry_mismatch(self):
        a = gm.LabelMap(gm.grid_from_slide(700, 700, 350), np.zeros((2, 2), np.int8), 0.5)
        b = gm.LabelMap(gm.grid_from_slide(350, 350, 350), np.zeros((1, 1), np.int8), 0.5)
        with pytest.raises(GeometryMismatchError):
            gm.til_in_tumor_fraction(a, b)


def test_maps_are_immutable():
    rng = np.random.default_rng(1)
    pmap = random_map(rng, 4, 4)
    with pytest.raises(ValueError):
        pmap.values[0, 0] = 0.5
    with pytest.raises(ValueError):
        pmap.coverage[0, 0] = False
