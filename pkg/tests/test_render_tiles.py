"""Heatmap/overlay rendering and tile pyramid tests."""

import io

import numpy as np
import pytest
from PIL import Image

from tilatlas import gridmap as gm
from tilatlas import render as rd
from tilatlas.errors import NotFoundError


def prob_map(values, coverage=None, kind="cancer"):
    values = np.asarray(values, dtype=np.float64)
    geom = gm.grid_from_slide(values.shape[1] * 10, values.shape[0] * 10, 10)
    if coverage is None:
        coverage = np.ones(values.shape, bool)
    return gm.ProbabilityMap(geom, values, coverage, kind)


class TestHeatmap:
    def test_grayscale_pixel_is_rounded_probability(self):
        pmap = prob_map([[0.0, 0.25, 0.5, 1.0]])
        img = rd.render_heatmap(pmap, colormap="grayscale", threshold=0.0)
        assert list(img[0, :, 0]) == [0, 64, 128, 255]
        assert (img[0, :, 3] == 255).all()

    def test_uncovered_fully_transparent(self):
        pmap = prob_map([[0.8, 0.8]], coverage=np.array([[True, False]]))
        img = rd.render_heatmap(pmap)
        assert img[0, 1, 3] == 0
        assert (img[0, 1, :3] == 0).all()
        assert img[0, 0, 3] == 255

    def test_threshold_hides_low_patches(self):
        pmap = prob_map([[0.59, 0.60]])
        img = rd.render_heatmap(pmap, threshold=0.6)
        assert img[0, 0, 3] == 0
        assert img[0, 1, 3] == 255

    def test_heat_colormap_endpoints(self):
        img = rd.render_heatmap(prob_map([[0.0, 1.0]]))
        assert tuple(img[0, 0, :3]) == (0, 0, 255)  # blue end
        assert tuple(img[0, 1, :3]) == (255, 0, 0)  # red end

    def test_aggregation_applied_before_threshold(self):
        values = np.full((4, 4), 0.2)
        values[0, 0] = 0.9
        img = rd.render_heatmap(prob_map(values), threshold=0.6,
                                agg=gm.AggregationConfig(4, "max"))
        assert (img[:, :, 3] == 255).all()  # max pools 0.9 over the block

    def test_unknown_colormap_rejected(self):
        with pytest.raises(ValueError):
            rd.render_heatmap(prob_map([[0.5]]), colormap="viridis")

    def test_png_bytes_deterministic(self):
        rng = np.random.default_rng(3)
        pmap = prob_map(rng.random((20, 30)))
        a = rd.png_bytes(rd.render_heatmap(pmap, threshold=0.4))
        b = rd.png_bytes(rd.render_heatmap(pmap, threshold=0.4))
        assert a == b

    def test_default_params_per_kind(self):
        agg, t = rd.default_render_params("cancer")
        assert (agg.window_w, agg.func, t) == (4, "max", 0.6)
        assert rd.default_render_params("til") == (None, None)


class TestCombinedDisplay:
    def test_golden_precedence_grid(self):
        geom = gm.grid_from_slide(40, 40, 10)
        til = np.full((4, 4), gm.NEGATIVE, np.int8)
        tumor = np.full((4, 4), gm.NEGATIVE, np.int8)
        tissue = np.zeros((4, 4), bool)
        til[0, 0] = gm.POSITIVE
        tumor[0, 0] = gm.POSITIVE  # both positive: red wins
        tumor[1, 1] = gm.POSITIVE  # tumor only: yellow
        tissue[:3, :3] = True      # tissue else grey; outside stays white
        img = rd.render_combined_display(
            gm.LabelMap(geom, til, 0.5), gm.LabelMap(geom, tumor, 0.6),
            gm.TissueMask(geom, tissue),
        )
        assert tuple(img[0, 0]) == rd.TIL_COLOR
        assert tuple(img[1, 1]) == rd.TUMOR_COLOR
        assert tuple(img[2, 2]) == rd.TISSUE_COLOR
        assert tuple(img[3, 3]) == rd.BACKGROUND_COLOR

    def test_red_shown_even_off_tissue(self):
        geom = gm.grid_from_slide(10, 10, 10)
        til = gm.LabelMap(geom, np.array([[gm.POSITIVE]], np.int8), 0.5)
        tumor = gm.LabelMap(geom, np.array([[gm.NEGATIVE]], np.int8), 0.6)
        mask = gm.TissueMask(geom, np.array([[False]]))
        img = rd.render_combined_display(til, tumor, mask)
        assert tuple(img[0, 0]) == rd.TIL_COLOR

    def test_pipeline_encodes_post_aggregation_probabilities(self):
        til = prob_map(np.full((4, 4), 0.2), kind="til")
        tumor_vals = np.full((4, 4), 0.1)
        tumor_vals[0, 0] = 0.8
        tumor = prob_map(tumor_vals, kind="cancer")
        mask = gm.TissueMask(til.geometry, np.ones((4, 4), bool))
        encoded, display = rd.combined_pipeline(til, tumor, mask)
        assert (encoded.g == gm.quantize_probability(0.8)).all()
        assert (display == rd.TUMOR_COLOR).all(axis=2).all()


class TestTiles:
    def checker(self, h, w):
        rng = np.random.default_rng(7)
        return rng.integers(0, 256, (h, w, 4), dtype=np.uint8)

    def test_stitched_level_zero_equals_base(self):
        base = self.checker(700, 900)
        stitched = rd.stitch_level(base, 0)
        assert np.array_equal(stitched, base)

    def test_top_level_single_tile(self):
        base = self.checker(700, 900)
        levels = rd.n_pyramid_levels(900, 700)
        lw, lh = rd.level_dims(900, 700, levels - 1)
        assert lw <= 256 and lh <= 256
        tile = rd.tile_from_base(base, levels - 1, 0, 0)
        assert tile.shape == (256, 256, 4)
        with pytest.raises(NotFoundError):
            rd.tile_from_base(base, levels - 1, 1, 0)

    def test_out_of_range_rejected(self):
        base = self.checker(300, 300)
        with pytest.raises(NotFoundError):
            rd.tile_from_base(base, 99, 0, 0)
        with pytest.raises(NotFoundError):
            rd.tile_from_base(base, 0, 2, 0)
        with pytest.raises(NotFoundError):
            rd.tile_from_base(base, 0, 0, -1)

    def test_partial_tile_padded_transparent(self):
        base = np.full((300, 300, 4), 255, dtype=np.uint8)
        tile = rd.tile_from_base(base, 0, 1, 1)
        assert (tile[:44, :44] == 255).all()
        assert (tile[44:, :, 3] == 0).all()
        assert (tile[:, 44:, 3] == 0).all()

    def test_level_dims_halve_with_ceil(self):
        assert rd.level_dims(3500, 3500, 1) == (1750, 1750)
        assert rd.level_dims(875, 875, 1) == (438, 438)
        assert rd.level_dims(3500, 3500, 4) == (219, 219)

    def test_tile_bytes_deterministic(self):
        base = self.checker(600, 600)
        a = rd.png_bytes(rd.tile_from_base(base, 1, 0, 0))
        b = rd.png_bytes(rd.tile_from_base(base, 1, 0, 0))
        assert a == b

    def test_rgb_input_promoted_to_opaque_rgba(self):
        base = np.full((100, 100, 3), 40, dtype=np.uint8)
        tile = rd.tile_from_base(base, 0, 0, 0)
        assert (tile[:100, :100, 3] == 255).all()
        assert (tile[100:, :, 3] == 0).all()

    def test_png_tile_decodes_back(self):
        base = self.checker(300, 520)
        raw = rd.png_bytes(rd.tile_from_base(base, 0, 1, 0))
        img = np.asarray(Image.open(io.BytesIO(raw)))
        assert img.shape == (256, 256, 4)
        assert np.array_equal(img[:, :8], base[:256, 256:264])
