"""Wire format and catalog tests: canonical bytes, errors with line numbers,
idempotent content-addressed ingestion."""

import json

import numpy as np
import pytest

from tilatlas import gridmap as gm
from tilatlas import predfile as pf
from tilatlas.catalog import Catalog, SlideManifest, pyramid_levels
from tilatlas.errors import ConflictError, NotFoundError, PredictionFileError


def make_header(**overrides):
    fields = dict(slide_id="s1", patch_size_px=350, base_width=700,
                  base_height=350, label_kind="cancer", model_id="m1")
    fields.update(overrides)
    return pf.PredictionHeader(**fields)


def canonical_two_patch():
    header = make_header()
    records = [gm.PredictionRecord(350, 0, 0.1), gm.PredictionRecord(0, 0, 0.9)]
    return pf.format_prediction_file(header, records)


class TestFormat:
    def test_header_line_shape(self):
        text = canonical_two_patch()
        header_line = text.split("\n")[0]
        data = json.loads(header_line)
        assert list(data.keys()) == [
            "format_version", "slide_id", "patch_size_px",
            "base_width", "base_height", "label_kind", "model_id",
        ]
        assert data["format_version"] == 1

    def test_records_sorted_row_major(self):
        lines = canonical_two_patch().strip().split("\n")
        assert lines[1] == "0\t0\t0.9"
        assert lines[2] == "350\t0\t0.1"

    def test_prob_formatting(self):
        assert pf._format_prob(0.5) == "0.5"
        assert pf._format_prob(0.0) == "0"
        assert pf._format_prob(1.0) == "1"
        assert pf._format_prob(0.123456789) == "0.123457"
        assert pf._format_prob(0.25) == "0.25"

    def test_lf_terminated(self):
        text = canonical_two_patch()
        assert text.endswith("\n") and "\r" not in text

    def test_round_trip_byte_identical(self):
        text = canonical_two_patch()
        header, records = pf.parse_prediction_file(text)
        assert pf.format_prediction_file(header, records) == text

    def test_map_serialization_covers_covered_cells_only(self):
        geom = gm.grid_from_slide(700, 350, 350)
        pmap = gm.ProbabilityMap(geom, [[0.25, 0.75]],
                                 np.array([[True, False]]), "til", "m2")
        text = pf.map_to_prediction_file(pmap, "s9")
        lines = text.strip().split("\n")
        assert len(lines) == 2
        assert lines[1] == "0\t0\t0.25"


class TestParseErrors:
    def test_bad_header_json(self):
        with pytest.raises(PredictionFileError) as err:
            pf.parse_prediction_file("not json\n")
        assert err.value.line_no == 1

    def test_missing_header_key(self):
        head = json.dumps({"format_version": 1, "slide_id": "s"})
        with pytest.raises(PredictionFileError, match="missing"):
            pf.parse_prediction_file(head + "\n")

    def test_unsupported_version(self):
        header = make_header()
        text = pf.format_prediction_file(header, [])
        text = text.replace('"format_version": 1', '"format_version": 99')
        with pytest.raises(PredictionFileError, match="format_version"):
            pf.parse_prediction_file(text)

    def test_misaligned_coordinate_line_number(self):
        text = pf.format_prediction_file(make_header(), []) + "175\t0\t0.5\n"
        with pytest.raises(PredictionFileError, match="aligned") as err:
            pf.parse_prediction_file(text)
        assert err.value.line_no == 2

    def test_out_of_bounds_coordinate(self):
        text = pf.format_prediction_file(make_header(), []) + "700\t0\t0.5\n"
        with pytest.raises(PredictionFileError, match="bounds"):
            pf.parse_prediction_file(text)

    def test_too_many_fraction_digits(self):
        text = pf.format_prediction_file(make_header(), []) + "0\t0\t0.1234567\n"
        with pytest.raises(PredictionFileError, match="6 fractional"):
            pf.parse_prediction_file(text)

    def test_probability_out_of_range(self):
        text = pf.format_prediction_file(make_header(), []) + "0\t0\t1.5\n"
        with pytest.raises(PredictionFileError, match="outside"):
            pf.parse_prediction_file(text)

    def test_non_integer_coordinates(self):
        text = pf.format_prediction_file(make_header(), []) + "0.5\t0\t0.5\n"
        with pytest.raises(PredictionFileError, match="integers"):
            pf.parse_prediction_file(text)

    def test_wrong_field_count(self):
        text = pf.format_prediction_file(make_header(), []) + "0\t0\n"
        with pytest.raises(PredictionFileError, match="3 tab-separated") as err:
            pf.parse_prediction_file(text)
        assert err.value.line_no == 2

    def test_empty_file(self):
        with pytest.raises(PredictionFileError):
            pf.parse_prediction_file("")

    def test_blank_lines_tolerated(self):
        text = canonical_two_patch() + "\n\n"
        header, records = pf.parse_prediction_file(text)
        assert len(records) == 2


class TestCatalog:
    def test_ingest_two_patch_file(self, tmp_path):
        catalog = Catalog(tmp_path)
        record = catalog.ingest(canonical_two_patch())
        assert record.slide_id == "s1"
        assert record.label_kind == "cancer"
        pmap = catalog.load_map(record.map_id)
        assert pmap.coverage.all()
        assert pmap.values[0, 0] == 0.9

    def test_empty_body_zero_coverage(self, tmp_path):
        catalog = Catalog(tmp_path)
        record = catalog.ingest(pf.format_prediction_file(make_header(), []))
        assert not catalog.load_map(record.map_id).coverage.any()

    def test_reingest_idempotent(self, tmp_path):
        catalog = Catalog(tmp_path)
        a = catalog.ingest(canonical_two_patch())
        b = catalog.ingest(canonical_two_patch())
        assert a.map_id == b.map_id
        assert a.created_at == b.created_at
        assert len(catalog.list_maps()) == 1

    def test_noncanonical_input_same_identity(self, tmp_path):
        # Same content with reordered records maps to the same blob.
        catalog = Catalog(tmp_path)
        a = catalog.ingest(canonical_two_patch())
        lines = canonical_two_patch().strip().split("\n")
        shuffled = "\n".join([lines[0], lines[2], lines[1]]) + "\n"
        b = catalog.ingest(shuffled)
        assert a.map_id == b.map_id

    def test_export_byte_identical(self, tmp_path):
        catalog = Catalog(tmp_path)
        text = canonical_two_patch()
        record = catalog.ingest(text)
        assert catalog.export(record.map_id) == text

    def test_auto_registered_slide(self, tmp_path):
        catalog = Catalog(tmp_path)
        catalog.ingest(canonical_two_patch())
        slide = catalog.get_slide("s1")
        assert (slide.base_width, slide.base_height) == (700, 350)
        assert 350 in slide.patch_sizes

    def test_dimension_conflict(self, tmp_path):
        catalog = Catalog(tmp_path)
        catalog.register_slide(SlideManifest("s1", 1400, 1400))
        with pytest.raises(ConflictError, match="conflict"):
            catalog.ingest(canonical_two_patch())

    def test_register_identical_idempotent(self, tmp_path):
        catalog = Catalog(tmp_path)
        m = SlideManifest("s2", 700, 700, (350,))
        catalog.register_slide(m)
        again = catalog.register_slide(m)
        assert again.slide_id == "s2"
        assert len(catalog.list_slides()) == 1

    def test_register_conflicting_dims(self, tmp_path):
        catalog = Catalog(tmp_path)
        catalog.register_slide(SlideManifest("s2", 700, 700))
        with pytest.raises(ConflictError):
            catalog.register_slide(SlideManifest("s2", 800, 700))

    def test_get_unknown_raises(self, tmp_path):
        catalog = Catalog(tmp_path)
        with pytest.raises(NotFoundError):
            catalog.get_map("nope")
        with pytest.raises(NotFoundError):
            catalog.get_slide("nope")
        with pytest.raises(NotFoundError):
            catalog.list_maps("nope")

    def test_listing_stable_ordered(self, tmp_path):
        catalog = Catalog(tmp_path)
        texts = []
        rng = np.random.default_rng(1)
        for k in range(4):
            header = make_header(slide_id=f"s{k}", model_id=f"m{k}")
            recs = [gm.PredictionRecord(0, 0, float(np.round(rng.random(), 3)))]
            texts.append(pf.format_prediction_file(header, recs))
        ids = {catalog.ingest(t).map_id for t in texts}
        listed = [r.map_id for r in catalog.list_maps()]
        assert listed == sorted(ids)

    def test_index_survives_reopen(self, tmp_path):
        record = Catalog(tmp_path).ingest(canonical_two_patch())
        reopened = Catalog(tmp_path)
        assert reopened.get_map(record.map_id).slide_id == "s1"
        assert reopened.export(record.map_id) == canonical_two_patch()

    def test_aggregated_derivation(self, tmp_path):
        catalog = Catalog(tmp_path)
        rng = np.random.default_rng(5)
        geom = gm.grid_from_slide(8 * 350, 8 * 350, 350)
        values = np.round(rng.random((8, 8)), 6)
        pmap = gm.ProbabilityMap(geom, values, np.ones((8, 8), bool), "cancer", "m")
        base = catalog.ingest(pf.map_to_prediction_file(pmap, "agg-slide"))
        cfg = gm.AggregationConfig(4, "max")
        derived = catalog.ingest_aggregated(base.map_id, cfg)
        assert (derived.agg_window, derived.agg_func) == (4, "max")
        loaded = catalog.load_map(derived.map_id)
        expected = gm.aggregate(catalog.load_map(base.map_id), cfg)
        # six-digit inputs make the max exact on the wire
        assert np.array_equal(loaded.values, expected.values)
        assert "agg_w4_max" in derived.provenance


def test_pyramid_levels():
    assert pyramid_levels(256, 256) == 1
    assert pyramid_levels(257, 100) == 2
    assert pyramid_levels(3500, 3500) == 5  # 3500,1750,875,438,219
    assert pyramid_levels(10, 10) == 1
