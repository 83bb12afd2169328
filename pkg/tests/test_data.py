"""CSV ingestion, zone filtering, and study-region assignment."""

import numpy as np
import pytest

from zoneppi.data import (
    DatasetError,
    FieldRecord,
    RowIssue,
    SchemaError,
    assign_study_regions,
    filter_eligible_zones,
    load_dataset,
    write_dataset,
)
from zoneppi.synth import SynthConfig, generate

HEADER = "field_id,zone_id,admin1,latitude,longitude,yield,prediction,feat_0,feat_1\n"


def write(tmp_path, body, name="data.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body, encoding="utf-8")
    return path


class TestLoadDataset:
    def test_basic_load(self, tmp_path):
        path = write(tmp_path, "f1,z1,A,8.1,4.2,1.5,1.4,0.1,0.2\n"
                               "f2,z1,A,8.2,4.3,,1.1,0.3,0.4\n")
        recs = load_dataset(path)
        assert len(recs) == 2
        assert recs[0].yield_ == 1.5 and recs[0].is_labeled
        assert recs[1].yield_ is None and not recs[1].is_labeled
        assert recs[0].features == (0.1, 0.2)

    def test_missing_required_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("field_id,zone_id,latitude,longitude\n", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_dataset(path)

    def test_header_only_is_dataset_error(self, tmp_path):
        path = write(tmp_path, "")
        with pytest.raises(DatasetError, match="no records"):
            load_dataset(path)

    def test_negative_yield_rejected_with_row_number(self, tmp_path):
        path = write(tmp_path, "f1,z1,A,8.1,4.2,-1,,,\n"
                               "f2,z1,A,8.2,4.3,2.0,,,\n")
        issues: list[RowIssue] = []
        recs = load_dataset(path, issues=issues)
        assert [r.field_id for r in recs] == ["f2"]
        assert len(issues) == 1
        assert issues[0].row == 1

    def test_non_numeric_coordinate_rejected(self, tmp_path):
        path = write(tmp_path, "f1,z1,A,north,4.2,1.0,,,\n"
                               "f2,z1,A,8.2,4.3,1.0,,,\n")
        issues = []
        recs = load_dataset(path, issues=issues)
        assert len(recs) == 1
        assert issues[0].row == 1 and "latitude" in issues[0].message

    def test_partial_feature_vector_rejected(self, tmp_path):
        path = write(tmp_path, "f1,z1,A,8.1,4.2,1.0,,0.5,\n")
        issues = []
        recs = load_dataset(path, issues=issues)
        assert recs == [] and "feature" in issues[0].message

    def test_zero_yield_is_labeled(self, tmp_path):
        path = write(tmp_path, "f1,z1,A,8.1,4.2,0,,,\n")
        recs = load_dataset(path)
        assert recs[0].yield_ == 0.0 and recs[0].is_labeled

    def test_schema_rename(self, tmp_path):
        path = tmp_path / "renamed.csv"
        path.write_text("id,zone,state,lat,lon\nf1,z1,A,8.0,4.0\n", encoding="utf-8")
        recs = load_dataset(path, schema={
            "field_id": "id", "zone_id": "zone", "admin1": "state",
            "latitude": "lat", "longitude": "lon",
        })
        assert recs[0].zone_id == "z1"

    def test_round_trip(self, tmp_path):
        records = generate(SynthConfig(n_zones=3, fields_per_zone=9, seed=4))
        out = tmp_path / "rt.csv"
        write_dataset(records, out)
        reloaded = load_dataset(out)
        assert sorted(records, key=lambda r: r.field_id) == sorted(
            reloaded, key=lambda r: r.field_id
        )

    def test_write_is_byte_stable(self, tmp_path):
        records = generate(SynthConfig(n_zones=2, fields_per_zone=5, seed=1))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_dataset(records, a)
        write_dataset(records, b)
        assert a.read_bytes() == b.read_bytes()


def make_zone_records(zone_id, n_labeled, n_unlabeled=0, admin="A"):
    recs = []
    for i in range(n_labeled + n_unlabeled):
        recs.append(FieldRecord(
            field_id=f"{zone_id}_f{i}", zone_id=zone_id, admin1=admin,
            latitude=8.0 + 0.01 * i, longitude=4.0,
            yield_=1.0 if i < n_labeled else None,
        ))
    return recs


class TestFilterEligibleZones:
    def test_below_threshold_dropped(self):
        zones = filter_eligible_zones(make_zone_records("z1", 19), min_zone_size=20)
        assert zones == []

    def test_boundary_retained(self):
        zones = filter_eligible_zones(make_zone_records("z1", 20), min_zone_size=20)
        assert len(zones) == 1 and zones[0].n == 20

    def test_min_one_keeps_everything(self):
        recs = make_zone_records("z1", 3) + make_zone_records("z2", 1)
        zones = filter_eligible_zones(recs, min_zone_size=1)
        assert [z.zone_id for z in zones] == ["z1", "z2"]

    def test_labeled_counts_partition(self):
        recs = (make_zone_records("z1", 25, 5) + make_zone_records("z2", 7)
                + make_zone_records("z3", 40))
        kept = filter_eligible_zones(recs, min_zone_size=20)
        total_labeled = sum(1 for r in recs if r.is_labeled)
        kept_labeled = sum(z.n for z in kept)
        assert all(z.n >= 20 for z in kept)
        assert kept_labeled + 7 == total_labeled

    def test_unlabeled_do_not_count_toward_eligibility(self):
        zones = filter_eligible_zones(make_zone_records("z1", 10, 30), min_zone_size=20)
        assert zones == []


class TestAssignStudyRegions:
    def test_strict_plurality(self):
        recs = (make_zone_records("z1", 12, admin="A")
                + [r for r in make_zone_records("z1", 8, admin="B")])
        # rename field ids to keep them unique across the two batches
        recs = [
            FieldRecord(f"f{i}", r.zone_id, r.admin1, r.latitude, r.longitude, r.yield_)
            for i, r in enumerate(recs)
        ]
        zones = assign_study_regions(filter_eligible_zones(recs, 1), rng_seed=0)
        assert zones[0].study_region == "A"

    def test_unanimity(self):
        zones = assign_study_regions(
            filter_eligible_zones(make_zone_records("z1", 5, admin="C"), 1), 0
        )
        assert zones[0].study_region == "C"

    def test_tie_deterministic_given_seed(self):
        recs = [
            FieldRecord(f"f{i}", "z1", "A" if i < 10 else "B", 8.0, 4.0, 1.0)
            for i in range(20)
        ]
        zones = filter_eligible_zones(recs, 1)
        first = assign_study_regions(zones, rng_seed=5)[0].study_region
        assert first in {"A", "B"}
        for _ in range(5):
            assert assign_study_regions(zones, rng_seed=5)[0].study_region == first

    def test_tie_break_depends_only_on_zone_and_seed(self):
        recs = [
            FieldRecord(f"f{i}", "z1", "A" if i < 10 else "B", 8.0, 4.0, 1.0)
            for i in range(20)
        ]
        other = make_zone_records("z0", 4, admin="Q")
        alone = assign_study_regions(filter_eligible_zones(recs, 1), 5)
        with_other = assign_study_regions(filter_eligible_zones(other + recs, 1), 5)
        z1 = {z.zone_id: z.study_region for z in with_other}
        assert z1["z1"] == alone[0].study_region

    def test_counts_include_unlabeled_fields(self):
        labeled_a = make_zone_records("z1", 3, admin="A")
        unlabeled_b = [
            FieldRecord(f"u{i}", "z1", "B", 8.0, 4.0, None) for i in range(5)
        ]
        zones = assign_study_regions(filter_eligible_zones(labeled_a + unlabeled_b, 1), 0)
        assert zones[0].study_region == "B"
