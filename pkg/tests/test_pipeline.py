"""Stage orchestration: manifests, persisted intermediates, stage isolation."""

import csv
import dataclasses
import hashlib
import json
import math
import os
import shutil
import warnings

import pytest

import digitrade
from digitrade import MissingStageError, SchemaError, dataset_digest, load_dataset
from digitrade.config import load_config
from digitrade.pipeline import DEFAULT_STAGES, run, run_stage

from conftest import write_config


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, list(reader)


def sha256(path):
    with open(path, "rb") as handle:
        return hashlib.sha256(handle.read()).hexdigest()


@pytest.fixture()
def ingested(tmp_path):
    """A config whose out dir holds only the ingested dataset."""
    out = str(tmp_path / "out")
    config = load_config(write_config(tmp_path / "run.ini", out))
    run_stage(config, "ingest")
    return config


@pytest.fixture(scope="module")
def rerun(world_run, tmp_path_factory):
    """A byte-for-byte copy of the full run, for destructive re-runs."""
    out = str(tmp_path_factory.mktemp("rerun") / "out")
    shutil.copytree(world_run.out, out)
    return world_run.config.with_overrides(out=out)


class TestManifest:
    def test_file_matches_returned_object(self, world_run):
        with open(os.path.join(world_run.out, "manifest.json")) as handle:
            on_disk = json.load(handle)
        assert on_disk == world_run.manifest.to_jsonable()

    def test_digests_and_identity(self, world_run):
        m = world_run.manifest
        assert m.config_digest == world_run.config.digest()
        data = load_dataset(os.path.join(world_run.out, "dataset"))
        assert m.dataset_digest == dataset_digest(data)
        assert m.seed == 1
        assert m.mode == "subsidiary"
        assert m.artifact_version == digitrade.__version__

    def test_every_listed_output_hash_checks_out(self, world_run):
        outputs = world_run.manifest.outputs
        assert outputs
        for rel, digest in outputs.items():
            assert sha256(os.path.join(world_run.out, rel)) == digest

    def test_stage_order_is_the_default_chain(self, world_run):
        assert [s.name for s in world_run.manifest.stages] == list(DEFAULT_STAGES)

    def test_stage_outputs(self, world_run):
        by_name = {s.name: set(s.outputs) for s in world_run.manifest.stages}
        assert "validation.csv" in by_name["ingest"]
        assert any(o.startswith("dataset") for o in by_name["ingest"])
        assert by_name["features"] == {"features.csv"}
        assert by_name["train"] == {"model.json", "importances.csv"}
        assert by_name["predict"] == {"predicted_consumption.csv"}
        assert by_name["harmonize"] == {"harmonized_consumption.csv"}
        assert by_name["allocate"] == {"allocations.csv", "flows.csv"}
        assert by_name["bounds"] == {"flows.csv", "bounds.csv"}
        assert by_name["analyze"] >= {
            "trade_totals.csv",
            "balances.csv",
            "sector_shares.csv",
            "concentration.csv",
            "centrality.csv",
        }
        assert by_name["complexity"] == {
            "merged_matrix.csv", "eci.csv", "pci.csv", "complexity_dropped.csv"
        }
        assert "chart_trade_volume.svg" in by_name["report"]

    def test_validation_report_is_empty_for_clean_fixture(self, world_run):
        _, rows = read_rows(os.path.join(world_run.out, "validation.csv"))
        assert rows == []


class TestArtifacts:
    def test_features_cover_revenue_products(self, world, world_run):
        header, rows = read_rows(os.path.join(world_run.out, "features.csv"))
        assert header[:3] == ["brand_id", "dest", "year"]
        assert len(header) == 3 + 22
        per_year = len(world.brands) * len(world.country_codes())
        assert len(rows) == per_year * len(world.years)

    def test_importances_ranked_with_top_k_selected(self, world_run):
        header, rows = read_rows(os.path.join(world_run.out, "importances.csv"))
        assert header == ["feature", "importance_pct", "selected"]
        scores = [float(r[1]) for r in rows]
        assert scores == sorted(scores, reverse=True)
        assert sum(1 for r in rows if r[2] == "1") == 11

    def test_predictions_keep_observed_cells(self, world, world_run):
        path = os.path.join(world_run.out, "predicted_consumption.csv")
        _, rows = read_rows(path)
        provs = {r[4] for r in rows}
        assert provs == {"observed", "predicted"}
        for brand, country, year, usd, prov in rows:
            if prov == "observed":
                assert float(usd) == world.consumption.get(brand, country, int(year))

    def test_harmonized_totals_equal_revenue(self, world, world_run):
        path = os.path.join(world_run.out, "harmonized_consumption.csv")
        _, rows = read_rows(path)
        sums = {}
        for brand, _, year, usd, _ in rows:
            key = (brand, int(year))
            sums[key] = sums.get(key, 0.0) + float(usd)
        assert sums
        for (brand, year), total in sums.items():
            assert total == pytest.approx(
                world.revenue.world_revenue(brand, year), rel=1e-9
            )

    def test_allocations_conserve_revenue(self, world, world_run):
        _, rows = read_rows(os.path.join(world_run.out, "allocations.csv"))
        origin_sums = {}
        for year, product, origin, _, usd in rows:
            key = (int(year), product, origin)
            origin_sums[key] = origin_sums.get(key, 0.0) + float(usd)
        assert origin_sums
        for (year, product, origin), total in origin_sums.items():
            expected = world.revenue.origin_revenue(product, year)[origin]
            assert total == pytest.approx(expected, rel=1e-9)

    def test_flows_carry_consistent_bounds(self, world_run):
        _, rows = read_rows(os.path.join(world_run.out, "flows.csv"))
        assert rows
        for row in rows:
            value, lower, upper = (float(v) for v in row[5:8])
            assert row[3] != row[4]  # cross-border only
            assert 0.0 <= lower <= value <= upper

    def test_bounds_summary_row(self, world_run):
        header, rows = read_rows(os.path.join(world_run.out, "bounds.csv"))
        assert header[:2] == ["level", "per_firm"]
        (row,) = rows
        assert float(row[0]) == 0.95
        lower, upper = float(row[3]), float(row[4])
        assert 0.0 <= lower <= float(row[2]) <= upper <= 1.0
        assert int(row[5]) >= 1

    def test_sector_shares_sum_to_one(self, world_run):
        _, rows = read_rows(os.path.join(world_run.out, "sector_shares.csv"))
        by_year = {}
        for year, _, share in rows:
            by_year[year] = by_year.get(year, 0.0) + float(share)
        for total in by_year.values():
            assert total == pytest.approx(1.0)

    def test_eci_scores_cover_retained_countries(self, world_run):
        header, rows = read_rows(os.path.join(world_run.out, "eci.csv"))
        assert header == ["country", "eci", "eci_minmax"]
        rescaled = [float(r[2]) for r in rows]
        assert min(rescaled) == 0.0 and max(rescaled) == 1.0
        values = [float(r[1]) for r in rows]
        assert math.fsum(values) == pytest.approx(0.0, abs=1e-9)

    def test_charts_are_svg_documents(self, world_run):
        for name in ("chart_trade_volume.svg", "chart_sector_shares.svg", "chart_lorenz.svg"):
            with open(os.path.join(world_run.out, name), encoding="utf-8") as handle:
                text = handle.read()
            assert text.startswith("<svg") and text.rstrip().endswith("</svg>")


class TestStageIsolation:
    def test_missing_upstream_errors_name_the_producer(self, ingested):
        cases = [
            ("predict", "run train first"),
            ("harmonize", "run predict first"),
            ("allocate", "run harmonize first"),
            ("bounds", "run allocate first"),
            ("analyze", "run allocate first"),
            ("complexity", "run allocate first"),
            ("report", "run analyze first"),
        ]
        for stage, hint in cases:
            with pytest.raises(MissingStageError, match=hint) as err:
                run_stage(ingested, stage)
            assert str(err.value).startswith(f"stage {stage}:")

    def test_missing_dataset_points_at_validate(self, tmp_path):
        config = load_config(write_config(tmp_path / "run.ini", str(tmp_path / "out")))
        with pytest.raises(MissingStageError, match="run validate first"):
            run_stage(config, "features")

    def test_unknown_stage_rejected(self, ingested):
        with pytest.raises(ValueError, match="unknown stage"):
            run_stage(ingested, "frobnicate")

    def test_train_year_outside_range(self, ingested):
        config = dataclasses.replace(ingested, train_year=2035)
        with pytest.raises(SchemaError, match="outside the dataset range"):
            run_stage(config, "train")

    def test_reruns_reproduce_identical_bytes(self, world_run, rerun):
        # bounds rewrites flows.csv with interval columns, so the chain
        # below must run through bounds before the byte comparison
        checked = [
            "harmonized_consumption.csv",
            "allocations.csv",
            "flows.csv",
            "bounds.csv",
            "eci.csv",
            "chart_trade_volume.svg",
            "chart_lorenz.svg",
        ]
        for name in checked:
            os.remove(os.path.join(rerun.out, name))
        for stage in ("harmonize", "allocate", "bounds", "complexity", "report"):
            run_stage(rerun, stage)
        for name in checked:
            assert sha256(os.path.join(rerun.out, name)) == sha256(
                os.path.join(world_run.out, name)
            ), name

    def test_cv_stage_reports_both_fold_families(self, world, rerun):
        config = dataclasses.replace(rerun, n_cycles=25, max_splits=3, min_parent=5)
        run_stage(config, "cv")
        header, rows = read_rows(os.path.join(config.out, "cv_report.csv"))
        assert header == ["fold_key", "r2", "restricted_r2", "accuracy", "f1"]
        keys = [r[0] for r in rows]
        countries = [k for k in keys if k.startswith("country:")]
        products = [k for k in keys if k.startswith("product:")]
        assert len(countries) == len(world.consumption.observed_countries)
        assert len(products) == 14
        assert len(keys) == len(countries) + len(products)


class TestToggles:
    def test_disabled_stages_leave_no_trace(self, tmp_path):
        out = str(tmp_path / "out")
        extra = (
            "\n[train]\nn_cycles = 25\nmax_splits = 3\nimportance_shuffles = 2\n"
            "\n[analyze]\nconcentration = false\nentropy_baseline = false\n"
            "centrality = false\ndecoupling = false\ngroup_trends = false\n"
            "\n[complexity]\nenabled = false\n"
            "\n[report]\nenabled = false\n"
        )
        config = load_config(write_config(tmp_path / "run.ini", out, extra=extra))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            manifest = run(config)
        names = [s.name for s in manifest.stages]
        assert "complexity" not in names and "report" not in names
        for absent in (
            "concentration.csv",
            "lorenz.csv",
            "entropy_baseline.csv",
            "centrality.csv",
            "decoupling.csv",
            "group_trends.csv",
            "eci.csv",
            "pci.csv",
            "chart_trade_volume.svg",
        ):
            assert not os.path.exists(os.path.join(out, absent)), absent
        for present in ("trade_totals.csv", "balances.csv", "sector_shares.csv"):
            assert os.path.exists(os.path.join(out, present)), present
