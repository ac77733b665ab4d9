"""Config parsing, validation, digests, and overrides."""

import pytest

from digitrade import SchemaError
from digitrade.config import PipelineConfig, load_config

from conftest import WORLD_DIR, write_config


def test_defaults(tmp_path):
    config = load_config(write_config(tmp_path / "run.ini", tmp_path / "out"))
    assert config.seed == 1
    assert config.mode == "subsidiary"
    assert config.jobs == 1
    assert config.learn_rate == 0.1
    assert config.n_cycles == 150
    assert config.max_splits == 5
    assert config.min_parent == 10
    assert config.top_k == 11
    assert config.zero_threshold_usd == 1000.0
    assert config.revenue_floor_usd == 1e7
    assert config.correlation_floor == 0.3
    assert config.grid_max_splits == (1, 3, 5, 10, 15, 20, 30, 50)
    assert config.grid_min_parent == (3, 5, 7, 10)
    assert config.bounds_level == 0.95
    assert config.analyze_teleport == 1e-3
    assert config.harmonize_tolerance == 1e-9
    assert not config.tune
    assert config.complexity_enabled and config.report_enabled


def test_missing_seed_is_an_error(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(f"[input]\ndirectory = {WORLD_DIR}\n")
    with pytest.raises(SchemaError, match="run.seed is mandatory"):
        load_config(str(path))


def test_unknown_section_rejected(tmp_path):
    ini = write_config(tmp_path / "run.ini", tmp_path / "out", extra="\n[oops]\nx = 1\n")
    with pytest.raises(SchemaError, match=r"unknown section \[oops\]"):
        load_config(ini)


def test_unknown_key_rejected(tmp_path):
    ini = write_config(
        tmp_path / "run.ini", tmp_path / "out", extra="\n[train]\nlearningrate = 1\n"
    )
    with pytest.raises(SchemaError, match="unknown key train.learningrate"):
        load_config(ini)


def test_bad_value_names_location(tmp_path):
    ini = write_config(
        tmp_path / "run.ini", tmp_path / "out", extra="\n[train]\nn_cycles = many\n"
    )
    with pytest.raises(SchemaError, match="train.n_cycles"):
        load_config(ini)


def test_year_range_grammar(tmp_path):
    ini = write_config(
        tmp_path / "a.ini", tmp_path / "out", extra="\n[run]\n"
    )
    # ranges and comma lists parse; junk does not
    path = tmp_path / "b.ini"
    path.write_text(
        f"[input]\ndirectory = {WORLD_DIR}\n\n[run]\nseed = 1\nyears = 2020:2021\n"
    )
    assert load_config(str(path)).years == (2020, 2021)
    path.write_text(
        f"[input]\ndirectory = {WORLD_DIR}\n\n[run]\nseed = 1\nyears = 2021,2020\n"
    )
    assert load_config(str(path)).years == (2020, 2021)
    path.write_text(
        f"[input]\ndirectory = {WORLD_DIR}\n\n[run]\nseed = 1\nyears = noise\n"
    )
    with pytest.raises(SchemaError, match="run.years"):
        load_config(str(path))


def test_run_years_must_be_inside_dataset(tmp_path, world):
    path = tmp_path / "run.ini"
    path.write_text(
        f"[input]\ndirectory = {WORLD_DIR}\n\n[run]\nseed = 1\nyears = 1999:2000\n"
    )
    config = load_config(str(path))
    with pytest.raises(SchemaError, match="outside the dataset range"):
        config.run_years(world.years)


def test_relative_paths_resolve_against_config_file(tmp_path):
    import shutil

    sub = tmp_path / "nested"
    sub.mkdir()
    shutil.copytree(WORLD_DIR, tmp_path / "data")
    path = sub / "run.ini"
    path.write_text("[input]\ndirectory = ../data\n\n[run]\nseed = 1\nout = o\n")
    config = load_config(str(path))
    assert config.input_directory == str(tmp_path / "nested" / ".." / "data")
    assert config.out == str(sub / "o")
    resolved = config.resolved_inputs()
    assert resolved["countries"].endswith("countries.csv")


def test_mode_is_checked(tmp_path):
    ini = write_config(
        tmp_path / "run.ini", tmp_path / "out", extra="mode = sideways\n"
    )
    with pytest.raises(SchemaError, match="run.mode"):
        load_config(ini)


def test_teleport_blank_means_disabled(tmp_path):
    ini = write_config(
        tmp_path / "run.ini", tmp_path / "out", extra="\n[analyze]\nteleport =\n"
    )
    assert load_config(ini).analyze_teleport is None


def test_digest_stability_and_sensitivity(tmp_path):
    a = load_config(write_config(tmp_path / "a.ini", tmp_path / "out"))
    b = load_config(write_config(tmp_path / "b.ini", tmp_path / "out"))
    assert a.digest() == b.digest()
    c = load_config(write_config(tmp_path / "c.ini", tmp_path / "out", seed=2))
    assert c.digest() != a.digest()


def test_overrides_replace_fields(tmp_path):
    config = load_config(write_config(tmp_path / "run.ini", tmp_path / "out"))
    bumped = config.with_overrides(seed=9, mode="parent_hq", jobs=2)
    assert (bumped.seed, bumped.mode, bumped.jobs) == (9, "parent_hq", 2)
    assert config.seed == 1  # original untouched
    assert config.with_overrides() is config


def test_validated_rejects_bad_ranges():
    config = PipelineConfig(input_directory=WORLD_DIR, bounds_level=1.5)
    with pytest.raises(SchemaError, match="bounds.level"):
        config.validated()
    config = PipelineConfig(input_directory=WORLD_DIR, analyze_top_mass=0.0)
    with pytest.raises(SchemaError, match="top_mass"):
        config.validated()
    config = PipelineConfig(input_directory=WORLD_DIR, jobs=0)
    with pytest.raises(SchemaError, match="jobs"):
        config.validated()


def test_canonical_lists_every_field(tmp_path):
    config = load_config(write_config(tmp_path / "run.ini", tmp_path / "out"))
    text = config.canonical()
    for name in ("seed = 1", "mode = subsidiary", "top_k = 11", "bounds_level = 0.95"):
        assert name in text
