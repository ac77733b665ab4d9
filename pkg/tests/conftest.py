"""Shared fixtures: the bundled datasets and one full pipeline run."""

from __future__ import annotations

import os
import warnings
from types import SimpleNamespace

import pytest

from digitrade import load_dataset
from digitrade.config import load_config
from digitrade.pipeline import run

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
TWO_COUNTRY_DIR = os.path.join(FIXTURES, "two_country")
WORLD_DIR = os.path.join(FIXTURES, "world")


def write_config(path, out, directory=WORLD_DIR, seed=1, extra=""):
    """Minimal INI pointing at a fixture directory."""
    text = f"[input]\ndirectory = {directory}\n\n[run]\nseed = {seed}\nout = {out}\n"
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text + extra)
    return str(path)


@pytest.fixture(scope="session")
def two_country():
    return load_dataset(TWO_COUNTRY_DIR)


@pytest.fixture(scope="session")
def world():
    return load_dataset(WORLD_DIR)


@pytest.fixture(scope="session")
def world_predicted(world):
    """Fast consumption predictions over the bundled world, both years."""
    from digitrade import HyperParams, fit_predictor, predict_all

    model = fit_predictor(world, 2021, HyperParams(3, 5, 0.1, 25))
    return predict_all(model, world)


@pytest.fixture(scope="session")
def world_harmonized(world, world_predicted):
    """Merged observed and predicted consumption, scaled onto revenue totals."""
    from digitrade import HarmonizationTargets, harmonize

    merged = world.consumption.merged_with(world_predicted)
    return harmonize(merged, HarmonizationTargets.from_dataset(world))


@pytest.fixture(scope="session")
def world_run(tmp_path_factory):
    """One full pipeline run on the bundled world, shared by read-only tests."""
    base = tmp_path_factory.mktemp("world_run")
    out = str(base / "out")
    ini = write_config(base / "run.ini", out)
    config = load_config(ini)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        manifest = run(config)
    return SimpleNamespace(config=config, manifest=manifest, out=out, ini=ini)
