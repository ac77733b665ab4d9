"""Stage orchestration over persisted intermediates.

Every stage reads its inputs from files under the configured output
directory and writes its products back there, so any stage can be re-run
in isolation (delete its outputs, run it again, get the same bytes).  A
full run executes the stages in dependency order and finishes by writing
``manifest.json``: the config and dataset digests, per-stage timings, and
a SHA-256 digest of every file produced.  Timings aside, two runs with
equal config and dataset digests must produce identical manifests.

The stage graph, with the file each edge rides on:

    ingest ──────────── dataset/ + validation.csv
    features ────────── features.csv               (ingest)
    train ───────────── model.json, importances.csv (ingest)
    cv ──────────────── cv_report.csv              (ingest; not in full runs)
    predict ─────────── predicted_consumption.csv  (train)
    harmonize ───────── harmonized_consumption.csv (predict)
    allocate ────────── allocations.csv, flows.csv (harmonize)
    bounds ──────────── flows.csv + bounds.csv     (allocate)
    analyze ─────────── summary tables             (allocate)
    complexity ──────── eci.csv, pci.csv, ...      (allocate)
    report ──────────── chart_*.svg                (analyze)

A missing upstream file raises :class:`MissingStageError` naming the
stage to run first.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import charts
from .analytics import (
    aggregate_flows,
    balance_offset,
    cagr,
    combined_balance,
    decoupling_records,
    eigenvector_centrality,
    group_trends,
    lorenz,
    random_basket_entropy,
    sector_shares,
    shannon_entropy,
    top_share,
)
from .boosting import (
    HyperGrid,
    build_training,
    clean_training_set,
    fit_predictor,
    load_model,
    loco_cv,
    lopo_cv,
    predict_all,
    save_model,
    tune,
)
from .complexity import (
    OutputMatrix,
    binarize,
    digital_output_matrix,
    eci_pci,
    merge_digital,
    minmax,
    physical_output_matrix,
    rca,
)
from .config import PipelineConfig
from .dataset import (
    OBSERVED,
    ConsumptionMatrix,
    DataPaths,
    Dataset,
    dataset_digest,
    format_number,
    load_dataset,
    save_dataset,
    validate,
)
from .errors import (
    ComputationError,
    DigitradeError,
    IntegrityError,
    MissingStageError,
    SchemaError,
)
from .features import FEATURE_NAMES, permutation_importance, select_top
from .harmonize import HarmonizationTargets, harmonize
from .transport import (
    AllocationTensor,
    FlowRow,
    allocate_all,
    confidence_bounds,
    extract_flows,
    reassign_to_parent,
)

__all__ = [
    "MANIFEST_NAME",
    "DEFAULT_STAGES",
    "STAGES",
    "StageResult",
    "RunManifest",
    "run",
    "run_stage",
]

MANIFEST_NAME = "manifest.json"

# Order a full run executes; ``cv`` is reachable only as its own stage
# because cross-validation is a diagnostic, not a pipeline dependency.
DEFAULT_STAGES = (
    "ingest",
    "features",
    "train",
    "predict",
    "harmonize",
    "allocate",
    "bounds",
    "analyze",
    "complexity",
    "report",
)

_FLOW_HEADER = [
    "year",
    "brand_id",
    "sector",
    "origin",
    "dest",
    "value_usd",
    "lower_usd",
    "upper_usd",
]
_CONSUMPTION_HEADER = ["brand_id", "country", "year", "consumption_usd", "provenance"]


@dataclass(frozen=True)
class StageResult:
    name: str
    outputs: tuple[str, ...]
    seconds: float


@dataclass(frozen=True)
class RunManifest:
    """What a full run produced, verifiable file by file."""

    artifact_version: str
    config_digest: str
    dataset_digest: str
    seed: int
    mode: str
    stages: tuple[StageResult, ...]
    outputs: dict[str, str]

    def to_jsonable(self) -> dict:
        return {
            "artifact_version": self.artifact_version,
            "config_digest": self.config_digest,
            "dataset_digest": self.dataset_digest,
            "seed": self.seed,
            "mode": self.mode,
            "stages": [
                {
                    "name": s.name,
                    "seconds": round(s.seconds, 6),
                    "outputs": list(s.outputs),
                }
                for s in self.stages
            ],
            "outputs": dict(sorted(self.outputs.items())),
        }


# ---------------------------------------------------------------------------
# Small file helpers


def _out(config: PipelineConfig, *parts: str) -> str:
    return os.path.join(config.out, *parts)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return format_number(value)


def _write_csv(path: str, header: list[str], rows: Iterable[Iterable]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        return header, [row for row in reader]


def _write_text(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(text)


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _require(config: PipelineConfig, name: str, producer: str) -> str:
    path = _out(config, name)
    if not os.path.exists(path):
        raise MissingStageError(f"{name} not found in {config.out}: run {producer} first")
    return path


def _require_dataset(config: PipelineConfig) -> Dataset:
    directory = _out(config, "dataset")
    if not os.path.isdir(directory):
        raise MissingStageError(
            f"no ingested dataset under {config.out}: run validate first"
        )
    return load_dataset(DataPaths.from_dir(directory))


def _ledger(config: PipelineConfig, data: Dataset):
    if config.mode == "parent_hq":
        return reassign_to_parent(data)
    return data.revenue


# ---------------------------------------------------------------------------
# Intermediate readers


def _load_consumption(config: PipelineConfig, name: str, producer: str) -> ConsumptionMatrix:
    path = _require(config, name, producer)
    header, rows = _read_csv(path)
    if header != _CONSUMPTION_HEADER:
        raise SchemaError(f"{path}: unexpected header {header}")
    values: dict[tuple[str, str, int], float] = {}
    provenance: dict[tuple[str, str, int], str] = {}
    observed = set()
    for row in rows:
        brand, country, year, usd, prov = row
        key = (brand, country, int(year))
        values[key] = float(usd)
        provenance[key] = prov
        if prov == OBSERVED:
            observed.add(country)
    return ConsumptionMatrix(values, provenance, observed)


def _load_flows(config: PipelineConfig) -> list[FlowRow]:
    path = _require(config, "flows.csv", "allocate")
    header, rows = _read_csv(path)
    if header != _FLOW_HEADER:
        raise SchemaError(f"{path}: unexpected header {header}")
    flows = []
    for row in rows:
        year, brand, sector, origin, dest, usd, lower, upper = row
        flows.append(
            FlowRow(
                int(year),
                brand,
                sector,
                origin,
                dest,
                float(usd),
                float(lower) if lower else None,
                float(upper) if upper else None,
            )
        )
    return flows


def _load_allocations(config: PipelineConfig) -> list[AllocationTensor]:
    """Rebuild allocation tensors from the persisted triplets.

    Axes are recoverable because the solver only keeps origins with
    positive revenue and destinations with positive balanced demand, so
    every axis label owns at least one positive cell.  The balance factor
    and objective are not persisted; bounds never read them.
    """
    path = _require(config, "allocations.csv", "allocate")
    header, rows = _read_csv(path)
    if header != ["year", "product", "origin", "dest", "value_usd"]:
        raise SchemaError(f"{path}: unexpected header {header}")
    cells: dict[tuple[int, str], dict[tuple[str, str], float]] = {}
    for row in rows:
        year, product, origin, dest, usd = row
        cells.setdefault((int(year), product), {})[(origin, dest)] = float(usd)
    tensors = []
    for (year, product), grid in sorted(cells.items()):
        origins = tuple(sorted({o for o, _ in grid}))
        dests = tuple(sorted({d for _, d in grid}))
        matrix = np.zeros((len(origins), len(dests)))
        for (o, d), usd in grid.items():
            matrix[origins.index(o), dests.index(d)] = usd
        tensors.append(
            AllocationTensor(
                product, year, origins, dests, matrix, float("nan"), float("nan")
            )
        )
    return tensors


def _write_flows(config: PipelineConfig, flows: Iterable[FlowRow]) -> None:
    _write_csv(
        _out(config, "flows.csv"),
        _FLOW_HEADER,
        (
            [r.year, r.brand, r.sector, r.origin, r.dest, r.value_usd, r.lower_usd, r.upper_usd]
            for r in flows
        ),
    )


def _train_year(config: PipelineConfig, data: Dataset, years: tuple[int, ...]) -> int:
    if config.train_year is not None:
        if config.train_year not in data.years:
            raise SchemaError(
                f"train.year {config.train_year} outside the dataset range"
            )
        return config.train_year
    observed = sorted(
        {y for (_, _, y), _ in data.consumption.items() if y in set(years)}
    )
    if not observed:
        raise ComputationError("no observed consumption inside the run years")
    return observed[-1]


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(config: PipelineConfig) -> list[str]:
    paths = config.resolved_inputs()
    for name in ("countries", "dyads", "firms", "brands", "revenues", "consumption"):
        if name not in paths:
            raise SchemaError(f"input.{name} is not configured")
    data = load_dataset(
        DataPaths(
            countries=paths["countries"],
            dyads=paths["dyads"],
            firms=paths["firms"],
            brands=paths["brands"],
            revenues=paths["revenues"],
            consumption=paths["consumption"],
            physical_trade=paths.get("physical_trade"),
        )
    )
    report = validate(data)
    _write_csv(
        _out(config, "validation.csv"),
        ["category", "location", "message"],
        ([e.category, e.location, e.message] for e in report.entries),
    )
    if not report.ok:
        raise IntegrityError(
            f"dataset failed validation with {len(report.entries)} findings; "
            f"see validation.csv"
        )
    written = save_dataset(data, _out(config, "dataset"))
    outputs = ["validation.csv"]
    outputs.extend(os.path.relpath(p, config.out) for p in written)
    return outputs


def stage_features(config: PipelineConfig) -> list[str]:
    from .features import assemble_matrix

    data = _require_dataset(config)
    years = config.run_years(data.years)
    countries = data.country_codes()
    rows = [
        (b, c, y)
        for y in years
        for b in sorted(data.brands)
        if data.revenue.world_revenue(b, y) > 0
        for c in countries
    ]
    if not rows:
        raise ComputationError("no products carry revenue in the run years")
    matrix = assemble_matrix(data, rows)
    _write_csv(
        _out(config, "features.csv"),
        ["brand_id", "dest", "year", *matrix.names],
        (
            [b, c, y, *vals]
            for (b, c, y), vals in zip(matrix.rows, matrix.values.tolist())
        ),
    )
    return ["features.csv"]


def stage_train(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    years = config.run_years(data.years)
    year = _train_year(config, data, years)
    brands = clean_training_set(
        data,
        year,
        min_revenue=config.revenue_floor_usd,
        min_peer_correlation=config.correlation_floor,
    )
    if config.tune:
        grid = HyperGrid(config.grid_max_splits, config.grid_min_parent)
        params, _ = tune(
            data,
            grid,
            zero_threshold=config.zero_threshold_usd,
            year=year,
            brands=brands,
            jobs=config.jobs,
            learn_rate=config.learn_rate,
            n_cycles=config.n_cycles,
        )
    else:
        params = config.hyper_params()

    full = fit_predictor(
        data, year, params, brands=brands, zero_threshold=config.zero_threshold_usd
    )
    matrix, y_usd = build_training(data, year, brands)
    targets = np.log1p(y_usd)
    importances = {
        feature: permutation_importance(
            full,
            matrix,
            targets,
            feature,
            seed=config.seed,
            n_shuffles=config.importance_shuffles,
        )
        for feature in FEATURE_NAMES
    }
    selected = select_top(importances, min(config.top_k, len(importances)))
    final = fit_predictor(
        data,
        year,
        params,
        features=selected,
        brands=brands,
        zero_threshold=config.zero_threshold_usd,
    )
    save_model(final, _out(config, "model.json"))
    ranked = sorted(importances.items(), key=lambda kv: (-kv[1], kv[0]))
    _write_csv(
        _out(config, "importances.csv"),
        ["feature", "importance_pct", "selected"],
        ([f, v, f in selected] for f, v in ranked),
    )
    return ["model.json", "importances.csv"]


def stage_cv(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    years = config.run_years(data.years)
    year = _train_year(config, data, years)
    brands = clean_training_set(
        data,
        year,
        min_revenue=config.revenue_floor_usd,
        min_peer_correlation=config.correlation_floor,
    )
    params = config.hyper_params()
    rows = []
    for fn in (loco_cv, lopo_cv):
        folds = fn(
            data,
            params,
            zero_threshold=config.zero_threshold_usd,
            year=year,
            brands=brands,
            jobs=config.jobs,
        )
        for key in sorted(folds):
            m = folds[key].metrics
            rows.append([key, m.r2, m.restricted_r2, m.accuracy, m.f1])
    _write_csv(
        _out(config, "cv_report.csv"),
        ["fold_key", "r2", "restricted_r2", "accuracy", "f1"],
        rows,
    )
    return ["cv_report.csv"]


def stage_predict(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    model_path = _require(config, "model.json", "train")
    predictor = load_model(model_path)
    years = config.run_years(data.years)
    predicted = predict_all(predictor, data, years=years)
    merged = data.consumption.merged_with(predicted)
    keep = set(years)
    _write_csv(
        _out(config, "predicted_consumption.csv"),
        _CONSUMPTION_HEADER,
        (
            [brand, country, year, usd, prov]
            for brand, country, year, usd, prov in merged.rows()
            if year in keep
        ),
    )
    return ["predicted_consumption.csv"]


def stage_harmonize(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    matrix = _load_consumption(config, "predicted_consumption.csv", "predict")
    years = matrix.years()
    brand_totals = {
        (b, y): data.revenue.world_revenue(b, y)
        for b in sorted(data.brands)
        for y in years
    }
    sector_parts: dict[tuple[str, int], list[float]] = {}
    for (b, y), total in brand_totals.items():
        sector_parts.setdefault((data.brands[b].sector, y), []).append(total)
    targets = HarmonizationTargets(
        brand_totals,
        {key: math.fsum(parts) for key, parts in sector_parts.items()},
        {b: rec.sector for b, rec in data.brands.items()},
    )
    harmonized = harmonize(
        matrix,
        targets,
        tol=config.harmonize_tolerance,
        max_iter=config.harmonize_max_iter,
        freeze_observed=config.freeze_observed,
    )
    _write_csv(
        _out(config, "harmonized_consumption.csv"),
        _CONSUMPTION_HEADER,
        (list(row) for row in harmonized.rows()),
    )
    return ["harmonized_consumption.csv"]


def stage_allocate(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    matrix = _load_consumption(config, "harmonized_consumption.csv", "harmonize")
    tensors = allocate_all(
        data,
        matrix,
        years=matrix.years(),
        domestic_floor_km=config.domestic_floor_km,
        ledger=_ledger(config, data),
        jobs=config.jobs,
    )
    _write_csv(
        _out(config, "allocations.csv"),
        ["year", "product", "origin", "dest", "value_usd"],
        (
            [t.year, t.product, origin, dest, usd]
            for t in tensors
            for origin, dest, usd in t.triplets()
        ),
    )
    _write_flows(config, extract_flows(tensors, data))
    return ["allocations.csv", "flows.csv"]


def stage_bounds(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    tensors = _load_allocations(config)
    report = confidence_bounds(
        tensors,
        data,
        level=config.bounds_level,
        per_firm=config.bounds_per_firm,
        ledger=_ledger(config, data),
    )
    _write_flows(config, report.rows)
    _write_csv(
        _out(config, "bounds.csv"),
        ["level", "per_firm", "share_mean", "share_lower", "share_upper", "n_observations"],
        [
            [
                config.bounds_level,
                config.bounds_per_firm,
                report.share_mean,
                report.share_lower,
                report.share_upper,
                report.n_observations,
            ]
        ],
    )
    return ["flows.csv", "bounds.csv"]


def _physical_exports(data: Dataset) -> dict[tuple[int, str], float]:
    """Cross-border physical export totals keyed by (year, origin)."""
    frame = data.physical_trade
    cross = frame[frame["origin"] != frame["dest"]]
    grouped = cross.groupby(["year", "origin"], sort=True)["value_usd"].sum()
    return {(int(y), o): float(v) for (y, o), v in grouped.items()}


def _physical_imports(data: Dataset) -> dict[tuple[int, str], float]:
    frame = data.physical_trade
    cross = frame[frame["origin"] != frame["dest"]]
    grouped = cross.groupby(["year", "dest"], sort=True)["value_usd"].sum()
    return {(int(y), d): float(v) for (y, d), v in grouped.items()}


def stage_analyze(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    flows = _load_flows(config)
    if not flows:
        raise ComputationError("flows.csv holds no cross-border flows to analyze")
    outputs = []
    years = sorted({r.year for r in flows})
    final = years[-1]
    has_physical = data.physical_trade is not None
    phys_exp = _physical_exports(data) if has_physical else {}
    phys_imp = _physical_imports(data) if has_physical else {}

    digital_by_year = aggregate_flows(flows, by=("year",))
    phys_by_year = {}
    if has_physical:
        for (y, _), v in phys_exp.items():
            phys_by_year[y] = phys_by_year.get(y, 0.0) + v
    _write_csv(
        _out(config, "trade_totals.csv"),
        ["year", "digital_usd", "physical_usd"],
        (
            [y, digital_by_year.get((y,), 0.0), phys_by_year.get(y) if has_physical else None]
            for y in years
        ),
    )
    outputs.append("trade_totals.csv")

    if len(years) >= 2:
        rows = []
        span = years[-1] - years[0]
        d0 = digital_by_year.get((years[0],), 0.0)
        d1 = digital_by_year.get((years[-1],), 0.0)
        if d0 > 0:
            rows.append(["digital", years[0], years[-1], d0, d1, cagr(d0, d1, span)])
        if has_physical:
            p0 = phys_by_year.get(years[0], 0.0)
            p1 = phys_by_year.get(years[-1], 0.0)
            if p0 > 0:
                rows.append(["physical", years[0], years[-1], p0, p1, cagr(p0, p1, span)])
        if rows:
            _write_csv(
                _out(config, "growth.csv"),
                ["series", "year0", "year1", "value0_usd", "value1_usd", "cagr"],
                rows,
            )
            outputs.append("growth.csv")

    dig_exp = aggregate_flows(flows, by=("year", "origin"))
    dig_imp = aggregate_flows(flows, by=("year", "dest"))
    balance_rows = []
    for y in years:
        for country in data.country_codes():
            de = dig_exp.get((y, country), 0.0)
            di = dig_imp.get((y, country), 0.0)
            dnet = de - di
            if has_physical:
                pe = phys_exp.get((y, country), 0.0)
                pi = phys_imp.get((y, country), 0.0)
                pnet = pe - pi
                combined = combined_balance(pnet, dnet)
                offset = balance_offset(pnet, dnet) if pnet != 0.0 else None
                balance_rows.append(
                    [y, country, de, di, dnet, pe, pi, pnet, combined, offset]
                )
            else:
                balance_rows.append(
                    [y, country, de, di, dnet, None, None, None, None, None]
                )
    _write_csv(
        _out(config, "balances.csv"),
        [
            "year",
            "country",
            "digital_exports_usd",
            "digital_imports_usd",
            "digital_net_usd",
            "physical_exports_usd",
            "physical_imports_usd",
            "physical_net_usd",
            "combined_net_usd",
            "offset",
        ],
        balance_rows,
    )
    outputs.append("balances.csv")

    _write_csv(
        _out(config, "sector_shares.csv"),
        ["year", "sector", "share"],
        (
            [y, sector, share]
            for y in years
            for sector, share in sorted(sector_shares(flows, y).items())
        ),
    )
    outputs.append("sector_shares.csv")

    if config.analyze_concentration:
        conc_rows = []
        lorenz_rows = []
        for series, exports in (("digital", dig_exp), ("physical", phys_exp)):
            if series == "physical" and not has_physical:
                continue
            for y in years:
                values = sorted(v for (yy, _), v in exports.items() if yy == y and v > 0)
                if not values:
                    continue
                count, fraction = top_share(values, config.analyze_top_mass)
                conc_rows.append(
                    [
                        y,
                        series,
                        config.analyze_top_mass,
                        count,
                        fraction,
                        shannon_entropy(values),
                    ]
                )
                if y == final:
                    lorenz_rows.extend(
                        [series, x, share] for x, share in lorenz(values)
                    )
        _write_csv(
            _out(config, "concentration.csv"),
            ["year", "series", "top_mass", "top_count", "top_fraction", "entropy"],
            conc_rows,
        )
        outputs.append("concentration.csv")
        if lorenz_rows:
            _write_csv(
                _out(config, "lorenz.csv"),
                ["series", "rank_fraction", "cumulative_share"],
                lorenz_rows,
            )
            outputs.append("lorenz.csv")

    if config.analyze_entropy_baseline and has_physical:
        values = [v for (y, _), v in dig_exp.items() if y == final and v > 0]
        baseline = random_basket_entropy(
            data.physical_trade,
            target_total=math.fsum(values),
            trials=config.analyze_trials,
            seed=config.seed,
            year=final,
        )
        _write_csv(
            _out(config, "entropy_baseline.csv"),
            ["year", "digital_entropy", "random_basket_mean", "trials", "seed"],
            [[final, shannon_entropy(values), baseline, config.analyze_trials, config.seed]],
        )
        outputs.append("entropy_baseline.csv")

    if config.analyze_centrality:
        countries = data.country_codes()
        index = {c: i for i, c in enumerate(countries)}
        F = np.zeros((len(countries), len(countries)))
        for row in flows:
            if row.year == final:
                F[index[row.origin], index[row.dest]] += row.value_usd
        scores = eigenvector_centrality(F, countries, teleport=config.analyze_teleport)
        _write_csv(
            _out(config, "centrality.csv"),
            ["country", "score"],
            ([c, scores[c]] for c in countries),
        )
        outputs.append("centrality.csv")

    records = []
    basis = config.analyze_basis
    if config.analyze_decoupling and len(years) >= 2:
        have_emissions = any(
            (cy.emissions_prod if basis == "production" else cy.emissions_cons)
            is not None
            for rec in data.countries.values()
            for cy in rec.years.values()
        )
        if have_emissions:
            records = decoupling_records(data, years[0], final, basis=basis)
            _write_csv(
                _out(config, "decoupling.csv"),
                ["country", "gdp_change", "emissions_change", "index", "decoupled", "basis"],
                (
                    [r.country, r.gdp_change, r.emissions_change, r.index, r.decoupled, r.basis]
                    for r in records
                ),
            )
            outputs.append("decoupling.csv")

    if config.analyze_group_trends and records:
        try:
            trend_rows = group_trends(
                data,
                flows,
                records,
                high_income_only=config.analyze_high_income_only,
            )
        except ComputationError as exc:
            # Both groups must be inhabited for a comparison; a fixture where
            # every country decoupled is data, not a failure.
            warnings.warn(f"group trends skipped: {exc}")
        else:
            _write_csv(
                _out(config, "group_trends.csv"),
                ["year", "group", "digital_pc", "physical_pc", "n_countries"],
                (
                    [r.year, r.group, r.digital_pc, r.physical_pc, r.n_countries]
                    for r in trend_rows
                ),
            )
            outputs.append("group_trends.csv")
    return outputs


def stage_complexity(config: PipelineConfig) -> list[str]:
    data = _require_dataset(config)
    flows = _load_flows(config)
    years = sorted({r.year for r in flows})
    year = config.complexity_year if config.complexity_year is not None else years[-1]
    countries = data.country_codes()
    digital = digital_output_matrix(flows, countries, data.sectors, year)
    if data.physical_trade is not None:
        physical = physical_output_matrix(data.physical_trade, countries, year)
        merged = merge_digital(physical, digital)
    else:
        merged = OutputMatrix(
            digital.countries,
            tuple(f"digital:{s}" for s in digital.activities),
            digital.values,
        )
    _write_csv(
        _out(config, "merged_matrix.csv"),
        ["country", "activity", "value_usd"],
        (
            [country, activity, merged.values[i, j]]
            for i, country in enumerate(merged.countries)
            for j, activity in enumerate(merged.activities)
            if merged.values[i, j] > 0
        ),
    )
    ratios, dropped_rca = rca(merged)
    spec_matrix, dropped_bin = binarize(ratios)
    scores = eci_pci(spec_matrix)
    rescaled = minmax(scores.eci)
    _write_csv(
        _out(config, "eci.csv"),
        ["country", "eci", "eci_minmax"],
        ([c, scores.eci[c], rescaled[c]] for c in sorted(scores.eci)),
    )
    _write_csv(
        _out(config, "pci.csv"),
        ["activity", "pci", "is_digital"],
        (
            [a, scores.pci[a], a.startswith("digital:")]
            for a in sorted(scores.pci)
        ),
    )
    drop_rows = [
        ["rca", "country", label] for label in dropped_rca.countries
    ] + [["rca", "activity", label] for label in dropped_rca.activities]
    drop_rows += [
        ["binarize", "country", label] for label in dropped_bin.countries
    ] + [["binarize", "activity", label] for label in dropped_bin.activities]
    _write_csv(
        _out(config, "complexity_dropped.csv"),
        ["step", "axis", "label"],
        drop_rows,
    )
    return ["merged_matrix.csv", "eci.csv", "pci.csv", "complexity_dropped.csv"]


def stage_report(config: PipelineConfig) -> list[str]:
    totals_path = _require(config, "trade_totals.csv", "analyze")
    outputs = []

    _, rows = _read_csv(totals_path)
    series: dict[str, list[tuple[int, float]]] = {}
    for year, digital, physical in rows:
        series.setdefault("digital", []).append((int(year), float(digital)))
        if physical:
            series.setdefault("physical", []).append((int(year), float(physical)))
    _write_text(
        _out(config, "chart_trade_volume.svg"), charts.trade_volume_chart(series)
    )
    outputs.append("chart_trade_volume.svg")

    shares_path = _out(config, "sector_shares.csv")
    if os.path.exists(shares_path):
        _, rows = _read_csv(shares_path)
        final = max(int(r[0]) for r in rows)
        shares = {r[1]: float(r[2]) for r in rows if int(r[0]) == final}
        _write_text(
            _out(config, "chart_sector_shares.svg"),
            charts.sector_share_chart(shares, final),
        )
        outputs.append("chart_sector_shares.svg")

    lorenz_path = _out(config, "lorenz.csv")
    if os.path.exists(lorenz_path):
        _, rows = _read_csv(lorenz_path)
        curves: dict[str, list[tuple[float, float]]] = {}
        for name, x, y in rows:
            curves.setdefault(name, []).append((float(x), float(y)))
        _write_text(_out(config, "chart_lorenz.svg"), charts.lorenz_chart(curves))
        outputs.append("chart_lorenz.svg")
    return outputs


STAGES: dict[str, Callable[[PipelineConfig], list[str]]] = {
    "ingest": stage_ingest,
    "features": stage_features,
    "train": stage_train,
    "cv": stage_cv,
    "predict": stage_predict,
    "harmonize": stage_harmonize,
    "allocate": stage_allocate,
    "bounds": stage_bounds,
    "analyze": stage_analyze,
    "complexity": stage_complexity,
    "report": stage_report,
}


def run_stage(config: PipelineConfig, name: str) -> StageResult:
    """Execute one stage; domain errors gain the failing stage's name."""
    if name not in STAGES:
        raise ValueError(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    started = time.perf_counter()
    try:
        outputs = STAGES[name](config)
    except DigitradeError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc
    return StageResult(name, tuple(outputs), time.perf_counter() - started)


def run(config: PipelineConfig) -> RunManifest:
    """Execute every enabled stage in order and write the manifest.

    A stage failure propagates after the preceding stages' outputs are
    safely on disk, so a fixed config can resume from the failed stage.
    """
    results = []
    for name in DEFAULT_STAGES:
        if name == "complexity" and not config.complexity_enabled:
            continue
        if name == "report" and not config.report_enabled:
            continue
        results.append(run_stage(config, name))

    produced: dict[str, str] = {}
    for result in results:
        for rel in result.outputs:
            produced[rel] = _sha256_file(_out(config, rel))

    from . import __version__

    manifest = RunManifest(
        artifact_version=__version__,
        config_digest=config.digest(),
        dataset_digest=dataset_digest(_require_dataset(config)),
        seed=config.seed,
        mode=config.mode,
        stages=tuple(results),
        outputs=produced,
    )
    with open(_out(config, MANIFEST_NAME), "w", encoding="utf-8") as handle:
        json.dump(manifest.to_jsonable(), handle, indent=1)
        handle.write("\n")
    return manifest
