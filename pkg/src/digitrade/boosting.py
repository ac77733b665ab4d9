"""Consumption predictor: training assembly, cross-validation and tuning.

Targets are modeled as log(1 + USD).  A logistic stage first estimates the
probability that a pair has non-zero consumption; that probability joins
the feature block as one extra column, and the boosted tree ensemble fits
the log target on top.  Predictions map back through exp(x) - 1, clamp at
zero, and drop below the reporting threshold (USD 1,000 by default), under
which a pair counts as having no consumption at all.

Cross-validation folds leave out one destination country or one product at
a time.  The logistic stage is refit inside every fold so no information
from the held-out rows leaks into its probabilities.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .dataset import ConsumptionMatrix, Dataset, PREDICTED
from .errors import ComputationError
from .features import (
    FEATURE_NAMES,
    FeatureMatrix,
    ZERO_PROB_FEATURE,
    ZeroStage,
    assemble_matrix,
    fit_zero_stage,
)
from .tree import BoostedEnsemble, HyperParams, RegressionTree, fit_ensemble

__all__ = [
    "ZERO_USD_THRESHOLD",
    "HyperGrid",
    "DEFAULT_GRID",
    "Metrics",
    "FoldResult",
    "metrics",
    "clean_training_set",
    "build_training",
    "ConsumptionPredictor",
    "LinearPredictor",
    "fit_predictor",
    "loco_cv",
    "lopo_cv",
    "tune",
    "predict_all",
    "save_model",
    "load_model",
]

ZERO_USD_THRESHOLD = 1000.0


@dataclass(frozen=True)
class HyperGrid:
    max_splits: tuple[int, ...] = (1, 3, 5, 10, 15, 20, 30, 50)
    min_parent: tuple[int, ...] = (3, 5, 7, 10)


DEFAULT_GRID = HyperGrid()


@dataclass(frozen=True)
class Metrics:
    r2: float
    restricted_r2: float
    accuracy: float
    f1: float


@dataclass(frozen=True)
class FoldResult:
    fold_key: str
    metrics: Metrics
    mse_log: float
    n_rows: int


def metrics(
    y_usd: np.ndarray, yhat_usd: np.ndarray, zero_threshold: float = ZERO_USD_THRESHOLD
) -> Metrics:
    """Fit quality of USD predictions against USD observations.

    R-squared values are computed in log(1 + x) space, matching the space
    the model trains in.  The restricted variant keeps only pairs whose
    observed value clears the reporting threshold; it is NaN when fewer
    than two such pairs exist or they carry no variance.
    """
    y = np.asarray(y_usd, dtype=float)
    yhat = np.asarray(yhat_usd, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError("observations and predictions must be 1-D and aligned")
    if len(y) < 2:
        raise ValueError("need at least two pairs")

    y_log = np.log1p(y)
    yhat_log = np.log1p(np.clip(yhat, 0.0, None))
    sst = float(np.sum((y_log - y_log.mean()) ** 2))
    if sst == 0.0:
        raise ComputationError("observed values have zero variance; R-squared undefined")
    r2 = 1.0 - float(np.sum((y_log - yhat_log) ** 2)) / sst

    big = y >= zero_threshold
    if big.sum() >= 2 and np.ptp(y_log[big]) > 0:
        sst_big = float(np.sum((y_log[big] - y_log[big].mean()) ** 2))
        restricted = 1.0 - float(np.sum((y_log[big] - yhat_log[big]) ** 2)) / sst_big
    else:
        restricted = float("nan")

    actual_pos = y >= zero_threshold
    pred_pos = yhat >= zero_threshold
    accuracy = float(np.mean(actual_pos == pred_pos))
    tp = float(np.sum(actual_pos & pred_pos))
    fp = float(np.sum(~actual_pos & pred_pos))
    fn = float(np.sum(actual_pos & ~pred_pos))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(r2=r2, restricted_r2=restricted, accuracy=accuracy, f1=f1)


# ---------------------------------------------------------------------------
# Training set construction


def clean_training_set(
    dataset: Dataset,
    year: int,
    min_revenue: float = 1e7,
    min_peer_correlation: float = 0.3,
) -> tuple[str, ...]:
    """Products that survive the revenue floor and the peer-coherence rule.

    A product needs observed consumption in ``year``, world revenue of at
    least ``min_revenue``, and a mean Pearson correlation with co-national
    peers (same parent-company country, among revenue survivors) of at
    least ``min_peer_correlation``.  Products without peers, or whose peer
    correlations are all undefined, are retained.
    """
    observed = sorted(dataset.consumption.observed_countries)
    candidates = [
        b
        for b in sorted(dataset.brands)
        if any((b, c, year) in dataset.consumption for c in observed)
        and dataset.revenue.world_revenue(b, year) >= min_revenue
    ]
    if not candidates:
        raise ComputationError(f"no products left to train on for year {year}")

    vectors = {
        b: np.asarray(dataset.consumption.brand_vector(b, observed, year))
        for b in candidates
    }
    by_country: dict[str, list[str]] = {}
    for b in candidates:
        by_country.setdefault(dataset.brand_origin(b), []).append(b)

    kept = []
    for b in candidates:
        peers = [p for p in by_country[dataset.brand_origin(b)] if p != b]
        corrs = []
        for p in peers:
            va, vb = vectors[b], vectors[p]
            if np.ptp(va) == 0 or np.ptp(vb) == 0:
                continue  # Pearson undefined against a constant vector
            corrs.append(float(np.corrcoef(va, vb)[0, 1]))
        if not corrs or float(np.mean(corrs)) >= min_peer_correlation:
            kept.append(b)
    if not kept:
        raise ComputationError(f"peer-correlation rule removed every product for {year}")
    return tuple(kept)


def build_training(
    dataset: Dataset, year: int, brands: tuple[str, ...]
) -> tuple[FeatureMatrix, np.ndarray]:
    """Observed rows (product x observed country) for one year."""
    observed = sorted(dataset.consumption.observed_countries)
    rows = [
        (b, c, year)
        for b in brands
        for c in observed
        if (b, c, year) in dataset.consumption
    ]
    if not rows:
        raise ComputationError(f"no observed consumption rows for year {year}")
    matrix = assemble_matrix(dataset, rows)
    y = np.array([dataset.consumption.get(*row) for row in rows], dtype=float)
    return matrix, y


# ---------------------------------------------------------------------------
# Predictors


@dataclass
class ConsumptionPredictor:
    """Zero-stage logistic plus boosted ensemble over selected features.

    ``predict`` consumes the full 22-column feature matrix: the logistic
    probability is recomputed from it on every call, so column shuffles
    (permutation importance) propagate through both stages.
    """

    features: tuple[str, ...]
    zero_stage: ZeroStage
    ensemble: BoostedEnsemble
    zero_threshold: float = ZERO_USD_THRESHOLD

    def model_matrix(self, matrix: FeatureMatrix) -> np.ndarray:
        proba = self.zero_stage.predict_proba(matrix)
        return np.column_stack([matrix.subset(self.features).values, proba])

    def predict(self, matrix: FeatureMatrix) -> np.ndarray:
        """Predicted log(1 + USD) per row."""
        return self.ensemble.predict(self.model_matrix(matrix))

    def predict_usd(self, matrix: FeatureMatrix) -> np.ndarray:
        usd = np.expm1(self.predict(matrix))
        usd = np.clip(usd, 0.0, None)
        usd[usd < self.zero_threshold] = 0.0
        return usd


@dataclass
class LinearPredictor:
    """Least-squares baseline over the identical feature block."""

    features: tuple[str, ...]
    zero_stage: ZeroStage
    coef: np.ndarray
    zero_threshold: float = ZERO_USD_THRESHOLD

    def model_matrix(self, matrix: FeatureMatrix) -> np.ndarray:
        proba = self.zero_stage.predict_proba(matrix)
        return np.column_stack([matrix.subset(self.features).values, proba])

    def predict(self, matrix: FeatureMatrix) -> np.ndarray:
        block = self.model_matrix(matrix)
        design = np.column_stack([np.ones(len(block)), block])
        return design @ self.coef

    def predict_usd(self, matrix: FeatureMatrix) -> np.ndarray:
        usd = np.expm1(self.predict(matrix))
        usd = np.clip(usd, 0.0, None)
        usd[usd < self.zero_threshold] = 0.0
        return usd


def _fit_on(
    matrix: FeatureMatrix,
    y_usd: np.ndarray,
    params: HyperParams,
    features: tuple[str, ...],
    zero_threshold: float,
    model: str,
):
    labels = (y_usd >= zero_threshold).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # single-class folds degrade gracefully
        stage = fit_zero_stage(matrix, labels)
    y_log = np.log1p(y_usd)
    if model == "linear":
        proba = stage.predict_proba(matrix)
        block = np.column_stack([matrix.subset(features).values, proba])
        design = np.column_stack([np.ones(len(block)), block])
        coef, *_ = np.linalg.lstsq(design, y_log, rcond=None)
        return LinearPredictor(features, stage, coef, zero_threshold)
    if model != "boosted":
        raise ValueError(f"unknown model kind {model!r}")
    proba = stage.predict_proba(matrix)
    block = np.column_stack([matrix.subset(features).values, proba])
    names = features + (ZERO_PROB_FEATURE,)
    ensemble = fit_ensemble(block, y_log, params, feature_names=names)
    return ConsumptionPredictor(features, stage, ensemble, zero_threshold)


def fit_predictor(
    dataset: Dataset,
    year: int,
    params: HyperParams,
    features: tuple[str, ...] | None = None,
    brands: tuple[str, ...] | None = None,
    zero_threshold: float = ZERO_USD_THRESHOLD,
    model: str = "boosted",
):
    """Fit on all observed rows of ``year`` for the given product set."""
    if brands is None:
        brands = clean_training_set(dataset, year)
    matrix, y_usd = build_training(dataset, year, brands)
    return _fit_on(
        matrix, y_usd, params, features or FEATURE_NAMES, zero_threshold, model
    )


# ---------------------------------------------------------------------------
# Cross-validation


def _run_fold(fold_key, matrix, y_usd, train_mask, params, features, zero_threshold, model):
    train = matrix.take(train_mask)
    test = matrix.take(~train_mask)
    predictor = _fit_on(train, y_usd[train_mask], params, features, zero_threshold, model)
    y_test = y_usd[~train_mask]
    yhat_usd = predictor.predict_usd(test)
    try:
        fold_metrics = metrics(y_test, yhat_usd, zero_threshold)
    except ComputationError:
        return None  # degenerate held-out targets; fold is skipped
    mse = float(np.mean((np.log1p(y_test) - predictor.predict(test)) ** 2))
    return FoldResult(fold_key, fold_metrics, mse, int(len(y_test)))


def _cross_validate(
    dataset: Dataset,
    params: HyperParams,
    fold_of_row,
    key_prefix: str,
    features: tuple[str, ...] | None,
    zero_threshold: float,
    model: str,
    year: int | None,
    brands: tuple[str, ...] | None,
    jobs: int,
) -> dict[str, FoldResult]:
    year = year if year is not None else dataset.years[-1]
    if brands is None:
        brands = clean_training_set(dataset, year)
    matrix, y_usd = build_training(dataset, year, brands)
    features = features or FEATURE_NAMES

    fold_keys = sorted({fold_of_row(row) for row in matrix.rows})
    if len(fold_keys) < 2:
        raise ComputationError("cross-validation needs at least two folds")
    assignments = np.array([fold_of_row(row) for row in matrix.rows])

    tasks = [
        (key, assignments != key)
        for key in fold_keys
    ]
    runner = Parallel(n_jobs=jobs) if jobs != 1 else None
    if runner is None:
        raw = [
            _run_fold(key, matrix, y_usd, mask, params, features, zero_threshold, model)
            for key, mask in tasks
        ]
    else:
        raw = runner(
            delayed(_run_fold)(
                key, matrix, y_usd, mask, params, features, zero_threshold, model
            )
            for key, mask in tasks
        )
    results: dict[str, FoldResult] = {}
    for (key, _), result in zip(tasks, raw):
        if result is None:
            warnings.warn(f"skipping fold {key_prefix}:{key}: degenerate held-out targets")
            continue
        results[f"{key_prefix}:{key}"] = result
    if not results:
        raise ComputationError("every cross-validation fold was degenerate")
    return results


def loco_cv(
    dataset: Dataset,
    params: HyperParams,
    features: tuple[str, ...] | None = None,
    zero_threshold: float = ZERO_USD_THRESHOLD,
    model: str = "boosted",
    year: int | None = None,
    brands: tuple[str, ...] | None = None,
    jobs: int = 1,
) -> dict[str, FoldResult]:
    """Leave-one-country-out: each observed destination is held out once."""
    return _cross_validate(
        dataset, params, lambda row: row[1], "country", features,
        zero_threshold, model, year, brands, jobs,
    )


def lopo_cv(
    dataset: Dataset,
    params: HyperParams,
    features: tuple[str, ...] | None = None,
    zero_threshold: float = ZERO_USD_THRESHOLD,
    model: str = "boosted",
    year: int | None = None,
    brands: tuple[str, ...] | None = None,
    jobs: int = 1,
) -> dict[str, FoldResult]:
    """Leave-one-product-out: each training product is held out once."""
    return _cross_validate(
        dataset, params, lambda row: row[0], "product", features,
        zero_threshold, model, year, brands, jobs,
    )


def tune(
    dataset: Dataset,
    grid: HyperGrid = DEFAULT_GRID,
    features: tuple[str, ...] | None = None,
    zero_threshold: float = ZERO_USD_THRESHOLD,
    year: int | None = None,
    brands: tuple[str, ...] | None = None,
    jobs: int = 1,
    learn_rate: float = 0.1,
    n_cycles: int = 150,
) -> tuple[HyperParams, dict[HyperParams, float]]:
    """Exhaustive grid search minimizing mean leave-one-product-out MSE.

    Ties prefer fewer splits, then a larger minimum parent size: the
    least complex model that reaches the optimum.
    """
    table: dict[HyperParams, float] = {}
    for max_splits in grid.max_splits:
        for min_parent in grid.min_parent:
            params = HyperParams(max_splits, min_parent, learn_rate, n_cycles)
            folds = lopo_cv(
                dataset, params, features, zero_threshold, "boosted", year, brands, jobs
            )
            table[params] = float(np.mean([f.mse_log for f in folds.values()]))
    best = min(table, key=lambda p: (table[p], p.max_splits, -p.min_parent))
    return best, table


# ---------------------------------------------------------------------------
# Bulk prediction


def predict_all(
    predictor, dataset: Dataset, years: tuple[int, ...] | None = None
) -> ConsumptionMatrix:
    """Predict every (product, country, year) cell with positive revenue.

    One model extrapolates across all requested years through its feature
    vectors; values under the reporting threshold come out as exact zeros.
    """
    years = tuple(years if years is not None else dataset.years)
    bad = set(years) - set(dataset.years)
    if bad:
        raise ValueError(f"years {sorted(bad)} outside the dataset range")
    countries = dataset.country_codes()
    rows = [
        (b, c, y)
        for y in years
        for b in sorted(dataset.brands)
        if dataset.revenue.world_revenue(b, y) > 0
        for c in countries
    ]
    if not rows:
        raise ComputationError("no products carry revenue in the requested years")
    matrix = assemble_matrix(dataset, rows)
    usd = predictor.predict_usd(matrix)
    values = {row: float(v) for row, v in zip(rows, usd)}
    provenance = {row: PREDICTED for row in rows}
    return ConsumptionMatrix(values, provenance, set())


# ---------------------------------------------------------------------------
# Model persistence

_MODEL_FORMAT = "digitrade-model/1"


def _zero_stage_jsonable(stage: ZeroStage) -> dict:
    return {
        "design_names": list(stage.design_names),
        "coef": stage.coef.tolist(),
        "converged": stage.converged,
        "n_iter": stage.n_iter,
        "ridge": stage.ridge,
    }


def _zero_stage_from(payload: dict) -> ZeroStage:
    return ZeroStage(
        design_names=tuple(payload["design_names"]),
        coef=np.asarray(payload["coef"], dtype=float),
        converged=bool(payload["converged"]),
        n_iter=int(payload["n_iter"]),
        ridge=float(payload["ridge"]),
    )


def save_model(predictor, path: str) -> None:
    """Write a fitted predictor as a single self-describing JSON document.

    Every field needed to reconstruct predictions is stored by name: the
    selected feature list, the logistic stage, and either the per-tree node
    arrays with the boosting parameters or the linear coefficient vector.
    Floats survive the round trip exactly (shortest-repr encoding).
    """
    doc: dict = {
        "format": _MODEL_FORMAT,
        "features": list(predictor.features),
        "zero_threshold": predictor.zero_threshold,
        "zero_stage": _zero_stage_jsonable(predictor.zero_stage),
    }
    if isinstance(predictor, ConsumptionPredictor):
        ens = predictor.ensemble
        doc["kind"] = "boosted"
        doc["ensemble"] = {
            "params": {
                "max_splits": ens.params.max_splits,
                "min_parent": ens.params.min_parent,
                "learn_rate": ens.params.learn_rate,
                "n_cycles": ens.params.n_cycles,
            },
            "base": ens.base,
            "feature_names": list(ens.feature_names) if ens.feature_names else None,
            "train_mse": list(ens.train_mse),
            "trees": [tree.to_jsonable() for tree in ens.trees],
        }
    elif isinstance(predictor, LinearPredictor):
        doc["kind"] = "linear"
        doc["coef"] = predictor.coef.tolist()
    else:
        raise TypeError(f"cannot serialize {type(predictor).__name__}")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=1)
        handle.write("\n")


def load_model(path: str):
    """Rebuild a saved predictor; inverse of :func:`save_model`."""
    with open(path, "r", encoding="utf-8") as handle:
        doc = json.load(handle)
    if doc.get("format") != _MODEL_FORMAT:
        raise ValueError(f"unrecognized model format {doc.get('format')!r}")
    features = tuple(doc["features"])
    stage = _zero_stage_from(doc["zero_stage"])
    threshold = float(doc["zero_threshold"])
    if doc["kind"] == "linear":
        return LinearPredictor(
            features, stage, np.asarray(doc["coef"], dtype=float), threshold
        )
    if doc["kind"] != "boosted":
        raise ValueError(f"unrecognized model kind {doc['kind']!r}")
    spec = doc["ensemble"]
    params = HyperParams(
        max_splits=int(spec["params"]["max_splits"]),
        min_parent=int(spec["params"]["min_parent"]),
        learn_rate=float(spec["params"]["learn_rate"]),
        n_cycles=int(spec["params"]["n_cycles"]),
    )
    ensemble = BoostedEnsemble(
        params=params,
        base=float(spec["base"]),
        trees=[RegressionTree.from_jsonable(t) for t in spec["trees"]],
        feature_names=tuple(spec["feature_names"]) if spec["feature_names"] else None,
        train_mse=[float(v) for v in spec["train_mse"]],
    )
    return ConsumptionPredictor(features, stage, ensemble, threshold)
