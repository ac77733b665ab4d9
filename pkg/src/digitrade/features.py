"""Gravity-style feature assembly plus the zero-consumption logistic stage.

Each (product, destination, year) pair maps to 22 named features: product
and origin revenue masses, sector revenue mass, both GDPs, distance, region
codes, contiguity, seven cultural and historical pair dummies, and six
connectivity shares.  Continuous features are log(1 + value); dummies stay
0/1; regions are ordinal codes from the fixed region table (trees only need
an ordering, and the logistic stage one-hot encodes them).

Domestic rows have no dyad record by construction: distance is 0 and the
pair dummies collapse to "same country" semantics (shared language flags
and same_country_ever set, colonial flags cleared).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ComputationError
from .reference import REGIONS, region_code

__all__ = [
    "FEATURE_NAMES",
    "DUMMY_FEATURES",
    "REGION_FEATURES",
    "ZERO_PROB_FEATURE",
    "FeatureMatrix",
    "assemble",
    "assemble_matrix",
    "ZeroStage",
    "fit_zero_stage",
    "permutation_importance",
    "select_top",
]

DUMMY_FEATURES = (
    "contiguity",
    "comlang_official",
    "comlang_ethno",
    "colony_ever",
    "comcol_post45",
    "curcol",
    "col_post45",
    "same_country_ever",
)

REGION_FEATURES = ("origin_region", "dest_region")

FEATURE_NAMES = (
    "product_world_revenue",
    "origin_digital_revenue",
    "sector_world_revenue",
    "origin_gdp",
    "dest_gdp",
    "distance_km",
    "origin_region",
    "dest_region",
) + DUMMY_FEATURES + (
    "origin_internet_share",
    "dest_internet_share",
    "origin_fixed_bb_share",
    "dest_fixed_bb_share",
    "origin_mobile_bb_share",
    "dest_mobile_bb_share",
)

ZERO_PROB_FEATURE = "zero_prob"

_LOG_FEATURES = frozenset(FEATURE_NAMES) - set(DUMMY_FEATURES) - set(REGION_FEATURES)


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense feature block with row keys (brand, dest, year)."""

    names: tuple[str, ...]
    values: np.ndarray
    rows: tuple[tuple[str, str, int], ...]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def with_column(self, name: str, column: np.ndarray) -> "FeatureMatrix":
        values = np.column_stack([self.values, np.asarray(column, dtype=float)])
        return FeatureMatrix(self.names + (name,), values, self.rows)

    def subset(self, names: tuple[str, ...]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(tuple(names), self.values[:, idx], self.rows)

    def take(self, mask: np.ndarray) -> "FeatureMatrix":
        keep = np.asarray(mask)
        rows = tuple(r for r, m in zip(self.rows, keep) if m)
        return FeatureMatrix(self.names, self.values[keep], rows)

    def __len__(self) -> int:
        return self.values.shape[0]


class _Lookups:
    """Shared per-dataset tables so bulk assembly is not quadratic in dicts."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.sector_world: dict[tuple[str, int], float] = {}
        for year in dataset.years:
            per_sector: dict[str, list[float]] = {}
            for brand_id in sorted(dataset.brands):
                rev = dataset.revenue.world_revenue(brand_id, year)
                per_sector.setdefault(dataset.brands[brand_id].sector, []).append(rev)
            for sector, vals in per_sector.items():
                self.sector_world[(sector, year)] = math.fsum(vals)

    def row(self, brand: str, dest: str, year: int) -> list[float]:
        ds = self.dataset
        rec = ds.brands[brand]
        origin = ds.brand_origin(brand)
        o = ds.country_year(origin, year)
        d = ds.country_year(dest, year)
        if origin == dest:
            dist = 0.0
            dummies = {name: 0.0 for name in DUMMY_FEATURES}
            dummies["comlang_official"] = 1.0
            dummies["comlang_ethno"] = 1.0
            dummies["same_country_ever"] = 1.0
        else:
            dyad = ds.dyads[(origin, dest)]
            dist = dyad.dist_km
            dummies = {name: float(getattr(dyad, name)) for name in DUMMY_FEATURES}
        raw = {
            "product_world_revenue": ds.revenue.world_revenue(brand, year),
            "origin_digital_revenue": ds.revenue.country_digital_revenue(origin, year),
            "sector_world_revenue": self.sector_world.get((rec.sector, year), 0.0),
            "origin_gdp": o.gdp_ppp,
            "dest_gdp": d.gdp_ppp,
            "distance_km": dist,
            "origin_region": float(region_code(ds.countries[origin].region)),
            "dest_region": float(region_code(ds.countries[dest].region)),
            "origin_internet_share": o.internet_share,
            "dest_internet_share": d.internet_share,
            "origin_fixed_bb_share": o.fixed_bb_share,
            "dest_fixed_bb_share": d.fixed_bb_share,
            "origin_mobile_bb_share": o.mobile_bb_share,
            "dest_mobile_bb_share": d.mobile_bb_share,
        }
        raw.update(dummies)
        return [
            math.log1p(raw[name]) if name in _LOG_FEATURES else raw[name]
            for name in FEATURE_NAMES
        ]


def assemble(dataset: Dataset, brand: str, dest: str, year: int) -> dict[str, float]:
    """Feature vector for one pair, as an ordered name -> value mapping."""
    if brand not in dataset.brands:
        raise KeyError(f"unknown brand {brand}")
    if dest not in dataset.countries:
        raise KeyError(f"unknown country {dest}")
    if year not in dataset.years:
        raise KeyError(f"year {year} outside dataset range")
    values = _Lookups(dataset).row(brand, dest, year)
    return dict(zip(FEATURE_NAMES, values))


def assemble_matrix(
    dataset: Dataset, rows: list[tuple[str, str, int]]
) -> FeatureMatrix:
    """Feature matrix for many pairs; row order follows the input order."""
    lookups = _Lookups(dataset)
    block = np.array(
        [lookups.row(brand, dest, year) for brand, dest, year in rows], dtype=float
    )
    if block.size == 0:
        block = block.reshape(0, len(FEATURE_NAMES))
    return FeatureMatrix(FEATURE_NAMES, block, tuple(rows))


# ---------------------------------------------------------------------------
# Zero-consumption logistic stage


def _one_hot_design(matrix: FeatureMatrix) -> tuple[np.ndarray, tuple[str, ...]]:
    columns: list[np.ndarray] = [np.ones(len(matrix))]
    names: list[str] = ["intercept"]
    for name in matrix.names:
        if name in REGION_FEATURES:
            codes = matrix.column(name).astype(int)
            for region in REGIONS:
                columns.append((codes == region_code(region)).astype(float))
                names.append(f"{name}_{region}")
        else:
            columns.append(matrix.column(name))
            names.append(name)
    return np.column_stack(columns), tuple(names)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    # exp only ever sees non-positive arguments, so it cannot overflow
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ZeroStage:
    """Max-likelihood logistic model for P(pair has non-zero consumption)."""

    design_names: tuple[str, ...]
    coef: np.ndarray
    converged: bool
    n_iter: int
    ridge: float

    def predict_proba(self, matrix: FeatureMatrix) -> np.ndarray:
        design, names = _one_hot_design(matrix)
        if names != self.design_names:
            raise ValueError("feature matrix does not match the fitted design")
        return _stable_sigmoid(design @ self.coef)


def fit_zero_stage(
    matrix: FeatureMatrix,
    labels: np.ndarray,
    ridge: float = 1e-6,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> ZeroStage:
    """Fit by iteratively reweighted least squares with a small L2 penalty.

    The penalty (excluding the intercept) keeps the solve well posed under
    perfect separation or one-hot collinearity.  Convergence is declared
    when the penalized log-likelihood moves by less than ``tol``.
    """
    y = np.asarray(labels, dtype=float)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    design, names = _one_hot_design(matrix)
    n, k = design.shape

    if y.min() == y.max():
        warnings.warn("zero-stage labels are single-class; using a constant model")
        rate = min(max(y.mean(), 1.0 / (n + 2.0)), 1.0 - 1.0 / (n + 2.0))
        coef = np.zeros(k)
        coef[0] = math.log(rate / (1.0 - rate))
        return ZeroStage(names, coef, True, 0, ridge)

    penalty = np.full(k, ridge)
    penalty[0] = 0.0  # intercept unpenalized
    beta = np.zeros(k)

    def loglik(b: np.ndarray) -> float:
        z = design @ b
        # log(1 + e^z) computed stably
        ll = float(np.sum(y * z - np.logaddexp(0.0, z)))
        return ll - 0.5 * float(penalty @ (b * b))

    last = loglik(beta)
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        p = _stable_sigmoid(design @ beta)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        hessian = design.T @ (design * w[:, None]) + np.diag(penalty)
        gradient = design.T @ (y - p) - penalty * beta
        beta = beta + np.linalg.solve(hessian, gradient)
        current = loglik(beta)
        if abs(current - last) < tol:
            converged = True
            last = current
            break
        last = current
    return ZeroStage(names, beta, converged, n_iter, ridge)


# ---------------------------------------------------------------------------
# Permutation importance and feature selection


def _r_squared(y: np.ndarray, yhat: np.ndarray) -> float:
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ComputationError("target has zero variance; R-squared undefined")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / sst


def permutation_importance(
    model,
    matrix: FeatureMatrix,
    targets: np.ndarray,
    feature: str,
    seed: int,
    n_shuffles: int = 5,
) -> float:
    """Mean relative R-squared drop (in percent) from shuffling one column.

    A duplicated, perfectly collinear feature pair dilutes this score:
    shuffling one copy leaves the other carrying the signal, so each copy
    scores below an equally informative unique feature.  That is a known
    reading caveat, not a defect, and is asserted in the test suite.
    """
    y = np.asarray(targets, dtype=float)
    baseline = _r_squared(y, model.predict(matrix))
    if baseline <= 0.0:
        raise ComputationError(
            f"uninformative baseline (R-squared {baseline:.4f}); importance undefined"
        )
    col = matrix.names.index(feature)
    drops = []
    for shuffle in range(n_shuffles):
        rng = np.random.default_rng([seed, col, shuffle])
        shuffled = matrix.values.copy()
        shuffled[:, col] = rng.permutation(shuffled[:, col])
        permuted = FeatureMatrix(matrix.names, shuffled, matrix.rows)
        drops.append(baseline - _r_squared(y, model.predict(permuted)))
    return float(np.mean(drops)) / abs(baseline) * 100.0


def select_top(importances: dict[str, float], k: int) -> tuple[str, ...]:
    """Top-k feature names by importance; ties resolved lexicographically."""
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(importances):
        raise ValueError(f"k={k} exceeds the {len(importances)} scored features")
    ranked = sorted(importances.items(), key=lambda item: (-item[1], item[0]))
    return tuple(name for name, _ in ranked[:k])
