"""Descriptive and inferential statistics over trade flow tables.

Growth rates, balances, concentration summaries (Lorenz, top-share, Shannon
entropy with a random-basket baseline), random-walker centrality, the
decoupling classification with group trends, a reference-based upper-bound
adjustment, and OLS with heteroskedasticity-robust standard errors.  All
operations are pure functions over immutable inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ComputationError
from .transport import FlowRow

__all__ = [
    "cagr",
    "trade_balance",
    "combined_balance",
    "balance_offset",
    "aggregate_flows",
    "sector_shares",
    "lorenz",
    "top_share",
    "shannon_entropy",
    "random_basket_entropy",
    "eigenvector_centrality",
    "DecouplingRecord",
    "decoupling",
    "decoupling_records",
    "GroupTrendRow",
    "group_trends",
    "RegressionResult",
    "ols_robust",
    "reference_upper_bound",
    "HIGH_INCOME_GDP_PC",
]

# GDP per capita cutoff (USD) used when trends are restricted to high-income
# countries.
HIGH_INCOME_GDP_PC = 13205.0


# ---------------------------------------------------------------------------
# Growth and balances


def cagr(v0: float, v1: float, years: int) -> float:
    """Annualized growth rate between two levels ``years`` apart."""
    if v0 <= 0:
        raise ComputationError("starting value must be positive")
    if years < 1:
        raise ComputationError("years must be at least 1")
    return (v1 / v0) ** (1.0 / years) - 1.0


def trade_balance(exports: float, imports: float) -> float:
    return exports - imports


def combined_balance(physical_net: float, digital_net: float) -> float:
    return physical_net + digital_net


def balance_offset(physical_net: float, digital_net: float) -> float:
    """Fraction of the physical imbalance cancelled by the digital one."""
    if physical_net == 0:
        raise ComputationError("physical balance is zero; offset undefined")
    combined = combined_balance(physical_net, digital_net)
    return (abs(physical_net) - abs(combined)) / abs(physical_net)


# ---------------------------------------------------------------------------
# Flow aggregation

_FLOW_KEYS = ("year", "brand", "sector", "origin", "dest")


def aggregate_flows(
    rows: Iterable[FlowRow], by: Sequence[str]
) -> dict[tuple, float]:
    """Exact USD sums of flow rows grouped by the requested key fields."""
    for key in by:
        if key not in _FLOW_KEYS:
            raise ValueError(f"unknown grouping field {key!r}")
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(getattr(row, k) for k in by)
        groups.setdefault(key, []).append(row.value_usd)
    return {key: math.fsum(vals) for key, vals in sorted(groups.items())}


def sector_shares(rows: Iterable[FlowRow], year: int) -> dict[str, float]:
    """Each sector's share of that year's total flow value; sums to 1."""
    totals = aggregate_flows(
        (r for r in rows if r.year == year), by=("sector",)
    )
    grand = math.fsum(totals.values())
    if grand <= 0:
        raise ComputationError(f"no positive flows in {year}")
    return {sector: usd / grand for (sector,), usd in totals.items()}


# ---------------------------------------------------------------------------
# Concentration


def lorenz(values: Sequence[float]) -> list[tuple[float, float]]:
    """Cumulative-share curve from smallest to largest holder.

    Ascending order makes the curve convex with endpoints (0,0) and (1,1);
    the bowed-away-from-diagonal shape is the usual concentration picture.
    """
    vals = sorted(float(v) for v in values)
    if not vals or vals[0] < 0:
        raise ComputationError("values must be non-negative and non-empty")
    total = math.fsum(vals)
    if total <= 0:
        raise ComputationError("all values are zero; curve undefined")
    points = [(0.0, 0.0)]
    running = 0.0
    for k, v in enumerate(vals, start=1):
        running += v
        points.append((k / len(vals), min(running / total, 1.0)))
    points[-1] = (1.0, 1.0)
    return points


def top_share(values: Sequence[float], mass: float) -> tuple[int, float]:
    """Minimal top-k holders covering ``mass`` of the total, and k/n."""
    if not 0.0 < mass <= 1.0:
        raise ComputationError("mass must be in (0, 1]")
    vals = sorted((float(v) for v in values), reverse=True)
    if not vals or vals[-1] < 0:
        raise ComputationError("values must be non-negative and non-empty")
    total = math.fsum(vals)
    if total <= 0:
        raise ComputationError("all values are zero; share undefined")
    running = 0.0
    for k, v in enumerate(vals, start=1):
        running += v
        if running >= mass * total:
            return k, k / len(vals)
    return len(vals), 1.0


def shannon_entropy(exports: Sequence[float]) -> float:
    """Natural-log entropy of market shares; zero shares contribute zero."""
    vals = [float(v) for v in exports]
    if vals and min(vals) < 0:
        raise ComputationError("exports must be non-negative")
    total = math.fsum(vals)
    if total <= 0:
        raise ComputationError("no positive exports; entropy undefined")
    return 0.0 - math.fsum(
        (v / total) * math.log(v / total) for v in vals if v > 0
    )


def random_basket_entropy(
    physical_trade,
    target_total: float,
    trials: int = 1000,
    seed: int = 0,
    year: int | None = None,
) -> float:
    """Mean pooled-export entropy of random product baskets of a given size.

    Each trial draws physical product codes without replacement until their
    combined trade reaches ``target_total``, pools their exports by origin
    country, and scores the entropy.  Per-trial generators are derived from
    (seed, trial), so the mean is reproducible and trials could be scored in
    any order.
    """
    frame = physical_trade
    if year is not None:
        frame = frame[frame["year"] == year]
    if len(frame) == 0:
        raise ComputationError("physical trade table is empty")
    by_product = frame.groupby("hs4", sort=True)["value_usd"].sum()
    products = list(by_product.index)
    totals = by_product.to_numpy(dtype=float)
    if target_total > totals.sum():
        raise ComputationError(
            f"target {target_total:.6g} exceeds total physical trade "
            f"{totals.sum():.6g}"
        )
    exports = {
        hs4: grp.groupby("origin")["value_usd"].sum()
        for hs4, grp in frame.groupby("hs4", sort=True)
    }
    countries = sorted(frame["origin"].unique())
    index = {c: i for i, c in enumerate(countries)}

    entropies = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        order = rng.permutation(len(products))
        pooled = np.zeros(len(countries))
        acc = 0.0
        for idx in order:
            hs4 = products[int(idx)]
            for origin, usd in exports[hs4].items():
                pooled[index[origin]] += usd
            acc += totals[int(idx)]
            if acc >= target_total:
                break
        entropies.append(shannon_entropy(pooled.tolist()))
    return math.fsum(entropies) / trials


# ---------------------------------------------------------------------------
# Centrality


def eigenvector_centrality(
    flows: np.ndarray,
    countries: Sequence[str],
    teleport: float | None = None,
    tol: float = 1e-12,
    max_iter: int = 100000,
) -> dict[str, float]:
    """Stationary weight of a random walk over combined two-way flows.

    The walk moves along export and import volumes alike (the matrix is
    symmetrized), so a country's score is the long-run probability of
    finding the walker there.  Power iteration uses the half-lazy walk,
    which has the same stationary distribution but also converges on
    periodic (for example star-shaped) graphs.  Countries with no flows get
    score zero.  A disconnected positive-flow graph has no unique
    distribution: that raises an error unless ``teleport`` adds a uniform
    jump probability.
    """
    F = np.asarray(flows, dtype=float)
    n = len(countries)
    if F.shape != (n, n):
        raise ValueError("flow matrix does not match the country axis")
    if F.size == 0 or not np.isfinite(F).all() or F.min() < 0:
        raise ComputationError("flows must be non-negative, finite, non-empty")
    S = F + F.T
    active = np.where(S.sum(axis=0) > 0)[0]
    if active.size == 0:
        raise ComputationError("no positive flows; centrality undefined")
    A = S[np.ix_(active, active)]

    if teleport is None:
        _assert_connected(A)
        T = A / A.sum(axis=0, keepdims=True)
    else:
        if not 0.0 < teleport < 1.0:
            raise ValueError("teleport must be in (0, 1)")
        T = A / A.sum(axis=0, keepdims=True)
        T = (1.0 - teleport) * T + teleport / active.size

    p = np.full(active.size, 1.0 / active.size)
    for _ in range(max_iter):
        nxt = 0.5 * (p + T @ p)
        nxt /= nxt.sum()
        if np.abs(nxt - p).sum() < tol:
            p = nxt
            break
        p = nxt
    else:
        raise ComputationError("power iteration did not converge")

    scores = {c: 0.0 for c in countries}
    for k, i in enumerate(active):
        scores[countries[int(i)]] = float(p[k])
    return scores


def _assert_connected(S: np.ndarray) -> None:
    n = S.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.where(S[i] > 0)[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    if not seen.all():
        raise ComputationError(
            "reducible flow graph: some countries are unreachable; "
            "pass a teleport probability to force irreducibility"
        )


# ---------------------------------------------------------------------------
# Decoupling


@dataclass(frozen=True)
class DecouplingRecord:
    country: str
    gdp_change: float
    emissions_change: float
    index: float
    decoupled: bool
    basis: str


def decoupling(
    gdp0: float,
    gdp1: float,
    em0: float,
    em1: float,
    country: str = "",
    basis: str = "production",
) -> DecouplingRecord:
    """Relate GDP growth to emissions growth over the same period.

    The index is 1 - emissions_change/gdp_change, which exceeds 1 exactly
    when emissions fell while GDP grew ("absolute" decoupling); equal growth
    rates give 0 and unchanged emissions give exactly 1.
    """
    if gdp0 <= 0:
        raise ComputationError("gdp0 must be positive")
    if em0 <= 0:
        raise ComputationError("em0 must be positive")
    dgdp = (gdp1 - gdp0) / gdp0
    dem = (em1 - em0) / em0
    if dgdp == 0.0:
        raise ComputationError("GDP unchanged; decoupling index undefined")
    index = 1.0 - dem / dgdp
    return DecouplingRecord(
        country, dgdp, dem, index, dgdp > 0 and index > 1.0, basis
    )


def decoupling_records(
    dataset: Dataset,
    year0: int,
    year1: int,
    basis: str = "production",
) -> list[DecouplingRecord]:
    """Per-country decoupling over [year0, year1] on per-capita quantities.

    Countries without emissions for the chosen basis, or with undefined
    ratios, are skipped with a warning rather than failing the run.
    """
    if basis not in ("production", "consumption"):
        raise ValueError("basis must be production or consumption")
    records = []
    skipped = []
    for code in sorted(dataset.countries):
        y0 = dataset.countries[code].years.get(year0)
        y1 = dataset.countries[code].years.get(year1)
        if y0 is None or y1 is None:
            skipped.append(code)
            continue
        em0 = y0.emissions_prod if basis == "production" else y0.emissions_cons
        em1 = y1.emissions_prod if basis == "production" else y1.emissions_cons
        if em0 is None or em1 is None:
            skipped.append(code)
            continue
        try:
            records.append(
                decoupling(
                    y0.gdp_ppp / y0.population,
                    y1.gdp_ppp / y1.population,
                    em0 / y0.population,
                    em1 / y1.population,
                    country=code,
                    basis=basis,
                )
            )
        except ComputationError:
            skipped.append(code)
    if skipped:
        warnings.warn(
            f"decoupling skipped {len(skipped)} countries without usable "
            f"emissions: {', '.join(skipped[:5])}"
            + ("..." if len(skipped) > 5 else "")
        )
    if not records:
        raise ComputationError("no country had usable emissions data")
    return records


@dataclass(frozen=True)
class GroupTrendRow:
    year: int
    group: str
    digital_pc: float
    physical_pc: float
    n_countries: int


def group_trends(
    dataset: Dataset,
    flows: Iterable[FlowRow],
    records: Iterable[DecouplingRecord],
    high_income_only: bool = True,
    income_threshold: float = HIGH_INCOME_GDP_PC,
    income_year: int | None = None,
) -> list[GroupTrendRow]:
    """Yearly mean export-per-capita for decoupled vs other countries.

    Digital exports come from the supplied flow rows, physical exports from
    the dataset's physical trade table; both are unweighted means across the
    group's countries.  ``high_income_only`` keeps countries whose GDP per
    capita exceeds the threshold in ``income_year`` (default: latest year).
    """
    flows = list(flows)
    by_group: dict[str, list[str]] = {"decoupled": [], "other": []}
    income_year = income_year if income_year is not None else dataset.years[-1]
    for rec in records:
        cy = dataset.countries[rec.country].years[income_year]
        if high_income_only and cy.gdp_ppp / cy.population <= income_threshold:
            continue
        by_group["decoupled" if rec.decoupled else "other"].append(rec.country)
    for group, members in by_group.items():
        if not members:
            raise ComputationError(f"empty group: {group}")

    digital = aggregate_flows(flows, by=("year", "origin"))
    years = sorted({r.year for r in flows})
    physical: dict[tuple[int, str], float] = {}
    if dataset.physical_trade is not None:
        frame = dataset.physical_trade
        cross = frame[frame["origin"] != frame["dest"]]
        grouped = cross.groupby(["year", "origin"], sort=True)["value_usd"].sum()
        physical = {
            (int(year), origin): float(usd)
            for (year, origin), usd in grouped.items()
        }

    rows = []
    for year in years:
        for group, members in sorted(by_group.items()):
            dig = []
            phy = []
            for code in members:
                pop = dataset.countries[code].years[year].population
                dig.append(digital.get((year, code), 0.0) / pop)
                phy.append(physical.get((year, code), 0.0) / pop)
            rows.append(
                GroupTrendRow(
                    year,
                    group,
                    math.fsum(dig) / len(members),
                    math.fsum(phy) / len(members),
                    len(members),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# Regression


@dataclass(frozen=True)
class RegressionResult:
    coef: np.ndarray
    se: np.ndarray
    r2: float
    adjusted_r2: float
    n: int


def ols_robust(y: np.ndarray, X: np.ndarray) -> RegressionResult:
    """Least squares with HC1 heteroskedasticity-robust standard errors.

    The caller supplies the design matrix complete with its intercept
    column.  The robust covariance is the sandwich
    (X'X)^-1 X' diag(e^2) X (X'X)^-1 scaled by n/(n-k).
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("y must be a vector matching X's rows")
    n, k = X.shape
    if n <= k:
        raise ComputationError(f"need more rows ({n}) than columns ({k})")
    if np.linalg.matrix_rank(X) < k:
        raise ComputationError("design matrix is rank deficient")
    gram_inv = np.linalg.inv(X.T @ X)
    coef = gram_inv @ (X.T @ y)
    resid = y - X @ coef
    meat = X.T @ (X * (resid**2)[:, None])
    cov = gram_inv @ meat @ gram_inv * (n / (n - k))
    se = np.sqrt(np.diag(cov))
    sst = float(np.sum((y - y.mean()) ** 2))
    sse = float(np.sum(resid**2))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - k) if n > k else r2
    return RegressionResult(coef, se, r2, adj, n)


def reference_upper_bound(
    own: Mapping[str, float], reference: Mapping[str, float]
) -> dict[str, float]:
    """Lift own estimates to at least a reference-implied prediction.

    A log-log regression of own exports on the reference series yields a
    predicted level per country; the result takes the maximum of prediction
    and estimate.  Countries the reference does not cover keep their own
    values, as do countries where it is zero.
    """
    overlap = [
        c
        for c in sorted(own)
        if own[c] > 0 and reference.get(c, 0.0) > 0
    ]
    if len(overlap) < 3:
        raise ComputationError(
            f"need at least 3 countries with positive values on both sides, "
            f"got {len(overlap)}"
        )
    X = np.column_stack(
        [np.ones(len(overlap)), [math.log(reference[c]) for c in overlap]]
    )
    yv = np.array([math.log(own[c]) for c in overlap])
    coef, *_ = np.linalg.lstsq(X, yv, rcond=None)
    adjusted = {}
    for c, value in own.items():
        ref = reference.get(c, 0.0)
        if ref <= 0:
            adjusted[c] = value
        else:
            pred = math.exp(coef[0] + coef[1] * math.log(ref))
            adjusted[c] = max(pred, value)
    return adjusted
