"""Match revenues to consumption at minimum distance-weighted cost.

Each product and year defines an independent allocation problem: origin
countries hold booked revenue, destination countries hold consumption, and
the preferred assignment maximizes the inverse-distance-weighted sum of the
allocation.  Domestic pairs get the largest weight (a 1 km distance floor),
so revenue is kept at home whenever consumption there can absorb it, and the
remainder flows to the nearest destinations.  The solver is an exact
transportation simplex; a nearest-first greedy allocator is kept alongside
it purely as a diagnostic cross-check.
"""

from __future__ import annotations

import math
import statistics
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np
from joblib import Parallel, delayed

from .dataset import ConsumptionMatrix, Dataset, RevenueLedger
from .errors import ComputationError, IntegrityError

__all__ = [
    "TransportProblem",
    "AllocationTensor",
    "FlowRow",
    "BoundsReport",
    "cost_weights",
    "build_problem",
    "balance",
    "solve_transport",
    "greedy_allocate",
    "allocate_all",
    "reassign_to_parent",
    "extract_flows",
    "confidence_bounds",
]

# Relative slack for "marginals satisfied" checks.
_MARGINAL_RTOL = 1e-9


def cost_weights(distances: np.ndarray, domestic_floor_km: float = 1.0) -> np.ndarray:
    """Inverse-distance weights, with a floor so domestic pairs dominate.

    ``distances`` holds km with 0.0 on domestic pairs.  Any entry below the
    floor (in particular the domestic zeros) is lifted to the floor before
    inversion, so the domestic weight is the row maximum whenever all
    cross-border distances exceed the floor.
    """
    if domestic_floor_km <= 0:
        raise ValueError("domestic_floor_km must be positive")
    d = np.asarray(distances, dtype=float)
    if d.size and (not np.isfinite(d).all() or d.min() < 0):
        raise ValueError("distances must be finite and non-negative")
    return 1.0 / np.maximum(d, domestic_floor_km)


@dataclass(frozen=True)
class TransportProblem:
    """One product-year allocation instance over explicit country axes."""

    product: str
    year: int
    origins: tuple[str, ...]
    dests: tuple[str, ...]
    revenue: np.ndarray
    consumption: np.ndarray
    weights: np.ndarray
    balance_factor: float | None = None

    def __post_init__(self) -> None:
        m, n = len(self.origins), len(self.dests)
        if self.revenue.shape != (m,) or self.consumption.shape != (n,):
            raise IntegrityError("marginal vectors do not match the country axes")
        if self.weights.shape != (m, n):
            raise IntegrityError("weight matrix does not match the country axes")
        if m and self.revenue.min() < 0 or n and self.consumption.min() < 0:
            raise IntegrityError("marginals must be non-negative")
        if self.weights.size and (
            not np.isfinite(self.weights).all() or self.weights.min() <= 0
        ):
            raise IntegrityError("weights must be finite and positive")

    @property
    def balanced(self) -> bool:
        total_r = math.fsum(self.revenue.tolist())
        total_c = math.fsum(self.consumption.tolist())
        return abs(total_r - total_c) <= _MARGINAL_RTOL * max(total_r, total_c, 1.0)


@dataclass(frozen=True)
class AllocationTensor:
    """Per-product allocation matrix plus the axes that index it."""

    product: str
    year: int
    origins: tuple[str, ...]
    dests: tuple[str, ...]
    matrix: np.ndarray
    balance_factor: float
    objective: float

    def triplets(self) -> Iterator[tuple[str, str, float]]:
        """(origin, dest, USD) for every positive cell, in axis order."""
        for i, origin in enumerate(self.origins):
            for j, dest in enumerate(self.dests):
                if self.matrix[i, j] > 0:
                    yield origin, dest, float(self.matrix[i, j])

    def origin_totals(self) -> dict[str, float]:
        return {
            o: math.fsum(self.matrix[i].tolist())
            for i, o in enumerate(self.origins)
        }

    def dest_totals(self) -> dict[str, float]:
        return {
            d: math.fsum(self.matrix[:, j].tolist())
            for j, d in enumerate(self.dests)
        }

    def domestic(self, origin: str) -> float:
        if origin not in self.origins or origin not in self.dests:
            return 0.0
        return float(
            self.matrix[self.origins.index(origin), self.dests.index(origin)]
        )

    def exports(self, origin: str) -> float:
        if origin not in self.origins:
            return 0.0
        i = self.origins.index(origin)
        row = self.matrix[i].tolist()
        return math.fsum(
            v for j, v in enumerate(row) if self.dests[j] != origin
        )


def build_problem(
    dataset: Dataset,
    consumption: ConsumptionMatrix,
    brand: str,
    year: int,
    domestic_floor_km: float = 1.0,
    ledger: RevenueLedger | None = None,
) -> TransportProblem:
    """Assemble the (revenue, consumption, weights) triple for one product.

    Only countries with positive marginals enter the axes; zero rows or
    columns would only add degenerate basis cells.  ``ledger`` overrides the
    dataset's revenue attribution (used by the parent-HQ mode).
    """
    ledger = ledger if ledger is not None else dataset.revenue
    by_origin = ledger.origin_revenue(brand, year)
    origins = tuple(sorted(c for c, usd in by_origin.items() if usd > 0))
    dests = tuple(
        c
        for c in sorted(dataset.countries)
        if (consumption.get(brand, c, year) or 0.0) > 0
    )
    revenue = np.array([by_origin[c] for c in origins], dtype=float)
    cons = np.array([consumption.get(brand, d, year) for d in dests], dtype=float)
    dist = np.array(
        [[dataset.distance_km(o, d) for d in dests] for o in origins], dtype=float
    )
    weights = cost_weights(dist, domestic_floor_km)
    return TransportProblem(brand, year, origins, dests, revenue, cons, weights)


def balance(problem: TransportProblem) -> TransportProblem:
    """Scale consumption so both marginals sum to the revenue total.

    Revenues are reported accounting data and stay authoritative; the
    estimated consumption side absorbs the mismatch.
    """
    total_r = math.fsum(problem.revenue.tolist())
    total_c = math.fsum(problem.consumption.tolist())
    if total_r == 0.0 and total_c == 0.0:
        return replace(problem, balance_factor=1.0)
    if total_r > 0.0 and total_c == 0.0:
        raise ComputationError(
            f"product {problem.product} in {problem.year} has revenue "
            f"{total_r:.6g} but no consumption to allocate it to"
        )
    if total_r == 0.0:
        raise ComputationError(
            f"product {problem.product} in {problem.year} has consumption "
            "but no revenue; revenues are authoritative and cannot be scaled up"
        )
    factor = total_r / total_c
    return replace(
        problem,
        consumption=problem.consumption * factor,
        balance_factor=factor,
    )


def _check_balanced(problem: TransportProblem) -> None:
    if problem.balance_factor is None or not problem.balanced:
        raise ComputationError(
            f"product {problem.product} in {problem.year}: marginals are not "
            "balanced; call balance() first"
        )


def _initial_basis(
    supply: np.ndarray, demand: np.ndarray
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Northwest-corner start: a staircase of exactly m+n-1 basic cells."""
    m, n = supply.size, demand.size
    x = np.zeros((m, n))
    s = supply.copy()
    d = demand.copy()
    basis: list[tuple[int, int]] = []
    i = j = 0
    for _ in range(m + n - 1):
        q = min(s[i], d[j])
        x[i, j] = q
        basis.append((i, j))
        s[i] -= q
        d[j] -= q
        if s[i] == 0.0 and i < m - 1:
            i += 1
        elif j < n - 1:
            j += 1
        else:
            i += 1
    return x, basis


def _duals(
    cost: np.ndarray, basis: list[tuple[int, int]]
) -> tuple[np.ndarray, np.ndarray]:
    """Node potentials with u[0] = 0, solved along the basis tree."""
    m, n = cost.shape
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    by_row: dict[int, list[int]] = {}
    by_col: dict[int, list[int]] = {}
    for i, j in basis:
        by_row.setdefault(i, []).append(j)
        by_col.setdefault(j, []).append(i)
    u[0] = 0.0
    stack = [("r", 0)]
    while stack:
        kind, k = stack.pop()
        if kind == "r":
            for j in by_row.get(k, ()):
                if math.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in by_col.get(k, ()):
                if math.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    stack.append(("r", i))
    if np.isnan(u).any() or np.isnan(v).any():
        raise ComputationError("basis does not span the bipartite graph")
    return u, v


def _find_cycle(
    basis: list[tuple[int, int]], enter: tuple[int, int]
) -> list[tuple[int, int]]:
    """Cells of the unique cycle closed by ``enter``, starting with it.

    The basis is a spanning tree over origin and destination nodes, so the
    path between the entering cell's endpoints is unique; walking it yields
    alternately signed cells for the pivot.
    """
    by_row: dict[int, list[tuple[int, int]]] = {}
    by_col: dict[int, list[tuple[int, int]]] = {}
    for cell in basis:
        by_row.setdefault(cell[0], []).append(cell)
        by_col.setdefault(cell[1], []).append(cell)
    start = ("c", enter[1])
    goal = ("r", enter[0])
    parents: dict[tuple[str, int], tuple[tuple[str, int], tuple[int, int]]] = {}
    seen = {start}
    queue = [start]
    while queue:
        node = queue.pop()
        if node == goal:
            break
        kind, k = node
        cells = by_col.get(k, ()) if kind == "c" else by_row.get(k, ())
        for cell in cells:
            other = ("r", cell[0]) if kind == "c" else ("c", cell[1])
            if other not in seen:
                seen.add(other)
                parents[other] = (node, cell)
                queue.append(other)
    if goal not in seen:
        raise ComputationError("entering cell does not close a cycle")
    path: list[tuple[int, int]] = []
    node = goal
    while node != start:
        node, cell = parents[node]
        path.append(cell)
    return [enter] + path


def solve_transport(problem: TransportProblem) -> AllocationTensor:
    """Exact optimum of the balanced allocation problem.

    Transportation simplex with Bland's smallest-index pivoting rule, which
    cannot cycle even on degenerate bases, so termination is guaranteed.
    Maximizing the weighted allocation is run as minimization of the
    negated weights.
    """
    _check_balanced(problem)
    m, n = len(problem.origins), len(problem.dests)
    if m == 0 or n == 0:
        if math.fsum(problem.revenue.tolist()) or math.fsum(problem.consumption.tolist()):
            raise ComputationError("non-empty marginals with an empty axis")
        return AllocationTensor(
            problem.product, problem.year, problem.origins, problem.dests,
            np.zeros((m, n)), problem.balance_factor or 1.0, 0.0,
        )
    cost = -problem.weights
    x, basis = _initial_basis(problem.revenue, problem.consumption)
    tol = 1e-12 * (1.0 + float(np.abs(cost).max()))
    max_pivots = 1000 * (m + n) + 10000
    for _ in range(max_pivots):
        u, v = _duals(cost, basis)
        reduced = cost - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        candidates = np.argwhere(reduced < -tol)
        if candidates.size == 0:
            break
        enter = (int(candidates[0][0]), int(candidates[0][1]))
        cycle = _find_cycle(basis, enter)
        minus = cycle[1::2]
        theta = min(x[c] for c in minus)
        leave = min(c for c in minus if x[c] == theta)
        for k, cell in enumerate(cycle):
            x[cell] = x[cell] + theta if k % 2 == 0 else x[cell] - theta
        x[leave] = 0.0
        basis.remove(leave)
        basis.append(enter)
    else:
        raise ComputationError(
            f"simplex did not terminate within {max_pivots} pivots"
        )
    x = np.maximum(x, 0.0)
    tensor = AllocationTensor(
        problem.product,
        problem.year,
        problem.origins,
        problem.dests,
        x,
        problem.balance_factor or 1.0,
        float(np.sum(problem.weights * x)),
    )
    _check_marginals(tensor, problem)
    return tensor


def greedy_allocate(problem: TransportProblem) -> AllocationTensor:
    """Nearest-source heuristic, kept as a diagnostic cross-check.

    Destinations are served in descending consumption order, each filled
    from the highest-weight origins with remaining capacity.  Feasible by
    construction but not necessarily optimal.
    """
    _check_balanced(problem)
    m, n = len(problem.origins), len(problem.dests)
    x = np.zeros((m, n))
    remaining = problem.revenue.copy()
    order = sorted(range(n), key=lambda j: (-problem.consumption[j], problem.dests[j]))
    for j in order:
        need = problem.consumption[j]
        for i in sorted(range(m), key=lambda i: (-problem.weights[i, j], i)):
            if need <= 0:
                break
            take = min(need, remaining[i])
            if take > 0:
                x[i, j] += take
                remaining[i] -= take
                need -= take
    tensor = AllocationTensor(
        problem.product,
        problem.year,
        problem.origins,
        problem.dests,
        x,
        problem.balance_factor or 1.0,
        float(np.sum(problem.weights * x)),
    )
    _check_marginals(tensor, problem)
    return tensor


def _check_marginals(tensor: AllocationTensor, problem: TransportProblem) -> None:
    row = tensor.matrix.sum(axis=1)
    col = tensor.matrix.sum(axis=0)
    row_err = np.abs(row - problem.revenue) / np.maximum(problem.revenue, 1.0)
    col_err = np.abs(col - problem.consumption) / np.maximum(problem.consumption, 1.0)
    worst = max(row_err.max(initial=0.0), col_err.max(initial=0.0))
    if worst > _MARGINAL_RTOL:
        raise ComputationError(
            f"product {tensor.product} in {tensor.year}: allocation violates "
            f"its marginals (relative error {worst:.3e})"
        )


def _allocate_one(dataset, consumption, brand, year, floor, ledger):
    problem = balance(build_problem(dataset, consumption, brand, year, floor, ledger))
    return solve_transport(problem)


def allocate_all(
    dataset: Dataset,
    consumption: ConsumptionMatrix,
    years: Iterable[int] | None = None,
    domestic_floor_km: float = 1.0,
    ledger: RevenueLedger | None = None,
    jobs: int = 1,
) -> list[AllocationTensor]:
    """Solve every product-year problem; products are independent jobs.

    Results come back keyed and sorted by (year, product) no matter how the
    parallel map schedules them.  Products without revenue in a year are
    skipped (nothing to allocate), as are products whose consumption is all
    zero together with zero revenue.
    """
    led = ledger if ledger is not None else dataset.revenue
    year_list = sorted(years) if years is not None else consumption.years()
    tasks = []
    for year in year_list:
        for brand in led.brands_with_revenue(year):
            if led.world_revenue(brand, year) > 0:
                tasks.append((brand, year))
    if jobs != 1:
        results = Parallel(n_jobs=jobs)(
            delayed(_allocate_one)(
                dataset, consumption, brand, year, domestic_floor_km, ledger
            )
            for brand, year in tasks
        )
    else:
        results = [
            _allocate_one(dataset, consumption, brand, year, domestic_floor_km, ledger)
            for brand, year in tasks
        ]
    return sorted(results, key=lambda t: (t.year, t.product))


def reassign_to_parent(dataset: Dataset) -> RevenueLedger:
    """Move every product's full revenue onto its parent firm.

    Totals are preserved exactly: the reassigned entry is the same fsum the
    ledger would report as the brand's world revenue, so downstream world
    totals are bit-identical.  Origins can only merge, never split.
    """
    entries: dict[tuple[str, str, int], float] = {}
    years = {y for (_, _, y) in dict(dataset.revenue.items())}
    for brand_id, brand in sorted(dataset.brands.items()):
        parent = brand.parent_firm_id
        if parent not in dataset.firms:
            raise IntegrityError(f"brand {brand_id} has dangling parent {parent}")
        for year in sorted(years):
            total = dataset.revenue.world_revenue(brand_id, year)
            if total != 0.0:
                entries[(parent, brand_id, year)] = total
    firm_country = {f: rec.country for f, rec in dataset.firms.items()}
    return RevenueLedger(entries, firm_country)


@dataclass(frozen=True)
class FlowRow:
    """One bilateral trade flow; domestic cells never appear here."""

    year: int
    brand: str
    sector: str
    origin: str
    dest: str
    value_usd: float
    lower_usd: float | None = None
    upper_usd: float | None = None


def extract_flows(
    tensors: Iterable[AllocationTensor], dataset: Dataset
) -> list[FlowRow]:
    """Off-diagonal allocation cells as bilateral flows, sorted for output."""
    rows = []
    for tensor in tensors:
        sector = dataset.brands[tensor.product].sector
        for origin, dest, usd in tensor.triplets():
            if origin != dest:
                rows.append(
                    FlowRow(tensor.year, tensor.product, sector, origin, dest, usd)
                )
    rows.sort(key=lambda r: (r.year, r.brand, r.origin, r.dest))
    return rows


@dataclass(frozen=True)
class BoundsReport:
    """Flow rows with export bounds, plus the interval that produced them."""

    rows: tuple[FlowRow, ...]
    share_mean: float
    share_lower: float
    share_upper: float
    n_observations: int


def _interval(shares: list[float], level: float) -> tuple[float, float, float]:
    mean = math.fsum(shares) / len(shares)
    if len(shares) < 2:
        warnings.warn(
            "fewer than two domestic-share observations; interval is degenerate"
        )
        return mean, mean, mean
    z = statistics.NormalDist().inv_cdf(0.5 + level / 2.0)
    sd = statistics.stdev(shares)
    half = z * sd / math.sqrt(len(shares))
    lower = min(max(mean - half, 0.0), 1.0)
    upper = min(max(mean + half, 0.0), 1.0)
    return mean, lower, upper


def confidence_bounds(
    tensors: Iterable[AllocationTensor],
    dataset: Dataset,
    level: float = 0.95,
    per_firm: bool = False,
    ledger: RevenueLedger | None = None,
) -> BoundsReport:
    """Export bounds from the spread of domestic allocation shares.

    Every (firm, product, year) with positive booked revenue contributes one
    observation: the fraction of its origin country's allocation that stayed
    domestic.  The pooled normal-approximation interval on that sample turns
    into export bounds per origin and product (a low domestic share bound
    means a high export bound, and vice versa), split across destinations in
    proportion to the point allocation.  ``per_firm`` groups observations by
    firm instead of pooling, at the price of many degenerate intervals.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    led = ledger if ledger is not None else dataset.revenue
    tensors = list(tensors)

    domestic_share: dict[tuple[tuple[str, int], str], float] = {}
    for tensor in tensors:
        totals = tensor.origin_totals()
        for origin, total in totals.items():
            if total > 0:
                share = tensor.domestic(origin) / total
                domestic_share[(tensor.product, tensor.year), origin] = share

    observations: list[tuple[str, float]] = []
    for (firm, brand, year), usd in led.items():
        if usd <= 0:
            continue
        origin = led.firm_country(firm)
        key = ((brand, year), origin)
        if key in domestic_share:
            observations.append((firm, domestic_share[key]))
    if not observations:
        raise ComputationError("no domestic-share observations; cannot form bounds")

    shares = [s for _, s in observations]
    mean, lower, upper = _interval(shares, level)

    if per_firm:
        by_firm: dict[str, list[float]] = {}
        for firm, s in observations:
            by_firm.setdefault(firm, []).append(s)
        n_single = sum(1 for v in by_firm.values() if len(v) < 2)
        if n_single:
            warnings.warn(
                f"{n_single} firms have a single observation; their intervals "
                "are degenerate"
            )
        firm_bounds = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # per-firm degeneracy warned above
            for firm, vals in by_firm.items():
                firm_bounds[firm] = _interval(vals, level)

    rows = []
    for tensor in tensors:
        sector = dataset.brands[tensor.product].sector
        totals = tensor.origin_totals()
        for i, origin in enumerate(tensor.origins):
            total = totals[origin]
            if total <= 0:
                continue
            if per_firm:
                origin_firms = [
                    (firm, usd)
                    for (firm, brand, year), usd in led.items()
                    if brand == tensor.product
                    and year == tensor.year
                    and usd > 0
                    and led.firm_country(firm) == origin
                ]
                weight_total = math.fsum(usd for _, usd in origin_firms)
                lo = math.fsum(
                    usd / weight_total * firm_bounds[firm][1]
                    for firm, usd in origin_firms
                )
                hi = math.fsum(
                    usd / weight_total * firm_bounds[firm][2]
                    for firm, usd in origin_firms
                )
            else:
                lo, hi = lower, upper
            export_upper = (1.0 - lo) * total
            export_lower = (1.0 - hi) * total
            export_point = tensor.exports(origin)
            if export_point <= 0:
                continue
            for j, dest in enumerate(tensor.dests):
                if dest == origin or tensor.matrix[i, j] <= 0:
                    continue
                w = float(tensor.matrix[i, j]) / export_point
                point = float(tensor.matrix[i, j])
                row_lower = min(max(w * export_lower, 0.0), point)
                row_upper = max(w * export_upper, point)
                rows.append(
                    FlowRow(
                        tensor.year, tensor.product, sector, origin, dest,
                        point, row_lower, row_upper,
                    )
                )
    rows.sort(key=lambda r: (r.year, r.brand, r.origin, r.dest))
    return BoundsReport(tuple(rows), mean, lower, upper, len(observations))
