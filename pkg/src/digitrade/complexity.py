"""Specialization structure of export baskets and complexity scores.

From a country-by-activity output matrix: comparative-advantage ratios, the
binary specialization matrix with diversity and ubiquity, country and
activity complexity from the second eigenvector of the country-similarity
chain, and the merge of digital sector exports into the physical product
space.  The eigenvector is cross-checked against the averaging fixed-point
iteration it summarizes, so a wrong convention cannot slip through silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ComputationError
from .transport import FlowRow

__all__ = [
    "OutputMatrix",
    "SpecializationMatrix",
    "ComplexityScores",
    "DropReport",
    "digital_output_matrix",
    "physical_output_matrix",
    "rca",
    "binarize",
    "eci_pci",
    "merge_digital",
    "minmax",
]


@dataclass(frozen=True)
class OutputMatrix:
    """Country-by-activity export values in USD."""

    countries: tuple[str, ...]
    activities: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        shape = (len(self.countries), len(self.activities))
        if self.values.shape != shape:
            raise ValueError(f"values must have shape {shape}")
        if self.values.size and (
            not np.isfinite(self.values).all() or self.values.min() < 0
        ):
            raise ValueError("values must be finite and non-negative")


@dataclass(frozen=True)
class DropReport:
    """Rows and columns removed because they carried no signal."""

    countries: tuple[str, ...] = ()
    activities: tuple[str, ...] = ()

    def merged(self, other: "DropReport") -> "DropReport":
        return DropReport(
            self.countries + other.countries, self.activities + other.activities
        )

    @property
    def empty(self) -> bool:
        return not self.countries and not self.activities


@dataclass(frozen=True)
class SpecializationMatrix:
    """0/1 advantage indicators with the induced degree sequences."""

    countries: tuple[str, ...]
    activities: tuple[str, ...]
    indicator: np.ndarray

    def __post_init__(self) -> None:
        if set(np.unique(self.indicator)) - {0, 1}:
            raise ValueError("indicator must be 0/1")
        if self.indicator.size:
            if self.indicator.sum(axis=1).min() < 1:
                raise ValueError("every retained country needs an advantage")
            if self.indicator.sum(axis=0).min() < 1:
                raise ValueError("every retained activity needs a holder")

    @property
    def diversity(self) -> np.ndarray:
        return self.indicator.sum(axis=1)

    @property
    def ubiquity(self) -> np.ndarray:
        return self.indicator.sum(axis=0)


@dataclass(frozen=True)
class ComplexityScores:
    """Z-scored country and activity complexity values."""

    eci: dict[str, float]
    pci: dict[str, float]
    second_eigenvalue: float
    iterations: int = field(default=0, compare=False)


def digital_output_matrix(
    flows: Iterable[FlowRow],
    countries: Sequence[str],
    sectors: Sequence[str],
    year: int,
) -> OutputMatrix:
    """Digital export totals per (origin, sector) for one year."""
    ci = {c: i for i, c in enumerate(countries)}
    si = {s: j for j, s in enumerate(sectors)}
    parts: dict[tuple[int, int], list[float]] = {}
    for row in flows:
        if row.year != year:
            continue
        if row.origin not in ci:
            raise ComputationError(f"flow origin {row.origin} not in country axis")
        parts.setdefault((ci[row.origin], si[row.sector]), []).append(row.value_usd)
    values = np.zeros((len(countries), len(sectors)))
    for (i, j), vals in parts.items():
        values[i, j] = math.fsum(vals)
    return OutputMatrix(tuple(countries), tuple(sectors), values)


def physical_output_matrix(
    physical_trade, countries: Sequence[str], year: int
) -> OutputMatrix:
    """Cross-border physical export totals per (origin, product code)."""
    frame = physical_trade
    frame = frame[(frame["year"] == year) & (frame["origin"] != frame["dest"])]
    codes = tuple(sorted(frame["hs4"].unique()))
    ci = {c: i for i, c in enumerate(countries)}
    values = np.zeros((len(countries), len(codes)))
    grouped = frame.groupby(["origin", "hs4"], sort=True)["value_usd"].sum()
    for (origin, hs4), usd in grouped.items():
        if origin not in ci:
            raise ComputationError(f"origin {origin} not in country axis")
        values[ci[origin], codes.index(hs4)] = float(usd)
    return OutputMatrix(tuple(countries), codes, values)


def _drop_empty(matrix: OutputMatrix) -> tuple[OutputMatrix, DropReport]:
    values = matrix.values
    keep_rows = values.sum(axis=1) > 0
    keep_cols = values.sum(axis=0) > 0
    report = DropReport(
        tuple(c for c, k in zip(matrix.countries, keep_rows) if not k),
        tuple(a for a, k in zip(matrix.activities, keep_cols) if not k),
    )
    trimmed = OutputMatrix(
        tuple(c for c, k in zip(matrix.countries, keep_rows) if k),
        tuple(a for a, k in zip(matrix.activities, keep_cols) if k),
        values[np.ix_(keep_rows, keep_cols)],
    )
    return trimmed, report


def rca(matrix: OutputMatrix) -> tuple[OutputMatrix, DropReport]:
    """Share-of-country over share-of-world advantage ratios.

    All-zero rows and columns are removed first (their ratios are
    undefined) and reported alongside the result.
    """
    if matrix.values.sum() <= 0:
        raise ComputationError("output matrix has no positive entries")
    trimmed, report = _drop_empty(matrix)
    X = trimmed.values
    row = X.sum(axis=1, keepdims=True)
    col = X.sum(axis=0, keepdims=True)
    ratios = (X / row) / (col / X.sum())
    return OutputMatrix(trimmed.countries, trimmed.activities, ratios), report


def binarize(ratios: OutputMatrix) -> tuple[SpecializationMatrix, DropReport]:
    """Indicator of advantage at the inclusive threshold of 1.

    Dropping an empty row can empty a column and vice versa, so filtering
    repeats until stable.
    """
    M = (ratios.values >= 1.0).astype(int)
    countries = list(ratios.countries)
    activities = list(ratios.activities)
    dropped_c: list[str] = []
    dropped_a: list[str] = []
    while True:
        if M.size == 0:
            raise ComputationError("specialization matrix is empty after filtering")
        keep_rows = M.sum(axis=1) >= 1
        keep_cols = M.sum(axis=0) >= 1
        if keep_rows.all() and keep_cols.all():
            break
        dropped_c += [c for c, k in zip(countries, keep_rows) if not k]
        dropped_a += [a for a, k in zip(activities, keep_cols) if not k]
        countries = [c for c, k in zip(countries, keep_rows) if k]
        activities = [a for a, k in zip(activities, keep_cols) if k]
        M = M[np.ix_(keep_rows, keep_cols)]
    return (
        SpecializationMatrix(tuple(countries), tuple(activities), M),
        DropReport(tuple(dropped_c), tuple(dropped_a)),
    )


def _bipartite_connected(M: np.ndarray) -> bool:
    n_c, n_p = M.shape
    seen_c = np.zeros(n_c, dtype=bool)
    seen_p = np.zeros(n_p, dtype=bool)
    stack = [("c", 0)]
    seen_c[0] = True
    while stack:
        kind, k = stack.pop()
        if kind == "c":
            for j in np.where(M[k] == 1)[0]:
                if not seen_p[j]:
                    seen_p[j] = True
                    stack.append(("p", int(j)))
        else:
            for i in np.where(M[:, k] == 1)[0]:
                if not seen_c[i]:
                    seen_c[i] = True
                    stack.append(("c", int(i)))
    return bool(seen_c.all() and seen_p.all())


def _zscore(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    if sd == 0:
        raise ComputationError("constant vector cannot be z-scored")
    return (x - x.mean()) / sd


# Relative gap below which two eigenvalues count as equal.
_SPECTRAL_GAP_RTOL = 1e-10


def eci_pci(
    spec: SpecializationMatrix,
    check_tol: float = 1e-8,
    max_iter: int = 100000,
) -> ComplexityScores:
    """Country and activity complexity from the similarity chain.

    Build the row-stochastic country-to-country matrix whose (c, c') entry
    averages shared activities, weighted down by each activity's ubiquity.
    The country scores are its second-largest eigenvector (computed through
    a symmetric similarity transform, so the spectrum is provably real),
    z-scored and oriented to correlate non-negatively with diversity.
    Activity scores average the country scores of their holders, z-scored.

    The averaging fixed-point iteration (normalize, average over neighbors,
    repeat) is also run to convergence and must agree with the eigenvector
    within ``check_tol``; the two computations share no code path, making
    silent convention errors loud.
    """
    M = spec.indicator.astype(float)
    n_c, n_p = M.shape
    if n_c < 3:
        raise ComputationError("need at least 3 countries for complexity scores")
    diversity = M.sum(axis=1)
    ubiquity = M.sum(axis=0)

    # Similar symmetric matrix: D^{-1/2} A D^{-1/2} with A = M U^{-1} M^T.
    A = (M / ubiquity) @ M.T
    d_isqrt = 1.0 / np.sqrt(diversity)
    B = d_isqrt[:, None] * A * d_isqrt[None, :]
    B = (B + B.T) / 2.0
    eigenvalues, vectors = np.linalg.eigh(B)
    lam1, lam2, lam3 = eigenvalues[-1], eigenvalues[-2], eigenvalues[-3]
    scale = max(abs(lam1), 1.0)
    if (lam1 - lam2) <= _SPECTRAL_GAP_RTOL * scale or (
        lam2 - lam3
    ) <= _SPECTRAL_GAP_RTOL * scale:
        # A disconnected bipartite graph always lands here (the unit
        # eigenvalue repeats once per component), so name that cause when
        # it applies.
        if not _bipartite_connected(spec.indicator):
            raise ComputationError(
                "degenerate spectrum: the specialization matrix is "
                "disconnected, and scores are only comparable within a "
                "single connected component"
            )
        raise ComputationError(
            "degenerate spectrum: the second eigenvalue is not simple, so "
            "the complexity ranking is not identifiable"
        )
    # Back-transform to the row-stochastic matrix's right eigenvector.
    raw = d_isqrt * vectors[:, -2]
    eci = _zscore(raw)
    orient = float(np.dot(eci, diversity - diversity.mean()))
    if orient < 0:
        eci = -eci
    elif orient == 0 and eci[np.nonzero(eci)[0][0]] < 0:
        eci = -eci

    # Independent cross-check: the average-over-neighbors iteration.
    stochastic = A / diversity[:, None]
    x = _zscore(np.arange(n_c, dtype=float))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = _zscore(stochastic @ x)
        if min(np.abs(nxt - x).max(), np.abs(nxt + x).max()) < 1e-12:
            x = nxt
            break
        x = nxt
    else:
        raise ComputationError("complexity iteration did not converge")
    if min(np.abs(x - eci).max(), np.abs(x + eci).max()) > check_tol:
        raise ComputationError(
            "eigenvector and fixed-point complexity scores disagree; "
            "numerical conventions are inconsistent"
        )

    pci_raw = (M.T @ eci) / ubiquity
    pci = _zscore(pci_raw)
    return ComplexityScores(
        {c: float(v) for c, v in zip(spec.countries, eci)},
        {a: float(v) for a, v in zip(spec.activities, pci)},
        float(lam2),
        iterations,
    )


def merge_digital(
    physical: OutputMatrix, digital: OutputMatrix
) -> OutputMatrix:
    """Union of product spaces over a shared country axis.

    Activity labels are namespaced by side so an HS4 code can never collide
    with a sector label.  Values stay in USD on both sides; the advantage
    ratios normalize scale away, so no rebalancing is applied.
    """
    if set(physical.countries) != set(digital.countries):
        raise ComputationError(
            "country axes differ between the physical and digital matrices"
        )
    countries = tuple(sorted(physical.countries))
    p_order = [physical.countries.index(c) for c in countries]
    d_order = [digital.countries.index(c) for c in countries]
    values = np.hstack(
        [physical.values[p_order], digital.values[d_order]]
    )
    activities = tuple(
        [f"hs4:{a}" for a in physical.activities]
        + [f"digital:{a}" for a in digital.activities]
    )
    return OutputMatrix(countries, activities, values)


def minmax(scores: Mapping[str, float]) -> dict[str, float]:
    """Affine rescale onto [0, 1]; constant inputs have no spread to map."""
    vals = list(scores.values())
    lo, hi = min(vals), max(vals)
    if hi == lo:
        raise ComputationError("constant scores cannot be min-max rescaled")
    return {k: (v - lo) / (hi - lo) for k, v in scores.items()}
