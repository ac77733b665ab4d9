"""Rescale estimated consumption so aggregates match reported totals.

Reported world revenue per product is treated as ground truth: after
harmonization every product's consumption, summed over destinations, equals
its reported world total for that year.  Sector totals then agree
automatically because they are sums of product totals (enforced when targets
are built).  When optional per-destination totals are supplied as well, the
two constraint families are reconciled by alternating proportional fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .dataset import HARMONIZED, OBSERVED, ConsumptionMatrix, Dataset
from .errors import ComputationError, IntegrityError

__all__ = ["HarmonizationTargets", "harmonize"]

# Sector totals must be consistent with the brand totals they aggregate.
_CONSISTENCY_RTOL = 1e-6

_Key = tuple[str, str, int]


def _relerr(value: float, target: float) -> float:
    return abs(value - target) / max(abs(target), 1.0)


@dataclass(frozen=True)
class HarmonizationTargets:
    """Reported totals the harmonized matrix must reproduce.

    ``brand_totals`` maps (brand, year) to world revenue USD and
    ``sector_totals`` maps (sector, year) to the sector's world USD.
    ``brand_sector`` ties each brand to its sector so consistency between
    the two families can be checked up front.
    """

    brand_totals: Mapping[tuple[str, int], float]
    sector_totals: Mapping[tuple[str, int], float]
    brand_sector: Mapping[str, str]

    def __post_init__(self) -> None:
        sums: dict[tuple[str, int], list[float]] = {}
        for (brand, year), total in self.brand_totals.items():
            if total < 0:
                raise IntegrityError(f"negative target for {brand} in {year}")
            sector = self.brand_sector.get(brand)
            if sector is None:
                raise IntegrityError(f"brand {brand} has no sector mapping")
            sums.setdefault((sector, year), []).append(total)
        for (sector, year), total in self.sector_totals.items():
            if total < 0:
                raise IntegrityError(f"negative target for sector {sector} in {year}")
            implied = math.fsum(sums.get((sector, year), ()))
            if _relerr(implied, total) > _CONSISTENCY_RTOL:
                raise IntegrityError(
                    f"sector {sector} total {total:.6g} in {year} does not match "
                    f"the sum of its brand totals {implied:.6g}"
                )

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "HarmonizationTargets":
        """Targets straight from the revenue ledger (world totals per brand)."""
        brand_totals: dict[tuple[str, int], float] = {}
        sector_parts: dict[tuple[str, int], list[float]] = {}
        for brand_id, brand in sorted(dataset.brands.items()):
            for year in dataset.years:
                total = dataset.revenue.world_revenue(brand_id, year)
                brand_totals[(brand_id, year)] = total
                sector_parts.setdefault((brand.sector, year), []).append(total)
        sector_totals = {key: math.fsum(parts) for key, parts in sector_parts.items()}
        brand_sector = {b: rec.sector for b, rec in dataset.brands.items()}
        return cls(brand_totals, sector_totals, brand_sector)


def _violation(
    values: dict[_Key, float],
    groups: dict[tuple[str, int], list[_Key]],
    targets: Mapping[tuple[str, int], float],
) -> float:
    worst = 0.0
    for key, target in targets.items():
        current = math.fsum(values[k] for k in groups.get(key, ()))
        worst = max(worst, _relerr(current, target))
    return worst


def _scale_rows(
    values: dict[_Key, float],
    keys_by_brand: dict[tuple[str, int], list[_Key]],
    targets: Mapping[tuple[str, int], float],
    frozen: frozenset[_Key],
    touched: set[_Key],
) -> None:
    for (brand, year), target in sorted(targets.items()):
        keys = keys_by_brand.get((brand, year), [])
        fixed = math.fsum(values[k] for k in keys if k in frozen)
        free_keys = [k for k in keys if k not in frozen]
        free = math.fsum(values[k] for k in free_keys)
        residual = target - fixed
        if residual < 0:
            raise ComputationError(
                f"frozen observed consumption for {brand} in {year} already "
                f"exceeds the target {target:.6g}; cannot harmonize downward"
            )
        if free == 0.0:
            if residual > 0 and _relerr(fixed, target) > _CONSISTENCY_RTOL:
                raise ComputationError(
                    f"brand {brand} has target {target:.6g} in {year} but no "
                    "positive scalable predictions"
                )
            continue
        factor = residual / free
        if factor == 1.0:
            continue  # exact fixed point, leave provenance alone
        for k in free_keys:
            values[k] *= factor
            touched.add(k)


def _scale_columns(
    values: dict[_Key, float],
    keys_by_dest: dict[tuple[str, int], list[_Key]],
    targets: Mapping[tuple[str, int], float],
    touched: set[_Key],
) -> None:
    for (dest, year), target in sorted(targets.items()):
        keys = keys_by_dest.get((dest, year), [])
        current = math.fsum(values[k] for k in keys)
        if current == 0.0:
            if target > 0:
                raise ComputationError(
                    f"destination {dest} has target {target:.6g} in {year} "
                    "but no positive predictions"
                )
            continue
        factor = target / current
        if factor == 1.0:
            continue
        for k in keys:
            values[k] *= factor
            touched.add(k)


def harmonize(
    predicted: ConsumptionMatrix,
    targets: HarmonizationTargets,
    tol: float = 1e-9,
    max_iter: int = 1000,
    freeze_observed: bool = False,
    dest_targets: Mapping[tuple[str, int], float] | None = None,
) -> ConsumptionMatrix:
    """Scale consumption so each brand's yearly total hits its target.

    Without ``dest_targets`` a single multiplicative factor per (brand, year)
    suffices and the result is exact in one pass.  With them, brand rows and
    destination columns are rescaled alternately until the worst relative
    violation drops below ``tol``.  Zeros stay zero and nothing ever turns
    negative.  ``freeze_observed`` pins entries whose provenance is
    ``observed`` and spreads the remaining mass over the rest of the row.
    """
    values: dict[_Key, float] = {}
    prov: dict[_Key, str] = {}
    for (brand, country, year), usd in predicted.items():
        if usd < 0:
            raise ComputationError(f"negative consumption for {brand}/{country}/{year}")
        values[(brand, country, year)] = usd
        prov[(brand, country, year)] = predicted.provenance(brand, country, year)

    frozen = frozenset(
        key for key, p in prov.items() if freeze_observed and p == OBSERVED
    )
    keys_by_brand: dict[tuple[str, int], list[_Key]] = {}
    keys_by_dest: dict[tuple[str, int], list[_Key]] = {}
    for key in values:
        brand, country, year = key
        keys_by_brand.setdefault((brand, year), []).append(key)
        keys_by_dest.setdefault((country, year), []).append(key)

    # Targets outside the years covered by the matrix impose nothing.
    years_present = {year for (_, _, year) in values}
    brand_targets = {
        (brand, year): total
        for (brand, year), total in targets.brand_totals.items()
        if year in years_present
    }
    missing = [
        f"{brand}/{year}"
        for (brand, year), total in sorted(brand_targets.items())
        if total > 0 and (brand, year) not in keys_by_brand
    ]
    if missing:
        raise ComputationError(
            "positive targets without any predicted entries: " + ", ".join(missing)
        )
    brand_targets = {
        key: total for key, total in brand_targets.items() if key in keys_by_brand
    }

    touched: set[_Key] = set()
    if dest_targets is None:
        _scale_rows(values, keys_by_brand, brand_targets, frozen, touched)
    else:
        if freeze_observed:
            raise ComputationError(
                "freeze_observed is not supported together with destination "
                "targets; the alternating scaler cannot honor both"
            )
        converged = False
        for _ in range(max_iter):
            worst = max(
                _violation(values, keys_by_brand, brand_targets),
                _violation(values, keys_by_dest, dest_targets),
            )
            if worst < tol:
                converged = True
                break
            _scale_rows(values, keys_by_brand, brand_targets, frozen, touched)
            _scale_columns(values, keys_by_dest, dest_targets, touched)
        if not converged:
            raise ComputationError(
                f"alternating proportional fitting did not reach {tol:g} within "
                f"{max_iter} iterations; row and column targets are likely "
                "inconsistent"
            )

    for key in touched:
        prov[key] = HARMONIZED
    return ConsumptionMatrix(values, prov, predicted.observed_countries)
