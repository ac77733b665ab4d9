"""Core data model: typed records, CSV ingest, validation and serialization.

The on-disk form is a directory of RFC-4180 CSV files (countries, dyads,
firms, brands, revenues, consumption, optional physical trade).  Loading is
strict: structural problems raise :class:`SchemaError` naming the file, row
and column; cross-record problems raise :class:`IntegrityError`.  A loaded
``Dataset`` is treated as immutable, so downstream stages can share it
freely across parallel workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .errors import IntegrityError, SchemaError
from .reference import DIGITAL_SECTORS, REGION_CODES

__all__ = [
    "CountryYear",
    "CountryRecord",
    "DyadRecord",
    "FirmRecord",
    "BrandRecord",
    "RevenueLedger",
    "ConsumptionMatrix",
    "Dataset",
    "DataPaths",
    "ValidationEntry",
    "ValidationReport",
    "load_dataset",
    "validate",
    "save_dataset",
    "dataset_digest",
    "format_number",
]

OBSERVED = "observed"
PREDICTED = "predicted"
HARMONIZED = "harmonized"


@dataclass(frozen=True)
class CountryYear:
    gdp_ppp: float
    population: float
    internet_share: float
    fixed_bb_share: float
    mobile_bb_share: float
    emissions_prod: float | None = None
    emissions_cons: float | None = None


@dataclass(frozen=True)
class CountryRecord:
    code: str
    region: str
    years: dict[int, CountryYear]


@dataclass(frozen=True)
class DyadRecord:
    origin: str
    dest: str
    dist_km: float
    contiguity: bool
    comlang_official: bool
    comlang_ethno: bool
    colony_ever: bool
    comcol_post45: bool
    curcol: bool
    col_post45: bool
    same_country_ever: bool


@dataclass(frozen=True)
class FirmRecord:
    firm_id: str
    parent_id: str
    country: str

    @property
    def is_parent(self) -> bool:
        return self.firm_id == self.parent_id


@dataclass(frozen=True)
class BrandRecord:
    brand_id: str
    parent_firm_id: str
    sector: str


class RevenueLedger:
    """Revenue entries keyed (firm_id, brand_id, year) with derived views.

    Per-group totals use ``math.fsum`` over firm contributions in sorted
    firm order, so regrouping entries (for example collapsing a corporate
    family onto its parent) preserves brand and world totals exactly.
    """

    def __init__(
        self,
        entries: Mapping[tuple[str, str, int], float],
        firm_country: Mapping[str, str],
    ) -> None:
        self._entries = dict(entries)
        self._firm_country = dict(firm_country)
        self._world: dict[tuple[str, int], float] = {}
        self._by_origin: dict[tuple[str, int], dict[str, float]] = {}
        self._country_total: dict[tuple[str, int], float] = {}
        self._rebuild()

    def _rebuild(self) -> None:
        groups: dict[tuple[str, int], list[tuple[str, float]]] = {}
        for (firm, brand, year), usd in self._entries.items():
            groups.setdefault((brand, year), []).append((firm, usd))
        for key, rows in groups.items():
            rows.sort()
            self._world[key] = math.fsum(usd for _, usd in rows)
            per_origin: dict[str, list[float]] = {}
            for firm, usd in rows:
                per_origin.setdefault(self._firm_country[firm], []).append(usd)
            self._by_origin[key] = {
                c: math.fsum(vals) for c, vals in sorted(per_origin.items())
            }
        country_rows: dict[tuple[str, int], list[tuple]] = {}
        for (firm, brand, year), usd in sorted(self._entries.items()):
            c = self._firm_country[firm]
            country_rows.setdefault((c, year), []).append(usd)
        self._country_total = {
            key: math.fsum(vals) for key, vals in country_rows.items()
        }

    def __len__(self) -> int:
        return len(self._entries)

    def items(self) -> Iterator[tuple[tuple[str, str, int], float]]:
        return iter(sorted(self._entries.items()))

    def get(self, firm: str, brand: str, year: int) -> float:
        return self._entries.get((firm, brand, year), 0.0)

    def firm_country(self, firm: str) -> str:
        return self._firm_country[firm]

    def brands_with_revenue(self, year: int) -> list[str]:
        return sorted({b for (b, y) in self._world if y == year})

    def world_revenue(self, brand: str, year: int) -> float:
        return self._world.get((brand, year), 0.0)

    def origin_revenue(self, brand: str, year: int) -> dict[str, float]:
        """Revenue booked per origin country for one product and year."""
        return dict(self._by_origin.get((brand, year), {}))

    def country_digital_revenue(self, country: str, year: int) -> float:
        """Total revenue booked by firms located in ``country``."""
        return self._country_total.get((country, year), 0.0)

    def world_total(self, year: int) -> float:
        keys = sorted(b for (b, y) in self._world if y == year)
        return math.fsum(self._world[(b, year)] for b in keys)


class ConsumptionMatrix:
    """Sparse (product, country, year) -> USD map with per-entry provenance."""

    def __init__(
        self,
        values: Mapping[tuple[str, str, int], float] | None = None,
        provenance: Mapping[tuple[str, str, int], str] | None = None,
        observed_countries: Iterable[str] = (),
    ) -> None:
        self._values = dict(values or {})
        self._provenance = dict(provenance or {})
        for key in self._values:
            self._provenance.setdefault(key, OBSERVED)
        self.observed_countries = frozenset(observed_countries)

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, key: tuple[str, str, int]) -> bool:
        return key in self._values

    def get(self, brand: str, country: str, year: int) -> float | None:
        return self._values.get((brand, country, year))

    def provenance(self, brand: str, country: str, year: int) -> str | None:
        return self._provenance.get((brand, country, year))

    def items(self) -> Iterator[tuple[tuple[str, str, int], float]]:
        return iter(sorted(self._values.items()))

    def rows(self) -> Iterator[tuple[str, str, int, float, str]]:
        for (brand, country, year), usd in sorted(self._values.items()):
            yield brand, country, year, usd, self._provenance[(brand, country, year)]

    def years(self) -> list[int]:
        return sorted({y for (_, _, y) in self._values})

    def brands(self, year: int | None = None) -> list[str]:
        return sorted(
            {b for (b, _, y) in self._values if year is None or y == year}
        )

    def brand_vector(self, brand: str, countries: list[str], year: int) -> list[float]:
        return [self._values.get((brand, c, year), 0.0) for c in countries]

    def merged_with(self, other: "ConsumptionMatrix") -> "ConsumptionMatrix":
        """Union of entries; on key collision this matrix wins.

        Used to overlay observed data on model predictions: observed
        entries are ground truth and are never replaced by estimates.
        """
        values = dict(other._values)
        prov = dict(other._provenance)
        values.update(self._values)
        prov.update(self._provenance)
        return ConsumptionMatrix(
            values, prov, self.observed_countries | other.observed_countries
        )


@dataclass(frozen=True)
class Dataset:
    countries: dict[str, CountryRecord]
    dyads: dict[tuple[str, str], DyadRecord]
    firms: dict[str, FirmRecord]
    brands: dict[str, BrandRecord]
    revenue: RevenueLedger
    consumption: ConsumptionMatrix
    physical_trade: "object | None"  # pandas.DataFrame when present
    sectors: tuple[str, ...]
    years: tuple[int, ...]

    def country_codes(self) -> list[str]:
        return sorted(self.countries)

    def brand_origin(self, brand_id: str) -> str:
        """Origin country of a product: where its parent firm is located."""
        return self.firms[self.brands[brand_id].parent_firm_id].country

    def country_year(self, code: str, year: int) -> CountryYear:
        return self.countries[code].years[year]

    def distance_km(self, origin: str, dest: str) -> float:
        """Great-circle style distance; domestic pairs default to zero."""
        rec = self.dyads.get((origin, dest))
        if rec is not None:
            return rec.dist_km
        if origin == dest:
            return 0.0
        raise IntegrityError(f"no dyad record for pair ({origin}, {dest})")

    def with_revenue(self, ledger: RevenueLedger) -> "Dataset":
        return Dataset(
            countries=self.countries,
            dyads=self.dyads,
            firms=self.firms,
            brands=self.brands,
            revenue=ledger,
            consumption=self.consumption,
            physical_trade=self.physical_trade,
            sectors=self.sectors,
            years=self.years,
        )

    def with_consumption(self, matrix: ConsumptionMatrix) -> "Dataset":
        return Dataset(
            countries=self.countries,
            dyads=self.dyads,
            firms=self.firms,
            brands=self.brands,
            revenue=self.revenue,
            consumption=matrix,
            physical_trade=self.physical_trade,
            sectors=self.sectors,
            years=self.years,
        )


@dataclass(frozen=True)
class DataPaths:
    countries: str
    dyads: str
    firms: str
    brands: str
    revenues: str
    consumption: str
    physical_trade: str | None = None

    @classmethod
    def from_dir(cls, directory: str) -> "DataPaths":
        def p(name: str) -> str:
            return os.path.join(directory, name)

        physical = p("physical_trade.csv")
        return cls(
            countries=p("countries.csv"),
            dyads=p("dyads.csv"),
            firms=p("firms.csv"),
            brands=p("brands.csv"),
            revenues=p("revenues.csv"),
            consumption=p("consumption.csv"),
            physical_trade=physical if os.path.exists(physical) else None,
        )


@dataclass(frozen=True)
class ValidationEntry:
    category: str
    location: str
    message: str


@dataclass
class ValidationReport:
    entries: list[ValidationEntry] = field(default_factory=list)

    def add(self, category: str, location: str, message: str) -> None:
        self.entries.append(ValidationEntry(category, location, message))

    @property
    def ok(self) -> bool:
        return not self.entries

    def summary(self, limit: int = 20) -> str:
        lines = [
            f"{e.category} at {e.location}: {e.message}"
            for e in self.entries[:limit]
        ]
        if len(self.entries) > limit:
            lines.append(f"... and {len(self.entries) - limit} more")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# CSV parsing

COUNTRY_COLUMNS = (
    "code",
    "year",
    "region",
    "gdp_ppp",
    "population",
    "internet_share",
    "fixed_bb_share",
    "mobile_bb_share",
)
COUNTRY_OPTIONAL = ("emissions_prod", "emissions_cons")
DYAD_BOOL_COLUMNS = (
    "contiguity",
    "comlang_official",
    "comlang_ethno",
    "colony_ever",
    "comcol_post45",
    "curcol",
    "col_post45",
    "same_country_ever",
)
DYAD_COLUMNS = ("origin", "dest", "dist_km") + DYAD_BOOL_COLUMNS
FIRM_COLUMNS = ("firm_id", "parent_id", "country")
BRAND_COLUMNS = ("brand_id", "parent_firm_id", "sector")
REVENUE_COLUMNS = ("firm_id", "brand_id", "year", "revenue_usd")
CONSUMPTION_COLUMNS = ("brand_id", "country", "year", "consumption_usd")
PHYSICAL_COLUMNS = ("origin", "dest", "hs4", "year", "value_usd")


def _read_table(
    path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()
) -> tuple[list[dict[str, str]], tuple[str, ...]]:
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"{path}: cannot open ({exc})") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row")
        missing = [c for c in required if c not in header]
        unknown = [c for c in header if c not in required + optional]
        if missing or unknown:
            raise SchemaError(
                f"{path}: bad header, missing={missing}, unexpected={unknown}"
            )
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicated column in header")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise SchemaError(
                    f"{path}: row {lineno} has {len(raw)} cells, expected {len(header)}"
                )
            rows.append(dict(zip(header, raw)))
        present_optional = tuple(c for c in optional if c in header)
        return rows, present_optional


def _parse_float(path: str, lineno: int, column: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise SchemaError(f"{path}: row {lineno}, column {column}: not a number: {raw!r}")
    if math.isnan(value) or math.isinf(value):
        raise SchemaError(f"{path}: row {lineno}, column {column}: non-finite value")
    return value


def _parse_money(path: str, lineno: int, column: str, raw: str) -> float:
    value = _parse_float(path, lineno, column, raw)
    if value < 0:
        raise SchemaError(
            f"{path}: row {lineno}, column {column}: negative monetary value {raw}"
        )
    return value


def _parse_int(path: str, lineno: int, column: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise SchemaError(f"{path}: row {lineno}, column {column}: not an integer: {raw!r}")


def _parse_bool(path: str, lineno: int, column: str, raw: str) -> bool:
    if raw == "0":
        return False
    if raw == "1":
        return True
    raise SchemaError(
        f"{path}: row {lineno}, column {column}: boolean cells must be 0 or 1, got {raw!r}"
    )


def _load_countries(path: str) -> dict[str, CountryRecord]:
    rows, present_optional = _read_table(path, COUNTRY_COLUMNS, COUNTRY_OPTIONAL)
    staged: dict[str, dict[int, CountryYear]] = {}
    regions: dict[str, str] = {}
    for lineno, row in enumerate(rows, start=2):
        code = row["code"]
        year = _parse_int(path, lineno, "year", row["year"])
        if code in staged and year in staged[code]:
            raise SchemaError(f"{path}: row {lineno}: duplicate record for ({code}, {year})")
        if code in regions and regions[code] != row["region"]:
            raise SchemaError(
                f"{path}: row {lineno}: region for {code} changed across years"
            )
        regions[code] = row["region"]

        def opt(col: str) -> float | None:
            if col not in present_optional or row[col] == "":
                return None
            return _parse_float(path, lineno, col, row[col])

        staged.setdefault(code, {})[year] = CountryYear(
            gdp_ppp=_parse_float(path, lineno, "gdp_ppp", row["gdp_ppp"]),
            population=_parse_float(path, lineno, "population", row["population"]),
            internet_share=_parse_float(path, lineno, "internet_share", row["internet_share"]),
            fixed_bb_share=_parse_float(path, lineno, "fixed_bb_share", row["fixed_bb_share"]),
            mobile_bb_share=_parse_float(path, lineno, "mobile_bb_share", row["mobile_bb_share"]),
            emissions_prod=opt("emissions_prod"),
            emissions_cons=opt("emissions_cons"),
        )
    return {
        code: CountryRecord(code=code, region=regions[code], years=years)
        for code, years in staged.items()
    }


def _load_dyads(path: str) -> dict[tuple[str, str], DyadRecord]:
    rows, _ = _read_table(path, DYAD_COLUMNS)
    out: dict[tuple[str, str], DyadRecord] = {}
    for lineno, row in enumerate(rows, start=2):
        key = (row["origin"], row["dest"])
        if key in out:
            raise SchemaError(f"{path}: row {lineno}: duplicate dyad {key}")
        out[key] = DyadRecord(
            origin=key[0],
            dest=key[1],
            dist_km=_parse_float(path, lineno, "dist_km", row["dist_km"]),
            **{
                col: _parse_bool(path, lineno, col, row[col])
                for col in DYAD_BOOL_COLUMNS
            },
        )
    return out


def _load_firms(path: str) -> dict[str, FirmRecord]:
    rows, _ = _read_table(path, FIRM_COLUMNS)
    out: dict[str, FirmRecord] = {}
    for lineno, row in enumerate(rows, start=2):
        if row["firm_id"] in out:
            raise SchemaError(f"{path}: row {lineno}: duplicate firm_id {row['firm_id']}")
        out[row["firm_id"]] = FirmRecord(
            firm_id=row["firm_id"], parent_id=row["parent_id"], country=row["country"]
        )
    return out


def _load_brands(path: str) -> dict[str, BrandRecord]:
    rows, _ = _read_table(path, BRAND_COLUMNS)
    out: dict[str, BrandRecord] = {}
    for lineno, row in enumerate(rows, start=2):
        if row["brand_id"] in out:
            raise SchemaError(f"{path}: row {lineno}: duplicate brand_id {row['brand_id']}")
        out[row["brand_id"]] = BrandRecord(
            brand_id=row["brand_id"],
            parent_firm_id=row["parent_firm_id"],
            sector=row["sector"],
        )
    return out


def _load_revenues(path: str) -> dict[tuple[str, str, int], float]:
    rows, _ = _read_table(path, REVENUE_COLUMNS)
    out: dict[tuple[str, str, int], float] = {}
    for lineno, row in enumerate(rows, start=2):
        key = (row["firm_id"], row["brand_id"], _parse_int(path, lineno, "year", row["year"]))
        if key in out:
            raise SchemaError(f"{path}: row {lineno}: duplicate revenue entry {key}")
        out[key] = _parse_money(path, lineno, "revenue_usd", row["revenue_usd"])
    return out


def _load_consumption(path: str) -> ConsumptionMatrix:
    rows, _ = _read_table(path, CONSUMPTION_COLUMNS)
    values: dict[tuple[str, str, int], float] = {}
    for lineno, row in enumerate(rows, start=2):
        key = (row["brand_id"], row["country"], _parse_int(path, lineno, "year", row["year"]))
        if key in values:
            raise SchemaError(f"{path}: row {lineno}: duplicate consumption entry {key}")
        values[key] = _parse_money(path, lineno, "consumption_usd", row["consumption_usd"])
    observed = {c for (_, c, _) in values}
    return ConsumptionMatrix(values, None, observed)


def _load_physical(path: str):
    import pandas as pd

    rows, _ = _read_table(path, PHYSICAL_COLUMNS)
    records = []
    for lineno, row in enumerate(rows, start=2):
        if not row["hs4"]:
            raise SchemaError(f"{path}: row {lineno}, column hs4: empty product code")
        records.append(
            (
                row["origin"],
                row["dest"],
                row["hs4"],
                _parse_int(path, lineno, "year", row["year"]),
                _parse_money(path, lineno, "value_usd", row["value_usd"]),
            )
        )
    return pd.DataFrame(records, columns=list(PHYSICAL_COLUMNS))


def load_dataset(
    paths: DataPaths | str, sectors: tuple[str, ...] = DIGITAL_SECTORS
) -> Dataset:
    """Load and cross-validate a dataset directory or explicit path set."""
    if isinstance(paths, str):
        paths = DataPaths.from_dir(paths)
    countries = _load_countries(paths.countries)
    dyads = _load_dyads(paths.dyads)
    firms = _load_firms(paths.firms)
    brands = _load_brands(paths.brands)
    revenue_entries = _load_revenues(paths.revenues)
    consumption = _load_consumption(paths.consumption)
    physical = (
        _load_physical(paths.physical_trade)
        if paths.physical_trade is not None
        else None
    )
    years = tuple(sorted({y for rec in countries.values() for y in rec.years}))
    firm_country = {f.firm_id: f.country for f in firms.values()}
    dataset = Dataset(
        countries=countries,
        dyads=dyads,
        firms=firms,
        brands=brands,
        revenue=RevenueLedger(revenue_entries, firm_country),
        consumption=consumption,
        physical_trade=physical,
        sectors=tuple(sectors),
        years=years,
    )
    report = validate(dataset)
    if not report.ok:
        raise IntegrityError(
            f"dataset failed validation with {len(report.entries)} problem(s):\n"
            + report.summary()
        )
    return dataset


# ---------------------------------------------------------------------------
# Validation


def validate(dataset: Dataset) -> ValidationReport:
    """Check every cross-record invariant; empty report means a valid dataset."""
    report = ValidationReport()
    if not dataset.years:
        report.add("dataset", "years", "no years present in country data")

    for code in sorted(dataset.countries):
        rec = dataset.countries[code]
        if rec.region not in REGION_CODES:
            report.add("country", code, f"unknown region {rec.region!r}")
        for year in dataset.years:
            if year not in rec.years:
                report.add("country", f"{code}/{year}", "missing year record")
        for year, cy in sorted(rec.years.items()):
            loc = f"{code}/{year}"
            if not cy.gdp_ppp > 0:
                report.add("country", loc, f"gdp_ppp must be positive, got {cy.gdp_ppp}")
            if not cy.population > 0:
                report.add("country", loc, f"population must be positive, got {cy.population}")
            for name in ("internet_share", "fixed_bb_share", "mobile_bb_share"):
                share = getattr(cy, name)
                if not 0.0 <= share <= 1.0:
                    report.add("country", loc, f"{name} outside [0, 1], got {share}")
            for name in ("emissions_prod", "emissions_cons"):
                value = getattr(cy, name)
                if value is not None and value < 0:
                    report.add("country", loc, f"{name} must be non-negative, got {value}")

    codes = sorted(dataset.countries)
    for origin, dest in sorted(dataset.dyads):
        rec = dataset.dyads[(origin, dest)]
        loc = f"{origin}->{dest}"
        for endpoint in (origin, dest):
            if endpoint not in dataset.countries:
                report.add("dyad", loc, f"unknown country {endpoint}")
        if origin != dest and not rec.dist_km > 0:
            report.add("dyad", loc, f"dist_km must be positive, got {rec.dist_km}")
        if origin == dest and rec.dist_km < 0:
            report.add("dyad", loc, f"dist_km must be non-negative, got {rec.dist_km}")
    for origin in codes:
        for dest in codes:
            if origin != dest and (origin, dest) not in dataset.dyads:
                report.add("dyad", f"{origin}->{dest}", "missing dyad record")

    for firm_id in sorted(dataset.firms):
        firm = dataset.firms[firm_id]
        if firm.country not in dataset.countries:
            report.add("firm", firm_id, f"unknown country {firm.country}")
        parent = dataset.firms.get(firm.parent_id)
        if parent is None:
            report.add("firm", firm_id, f"parent_id {firm.parent_id} does not resolve")
        elif not parent.is_parent:
            # Ownership chains must terminate in one hop.
            report.add("firm", firm_id, f"parent {parent.firm_id} is itself a subsidiary")

    for brand_id in sorted(dataset.brands):
        brand = dataset.brands[brand_id]
        firm = dataset.firms.get(brand.parent_firm_id)
        if firm is None:
            report.add("brand", brand_id, f"parent_firm_id {brand.parent_firm_id} does not resolve")
        elif not firm.is_parent:
            report.add("brand", brand_id, f"parent firm {firm.firm_id} is a subsidiary")
        if brand.sector not in dataset.sectors:
            report.add("brand", brand_id, f"sector {brand.sector!r} not in configured sector list")

    for (firm_id, brand_id, year), usd in dataset.revenue.items():
        loc = f"{firm_id}/{brand_id}/{year}"
        if firm_id not in dataset.firms:
            report.add("revenue", loc, f"unknown firm {firm_id}")
        if brand_id not in dataset.brands:
            report.add("revenue", loc, f"unknown brand {brand_id}")
        if dataset.years and year not in dataset.years:
            report.add("revenue", loc, f"year {year} outside dataset year range")
        if usd < 0:
            report.add("revenue", loc, f"negative revenue {usd}")

    for (brand_id, country, year), usd in dataset.consumption.items():
        loc = f"{brand_id}/{country}/{year}"
        if brand_id not in dataset.brands:
            report.add("consumption", loc, f"unknown brand {brand_id}")
        if country not in dataset.countries:
            report.add("consumption", loc, f"unknown country {country}")
        if dataset.years and year not in dataset.years:
            report.add("consumption", loc, f"year {year} outside dataset year range")
        if usd < 0:
            report.add("consumption", loc, f"negative consumption {usd}")

    if dataset.physical_trade is not None:
        frame = dataset.physical_trade
        for column in ("origin", "dest"):
            unknown = sorted(set(frame[column]) - set(dataset.countries))
            for code in unknown:
                report.add("physical", code, f"unknown country in column {column}")
        bad_years = sorted(set(frame["year"]) - set(dataset.years))
        for year in bad_years:
            report.add("physical", str(year), "year outside dataset year range")

    return report


# ---------------------------------------------------------------------------
# Serialization


def format_number(value: float | int) -> str:
    """Canonical text form: integers bare, floats as shortest round-trip."""
    if isinstance(value, bool):
        return "1" if value else "0"
    f = float(value)
    if f.is_integer() and abs(f) < 1e16:
        return str(int(f))
    return repr(f)


def _csv_text(header: list[str], rows: Iterable[list[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _countries_text(dataset: Dataset) -> str:
    with_emissions = any(
        cy.emissions_prod is not None or cy.emissions_cons is not None
        for rec in dataset.countries.values()
        for cy in rec.years.values()
    )
    header = list(COUNTRY_COLUMNS) + (list(COUNTRY_OPTIONAL) if with_emissions else [])
    rows = []
    for code in sorted(dataset.countries):
        rec = dataset.countries[code]
        for year in sorted(rec.years):
            cy = rec.years[year]
            row = [
                code,
                str(year),
                rec.region,
                format_number(cy.gdp_ppp),
                format_number(cy.population),
                format_number(cy.internet_share),
                format_number(cy.fixed_bb_share),
                format_number(cy.mobile_bb_share),
            ]
            if with_emissions:
                row.append("" if cy.emissions_prod is None else format_number(cy.emissions_prod))
                row.append("" if cy.emissions_cons is None else format_number(cy.emissions_cons))
            rows.append(row)
    return _csv_text(header, rows)


def _dyads_text(dataset: Dataset) -> str:
    rows = []
    for key in sorted(dataset.dyads):
        rec = dataset.dyads[key]
        rows.append(
            [rec.origin, rec.dest, format_number(rec.dist_km)]
            + [format_number(getattr(rec, col)) for col in DYAD_BOOL_COLUMNS]
        )
    return _csv_text(list(DYAD_COLUMNS), rows)


def _firms_text(dataset: Dataset) -> str:
    rows = [
        [f.firm_id, f.parent_id, f.country]
        for f in (dataset.firms[k] for k in sorted(dataset.firms))
    ]
    return _csv_text(list(FIRM_COLUMNS), rows)


def _brands_text(dataset: Dataset) -> str:
    rows = [
        [b.brand_id, b.parent_firm_id, b.sector]
        for b in (dataset.brands[k] for k in sorted(dataset.brands))
    ]
    return _csv_text(list(BRAND_COLUMNS), rows)


def _revenues_text(dataset: Dataset) -> str:
    rows = [
        [firm, brand, str(year), format_number(usd)]
        for (firm, brand, year), usd in dataset.revenue.items()
    ]
    return _csv_text(list(REVENUE_COLUMNS), rows)


def _consumption_text(dataset: Dataset) -> str:
    rows = [
        [brand, country, str(year), format_number(usd)]
        for (brand, country, year), usd in dataset.consumption.items()
        if dataset.consumption.provenance(brand, country, year) == OBSERVED
    ]
    return _csv_text(list(CONSUMPTION_COLUMNS), rows)


def _physical_text(dataset: Dataset) -> str:
    frame = dataset.physical_trade
    ordered = frame.sort_values(["origin", "dest", "hs4", "year"], kind="stable")
    rows = [
        [r.origin, r.dest, r.hs4, str(int(r.year)), format_number(r.value_usd)]
        for r in ordered.itertuples(index=False)
    ]
    return _csv_text(list(PHYSICAL_COLUMNS), rows)


def serialize_dataset(dataset: Dataset) -> dict[str, str]:
    """Canonical file-name -> CSV text mapping for the whole dataset."""
    files = {
        "countries.csv": _countries_text(dataset),
        "dyads.csv": _dyads_text(dataset),
        "firms.csv": _firms_text(dataset),
        "brands.csv": _brands_text(dataset),
        "revenues.csv": _revenues_text(dataset),
        "consumption.csv": _consumption_text(dataset),
    }
    if dataset.physical_trade is not None:
        files["physical_trade.csv"] = _physical_text(dataset)
    return files


def save_dataset(dataset: Dataset, directory: str) -> list[str]:
    """Write the canonical CSV file set; returns the paths written."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for name, text in serialize_dataset(dataset).items():
        path = os.path.join(directory, name)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            handle.write(text)
        written.append(path)
    return written


def dataset_digest(dataset: Dataset) -> str:
    """SHA-256 over the canonical serialization; stable across processes."""
    digest = hashlib.sha256()
    for name, text in sorted(serialize_dataset(dataset).items()):
        digest.update(name.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(text.encode("utf-8"))
    return digest.hexdigest()
