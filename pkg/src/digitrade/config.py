"""Run configuration: one INI file resolving to a typed, immutable record.

The grammar is standard INI (``[section]`` headers, ``key = value`` lines,
``#`` or ``;`` comments).  Unknown sections or keys are errors, so typos
fail loudly instead of silently falling back to defaults.  Every default
is spelled out in ``_DEFAULTS`` below; a config file only needs the keys
it wants to change, plus the two mandatory ones: ``input.directory`` (or
the per-file paths) and ``run.seed``.

``canonical()`` renders the fully resolved configuration as sorted
``section.key = value`` lines.  Its SHA-256 is the config digest recorded
in the run manifest: two runs with equal config and dataset digests must
produce byte-identical outputs.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields, replace

from .errors import SchemaError

__all__ = ["PipelineConfig", "load_config", "ALLOCATION_MODES"]

ALLOCATION_MODES = ("subsidiary", "parent_hq")

_INPUT_FILES = (
    "countries",
    "dyads",
    "firms",
    "brands",
    "revenues",
    "consumption",
    "physical_trade",
)

# section -> key -> (type tag, default).  ``None`` defaults mean "derived
# later" (for example the training year falls back to the last run year).
_DEFAULTS: dict[str, dict[str, tuple[str, object]]] = {
    "input": {
        "directory": ("str", ""),
        **{name: ("str", "") for name in _INPUT_FILES},
    },
    "run": {
        "out": ("str", "out"),
        "seed": ("int", None),
        "years": ("str", ""),
        "jobs": ("int", 1),
        "mode": ("str", "subsidiary"),
    },
    "train": {
        "learn_rate": ("float", 0.1),
        "n_cycles": ("int", 150),
        "max_splits": ("int", 5),
        "min_parent": ("int", 10),
        "tune": ("bool", False),
        "grid_max_splits": ("ints", (1, 3, 5, 10, 15, 20, 30, 50)),
        "grid_min_parent": ("ints", (3, 5, 7, 10)),
        "top_k": ("int", 11),
        "year": ("optint", None),
        "zero_threshold_usd": ("float", 1000.0),
        "revenue_floor_usd": ("float", 1e7),
        "correlation_floor": ("float", 0.3),
        "importance_shuffles": ("int", 5),
    },
    "harmonize": {
        "tolerance": ("float", 1e-9),
        "max_iter": ("int", 1000),
        "freeze_observed": ("bool", False),
    },
    "allocate": {
        "domestic_floor_km": ("float", 1.0),
    },
    "bounds": {
        "level": ("float", 0.95),
        "per_firm": ("bool", False),
    },
    "analyze": {
        "concentration": ("bool", True),
        "entropy_baseline": ("bool", True),
        "centrality": ("bool", True),
        "decoupling": ("bool", True),
        "group_trends": ("bool", True),
        "trials": ("int", 1000),
        "top_mass": ("float", 0.8),
        "teleport": ("optfloat", 1e-3),
        "basis": ("str", "production"),
        "high_income_only": ("bool", True),
    },
    "complexity": {
        "enabled": ("bool", True),
        "year": ("optint", None),
    },
    "report": {
        "enabled": ("bool", True),
    },
}


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of a pipeline run, resolved and validated."""

    input_directory: str = ""
    input_paths: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = 0
    years: tuple[int, ...] = ()
    jobs: int = 1
    mode: str = "subsidiary"

    learn_rate: float = 0.1
    n_cycles: int = 150
    max_splits: int = 5
    min_parent: int = 10
    tune: bool = False
    grid_max_splits: tuple[int, ...] = (1, 3, 5, 10, 15, 20, 30, 50)
    grid_min_parent: tuple[int, ...] = (3, 5, 7, 10)
    top_k: int = 11
    train_year: int | None = None
    zero_threshold_usd: float = 1000.0
    revenue_floor_usd: float = 1e7
    correlation_floor: float = 0.3
    importance_shuffles: int = 5

    harmonize_tolerance: float = 1e-9
    harmonize_max_iter: int = 1000
    freeze_observed: bool = False

    domestic_floor_km: float = 1.0

    bounds_level: float = 0.95
    bounds_per_firm: bool = False

    analyze_concentration: bool = True
    analyze_entropy_baseline: bool = True
    analyze_centrality: bool = True
    analyze_decoupling: bool = True
    analyze_group_trends: bool = True
    analyze_trials: int = 1000
    analyze_top_mass: float = 0.8
    analyze_teleport: float | None = 1e-3
    analyze_basis: str = "production"
    analyze_high_income_only: bool = True

    complexity_enabled: bool = True
    complexity_year: int | None = None

    report_enabled: bool = True

    def validated(self) -> "PipelineConfig":
        if self.mode not in ALLOCATION_MODES:
            raise SchemaError(
                f"run.mode must be one of {'|'.join(ALLOCATION_MODES)}, "
                f"got {self.mode!r}"
            )
        if not self.input_directory and not self.input_paths:
            raise SchemaError("config must set input.directory or per-file paths")
        for name, path in self.resolved_inputs().items():
            optional = name == "physical_trade"
            if path and not os.path.exists(path) and not optional:
                raise SchemaError(f"input.{name}: no such file {path}")
        if self.jobs == 0:
            raise SchemaError("run.jobs must be nonzero (joblib convention)")
        if not 0.0 < self.bounds_level < 1.0:
            raise SchemaError("bounds.level must be in (0, 1)")
        if self.analyze_teleport is not None and not 0.0 < self.analyze_teleport < 1.0:
            raise SchemaError("analyze.teleport must be blank or in (0, 1)")
        if self.analyze_basis not in ("production", "consumption"):
            raise SchemaError("analyze.basis must be production or consumption")
        if not 0.0 < self.analyze_top_mass <= 1.0:
            raise SchemaError("analyze.top_mass must be in (0, 1]")
        return self

    def resolved_inputs(self) -> dict[str, str]:
        """Path per input table; explicit paths win over the directory."""
        out: dict[str, str] = {}
        for name in _INPUT_FILES:
            explicit = self.input_paths.get(name, "")
            if explicit:
                out[name] = explicit
            elif self.input_directory:
                candidate = os.path.join(self.input_directory, f"{name}.csv")
                if name == "physical_trade" and not os.path.exists(candidate):
                    continue  # optional table may be absent from the directory
                out[name] = candidate
        return out

    def run_years(self, dataset_years: tuple[int, ...]) -> tuple[int, ...]:
        """The years this run covers; defaults to the dataset's full range."""
        if not self.years:
            return tuple(dataset_years)
        missing = [y for y in self.years if y not in dataset_years]
        if missing:
            raise SchemaError(
                f"run.years includes {missing} outside the dataset range "
                f"{dataset_years[0]}:{dataset_years[-1]}"
            )
        return self.years

    def canonical(self) -> str:
        """Stable text rendering of every resolved field, for digesting."""
        lines = []
        for spec in fields(self):
            value = getattr(self, spec.name)
            if isinstance(value, dict):
                value = ",".join(f"{k}={v}" for k, v in sorted(value.items()))
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{spec.name} = {value}")
        return "\n".join(sorted(lines)) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def hyper_params(self):
        from .tree import HyperParams

        return HyperParams(
            self.max_splits, self.min_parent, self.learn_rate, self.n_cycles
        )

    def with_overrides(
        self,
        seed: int | None = None,
        out: str | None = None,
        mode: str | None = None,
        jobs: int | None = None,
    ) -> "PipelineConfig":
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if out is not None:
            updates["out"] = out
        if mode is not None:
            updates["mode"] = mode
        if jobs is not None:
            updates["jobs"] = jobs
        return replace(self, **updates) if updates else self


# Dataclass field -> (section, key) for every directly-mapped setting;
# input paths, out and years need path/range handling and are set apart.
_FIELD_MAP = {
    "seed": ("run", "seed"),
    "jobs": ("run", "jobs"),
    "mode": ("run", "mode"),
    "learn_rate": ("train", "learn_rate"),
    "n_cycles": ("train", "n_cycles"),
    "max_splits": ("train", "max_splits"),
    "min_parent": ("train", "min_parent"),
    "tune": ("train", "tune"),
    "grid_max_splits": ("train", "grid_max_splits"),
    "grid_min_parent": ("train", "grid_min_parent"),
    "top_k": ("train", "top_k"),
    "train_year": ("train", "year"),
    "zero_threshold_usd": ("train", "zero_threshold_usd"),
    "revenue_floor_usd": ("train", "revenue_floor_usd"),
    "correlation_floor": ("train", "correlation_floor"),
    "importance_shuffles": ("train", "importance_shuffles"),
    "harmonize_tolerance": ("harmonize", "tolerance"),
    "harmonize_max_iter": ("harmonize", "max_iter"),
    "freeze_observed": ("harmonize", "freeze_observed"),
    "domestic_floor_km": ("allocate", "domestic_floor_km"),
    "bounds_level": ("bounds", "level"),
    "bounds_per_firm": ("bounds", "per_firm"),
    "analyze_concentration": ("analyze", "concentration"),
    "analyze_entropy_baseline": ("analyze", "entropy_baseline"),
    "analyze_centrality": ("analyze", "centrality"),
    "analyze_decoupling": ("analyze", "decoupling"),
    "analyze_group_trends": ("analyze", "group_trends"),
    "analyze_trials": ("analyze", "trials"),
    "analyze_top_mass": ("analyze", "top_mass"),
    "analyze_teleport": ("analyze", "teleport"),
    "analyze_basis": ("analyze", "basis"),
    "analyze_high_income_only": ("analyze", "high_income_only"),
    "complexity_enabled": ("complexity", "enabled"),
    "complexity_year": ("complexity", "year"),
    "report_enabled": ("report", "enabled"),
}


def _parse_years(raw: str, path: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    try:
        if ":" in raw:
            first, last = (int(part) for part in raw.split(":", 1))
            if last < first:
                raise ValueError
            return tuple(range(first, last + 1))
        return tuple(sorted(int(part) for part in raw.split(",")))
    except ValueError:
        raise SchemaError(
            f"{path}: run.years must be FIRST:LAST or a comma list, got {raw!r}"
        ) from None


def _parse_value(tag: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if tag == "str":
            return raw
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if tag == "ints":
            return tuple(int(part) for part in raw.split(","))
        if tag == "optint":
            return int(raw) if raw else None
        if tag == "optfloat":
            return float(raw) if raw else None
    except ValueError:
        raise SchemaError(f"{where}: cannot parse {raw!r} as {tag}") from None
    raise AssertionError(f"unknown type tag {tag}")


def load_config(path: str) -> PipelineConfig:
    """Parse and validate an INI config file into a PipelineConfig."""
    if not os.path.exists(path):
        raise SchemaError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as handle:
            parser.read_file(handle)
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from None

    resolved: dict[str, dict[str, object]] = {}
    for section, keys in _DEFAULTS.items():
        resolved[section] = {key: default for key, (_, default) in keys.items()}
    for section in parser.sections():
        if section not in _DEFAULTS:
            raise SchemaError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _DEFAULTS[section]:
                raise SchemaError(f"{path}: unknown key {section}.{key}")
            tag = _DEFAULTS[section][key][0]
            resolved[section][key] = _parse_value(tag, raw, f"{path}: {section}.{key}")

    if resolved["run"]["seed"] is None:
        raise SchemaError(
            f"{path}: run.seed is mandatory (every stochastic stage derives "
            "its randomness from it)"
        )

    base = os.path.dirname(os.path.abspath(path))

    def _absolute(p: str) -> str:
        return p if not p or os.path.isabs(p) else os.path.join(base, p)

    input_paths = {
        name: _absolute(str(resolved["input"][name]))
        for name in _INPUT_FILES
        if resolved["input"][name]
    }
    kwargs = {
        name: resolved[section][key] for name, (section, key) in _FIELD_MAP.items()
    }
    kwargs.update(
        input_directory=_absolute(str(resolved["input"]["directory"])),
        input_paths=input_paths,
        out=_absolute(str(resolved["run"]["out"])),
        years=_parse_years(str(resolved["run"]["years"]), path),
    )
    return PipelineConfig(**kwargs).validated()
