"""Declarative experiment configs: a line-oriented key-value tree.

Files are sections of `key = value` lines::

    kind = naive

    [mechanism]
    type = logistic_linear
    coef_s = 1.0
    coef_a = 1.0

    [population]
    type = gaussian_diagonal
    mean = 0 0
    variance = 1 1

Values are scalars, whitespace-separated lists, or `;`-separated rows of
lists.  Parsing validates the whole file and reports every problem at once,
with line/column positions for syntax errors and dotted field paths for
semantic ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .control import InterventionFamily, scaled_log_shift_family
from .evaluation import REPRODUCTION_NAMES, CostSpec
from .model import (
    Dimensions,
    DiscreteAtoms,
    GaussianDiagonal,
    Identity,
    Intervention,
    Mechanism,
    Population,
    intervention_factory,
    mechanism_factory,
)

__all__ = [
    "ConfigIssue",
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "parse_config_file",
    "serialize_config",
    "apply_overrides",
    "EXPERIMENT_KINDS",
]

EXPERIMENT_KINDS = (
    "naive",
    "longitudinal",
    "adjuvancy",
    "sweep",
    "reproduce",
    "control",
    "pomdp",
    "fixed-point",
)

_INTERVENTION_PARAMS = {
    "identity": (),
    "additive_shift": ("shift",),
    "log_shift": (),
    "blend": (),
    "sigmoid_pull": ("strength",),
    "linear_pull": ("rate",),
    "scaled_log_shift": ("strength",),
}


@dataclass(frozen=True)
class ConfigIssue:
    """One problem found while parsing or validating a config."""

    path: str
    message: str
    line: int | None = None
    column: int | None = None

    def __str__(self) -> str:
        where = f" (line {self.line}, col {self.column})" if self.line is not None else ""
        return f"{self.path}: {self.message}{where}"


class ConfigError(ValueError):
    """Raised with the complete list of issues, not just the first."""

    def __init__(self, issues: list[ConfigIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


def _parse_token(tok: str):
    low = tok.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if low in ("inf", "+inf"):
        return math.inf
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def _parse_value(raw: str):
    raw = raw.strip()
    if not raw:
        return None
    if ";" in raw:
        return [_parse_value(part) for part in raw.split(";")]
    tokens = raw.split()
    if len(tokens) == 1:
        return _parse_token(tokens[0])
    return [_parse_token(t) for t in tokens]


def _parse_tree(text: str) -> tuple[dict[str, dict[str, Any]], list[ConfigIssue]]:
    """Raw section -> key -> value tree; top-level keys live in section ''."""
    tree: dict[str, dict[str, Any]] = {"": {}}
    issues: list[ConfigIssue] = []
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                issues.append(ConfigIssue("<syntax>", f"malformed section header {stripped!r}",
                                          lineno, line.index("[") + 1))
                continue
            section = stripped[1:-1].strip()
            tree.setdefault(section, {})
            continue
        if "=" not in stripped:
            issues.append(ConfigIssue("<syntax>", f"expected 'key = value', got {stripped!r}",
                                      lineno, 1))
            continue
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            issues.append(ConfigIssue("<syntax>", "empty key", lineno, 1))
            continue
        if key in tree[section]:
            issues.append(ConfigIssue(f"{section}.{key}".lstrip("."),
                                      "duplicate key", lineno, 1))
            continue
        tree[section][key] = _parse_value(raw)
    return tree, issues


class _Reader:
    """Typed access into one section, accumulating issues instead of raising."""

    def __init__(self, tree, section: str, issues: list[ConfigIssue]):
        self.section = section
        self.data = dict(tree.get(section, {}))
        self.issues = issues
        self.seen: set[str] = set()

    def _path(self, key: str) -> str:
        return f"{self.section}.{key}" if self.section else key

    def has(self, key: str) -> bool:
        return self.data.get(key) is not None

    def error(self, key: str, message: str):
        self.issues.append(ConfigIssue(self._path(key), message))

    def get(self, key: str, default=None):
        self.seen.add(key)
        value = self.data.get(key)
        return default if value is None else value

    def scalar(self, key: str, kind, default=None, required=False):
        self.seen.add(key)
        value = self.data.get(key)
        if value is None:
            if required:
                self.error(key, "required field is missing")
            return default
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if kind is int and isinstance(value, int) and not isinstance(value, bool):
            return value
        if kind is bool and isinstance(value, bool):
            return value
        if kind is str and isinstance(value, str):
            return value
        self.error(key, f"expected {kind.__name__}, got {value!r}")
        return default

    def vector(self, key: str, default=None, required=False):
        self.seen.add(key)
        value = self.data.get(key)
        if value is None:
            if required:
                self.error(key, "required field is missing")
            return default
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return [float(value)]
        if isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            return [float(v) for v in value]
        self.error(key, f"expected a numeric vector, got {value!r}")
        return default

    def rows(self, key: str, required=False):
        """A list of numeric vectors ( ;-separated rows )."""
        self.seen.add(key)
        value = self.data.get(key)
        if value is None:
            if required:
                self.error(key, "required field is missing")
            return None
        if isinstance(value, list) and value and isinstance(value[0], list):
            out = []
            for row in value:
                if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
                    self.error(key, f"row {row!r} is not numeric")
                    return None
                out.append([float(v) for v in row])
            return out
        vec = self.vector(key)
        return None if vec is None else [vec]

    def finish(self):
        for key in self.data:
            if key not in self.seen:
                self.error(key, "unknown field")


@dataclass(frozen=True)
class RunSettings:
    """Run-block knobs with spec defaults; unused fields are ignored by kinds."""

    epochs: int = 10
    n: int = 1000
    seed: int = 0
    score_mode: str = "fitted"
    fitter: str = "logistic"
    holdout_fraction: float | None = None
    mc_outer: int = 1000
    mc_inner: int = 1000
    mc_n: int = 20000
    grid_lo: float = -3.0
    grid_hi: float = 3.0
    grid_resolution: int = 61
    dynamics: str = "naive"
    point: tuple[float, ...] = (0.0, 0.0)
    rho0: float | None = None
    max_epochs: int = 10
    conv_tol: float = 0.01
    osc_floor: float = 0.05
    adjuvancy_epochs: int = 20
    adjuvancy_tol: float = 1e-3
    horizon: int = 5
    gamma: float = 1.0
    policy: str = "naive"
    grid_points: int = 200
    workers: int = 1


@dataclass(frozen=True)
class OutputSettings:
    directory: str | None = None
    formats: tuple[str, ...] = ("csv", "json")
    figures: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment description."""

    kind: str
    name: str | None
    dims: Dimensions | None
    mechanism: Mechanism | None
    intervention_a: Intervention
    intervention_l: Intervention
    population: Population | None
    cost_spec: CostSpec
    family: InterventionFamily | None
    run: RunSettings
    output: OutputSettings
    tree: tuple = ()

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)


def _freeze_tree(tree: dict) -> tuple:
    out = []
    for section in sorted(tree):
        entries = tree[section]
        if not entries:
            continue
        frozen = tuple(
            (k, tuple(tuple(v2) if isinstance(v2, list) else v2 for v2 in v)
             if isinstance(v, list) else v)
            for k, v in sorted(entries.items())
            if v is not None
        )
        if frozen:
            out.append((section, frozen))
    return tuple(out)


def _build_mechanism(tree, issues) -> Mechanism | None:
    r = _Reader(tree, "mechanism", issues)
    if not r.data:
        return None
    mtype = r.scalar("type", str, default="logistic_linear")
    if mtype != "logistic_linear":
        try:
            factory = mechanism_factory(mtype)
        except KeyError as exc:
            r.error("type", str(exc))
            return None
        r.finish()
        try:
            return factory()
        except Exception as exc:  # registered factories own their arguments
            r.error("type", f"factory failed: {exc}")
            return None
    coef_s = r.vector("coef_s", default=[])
    coef_a = r.vector("coef_a", default=[])
    coef_l = r.vector("coef_l", default=[])
    intercept = r.scalar("intercept", float, default=0.0)
    steepness = r.scalar("steepness", float, default=1.0)
    r.finish()
    try:
        return mechanism_factory("logistic_linear")(
            coef_s=coef_s, coef_a=coef_a, coef_l=coef_l,
            intercept=intercept, steepness=steepness,
        )
    except (ValueError, KeyError) as exc:
        r.error("type", str(exc))
        return None


def _build_intervention(tree, issues, section: str) -> Intervention:
    r = _Reader(tree, section, issues)
    if not r.data:
        return Identity()
    gtype = r.scalar("type", str, default="identity")
    if gtype not in _INTERVENTION_PARAMS:
        try:
            factory = intervention_factory(gtype)
        except KeyError as exc:
            r.error("type", str(exc))
            return Identity()
        r.finish()
        return factory()
    kwargs = {}
    for param in _INTERVENTION_PARAMS[gtype]:
        value = r.scalar(param, float)
        if value is not None:
            kwargs[param] = value
    r.finish()
    try:
        return intervention_factory(gtype)(**kwargs)
    except (ValueError, TypeError) as exc:
        r.error("type", str(exc))
        return Identity()


def _build_population(tree, issues) -> Population | None:
    r = _Reader(tree, "population", issues)
    if not r.data:
        return None
    ptype = r.scalar("type", str, required=True)
    pop = None
    if ptype == "gaussian_diagonal":
        mean = r.vector("mean", required=True)
        variance = r.vector("variance", required=True)
        r.finish()
        if mean is not None and variance is not None:
            try:
                pop = GaussianDiagonal(mean=mean, variance=variance)
            except ValueError as exc:
                r.error("mean", str(exc))
    elif ptype == "discrete_atoms":
        atoms = r.rows("atoms", required=True)
        probs = r.vector("probabilities", required=True)
        r.finish()
        if atoms is not None and probs is not None:
            try:
                pop = DiscreteAtoms(points=atoms, probabilities=probs)
            except ValueError as exc:
                r.error("probabilities", str(exc))
    elif ptype is not None:
        r.error("type", f"unknown population type {ptype!r}")
    return pop


def _build_cost(tree, issues) -> CostSpec:
    r = _Reader(tree, "cost", issues)
    if not r.data:
        return CostSpec()
    budget = r.scalar("budget", float, default=math.inf)
    r.finish()
    try:
        return CostSpec(budget=budget)
    except ValueError as exc:
        r.error("budget", str(exc))
        return CostSpec()


def _build_family(tree, issues) -> InterventionFamily | None:
    r = _Reader(tree, "family", issues)
    if not r.data:
        return None
    ftype = r.scalar("type", str, default="scaled_log_shift")
    max_strength = r.scalar("max_strength", float, default=2.0)
    r.finish()
    if ftype != "scaled_log_shift":
        r.error("type", f"unknown family type {ftype!r}")
        return None
    return scaled_log_shift_family(max_strength)


def _build_run(tree, issues) -> RunSettings:
    r = _Reader(tree, "run", issues)
    defaults = RunSettings()
    point = r.vector("point", default=list(defaults.point))
    settings = RunSettings(
        epochs=r.scalar("epochs", int, default=defaults.epochs),
        n=r.scalar("n", int, default=defaults.n),
        seed=r.scalar("seed", int, default=defaults.seed),
        score_mode=r.scalar("score_mode", str, default=defaults.score_mode),
        fitter=r.scalar("fitter", str, default=defaults.fitter),
        holdout_fraction=r.scalar("holdout_fraction", float, default=None),
        mc_outer=r.scalar("mc_outer", int, default=defaults.mc_outer),
        mc_inner=r.scalar("mc_inner", int, default=defaults.mc_inner),
        mc_n=r.scalar("mc_n", int, default=defaults.mc_n),
        grid_lo=r.scalar("grid_lo", float, default=defaults.grid_lo),
        grid_hi=r.scalar("grid_hi", float, default=defaults.grid_hi),
        grid_resolution=r.scalar("grid_resolution", int, default=defaults.grid_resolution),
        dynamics=r.scalar("dynamics", str, default=defaults.dynamics),
        point=tuple(point) if point else defaults.point,
        rho0=r.scalar("rho0", float, default=None),
        max_epochs=r.scalar("max_epochs", int, default=defaults.max_epochs),
        conv_tol=r.scalar("conv_tol", float, default=defaults.conv_tol),
        osc_floor=r.scalar("osc_floor", float, default=defaults.osc_floor),
        adjuvancy_epochs=r.scalar("adjuvancy_epochs", int, default=defaults.adjuvancy_epochs),
        adjuvancy_tol=r.scalar("adjuvancy_tol", float, default=defaults.adjuvancy_tol),
        horizon=r.scalar("horizon", int, default=defaults.horizon),
        gamma=r.scalar("gamma", float, default=defaults.gamma),
        policy=r.scalar("policy", str, default=defaults.policy),
        grid_points=r.scalar("grid_points", int, default=defaults.grid_points),
        workers=r.scalar("workers", int, default=defaults.workers),
    )
    r.finish()

    path = "run"
    if settings.epochs < 1:
        issues.append(ConfigIssue(f"{path}.epochs", "must be at least 1"))
    if settings.n < 1:
        issues.append(ConfigIssue(f"{path}.n", "must be at least 1"))
    if settings.seed < 0:
        issues.append(ConfigIssue(f"{path}.seed", "must be non-negative"))
    if settings.score_mode not in ("oracle", "fitted"):
        issues.append(ConfigIssue(f"{path}.score_mode", "must be 'oracle' or 'fitted'"))
    if settings.fitter not in ("logistic", "threshold"):
        issues.append(ConfigIssue(f"{path}.fitter", "must be 'logistic' or 'threshold'"))
    if settings.dynamics not in ("naive", "adjuvancy"):
        issues.append(ConfigIssue(f"{path}.dynamics", "must be 'naive' or 'adjuvancy'"))
    if settings.grid_resolution < 2:
        issues.append(ConfigIssue(f"{path}.grid_resolution", "must be at least 2"))
    if not settings.grid_lo < settings.grid_hi:
        issues.append(ConfigIssue(f"{path}.grid_lo", "grid bounds must satisfy lo < hi"))
    if not 0.0 < settings.gamma <= 1.0:
        issues.append(ConfigIssue(f"{path}.gamma", "discount must lie in (0, 1]"))
    if settings.workers < 1:
        issues.append(ConfigIssue(f"{path}.workers", "must be at least 1"))
    if settings.holdout_fraction is not None and not 0.0 < settings.holdout_fraction <= 1.0:
        issues.append(ConfigIssue(f"{path}.holdout_fraction", "must lie in (0, 1]"))
    return settings


def _build_output(tree, issues) -> OutputSettings:
    r = _Reader(tree, "output", issues)
    directory = r.scalar("directory", str, default=None)
    formats = r.get("formats", default=["csv", "json"])
    if isinstance(formats, str):
        formats = [formats]
    for fmt in formats:
        if fmt not in ("csv", "json"):
            r.error("formats", f"unknown format {fmt!r} (use csv, json)")
    figures = r.scalar("figures", bool, default=True)
    r.finish()
    return OutputSettings(directory=directory, formats=tuple(formats), figures=figures)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config, raising ConfigError with every problem."""
    tree, issues = _parse_tree(text)

    top = _Reader(tree, "", issues)
    kind = top.scalar("kind", str, required=True)
    name = top.scalar("name", str, default=None)
    top.finish()
    if kind is not None and kind not in EXPERIMENT_KINDS:
        issues.append(ConfigIssue("kind", f"unknown kind {kind!r}; known: {EXPERIMENT_KINDS}"))

    dims = None
    r = _Reader(tree, "dimensions", issues)
    if r.data:
        p_s = r.scalar("p_s", int, default=0)
        p_a = r.scalar("p_a", int, default=0)
        p_l = r.scalar("p_l", int, default=0)
        r.finish()
        try:
            dims = Dimensions(p_s, p_a, p_l)
        except ValueError as exc:
            issues.append(ConfigIssue("dimensions", str(exc)))

    mechanism = _build_mechanism(tree, issues)
    g_a = _build_intervention(tree, issues, "intervention_a")
    g_l = _build_intervention(tree, issues, "intervention_l")
    population = _build_population(tree, issues)
    cost_spec = _build_cost(tree, issues)
    family = _build_family(tree, issues)
    run = _build_run(tree, issues)
    output = _build_output(tree, issues)

    known = {"", "dimensions", "mechanism", "intervention_a", "intervention_l",
             "population", "cost", "family", "run", "output"}
    for section in tree:
        if section not in known:
            issues.append(ConfigIssue(section, "unknown section"))

    if mechanism is not None:
        if dims is None:
            dims = mechanism.dims
        elif dims != mechanism.dims:
            issues.append(ConfigIssue(
                "dimensions", f"declared {dims} but mechanism implies {mechanism.dims}"))
    if population is not None and dims is not None and population.dim != dims.total:
        issues.append(ConfigIssue(
            "population", f"dimension {population.dim} does not match covariate total {dims.total}"))

    needs_model = kind in ("naive", "longitudinal", "adjuvancy", "sweep", "control",
                           "pomdp", "fixed-point")
    if needs_model and mechanism is None and not tree.get("mechanism"):
        issues.append(ConfigIssue("mechanism", f"kind {kind!r} requires a mechanism block"))
    if kind in ("naive", "longitudinal", "control", "pomdp") and population is None \
            and not tree.get("population"):
        issues.append(ConfigIssue("population", f"kind {kind!r} requires a population block"))
    if kind == "reproduce":
        if name is None:
            issues.append(ConfigIssue("name", "reproduce configs must name the reproduction"))
        elif name not in REPRODUCTION_NAMES:
            issues.append(ConfigIssue("name", f"unknown reproduction {name!r}; known: {REPRODUCTION_NAMES}"))
    if kind == "control" and family is None:
        issues.append(ConfigIssue("family", "kind 'control' requires a family block"))
    if kind == "fixed-point" and mechanism is not None:
        if len(run.point) != mechanism.dims.observed:
            issues.append(ConfigIssue(
                "run.point", f"expected {mechanism.dims.observed} coordinates, got {len(run.point)}"))

    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(
        kind=kind,
        name=name,
        dims=dims,
        mechanism=mechanism,
        intervention_a=g_a,
        intervention_l=g_l,
        population=population,
        cost_spec=cost_spec,
        family=family,
        run=run,
        output=output,
        tree=_freeze_tree(tree),
    )


def parse_config_file(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return " ; ".join(" ".join(repr(float(v)) for v in row) for row in value)
        return " ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; parsing it back yields an equal config."""
    lines = []
    for section, entries in config.tree:
        if section:
            lines.append(f"[{section}]")
        for key, value in entries:
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def apply_overrides(text: str, overrides: list[str]) -> str:
    """Apply `--set section.key=value` pairs on top of a config text."""
    tree, issues = _parse_tree(text)
    for item in overrides:
        if "=" not in item:
            issues.append(ConfigIssue("<override>", f"expected key=value, got {item!r}"))
            continue
        path, _, raw = item.partition("=")
        path = path.strip()
        section, _, key = path.rpartition(".")
        if not key:
            issues.append(ConfigIssue("<override>", f"empty key in {item!r}"))
            continue
        tree.setdefault(section, {})[key] = _parse_value(raw)
    if issues:
        raise ConfigError(issues)
    lines = []
    for section in tree:
        entries = tree[section]
        if not entries:
            continue
        if section:
            lines.append(f"[{section}]")
        for key, value in entries.items():
            if value is None:
                continue
            if isinstance(value, list):
                if value and isinstance(value[0], list):
                    text_value = " ; ".join(" ".join(_format_value(v) for v in row) for row in value)
                else:
                    text_value = " ".join(_format_value(v) for v in value)
            else:
                text_value = _format_value(value)
            lines.append(f"{key} = {text_value}")
        lines.append("")
    return "\n".join(lines)
