"""Core domain types: covariates, outcome mechanisms, interventions, populations, scores.

The model follows a deployed-risk-score loop.  A population carries three
covariate blocks: ``x_s`` (set: observed, not modifiable), ``x_a``
(actionable: observed, modifiable) and ``x_l`` (latent: unobserved,
modifiable).  An outcome mechanism maps post-intervention covariates to an
event probability, and interventions move covariates in response to a score
value.  Everything here is immutable after construction and safe to share
across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Dimensions",
    "CovariateState",
    "CovariateBatch",
    "Mechanism",
    "LogisticLinear",
    "CustomMechanism",
    "Intervention",
    "Identity",
    "AdditiveShift",
    "LogShift",
    "Blend",
    "SigmoidPull",
    "LinearPull",
    "ScaledLogShift",
    "CustomIntervention",
    "Population",
    "GaussianDiagonal",
    "DiscreteAtoms",
    "Score",
    "ThresholdRule",
    "LogisticScore",
    "ConstantScore",
    "CallableScore",
    "eval_mechanism",
    "eval_intervention",
    "eval_score",
    "register_mechanism",
    "register_intervention",
    "mechanism_factory",
    "intervention_factory",
]

# Probabilities are kept strictly inside (0, 1) so downstream logs and
# Bernoulli draws never see an exact 0 or 1.
_PROB_FLOOR = 1e-300
_PROB_CEIL = float(np.nextafter(1.0, 0.0))


def _clip_probability(p):
    return np.clip(p, _PROB_FLOOR, _PROB_CEIL)


def _as_vector(value, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise ValueError("score value rho must lie in [0, 1]")
    return rho


@dataclass(frozen=True)
class Dimensions:
    """Sizes of the set / actionable / latent covariate blocks."""

    p_s: int
    p_a: int
    p_l: int = 0

    def __post_init__(self):
        for name in ("p_s", "p_a", "p_l"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        if self.p_s + self.p_a < 1:
            raise ValueError("a score needs at least one observed covariate (p_s + p_a >= 1)")

    @property
    def observed(self) -> int:
        return self.p_s + self.p_a

    @property
    def total(self) -> int:
        return self.p_s + self.p_a + self.p_l

    def split(self, matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split columns of an (n, total) matrix into the three blocks."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.shape[1] != self.total:
            raise ValueError(f"expected {self.total} columns, got {matrix.shape[1]}")
        return (
            matrix[:, : self.p_s],
            matrix[:, self.p_s : self.p_s + self.p_a],
            matrix[:, self.p_s + self.p_a :],
        )


@dataclass(frozen=True)
class CovariateState:
    """A single individual's covariates at (epoch, time)."""

    x_s: np.ndarray
    x_a: np.ndarray
    x_l: np.ndarray = field(default_factory=lambda: np.zeros(0))
    epoch: int = 0
    time: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x_s", _as_vector(self.x_s, "x_s"))
        object.__setattr__(self, "x_a", _as_vector(self.x_a, "x_a"))
        object.__setattr__(self, "x_l", _as_vector(self.x_l, "x_l"))
        if self.time not in (0, 1):
            raise ValueError("time must be 0 (score computed) or 1 (outcome observed)")
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")

    @property
    def dims(self) -> Dimensions:
        return Dimensions(len(self.x_s), len(self.x_a), len(self.x_l))


@dataclass(frozen=True)
class CovariateBatch:
    """n covariate states sharing an (epoch, time) tag, stored column-blocked.

    Set covariates are conserved within an epoch by construction:
    `intervened` replaces only the actionable and latent blocks.
    """

    x_s: np.ndarray
    x_a: np.ndarray
    x_l: np.ndarray
    epoch: int = 0
    time: int = 0

    def __post_init__(self):
        for name in ("x_s", "x_a", "x_l"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.x_s.shape[0]
        if self.x_a.shape[0] != n or self.x_l.shape[0] != n:
            raise ValueError("covariate blocks disagree on the number of rows")
        if self.time not in (0, 1):
            raise ValueError("time must be 0 or 1")

    def __len__(self) -> int:
        return self.x_s.shape[0]

    @property
    def dims(self) -> Dimensions:
        return Dimensions(self.x_s.shape[1], self.x_a.shape[1], self.x_l.shape[1])

    def state(self, i: int) -> CovariateState:
        return CovariateState(self.x_s[i], self.x_a[i], self.x_l[i], self.epoch, self.time)

    @property
    def observed(self) -> np.ndarray:
        """The (n, p_s + p_a) matrix an analyst sees."""
        return np.hstack([self.x_s, self.x_a])

    def intervened(self, x_a: np.ndarray, x_l: np.ndarray | None = None) -> "CovariateBatch":
        """Post-intervention batch at t=1 with the same set covariates."""
        if x_l is None:
            x_l = self.x_l
        return CovariateBatch(self.x_s, x_a, x_l, epoch=self.epoch, time=1)

    def at_time(self, time: int) -> "CovariateBatch":
        return CovariateBatch(self.x_s, self.x_a, self.x_l, epoch=self.epoch, time=time)

    def at_epoch(self, epoch: int, time: int = 0) -> "CovariateBatch":
        return CovariateBatch(self.x_s, self.x_a, self.x_l, epoch=epoch, time=time)


# ---------------------------------------------------------------------------
# Outcome mechanisms
# ---------------------------------------------------------------------------

class Mechanism:
    """Maps post-intervention covariates to P(Y=1), strictly inside (0, 1)."""

    @property
    def dims(self) -> Dimensions:
        raise NotImplementedError

    def probability(self, x_s, x_a, x_l=None):
        raise NotImplementedError

    def _prepare(self, x_s, x_a, x_l):
        x_s = np.atleast_2d(np.asarray(x_s, dtype=float))
        x_a = np.atleast_2d(np.asarray(x_a, dtype=float))
        d = self.dims
        if x_l is None:
            x_l = np.zeros((x_s.shape[0], d.p_l))
        x_l = np.atleast_2d(np.asarray(x_l, dtype=float))
        if x_s.shape[1] != d.p_s or x_a.shape[1] != d.p_a or x_l.shape[1] != d.p_l:
            raise ValueError(
                f"covariate widths {(x_s.shape[1], x_a.shape[1], x_l.shape[1])} "
                f"do not match mechanism dimensions {(d.p_s, d.p_a, d.p_l)}"
            )
        return x_s, x_a, x_l


@dataclass(frozen=True)
class LogisticLinear(Mechanism):
    """sigmoid(k * (intercept + coef_s.x_s + coef_a.x_a + coef_l.x_l)).

    With positive coefficients the event probability increases in every
    coordinate; the steepness k controls how sharply it reacts.
    """

    coef_s: np.ndarray
    coef_a: np.ndarray
    coef_l: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    steepness: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "coef_s", _as_vector(self.coef_s, "coef_s"))
        object.__setattr__(self, "coef_a", _as_vector(self.coef_a, "coef_a"))
        object.__setattr__(self, "coef_l", _as_vector(self.coef_l, "coef_l"))
        if not self.steepness > 0:
            raise ValueError("steepness must be positive")

    @property
    def dims(self) -> Dimensions:
        return Dimensions(len(self.coef_s), len(self.coef_a), len(self.coef_l))

    def linear_predictor(self, x_s, x_a, x_l=None):
        x_s, x_a, x_l = self._prepare(x_s, x_a, x_l)
        eta = self.intercept + x_s @ self.coef_s + x_a @ self.coef_a + x_l @ self.coef_l
        return self.steepness * eta

    def probability(self, x_s, x_a, x_l=None):
        scalar = np.asarray(x_s).ndim <= 1 and np.asarray(x_a).ndim <= 1
        p = _clip_probability(expit(self.linear_predictor(x_s, x_a, x_l)))
        return float(p[0]) if scalar and p.size == 1 else p

    def d_probability_dx_a(self, x_s, x_a, x_l=None) -> np.ndarray:
        """Gradient of the probability w.r.t. the actionable block, shape (n, p_a)."""
        eta = self.linear_predictor(x_s, x_a, x_l)
        p = expit(eta)
        return (self.steepness * p * (1.0 - p))[:, None] * self.coef_a[None, :]


@dataclass(frozen=True)
class CustomMechanism(Mechanism):
    """Caller-supplied mechanism registered through :func:`register_mechanism`."""

    fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dimensions: Dimensions
    name: str = "custom"

    @property
    def dims(self) -> Dimensions:
        return self.dimensions

    def probability(self, x_s, x_a, x_l=None):
        scalar = np.asarray(x_s).ndim <= 1 and np.asarray(x_a).ndim <= 1
        x_s, x_a, x_l = self._prepare(x_s, x_a, x_l)
        p = _clip_probability(np.asarray(self.fn(x_s, x_a, x_l), dtype=float))
        return float(p[0]) if scalar and p.size == 1 else p


# ---------------------------------------------------------------------------
# Interventions
# ---------------------------------------------------------------------------

class Intervention:
    """Moves covariate values in response to a score value in [0, 1].

    `apply` acts element-wise; `rho` may be a scalar or one value per row.
    """

    is_identity = False

    def apply(self, rho, x):
        raise NotImplementedError

    def d_rho(self, rho, x):
        """Derivative of the intervened value w.r.t. rho (central difference)."""
        rho = np.asarray(rho, dtype=float)
        h = 1e-6
        lo = np.clip(rho - h, 0.0, 1.0)
        hi = np.clip(rho + h, 0.0, 1.0)
        return (self.apply(hi, x) - self.apply(lo, x)) / np.where(hi - lo == 0, 1.0, hi - lo)

    def _broadcast(self, rho, x):
        rho = _check_rho(rho)
        x = np.asarray(x, dtype=float)
        if rho.ndim == 1 and x.ndim == 2:
            rho = rho[:, None]
        return rho, x


@dataclass(frozen=True)
class Identity(Intervention):
    """Leaves every value unchanged, for any score."""

    is_identity = True

    def apply(self, rho, x):
        _check_rho(rho)
        return np.asarray(x, dtype=float).copy()

    def d_rho(self, rho, x):
        return np.zeros_like(np.broadcast_arrays(np.asarray(rho, float), np.asarray(x, float))[1])


@dataclass(frozen=True)
class AdditiveShift(Intervention):
    """(1 - rho)(x + shift) + rho(x - shift): push down when the score is high."""

    shift: float = 3.0

    def apply(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return (1.0 - rho) * (x + self.shift) + rho * (x - self.shift)

    def d_rho(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return np.broadcast_to(-2.0 * self.shift, np.broadcast_shapes(rho.shape, x.shape)).copy()


@dataclass(frozen=True)
class LogShift(Intervention):
    """x - log(1 + rho): a gentle, score-proportional downshift."""

    def apply(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return x - np.log1p(rho)

    def d_rho(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return np.broadcast_to(-1.0 / (1.0 + rho), np.broadcast_shapes(rho.shape, x.shape)).copy()


@dataclass(frozen=True)
class Blend(Intervention):
    """((3 - 2 rho) x + (1 - 2 rho) sqrt(1 + x^2)) / 2.

    Redistributive: values fall when the score exceeds 1/2 and rise when it is
    below, with larger moves for larger starting values.  At rho = 1/2 this is
    the identity map.
    """

    def apply(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return 0.5 * ((3.0 - 2.0 * rho) * x + (1.0 - 2.0 * rho) * np.sqrt(1.0 + x * x))

    def d_rho(self, rho, x):
        rho, x = self._broadcast(rho, x)
        out = -(x + np.sqrt(1.0 + x * x))
        return np.broadcast_to(out, np.broadcast_shapes(rho.shape, x.shape)).copy()


@dataclass(frozen=True)
class SigmoidPull(Intervention):
    """x - strength * (1 - rho) * sigmoid(x), exactly as printed in its source.

    Note this map *increases* with rho (the pull fades as the score rises), so
    unlike the other built-ins it does not satisfy the larger-score =>
    larger-intervention convention.
    """

    strength: float = 4.0

    def apply(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return x - self.strength * (1.0 - rho) * expit(x)

    def d_rho(self, rho, x):
        rho, x = self._broadcast(rho, x)
        out = self.strength * expit(x)
        return np.broadcast_to(out, np.broadcast_shapes(rho.shape, x.shape)).copy()


@dataclass(frozen=True)
class LinearPull(Intervention):
    """x - rate * rho: the simplest score-proportional downshift."""

    rate: float = 0.01

    def apply(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return x - self.rate * rho

    def d_rho(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return np.broadcast_to(-self.rate, np.broadcast_shapes(rho.shape, x.shape)).copy()


@dataclass(frozen=True)
class ScaledLogShift(Intervention):
    """x - strength * log(1 + rho): LogShift with a tunable strength.

    strength = 0 is the identity; strength = 1 recovers LogShift.  Used as the
    one-parameter family for controlled-intervention optimisation.
    """

    strength: float = 1.0

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("strength must be non-negative")

    @property
    def is_identity(self) -> bool:  # type: ignore[override]
        return self.strength == 0.0

    def apply(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return x - self.strength * np.log1p(rho)

    def d_rho(self, rho, x):
        rho, x = self._broadcast(rho, x)
        out = -self.strength / (1.0 + rho)
        return np.broadcast_to(out, np.broadcast_shapes(rho.shape, x.shape)).copy()


@dataclass(frozen=True)
class CustomIntervention(Intervention):
    """Caller-supplied intervention; optional analytic rho-derivative."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_rho_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    def apply(self, rho, x):
        rho, x = self._broadcast(rho, x)
        return np.asarray(self.fn(rho, x), dtype=float)

    def d_rho(self, rho, x):
        if self.d_rho_fn is None:
            return super().d_rho(rho, x)
        rho, x = self._broadcast(rho, x)
        return np.asarray(self.d_rho_fn(rho, x), dtype=float)


# ---------------------------------------------------------------------------
# Populations
# ---------------------------------------------------------------------------

class Population:
    """A distribution over full covariate vectors (all three blocks)."""

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Map (m, dim) uniforms in (0,1) to draws; used for quasi-random grids."""
        raise NotImplementedError

    def marginal(self, start: int, stop: int) -> "Population":
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianDiagonal(Population):
    """Independent Gaussian coordinates with given means and variances."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vector(self.mean, "mean"))
        object.__setattr__(self, "variance", _as_vector(self.variance, "variance"))
        if len(self.mean) != len(self.variance):
            raise ValueError("mean and variance lengths differ")
        if np.any(self.variance < 0):
            raise ValueError("variances must be non-negative")

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + np.sqrt(self.variance) * z

    def from_uniform(self, u):
        from scipy.stats import norm

        u = np.atleast_2d(np.asarray(u, dtype=float))
        return self.mean + np.sqrt(self.variance) * norm.ppf(u)

    def marginal(self, start, stop):
        return GaussianDiagonal(self.mean[start:stop], self.variance[start:stop])


@dataclass(frozen=True)
class DiscreteAtoms(Population):
    """A finite mixture of point masses."""

    points: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probabilities", _as_vector(self.probabilities, "probabilities"))
        if self.points.shape[0] != len(self.probabilities):
            raise ValueError("one probability per atom required")
        if np.any(self.probabilities <= 0):
            raise ValueError("atom probabilities must be positive")
        if abs(self.probabilities.sum() - 1.0) > 1e-12:
            raise ValueError(
                f"atom probabilities must sum to 1 within 1e-12, got {float(self.probabilities.sum())!r}"
            )

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _cut(self) -> np.ndarray:
        return np.cumsum(self.probabilities)

    def sample(self, n, rng):
        idx = np.searchsorted(self._cut(), rng.random(n), side="right")
        idx = np.minimum(idx, len(self.probabilities) - 1)
        return self.points[idx]

    def from_uniform(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        idx = np.searchsorted(self._cut(), u[:, 0], side="right")
        idx = np.minimum(idx, len(self.probabilities) - 1)
        return self.points[idx]

    def marginal(self, start, stop):
        return DiscreteAtoms(self.points[:, start:stop], self.probabilities)


# ---------------------------------------------------------------------------
# Score functions
# ---------------------------------------------------------------------------

class Score:
    """A predictive score over the observed covariates, valued in [0, 1]."""

    kind = "score"

    def evaluate(self, x_s, x_a):
        raise NotImplementedError

    def _prepare(self, x_s, x_a):
        scalar = np.asarray(x_s).ndim <= 1 and np.asarray(x_a).ndim <= 1
        return scalar, np.atleast_2d(np.asarray(x_s, float)), np.atleast_2d(np.asarray(x_a, float))

    @staticmethod
    def _finish(scalar, value):
        value = np.clip(np.asarray(value, dtype=float), 0.0, 1.0)
        return float(value[0]) if scalar and value.size == 1 else value

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class ThresholdRule(Score):
    """Two-valued rule split on the sign of the summed observed covariates."""

    value_pos: float
    value_neg: float

    kind = "threshold"

    def __post_init__(self):
        for name in ("value_pos", "value_neg"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    def evaluate(self, x_s, x_a):
        scalar, x_s, x_a = self._prepare(x_s, x_a)
        total = x_s.sum(axis=1) + x_a.sum(axis=1)
        # ties (sum exactly 0) fall in the "<= 0" cell
        return self._finish(scalar, np.where(total > 0, self.value_pos, self.value_neg))

    def params(self):
        return {"value_pos": self.value_pos, "value_neg": self.value_neg}


@dataclass(frozen=True)
class LogisticScore(Score):
    """sigmoid(beta . (1, x_s, x_a)) for a fitted coefficient vector."""

    beta: np.ndarray

    kind = "logistic"

    def __post_init__(self):
        object.__setattr__(self, "beta", _as_vector(self.beta, "beta"))

    def evaluate(self, x_s, x_a):
        scalar, x_s, x_a = self._prepare(x_s, x_a)
        design = np.hstack([np.ones((x_s.shape[0], 1)), x_s, x_a])
        if design.shape[1] != len(self.beta):
            raise ValueError(
                f"score expects {len(self.beta) - 1} covariates, got {design.shape[1] - 1}"
            )
        return self._finish(scalar, expit(design @ self.beta))

    def params(self):
        return {"beta": [float(b) for b in self.beta]}


@dataclass(frozen=True)
class ConstantScore(Score):
    """A fixed score for every individual; useful as a comparison baseline."""

    value: float

    kind = "constant"

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("constant score must lie in [0, 1]")

    def evaluate(self, x_s, x_a):
        scalar, x_s, x_a = self._prepare(x_s, x_a)
        return self._finish(scalar, np.full(x_s.shape[0], self.value))

    def params(self):
        return {"value": self.value}


@dataclass(frozen=True)
class CallableScore(Score):
    """Wraps a vectorised callable (x_s, x_a) -> score; internal plumbing."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "callable"

    kind = "callable"

    def evaluate(self, x_s, x_a):
        scalar, x_s, x_a = self._prepare(x_s, x_a)
        return self._finish(scalar, np.asarray(self.fn(x_s, x_a), dtype=float))

    def params(self):
        return {"name": self.name}


# ---------------------------------------------------------------------------
# Pointwise evaluation operations
# ---------------------------------------------------------------------------

def eval_mechanism(f: Mechanism, x: CovariateState) -> float:
    """P(Y=1) for one individual at their post-intervention covariates."""
    if x.dims != f.dims:
        raise ValueError(f"state dimensions {x.dims} do not match mechanism {f.dims}")
    return float(f.probability(x.x_s, x.x_a, x.x_l))


def eval_intervention(g: Intervention, rho, x) -> np.ndarray:
    """Element-wise intervened values g(rho, x_i)."""
    _check_rho(rho)
    return g.apply(rho, np.asarray(x, dtype=float))


def eval_score(score: Score, x_s, x_a):
    """Score value(s) at observed covariates, always in [0, 1]."""
    return score.evaluate(x_s, x_a)


# ---------------------------------------------------------------------------
# Registration of custom specs (used by the config layer)
# ---------------------------------------------------------------------------

_MECHANISMS: dict[str, Callable[..., Mechanism]] = {}
_INTERVENTIONS: dict[str, Callable[..., Intervention]] = {}


def register_mechanism(name: str, factory: Callable[..., Mechanism]) -> None:
    _MECHANISMS[name] = factory


def register_intervention(name: str, factory: Callable[..., Intervention]) -> None:
    _INTERVENTIONS[name] = factory


def mechanism_factory(name: str) -> Callable[..., Mechanism]:
    try:
        return _MECHANISMS[name]
    except KeyError:
        raise KeyError(f"unknown mechanism type {name!r}; known: {sorted(_MECHANISMS)}") from None


def intervention_factory(name: str) -> Callable[..., Intervention]:
    try:
        return _INTERVENTIONS[name]
    except KeyError:
        raise KeyError(
            f"unknown intervention type {name!r}; known: {sorted(_INTERVENTIONS)}"
        ) from None


register_mechanism("logistic_linear", LogisticLinear)
register_intervention("identity", Identity)
register_intervention("additive_shift", AdditiveShift)
register_intervention("log_shift", LogShift)
register_intervention("blend", Blend)
register_intervention("sigmoid_pull", SigmoidPull)
register_intervention("linear_pull", LinearPull)
register_intervention("scaled_log_shift", ScaledLogShift)
