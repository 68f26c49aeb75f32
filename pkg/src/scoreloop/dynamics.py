"""Drop-in score replacement dynamics: the one-dimensional update map, its
fixed point and stability, epoch simulation, and the contraction certificate.

At a fixed observed covariate point, refitting an oracle score each epoch and
deploying it as a replacement induces the scalar recursion
``rho_next = h(rho)`` where h evaluates the outcome mechanism at the
intervened covariates.  Everything in this module analyses or simulates that
recursion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .estimators import (
    FitReport,
    OracleConfig,
    OracleScore,
    fit_logistic,
    fit_threshold,
    select_holdout,
)
from .model import (
    AdditiveShift,
    Blend,
    CovariateBatch,
    Dimensions,
    Identity,
    Intervention,
    LogisticLinear,
    LogShift,
    Mechanism,
    Population,
    Score,
)
from .sampling import RngSeed, make_dataset, sample_covariates, sample_outcomes

__all__ = [
    "CONVERGED",
    "OSCILLATING",
    "UNDETERMINED",
    "HMap",
    "RecursionReport",
    "ContractionRegion",
    "ContractionReport",
    "NoSignChangeError",
    "h_eval",
    "h_derivative",
    "find_fixed_point",
    "iterate_recursion",
    "classify_recursion",
    "FixedPointScore",
    "EpochRecord",
    "run_naive",
    "LongitudinalRun",
    "run_longitudinal",
    "contraction_certificate",
    "sweep_recursion",
]

CONVERGED = "converged"
OSCILLATING = "oscillating"
UNDETERMINED = "undetermined"

FIXED_POINT_TOL = 1e-10
DERIVATIVE_STEP = 1e-5


class NoSignChangeError(RuntimeError):
    """The update map does not bracket a fixed point on [0, 1]."""


@dataclass(frozen=True)
class HMap:
    """The scalar update map at one observed covariate point.

    h(z) averages the mechanism over the latent block at the covariates an
    intervention driven by score value z would produce.  The latent sample is
    drawn once per map (seeded), so h is a deterministic function of z.
    """

    f: Mechanism
    g_a: Intervention
    x_s: np.ndarray
    x_a: np.ndarray
    g_l: Intervention = field(default_factory=Identity)
    latent: OracleConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_s", np.atleast_1d(np.asarray(self.x_s, dtype=float)))
        object.__setattr__(self, "x_a", np.atleast_1d(np.asarray(self.x_a, dtype=float)))
        d = self.f.dims
        if len(self.x_s) != d.p_s or len(self.x_a) != d.p_a:
            raise ValueError("point does not match mechanism dimensions")
        if d.p_l > 0 and self.latent is None:
            raise ValueError("mechanism has a latent block but no latent config was given")

    @cached_property
    def _latent_draws(self) -> np.ndarray:
        p_l = self.f.dims.p_l
        if p_l == 0:
            return np.zeros((1, 0))
        return self.latent.latent_sample(p_l)

    def __call__(self, z):
        """h(z) for scalar or vector z; exact when there is no latent block."""
        z = np.asarray(z, dtype=float)
        if np.any(z < 0.0) or np.any(z > 1.0):
            raise ValueError("z must lie in [0, 1]")
        scalar = z.ndim == 0
        zv = np.atleast_1d(z)
        p_l = self.f.dims.p_l
        if p_l == 0:
            x_a_new = self.g_a.apply(zv[:, None], self.x_a[None, :])
            xs = np.broadcast_to(self.x_s, (zv.size, len(self.x_s)))
            out = np.asarray(self.f.probability(xs, x_a_new), dtype=float)
        else:
            latent = self._latent_draws
            m = latent.shape[0]
            out = np.empty(zv.size)
            for i, zi in enumerate(zv):
                x_a_new = self.g_a.apply(zi, self.x_a)
                x_l_new = self.g_l.apply(zi, latent)
                xs = np.broadcast_to(self.x_s, (m, len(self.x_s)))
                xa = np.broadcast_to(x_a_new, (m, len(self.x_a)))
                out[i] = np.mean(self.f.probability(xs, xa, x_l_new))
        return float(out[0]) if scalar else out


def h_eval(hmap: HMap, z) -> float:
    """The update map value h(z)."""
    return hmap(z)


def _analytic_derivative(hmap: HMap, z: float) -> float | None:
    """Closed-form h'(z) for logistic-linear mechanisms with the standard
    interventions and no latent block; None when not applicable."""
    f = hmap.f
    if not isinstance(f, LogisticLinear) or f.dims.p_l > 0:
        return None
    if not isinstance(hmap.g_a, (LogShift, Blend, AdditiveShift)):
        return None
    x_a_new = hmap.g_a.apply(z, hmap.x_a)
    dp = f.d_probability_dx_a(hmap.x_s, x_a_new)[0]
    dg = np.atleast_1d(hmap.g_a.d_rho(z, hmap.x_a))
    return float(np.sum(dp * dg))


def h_derivative(hmap: HMap, z: float, step: float = DERIVATIVE_STEP, method: str = "auto") -> float:
    """h'(z) by central finite difference, with an analytic fast path.

    Both paths agree to ~1e-6 for the built-in mechanism/intervention pairs;
    `method` pins one side for cross-testing.
    """
    if method not in ("auto", "analytic", "fd"):
        raise ValueError("method must be auto, analytic or fd")
    if method in ("auto", "analytic"):
        analytic = _analytic_derivative(hmap, z)
        if analytic is not None:
            return analytic
        if method == "analytic":
            raise ValueError("no analytic derivative for this mechanism/intervention pair")
    lo = max(0.0, z - step)
    hi = min(1.0, z + step)
    return (hmap(hi) - hmap(lo)) / (hi - lo)


def find_fixed_point(hmap: HMap, tol: float = FIXED_POINT_TOL) -> tuple[float, float]:
    """The unique root of h(z) = z by bisection, and h' there.

    Requires h(0) > 0 and h(1) < 1, which any map into (0, 1) satisfies; the
    residual |h(z0) - z0| is driven below `tol`.
    """
    h0 = hmap(0.0)
    h1 = hmap(1.0)
    if h0 <= 0.0 or h1 >= 1.0:
        raise NoSignChangeError(
            f"h does not map [0, 1] into (0, 1): h(0)={h0!r}, h(1)={h1!r}"
        )
    lo, hi = 0.0, 1.0
    z = 0.5
    for _ in range(200):
        z = 0.5 * (lo + hi)
        residual = hmap(z) - z
        if abs(residual) <= tol:
            break
        if residual > 0:
            lo = z
        else:
            hi = z
    return z, h_derivative(hmap, z)


def iterate_recursion(hmap: HMap, rho0: float, epochs: int) -> list[float]:
    """The raw trace rho_0, h(rho_0), h(h(rho_0)), ..."""
    trace = [float(rho0)]
    for _ in range(epochs):
        trace.append(hmap(trace[-1]))
    return trace


@dataclass
class RecursionReport:
    """Fixed point, stability and the observed trace of one recursion run."""

    fixed_point: float
    derivative_at_fixed_point: float
    classification: str
    epochs_used: int
    trace: list[float]
    deltas: list[float]

    def to_json_dict(self) -> dict:
        return {
            "fixed_point": self.fixed_point,
            "derivative_at_fixed_point": self.derivative_at_fixed_point,
            "classification": self.classification,
            "epochs_used": self.epochs_used,
            "trace": self.trace,
            "deltas": self.deltas,
        }

    def trace_rows(self) -> list[list]:
        rows = []
        for e, rho in enumerate(self.trace):
            delta = "" if e == 0 else self.deltas[e - 1]
            rows.append([e, rho, delta, self.classification])
        return rows


def classify_recursion(
    hmap: HMap,
    rho0: float,
    max_epochs: int = 10,
    conv_tol: float = 0.01,
    osc_floor: float = 0.05,
) -> RecursionReport:
    """Iterate the update map and classify its behaviour.

    Converged once the epoch-to-epoch move drops below `conv_tol`; oscillating
    once the move exceeds `osc_floor` while successive moves agree to within
    `conv_tol` (a settled two-cycle); undetermined when the epoch cap is hit
    first.  The raw trace is kept so alternative rules can be re-scored.
    """
    if not 0.0 <= rho0 <= 1.0:
        raise ValueError("rho0 must lie in [0, 1]")
    z0, deriv = find_fixed_point(hmap)
    trace = [float(rho0)]
    deltas: list[float] = []
    classification = UNDETERMINED
    epochs_used = max_epochs
    for e in range(1, max_epochs + 1):
        trace.append(hmap(trace[-1]))
        deltas.append(abs(trace[-1] - trace[-2]))
        if deltas[-1] < conv_tol:
            classification = CONVERGED
            epochs_used = e
            break
        if len(deltas) >= 2 and deltas[-1] > osc_floor and abs(deltas[-1] - deltas[-2]) < conv_tol:
            classification = OSCILLATING
            epochs_used = e
            break
    return RecursionReport(z0, deriv, classification, epochs_used, trace, deltas)


@dataclass(frozen=True)
class FixedPointScore(Score):
    """The score the naive recursion settles at, evaluated pointwise.

    Each evaluation solves h(z) = z at that covariate point by bisection.
    """

    f: Mechanism
    g_a: Intervention
    g_l: Intervention = field(default_factory=Identity)
    latent: OracleConfig | None = None
    tol: float = 1e-14

    kind = "fixed-point"

    def evaluate(self, x_s, x_a):
        scalar, x_s, x_a = self._prepare(x_s, x_a)
        out = np.empty(x_s.shape[0])
        for i in range(x_s.shape[0]):
            hmap = HMap(self.f, self.g_a, x_s[i], x_a[i], g_l=self.g_l, latent=self.latent)
            out[i], _ = find_fixed_point(hmap, tol=self.tol)
        return self._finish(scalar, out)


# ---------------------------------------------------------------------------
# Epoch simulation
# ---------------------------------------------------------------------------

_HOLDOUT_STREAM = 101
_COVARIATE_STREAM = 0
_OUTCOME_STREAM = 1


@dataclass
class EpochRecord:
    """One epoch of a simulated deployment."""

    epoch: int
    score: Score
    mean_outcome: float
    summary: dict
    fit: FitReport | None = None
    holdout_indices: np.ndarray | None = None


def _fit_score(data, fitter: str):
    if fitter == "threshold":
        return fit_threshold(data), None
    if fitter == "logistic":
        report = fit_logistic(data)
        return report.score(), report
    raise ValueError(f"unknown fitter {fitter!r}; use 'threshold' or 'logistic'")


def _fitter_for(fitter, epoch: int) -> str:
    if isinstance(fitter, str):
        return fitter
    return fitter[min(epoch, len(fitter) - 1)]


def _summarise(batch_t0: CovariateBatch, batch_t1: CovariateBatch) -> dict:
    return {
        "mean_t0": [float(v) for v in batch_t0.observed.mean(axis=0)],
        "mean_t1": [float(v) for v in batch_t1.observed.mean(axis=0)],
    }


def run_naive(
    f: Mechanism,
    g_a: Intervention,
    g_l: Intervention,
    mu: Population,
    score_mode: str,
    n_per_epoch: int,
    epochs: int,
    seed: RngSeed,
    fitter="logistic",
    latent: OracleConfig | None = None,
    holdout_fraction: float | None = None,
) -> list[EpochRecord]:
    """Simulate repeated drop-in score replacement.

    Each epoch resamples the population, intervenes using the previous
    epoch's score, observes outcomes, and refits (or re-derives) the score
    from that epoch's observed data alone.  With `holdout_fraction` set, a
    seeded subset of rows is shielded from intervention and the refit uses
    only those rows.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if score_mode not in ("oracle", "fitted"):
        raise ValueError("score_mode must be 'oracle' or 'fitted'")
    dims = f.dims
    records: list[EpochRecord] = []
    score: Score | None = None
    for e in range(epochs):
        epoch_seed = seed.split(e)
        batch0 = sample_covariates(mu, dims, n_per_epoch, epoch_seed.split(_COVARIATE_STREAM), epoch=e)
        holdout_idx = None
        if e == 0 or score is None:
            batch1 = batch0.at_time(1)
        else:
            rho = np.asarray(score.evaluate(batch0.x_s, batch0.x_a), dtype=float)
            x_a_new = g_a.apply(rho, batch0.x_a)
            x_l_new = g_l.apply(rho, batch0.x_l) if dims.p_l else batch0.x_l
            if holdout_fraction is not None:
                holdout_idx = select_holdout(
                    n_per_epoch, holdout_fraction, epoch_seed.split(_HOLDOUT_STREAM)
                )
                x_a_new = np.asarray(x_a_new)
                x_l_new = np.asarray(x_l_new)
                x_a_new[holdout_idx] = batch0.x_a[holdout_idx]
                if dims.p_l:
                    x_l_new[holdout_idx] = batch0.x_l[holdout_idx]
            batch1 = batch0.intervened(x_a_new, x_l_new)
        outcomes = sample_outcomes(f, batch1, epoch_seed.split(_OUTCOME_STREAM))

        fit_report = None
        if score_mode == "oracle":
            if score is None:
                new_score: Score = OracleScore(f, g_a, g_l, previous=None, cfg=latent)
            else:
                new_score = OracleScore(f, g_a, g_l, previous=score, cfg=latent)
        else:
            data = make_dataset(batch0, outcomes)
            if holdout_fraction is not None and holdout_idx is not None:
                data = data.subset(holdout_idx)
            new_score, fit_report = _fit_score(data, _fitter_for(fitter, e))

        records.append(
            EpochRecord(
                epoch=e,
                score=new_score,
                mean_outcome=float(outcomes.mean()),
                summary=_summarise(batch0, batch1),
                fit=fit_report,
                holdout_indices=holdout_idx,
            )
        )
        score = new_score
    return records


@dataclass
class LongitudinalRun:
    """Trace of the carried-forward variant, with the population trajectory."""

    records: list[EpochRecord]
    populations: list[CovariateBatch]


def run_longitudinal(
    f: Mechanism,
    g_a: Intervention,
    g_l: Intervention,
    mu: Population,
    n: int,
    epochs: int,
    seed: RngSeed,
    score_mode: str = "oracle",
    fitter="logistic",
    latent: OracleConfig | None = None,
) -> LongitudinalRun:
    """Same loop as `run_naive`, but interventions persist: the next epoch
    starts from this epoch's post-intervention covariates instead of a fresh
    sample.  The pointwise score recursion is unchanged."""
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    if score_mode not in ("oracle", "fitted"):
        raise ValueError("score_mode must be 'oracle' or 'fitted'")
    dims = f.dims
    records: list[EpochRecord] = []
    populations: list[CovariateBatch] = []
    score: Score | None = None
    batch0 = sample_covariates(mu, dims, n, seed.split(0, _COVARIATE_STREAM), epoch=0)
    for e in range(epochs):
        epoch_seed = seed.split(e)
        if e == 0 or score is None:
            batch1 = batch0.at_time(1)
        else:
            rho = np.asarray(score.evaluate(batch0.x_s, batch0.x_a), dtype=float)
            x_a_new = g_a.apply(rho, batch0.x_a)
            x_l_new = g_l.apply(rho, batch0.x_l) if dims.p_l else batch0.x_l
            batch1 = batch0.intervened(x_a_new, x_l_new)
        outcomes = sample_outcomes(f, batch1, epoch_seed.split(_OUTCOME_STREAM))

        fit_report = None
        if score_mode == "oracle":
            new_score: Score = OracleScore(f, g_a, g_l, previous=score, cfg=latent)
        else:
            new_score, fit_report = _fit_score(make_dataset(batch0, outcomes), _fitter_for(fitter, e))

        records.append(
            EpochRecord(
                epoch=e,
                score=new_score,
                mean_outcome=float(outcomes.mean()),
                summary=_summarise(batch0, batch1),
                fit=fit_report,
            )
        )
        populations.append(batch1)
        score = new_score
        batch0 = CovariateBatch(batch1.x_s, batch1.x_a, batch1.x_l, epoch=e + 1, time=0)
    return LongitudinalRun(records, populations)


# ---------------------------------------------------------------------------
# Contraction certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContractionRegion:
    """Grid bounds: a score interval plus per-coordinate covariate intervals."""

    z: tuple[float, float] = (0.0, 1.0)
    x_s: tuple[tuple[float, float], ...] = ()
    x_a: tuple[tuple[float, float], ...] = ()

    @staticmethod
    def at_point(x_s, x_a, z=(0.0, 1.0)) -> "ContractionRegion":
        return ContractionRegion(
            z=(float(z[0]), float(z[1])),
            x_s=tuple((float(v), float(v)) for v in np.atleast_1d(x_s)),
            x_a=tuple((float(v), float(v)) for v in np.atleast_1d(x_a)),
        )


@dataclass
class ContractionReport:
    """Numerically estimated bound certifying convergence when below one."""

    k1: float
    k2: float
    k3: float
    k4: float
    bound: float
    certified: bool

    def to_json_dict(self) -> dict:
        return {
            "k1": self.k1,
            "k2": self.k2,
            "k3": self.k3,
            "k4": self.k4,
            "bound": self.bound,
            "certified": self.certified,
        }


def _axis(points: tuple[float, float], resolution: int) -> np.ndarray:
    lo, hi = points
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, resolution)


def contraction_certificate(
    f: Mechanism,
    g_a: Intervention,
    g_l: Intervention,
    region: ContractionRegion,
    resolution: int = 21,
    latent: OracleConfig | None = None,
    step: float = DERIVATIVE_STEP,
) -> ContractionReport:
    """Grid maxima of the squared-sensitivity sums and the induced bound.

    k1/k2 bound how strongly the interventions react to the score; k3/k4
    bound how strongly the mechanism reacts to the intervened coordinates.
    sqrt(k1 k3) + sqrt(k2 k4) < 1 certifies convergence of the recursion on
    the region (up to grid resolution; the certificate is only as fine as
    the grid).
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    dims = f.dims
    if len(region.x_s) != dims.p_s or len(region.x_a) != dims.p_a:
        raise ValueError("region covariate intervals do not match mechanism dimensions")
    if dims.p_l > 0 and latent is None:
        raise ValueError("latent block present but no latent config given")
    latent_draws = latent.latent_sample(dims.p_l) if dims.p_l else np.zeros((1, 0))
    m = latent_draws.shape[0]

    z_axis = _axis(region.z, resolution)
    s_axes = [_axis(iv, resolution) for iv in region.x_s]
    a_axes = [_axis(iv, resolution) for iv in region.x_a]
    grids = np.meshgrid(z_axis, *s_axes, *a_axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)

    k1 = k2 = k3 = k4 = 0.0
    for node in nodes:
        z = node[0]
        x_s = node[1 : 1 + dims.p_s]
        x_a = node[1 + dims.p_s :]

        dg_a = np.atleast_1d(g_a.d_rho(z, x_a))
        k1 = max(k1, float(np.sum(dg_a**2)))

        x_a_sub = np.atleast_1d(g_a.apply(z, x_a))
        if dims.p_l:
            dg_l = np.atleast_2d(g_l.d_rho(z, latent_draws))
            k2 = max(k2, float(np.sum(np.mean(dg_l**2, axis=0))))
            l_sub = g_l.apply(z, latent_draws)
        else:
            l_sub = latent_draws

        xs = np.broadcast_to(x_s, (m, dims.p_s))
        # mechanism sensitivities at the substituted point, by central difference
        df_a = np.empty((m, dims.p_a))
        for j in range(dims.p_a):
            bump = np.zeros(dims.p_a)
            bump[j] = step
            hi = f.probability(xs, np.broadcast_to(x_a_sub + bump, (m, dims.p_a)), l_sub)
            lo = f.probability(xs, np.broadcast_to(x_a_sub - bump, (m, dims.p_a)), l_sub)
            df_a[:, j] = (np.atleast_1d(hi) - np.atleast_1d(lo)) / (2 * step)
        k3 = max(k3, float(np.sum(np.mean(np.abs(df_a), axis=0) ** 2)))

        if dims.p_l:
            df_l = np.empty((m, dims.p_l))
            xa = np.broadcast_to(x_a_sub, (m, dims.p_a))
            for j in range(dims.p_l):
                bump = np.zeros(dims.p_l)
                bump[j] = step
                hi = f.probability(xs, xa, l_sub + bump)
                lo = f.probability(xs, xa, l_sub - bump)
                df_l[:, j] = (np.atleast_1d(hi) - np.atleast_1d(lo)) / (2 * step)
            k4 = max(k4, float(np.sum(np.mean(df_l**2, axis=0))))

    bound = float(np.sqrt(k1 * k3) + np.sqrt(k2 * k4))
    return ContractionReport(k1, k2, k3, k4, bound, certified=bound < 1.0)


# ---------------------------------------------------------------------------
# Regime-map sweep
# ---------------------------------------------------------------------------

def sweep_recursion(
    f: Mechanism,
    g_a: Intervention,
    x_s_values: np.ndarray,
    x_a_values: np.ndarray,
    max_epochs: int = 10,
    conv_tol: float = 0.01,
    osc_floor: float = 0.05,
    g_l: Intervention | None = None,
    latent: OracleConfig | None = None,
) -> list[dict]:
    """Classify the recursion over a grid of scalar (x_s, x_a) points.

    Starts each cell from the no-intervention oracle value at that point.
    Returns one row dict per cell, in row-major order.
    """
    g_l = g_l if g_l is not None else Identity()
    rows = []
    for xs in np.atleast_1d(x_s_values):
        for xa in np.atleast_1d(x_a_values):
            hmap = HMap(f, g_a, [xs], [xa], g_l=g_l, latent=latent)
            rho0 = float(f.probability(np.atleast_1d(xs), np.atleast_1d(xa)))
            report = classify_recursion(
                hmap, rho0, max_epochs=max_epochs, conv_tol=conv_tol, osc_floor=osc_floor
            )
            rows.append(
                {
                    "x_s": float(xs),
                    "x_a": float(xa),
                    "rho_final": report.trace[-1],
                    "fixed_point": report.fixed_point,
                    "derivative": report.derivative_at_fixed_point,
                    "classification": report.classification,
                    "epochs_used": report.epochs_used,
                }
            )
    return rows
