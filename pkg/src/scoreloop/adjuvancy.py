"""Layered score updating: each epoch's intervention is applied on top of all
previous ones, rather than replacing them.

With a univariate actionable covariate and no latent block, the score then
follows the scalar recursion ``rho_next = f(x_s, g(rho, f_inv(rho)))``; the
recursion rests exactly at the equivocal score rho_eq where the intervention
leaves every value unchanged.  This module builds the composed interventions,
evaluates that map, finds rho_eq, and classifies convergence versus
chaotic/non-converged behaviour over covariate grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Blend, Identity, Intervention, LogisticLinear, Mechanism

__all__ = [
    "CONVERGED_TO_EQ",
    "NON_CONVERGED",
    "InterventionChain",
    "EquilibriumSpec",
    "NoEquilibriumError",
    "BracketFailureError",
    "AdjuvancyTrace",
    "run_adjuvancy",
    "invert_mechanism",
    "h2_eval",
    "find_rho_eq",
    "AdjuvancyReport",
    "classify_adjuvancy",
    "sweep_adjuvancy",
]

CONVERGED_TO_EQ = "converged-to-eq"
NON_CONVERGED = "chaotic-or-nonconverged"

DEFAULT_BRACKET = (-50.0, 50.0)


class NoEquilibriumError(RuntimeError):
    """No score value in [0, 1] leaves the reference covariate unchanged."""


class BracketFailureError(RuntimeError):
    """Mechanism inversion target is not bracketed by the search interval."""


@dataclass(frozen=True)
class InterventionChain:
    """A base intervention applied repeatedly with recorded score values.

    Evaluation is left-to-right: the earliest score is applied first.  An
    empty chain is the identity map.
    """

    g: Intervention
    rho_values: tuple[float, ...] = ()

    def __len__(self) -> int:
        return len(self.rho_values)

    def extended(self, rho: float) -> "InterventionChain":
        return InterventionChain(self.g, self.rho_values + (float(rho),))

    def apply(self, x):
        out = np.asarray(x, dtype=float).copy()
        for rho in self.rho_values:
            out = self.g.apply(rho, out)
        return out


@dataclass
class AdjuvancyTrace:
    """Score and covariate trajectories under layered updating."""

    rho: list[float]
    x: list[float]

    @property
    def deltas(self) -> list[float]:
        return [abs(b - a) for a, b in zip(self.rho, self.rho[1:])]


def run_adjuvancy(f: Mechanism, g: Intervention, x_s, x_a: float, epochs: int) -> AdjuvancyTrace:
    """Iterate layered interventions at one covariate point.

    The epoch-e covariate is the previous epoch's intervened value, and each
    score is the exact event probability at the current covariate.  Requires
    a univariate actionable block; the latent block, if any, is ignored here
    (no convergence guarantees are claimed for it).
    """
    if f.dims.p_a != 1:
        raise ValueError("layered updating analysis requires a univariate actionable block")
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    x = float(x_a)
    rho = float(f.probability(x_s, [x]))
    trace = AdjuvancyTrace(rho=[rho], x=[x])
    for _ in range(epochs):
        x = float(g.apply(trace.rho[-1], np.array([x]))[0])
        rho = float(f.probability(x_s, [x]))
        trace.x.append(x)
        trace.rho.append(rho)
    return trace


def invert_mechanism(
    f: Mechanism, x_s, target, bracket=DEFAULT_BRACKET, tol: float = 1e-12
) -> float | np.ndarray:
    """Solve f(x_s, x) = target for the univariate actionable covariate.

    Bisection on the given bracket; the mechanism must be increasing in x
    over it.  Accepts a scalar or vector of targets.
    """
    if f.dims.p_a != 1:
        raise ValueError("inversion requires a univariate actionable block")
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    t = np.asarray(target, dtype=float)
    scalar = t.ndim == 0
    tv = np.atleast_1d(t)

    lo = np.full(tv.shape, float(bracket[0]))
    hi = np.full(tv.shape, float(bracket[1]))

    def value(x):
        xs = np.broadcast_to(x_s, (x.size, len(x_s)))
        return np.atleast_1d(f.probability(xs, x[:, None]))

    f_lo = value(lo)
    f_hi = value(hi)
    if np.any(f_lo > tv) or np.any(f_hi < tv):
        raise BracketFailureError(
            f"target outside mechanism range on bracket {bracket}: "
            f"[{f_lo.min()!r}, {f_hi.max()!r}]"
        )
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = value(mid)
        if np.max(np.abs(f_mid - tv)) <= tol:
            break
        above = f_mid < tv
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return float(mid[0]) if scalar else mid


def h2_eval(f: Mechanism, g: Intervention, x_s, r, bracket=DEFAULT_BRACKET):
    """The layered-update map: f(x_s, g(r, f_inv(r))).

    Fixed points of this map are exactly the equivocal scores of g.  Accepts
    scalar or vector r.
    """
    r_arr = np.asarray(r, dtype=float)
    scalar = r_arr.ndim == 0
    rv = np.atleast_1d(r_arr)
    x_star = np.atleast_1d(invert_mechanism(f, x_s, rv, bracket=bracket))
    x_new = g.apply(rv, x_star)
    xs = np.broadcast_to(np.atleast_1d(np.asarray(x_s, dtype=float)), (rv.size, len(np.atleast_1d(x_s))))
    out = np.atleast_1d(f.probability(xs, x_new[:, None]))
    return float(out[0]) if scalar else out


def h2_derivative(f: Mechanism, g: Intervention, x_s, r: float, step: float = 1e-6,
                  bracket=DEFAULT_BRACKET) -> float:
    lo = max(1e-9, r - step)
    hi = min(1.0 - 1e-9, r + step)
    return float((h2_eval(f, g, x_s, hi, bracket) - h2_eval(f, g, x_s, lo, bracket)) / (hi - lo))


@dataclass(frozen=True)
class EquilibriumSpec:
    """The score value at which an intervention leaves covariates unchanged.

    `verified_uniform` records that g(rho_eq, x) = x held across the test
    grid; a boundary-only equilibrium (rho_eq of 0 or 1) is reported with
    `verified_uniform=False` since the intervention never rests at any
    interior score.
    """

    rho_eq: float
    verified_uniform: bool
    max_deviation: float = 0.0

    def __post_init__(self):
        if self.verified_uniform and not 0.0 < self.rho_eq < 1.0:
            raise ValueError("a verified uniform equilibrium must lie strictly inside (0, 1)")


def find_rho_eq(
    g: Intervention,
    grid: Sequence[float] | np.ndarray = (-3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 3.0),
    reference: float | None = None,
    tol: float = 1e-12,
    uniform_tol: float = 1e-9,
) -> EquilibriumSpec:
    """Solve g(rho, x*) = x* at a reference value, then check uniformity.

    Raises NoEquilibriumError when no score in [0, 1] fixes the reference
    point.  Blend short-circuits to its algebraic equilibrium of 1/2.
    """
    if g.is_identity:
        raise ValueError("the identity intervention fixes every point at every score")
    grid = np.asarray(grid, dtype=float)
    x_star = float(grid[0] if reference is None else reference)

    def gap(rho: float) -> float:
        return float(g.apply(rho, np.array([x_star]))[0] - x_star)

    if isinstance(g, Blend):
        rho_eq = 0.5
    else:
        lo, hi = 0.0, 1.0
        g_lo, g_hi = gap(lo), gap(hi)
        if abs(g_lo) <= tol and abs(g_hi) <= tol:
            raise NoEquilibriumError("intervention fixes the reference point at every score")
        if abs(g_lo) <= tol:
            rho_eq = 0.0
        elif abs(g_hi) <= tol:
            rho_eq = 1.0
        elif np.sign(g_lo) == np.sign(g_hi):
            raise NoEquilibriumError(
                f"no score in [0, 1] fixes x*={x_star}: gaps ({g_lo!r}, {g_hi!r})"
            )
        else:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                g_mid = gap(mid)
                if abs(g_mid) <= tol:
                    lo = hi = mid
                    break
                if np.sign(g_mid) == np.sign(g_lo):
                    lo, g_lo = mid, g_mid
                else:
                    hi = mid
            rho_eq = 0.5 * (lo + hi)

    deviations = np.abs(g.apply(rho_eq, grid) - grid)
    max_dev = float(deviations.max())
    interior = 0.0 < rho_eq < 1.0
    return EquilibriumSpec(
        rho_eq=rho_eq,
        verified_uniform=bool(interior and max_dev <= uniform_tol),
        max_deviation=max_dev,
    )


@dataclass
class AdjuvancyReport:
    """Classification of one layered-updating trajectory."""

    classification: str
    final_gap: float
    trace: AdjuvancyTrace
    lyapunov: float

    def to_json_dict(self) -> dict:
        return {
            "classification": self.classification,
            "final_gap": self.final_gap,
            "rho_trace": self.trace.rho,
            "x_trace": self.trace.x,
            "lyapunov": self.lyapunov,
        }


def _lyapunov_estimate(f: Mechanism, g: Intervention, x_s, xs: list[float], step=1e-6) -> float:
    """Mean log-slope of the covariate map along the trajectory (diagnostic only)."""
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))

    def covariate_map(x):
        rho = f.probability(x_s, [x])
        return float(g.apply(rho, np.array([x]))[0])

    logs = []
    for x in xs[:-1]:
        slope = (covariate_map(x + step) - covariate_map(x - step)) / (2 * step)
        logs.append(np.log(max(abs(slope), 1e-300)))
    return float(np.mean(logs)) if logs else float("nan")


def classify_adjuvancy(
    f: Mechanism,
    g: Intervention,
    x_s,
    x_a: float,
    rho_eq: float,
    epochs: int = 20,
    tol: float = 1e-3,
) -> AdjuvancyReport:
    """Converged-to-equilibrium iff the final score is within `tol` of rho_eq
    and the score moves kept shrinking over the last five epochs; otherwise
    chaotic/non-converged.  A crude Lyapunov estimate rides along as a
    diagnostic; classification never uses it."""
    trace = run_adjuvancy(f, g, x_s, x_a, epochs)
    deltas = trace.deltas
    tail = deltas[-5:]
    shrinking = all(b <= a + 1e-15 for a, b in zip(tail, tail[1:]))
    gap = trace.rho[-1] - rho_eq
    converged = abs(gap) < tol and shrinking
    return AdjuvancyReport(
        classification=CONVERGED_TO_EQ if converged else NON_CONVERGED,
        final_gap=float(gap),
        trace=trace,
        lyapunov=_lyapunov_estimate(f, g, x_s, trace.x),
    )


def sweep_adjuvancy(
    f: Mechanism,
    g: Intervention,
    x_s_values,
    x_a_values,
    rho_eq: float,
    epochs: int = 20,
    tol: float = 1e-3,
) -> list[dict]:
    """Regime map of layered updating over a grid of scalar (x_s, x_a) points."""
    rows = []
    for xs in np.atleast_1d(x_s_values):
        for xa in np.atleast_1d(x_a_values):
            report = classify_adjuvancy(f, g, [xs], float(xa), rho_eq, epochs=epochs, tol=tol)
            rows.append(
                {
                    "x_s": float(xs),
                    "x_a": float(xa),
                    "rho_final": report.trace.rho[-1],
                    "gap_to_eq": report.final_gap,
                    "classification": report.classification,
                    "lyapunov": report.lyapunov,
                }
            )
    return rows
