"""Score estimators: the oracle expectation, the threshold rule, logistic
maximum likelihood via IRLS, and the holdout-set fit.

The oracle evaluates the exact conditional event probability under the
current intervention regime; the fitted estimators reconstruct scores from
observed (covariates, outcome) data only.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .model import (
    Dimensions,
    GaussianDiagonal,
    Identity,
    Intervention,
    LogisticLinear,
    LogisticScore,
    Mechanism,
    Population,
    Score,
    ThresholdRule,
)
from .sampling import Dataset, RngSeed

__all__ = [
    "OracleConfig",
    "FitReport",
    "EmptyCellError",
    "oracle_score",
    "oracle_score_estimate",
    "OracleScore",
    "fit_threshold",
    "fit_logistic",
    "select_holdout",
    "fit_on_holdout",
    "score_from_fit",
    "mechanism_from_fit",
]

# IRLS stopping and guard constants
GRADIENT_TOL = 1e-6
SEPARATION_BOUND = 30.0
MAX_STEP_HALVINGS = 20


@dataclass(frozen=True)
class OracleConfig:
    """Monte-Carlo budget and distribution for integrating out the latent block.

    The latent sample is quasi-random (scrambled Sobol) and fixed by the seed,
    so every oracle evaluation with the same config is deterministic.  Ignored
    (exact evaluation) when there is no latent block.
    """

    latent_population: Population | None = None
    latent_mc_samples: int = 256
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        if self.latent_mc_samples < 1:
            raise ValueError("latent_mc_samples must be at least 1")

    def latent_sample(self, p_l: int) -> np.ndarray:
        if p_l == 0:
            return np.zeros((1, 0))
        if self.latent_population is None:
            raise ValueError("latent block present but no latent population configured")
        if self.latent_population.dim != p_l:
            raise ValueError("latent population dimension does not match p_l")
        from scipy.stats import qmc

        sampler = qmc.Sobol(d=p_l, scramble=True, seed=self.seed.generator())
        with warnings.catch_warnings():
            # exact caller-requested sample sizes beat strict power-of-two balance
            warnings.simplefilter("ignore", UserWarning)
            u = sampler.random(self.latent_mc_samples)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        return self.latent_population.from_uniform(u)


def _oracle_values(
    f: Mechanism,
    g_a: Intervention,
    g_l: Intervention,
    prev_rho_value: float,
    x_s,
    x_a,
    cfg: OracleConfig | None,
) -> np.ndarray:
    """Per-latent-draw mechanism values at the intervened point."""
    if not 0.0 <= prev_rho_value <= 1.0:
        raise ValueError("prev_rho_value must lie in [0, 1]")
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    x_a = np.atleast_1d(np.asarray(x_a, dtype=float))
    p_l = f.dims.p_l
    if p_l == 0:
        x_a_new = g_a.apply(prev_rho_value, x_a)
        return np.atleast_1d(f.probability(x_s, x_a_new))
    if cfg is None:
        raise ValueError("oracle evaluation with a latent block needs an OracleConfig")
    latent = cfg.latent_sample(p_l)
    m = latent.shape[0]
    x_a_new = g_a.apply(prev_rho_value, x_a)
    x_l_new = g_l.apply(prev_rho_value, latent)
    xs = np.broadcast_to(x_s, (m, len(x_s)))
    xa = np.broadcast_to(x_a_new, (m, len(x_a_new)))
    return np.asarray(f.probability(xs, xa, x_l_new), dtype=float)


def oracle_score(f, g_a, g_l, prev_rho_value, x_s, x_a, cfg=None) -> float:
    """Exact (or latent-averaged) event probability given the previous score value."""
    return float(np.mean(_oracle_values(f, g_a, g_l, prev_rho_value, x_s, x_a, cfg)))


def oracle_score_estimate(f, g_a, g_l, prev_rho_value, x_s, x_a, cfg=None) -> tuple[float, float]:
    """Oracle value together with the Monte-Carlo standard error of the latent mean."""
    values = _oracle_values(f, g_a, g_l, prev_rho_value, x_s, x_a, cfg)
    m = values.size
    se = float(values.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return float(values.mean()), se


@dataclass(frozen=True)
class OracleScore(Score):
    """The score an oracle analyst would deploy at one epoch.

    `previous` is the score deployed while the training data was generated;
    ``None`` means epoch 0 (no interventions yet).  Chaining OracleScore
    instances reproduces the full update recursion.
    """

    f: Mechanism
    g_a: Intervention
    g_l: Intervention = field(default_factory=Identity)
    previous: Score | None = None
    cfg: OracleConfig | None = None

    kind = "oracle"

    def __post_init__(self):
        if self.f.dims.p_l > 0 and self.cfg is None:
            raise ValueError("OracleScore over a latent block requires an OracleConfig")

    @property
    def epoch(self) -> int:
        prev = self.previous
        return 0 if prev is None else (prev.epoch + 1 if isinstance(prev, OracleScore) else 1)

    def successor(self) -> "OracleScore":
        """The next epoch's oracle, deployed on top of this one."""
        return OracleScore(self.f, self.g_a, self.g_l, previous=self, cfg=self.cfg)

    def evaluate(self, x_s, x_a):
        scalar, x_s, x_a = self._prepare(x_s, x_a)
        if self.previous is None:
            prev = np.zeros(x_s.shape[0])
            g_a: Intervention = Identity()
            g_l: Intervention = Identity()
        else:
            prev = np.atleast_1d(np.asarray(self.previous.evaluate(x_s, x_a), dtype=float))
            g_a, g_l = self.g_a, self.g_l
        p_l = self.f.dims.p_l
        if p_l == 0:
            x_a_new = g_a.apply(prev, x_a)
            return self._finish(scalar, self.f.probability(x_s, x_a_new))
        latent = self.cfg.latent_sample(p_l)
        out = np.empty(x_s.shape[0])
        for i in range(x_s.shape[0]):
            x_a_new = g_a.apply(prev[i], x_a[i])
            x_l_new = g_l.apply(prev[i], latent)
            xs = np.broadcast_to(x_s[i], (latent.shape[0], x_s.shape[1]))
            xa = np.broadcast_to(x_a_new, (latent.shape[0], x_a.shape[1]))
            out[i] = np.mean(self.f.probability(xs, xa, x_l_new))
        return self._finish(scalar, out)

    def params(self):
        return {"epoch": self.epoch}


# ---------------------------------------------------------------------------
# Fitted scores
# ---------------------------------------------------------------------------

class EmptyCellError(ValueError):
    """A threshold cell has no training rows."""


def fit_threshold(data: Dataset) -> ThresholdRule:
    """Cell means of the outcome, split on the sign of the covariate sum."""
    total = data.covariates.sum(axis=1)
    pos = total > 0
    if not pos.any():
        raise EmptyCellError("no rows with positive covariate sum")
    if pos.all():
        raise EmptyCellError("no rows with non-positive covariate sum")
    return ThresholdRule(
        value_pos=float(data.outcomes[pos].mean()),
        value_neg=float(data.outcomes[~pos].mean()),
    )


@dataclass(frozen=True)
class FitReport:
    """Outcome of a maximum-likelihood fit."""

    coefficients: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    separation_detected: bool = False

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    def score(self) -> LogisticScore:
        return LogisticScore(self.coefficients)

    def to_json_dict(self) -> dict:
        return {
            "coefficients": [float(b) for b in self.coefficients],
            "log_likelihood": float(self.log_likelihood),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "separation_detected": bool(self.separation_detected),
        }


def _log_likelihood(design: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = design @ beta
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def fit_logistic(data: Dataset, tol: float = 1e-8, max_iter: int = 100) -> FitReport:
    """Bernoulli MLE with intercept by iteratively reweighted least squares.

    Converged when the coefficient step max-norm drops below `tol` or the
    gradient max-norm below 1e-6.  Runaway coefficients (|beta| > 30) are
    treated as separation and reported, not raised.
    """
    y = data.outcomes.astype(float)
    design = np.hstack([np.ones((data.n, 1)), data.covariates])
    k = design.shape[1]
    if data.n <= k:
        raise ValueError(f"need more than {k} rows to fit {k} coefficients")

    beta = np.zeros(k)
    loglik = _log_likelihood(design, y, beta)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = expit(design @ beta)
        grad = design.T @ (y - mu)
        if np.max(np.abs(grad)) <= GRADIENT_TOL:
            return FitReport(beta, loglik, iterations - 1, converged=True)
        w = np.clip(mu * (1.0 - mu), 1e-12, None)
        hessian = design.T @ (w[:, None] * design)
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            return FitReport(beta, loglik, iterations, converged=False, separation_detected=True)

        # step-halving keeps the log-likelihood non-decreasing
        halvings = 0
        candidate = beta + step
        new_loglik = _log_likelihood(design, y, candidate)
        while new_loglik < loglik and halvings < MAX_STEP_HALVINGS:
            step = 0.5 * step
            candidate = beta + step
            new_loglik = _log_likelihood(design, y, candidate)
            halvings += 1
        if new_loglik < loglik:
            return FitReport(beta, loglik, iterations, converged=False)
        beta, loglik = candidate, new_loglik

        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            return FitReport(beta, loglik, iterations, converged=False, separation_detected=True)
        if np.max(np.abs(step)) < tol:
            return FitReport(beta, loglik, iterations, converged=True)
    return FitReport(beta, loglik, max_iter, converged=False)


def select_holdout(n: int, fraction: float, seed: RngSeed) -> np.ndarray:
    """Uniform without-replacement holdout indices, sorted for reproducibility."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("holdout fraction must lie in (0, 1]")
    size = min(max(int(round(fraction * n)), 1), n)
    idx = seed.generator().permutation(n)[:size]
    return np.sort(idx)


def fit_on_holdout(
    data: Dataset, holdout_fraction: float, seed: RngSeed, tol: float = 1e-8, max_iter: int = 100
) -> tuple[FitReport, np.ndarray]:
    """Logistic fit restricted to the held-out (never-intervened) rows.

    The selection is seeded so the epoch engine and this fit agree on which
    rows were shielded from intervention.  Returns the fit and the indices
    for audit.
    """
    if holdout_fraction <= 0.0 or holdout_fraction > 1.0:
        raise ValueError("holdout fraction must lie in (0, 1]")
    idx = select_holdout(data.n, holdout_fraction, seed)
    k = data.covariates.shape[1] + 1
    if len(idx) < k + 1:
        raise ValueError(f"holdout of {len(idx)} rows cannot support {k} coefficients")
    report = fit_logistic(data.subset(idx), tol=tol, max_iter=max_iter)
    return report, idx


def score_from_fit(report: FitReport) -> LogisticScore:
    return report.score()


def mechanism_from_fit(report: FitReport, dims: Dimensions) -> LogisticLinear:
    """Treat a fitted logistic score as an estimate of the outcome mechanism."""
    beta = report.coefficients
    if len(beta) != 1 + dims.p_s + dims.p_a:
        raise ValueError("coefficient length does not match the observed dimensions")
    return LogisticLinear(
        coef_s=beta[1 : 1 + dims.p_s],
        coef_a=beta[1 + dims.p_s :],
        intercept=float(beta[0]),
        steepness=1.0,
    )
