"""Controlled interventions under a budget, and the sequential-decision view.

Instead of refitting the score, the intervention itself is chosen: a
low-dimensional parametric family is searched by grid for the member that
minimises the expected event rate subject to the cost budget, refitting the
mechanism estimate from post-intervention data each epoch.  The same loop is
also exposed as a partially observed decision process whose action is the
deployed score.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .estimators import FitReport, fit_logistic, fit_threshold, mechanism_from_fit
from .evaluation import CostSpec, cost, objective
from .model import (
    CovariateBatch,
    Dimensions,
    DiscreteAtoms,
    Identity,
    Intervention,
    Mechanism,
    Population,
    ScaledLogShift,
    Score,
)
from .sampling import RngSeed, make_dataset, sample_covariates, sample_outcomes

__all__ = [
    "InterventionFamily",
    "scaled_log_shift_family",
    "NoFeasiblePointError",
    "ControlStepResult",
    "control_step",
    "ControlEpochRecord",
    "run_control_loop",
    "Observation",
    "PomdpStep",
    "PomdpEnvironment",
    "RolloutResult",
    "pomdp_rollout",
    "NaiveUpdatePolicy",
    "FixedScorePolicy",
]


@dataclass(frozen=True)
class InterventionFamily:
    """A parametric search space of interventions.

    The zero parameter vector must give the identity intervention, so a zero
    budget is always feasible.
    """

    name: str
    make: Callable[[np.ndarray], Intervention]
    bounds: tuple[tuple[float, float], ...]

    @property
    def n_params(self) -> int:
        return len(self.bounds)


def scaled_log_shift_family(max_strength: float = 2.0) -> InterventionFamily:
    """Log-damping interventions x - theta * log(1 + rho) with theta >= 0."""
    return InterventionFamily(
        name="scaled-log-shift",
        make=lambda theta: ScaledLogShift(float(np.atleast_1d(theta)[0])),
        bounds=((0.0, max_strength),),
    )


class NoFeasiblePointError(RuntimeError):
    """No grid member satisfies the cost budget (cannot happen with theta=0)."""


@dataclass
class ControlStepResult:
    theta: np.ndarray
    objective: float
    cost: float
    intervention: Intervention


def _as_mechanism(f_hat, dims: Dimensions) -> Mechanism:
    if isinstance(f_hat, FitReport):
        return mechanism_from_fit(f_hat, dims)
    return f_hat


def control_step(
    f_hat,
    family: InterventionFamily,
    rho: Score,
    cost_spec: CostSpec,
    mu: Population,
    dims: Dimensions,
    mc_n: int = 20_000,
    grid_points: int = 200,
    seed: RngSeed | None = None,
) -> ControlStepResult:
    """Grid-search the family for the cheapest-objective feasible member.

    Feasibility is hard (cost <= budget, no slack); ties break toward the
    smaller parameter vector.  The same seeded population sample evaluates
    every candidate, so results are deterministic and comparable.
    """
    if dims.p_l != 0:
        raise ValueError("controlled interventions are only supported without a latent block")
    mechanism = _as_mechanism(f_hat, dims)
    seed = seed if seed is not None else RngSeed(0)
    g_l = Identity()

    axes = [np.linspace(lo, hi, grid_points) for lo, hi in family.bounds]
    best: ControlStepResult | None = None
    for theta in product(*axes):
        theta_vec = np.asarray(theta, dtype=float)
        g = family.make(theta_vec)
        c = cost(rho, g, g_l, cost_spec, mu, dims, mc_n=mc_n, seed=seed)
        if c > cost_spec.budget:
            continue
        obj = objective(rho, mechanism, g, g_l, mu, mc_n=mc_n, seed=seed)
        if best is None or obj < best.objective or (
            obj == best.objective and tuple(theta_vec) < tuple(best.theta)
        ):
            best = ControlStepResult(theta_vec, obj, c, g)
    if best is None:
        raise NoFeasiblePointError(
            "no feasible parameter found; the zero vector should always be feasible"
        )
    return best


@dataclass
class ControlEpochRecord:
    epoch: int
    theta: np.ndarray
    fit: FitReport
    objective: float
    cost: float
    mean_outcome: float


def run_control_loop(
    f_true: Mechanism,
    initial_fit: FitReport,
    family: InterventionFamily,
    rho: Score,
    cost_spec: CostSpec,
    mu: Population,
    epochs: int,
    n: int,
    seed: RngSeed,
    mc_n: int = 20_000,
    grid_points: int = 200,
) -> list[ControlEpochRecord]:
    """Inductive controlled-intervention loop with a fixed deployed score.

    Each epoch optimises the intervention against the current mechanism
    estimate, deploys it, observes outcomes, and refits the mechanism by
    regressing outcomes on the post-intervention covariates (which is
    unbiased, since those are exactly the covariates the outcome responds
    to).
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    dims = f_true.dims
    records: list[ControlEpochRecord] = []
    current_fit = initial_fit
    for e in range(1, epochs + 1):
        step = control_step(
            current_fit, family, rho, cost_spec, mu, dims,
            mc_n=mc_n, grid_points=grid_points, seed=seed.split(e, 0),
        )
        batch0 = sample_covariates(mu, dims, n, seed.split(e, 1), epoch=e)
        rho_vals = np.asarray(rho.evaluate(batch0.x_s, batch0.x_a), dtype=float)
        x_a_new = step.intervention.apply(rho_vals, batch0.x_a)
        batch1 = batch0.intervened(x_a_new)
        outcomes = sample_outcomes(f_true, batch1, seed.split(e, 2))

        # regress on t=1 covariates: unbiased for the true mechanism
        post_data = make_dataset(
            CovariateBatch(batch1.x_s, batch1.x_a, batch1.x_l, epoch=e, time=0), outcomes
        )
        current_fit = fit_logistic(post_data)
        records.append(
            ControlEpochRecord(
                epoch=e,
                theta=step.theta,
                fit=current_fit,
                objective=step.objective,
                cost=step.cost,
                mean_outcome=float(outcomes.mean()),
            )
        )
    return records


# ---------------------------------------------------------------------------
# Sequential-decision adapter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    """What the analyst sees after an epoch: t=0 observed covariates and outcomes."""

    x_s: np.ndarray
    x_a: np.ndarray
    outcomes: np.ndarray
    epoch: int


@dataclass
class PomdpStep:
    observation: Observation
    reward: float
    discount: float
    epoch: int

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "reward": self.reward,
            "discount": self.discount,
            "mean_outcome": float(self.observation.outcomes.mean()),
            "n": int(len(self.observation.outcomes)),
        }


@dataclass
class _PomdpState:
    """Full (hidden) state: covariates before and after intervention, outcomes."""

    batch0: object
    batch1: object
    outcomes: np.ndarray
    epoch: int


class PomdpEnvironment:
    """The deployment loop as a partially observed decision process.

    The action is a score function; stepping samples a fresh population
    (independent of the past), intervenes with the action, and reports the
    realised event rate as the reward.  Per-epoch substreams are keyed by the
    epoch index alone, so the next observation depends on the past only
    through the action taken.
    """

    def __init__(
        self,
        f: Mechanism,
        g_a: Intervention,
        mu: Population,
        n: int,
        seed: RngSeed,
        g_l: Intervention | None = None,
        gamma: float = 1.0,
        reward_mode: str = "realized",
    ):
        if not 0.0 < gamma <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if reward_mode not in ("realized", "exact"):
            raise ValueError("reward_mode must be 'realized' or 'exact'")
        if reward_mode == "exact" and not isinstance(mu, DiscreteAtoms):
            raise ValueError("exact rewards need a discrete-atom population")
        self.f = f
        self.g_a = g_a
        self.g_l = g_l if g_l is not None else Identity()
        self.mu = mu
        self.n = n
        self.seed = seed
        self.gamma = gamma
        self.reward_mode = reward_mode
        self._state: _PomdpState | None = None

    @property
    def state(self) -> _PomdpState | None:
        return self._state

    def _observe(self, batch0, outcomes, epoch) -> Observation:
        obs = Observation(batch0.x_s, batch0.x_a, outcomes, epoch)
        # observations never leak latent coordinates or post-intervention values
        assert obs.x_s.shape[1] + obs.x_a.shape[1] == self.f.dims.observed
        return obs

    def reset(self) -> Observation:
        """Epoch 0: no score deployed, no interventions."""
        dims = self.f.dims
        epoch_seed = self.seed.split(0)
        batch0 = sample_covariates(self.mu, dims, self.n, epoch_seed.split(0), epoch=0)
        batch1 = batch0.at_time(1)
        outcomes = sample_outcomes(self.f, batch1, epoch_seed.split(1))
        self._state = _PomdpState(batch0, batch1, outcomes, epoch=0)
        return self._observe(batch0, outcomes, 0)

    def step(self, action: Score) -> PomdpStep:
        """Deploy `action` for the next epoch and observe its consequences."""
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        epoch = self._state.epoch + 1
        dims = self.f.dims
        epoch_seed = self.seed.split(epoch)
        batch0 = sample_covariates(self.mu, dims, self.n, epoch_seed.split(0), epoch=epoch)
        rho_vals = np.asarray(action.evaluate(batch0.x_s, batch0.x_a), dtype=float)
        x_a_new = self.g_a.apply(rho_vals, batch0.x_a)
        x_l_new = self.g_l.apply(rho_vals, batch0.x_l) if dims.p_l else batch0.x_l
        batch1 = batch0.intervened(x_a_new, x_l_new)
        outcomes = sample_outcomes(self.f, batch1, epoch_seed.split(1))

        if self.reward_mode == "exact":
            reward = objective(action, self.f, self.g_a, self.g_l, self.mu, method="exact")
        else:
            reward = float(outcomes.mean())
        self._state = _PomdpState(batch0, batch1, outcomes, epoch)
        return PomdpStep(self._observe(batch0, outcomes, epoch), reward, self.gamma, epoch)


@dataclass
class RolloutResult:
    discounted_return: float
    steps: list[PomdpStep]

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def negated_return(self) -> float:
        """The event is adverse: lower event rate is better."""
        return -self.discounted_return


def pomdp_rollout(policy, env: PomdpEnvironment, horizon: int) -> RolloutResult:
    """Run a policy for `horizon` epochs and accumulate discounted rewards.

    The policy is called with (last observation, step history) and must
    return the score to deploy next.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    obs = env.reset()
    steps: list[PomdpStep] = []
    total = 0.0
    for e in range(1, horizon + 1):
        action = policy(obs, steps)
        step = env.step(action)
        total += env.gamma ** (e - 1) * step.reward
        steps.append(step)
        obs = step.observation
    return RolloutResult(total, steps)


class FixedScorePolicy:
    """Always deploys the same score."""

    def __init__(self, score: Score):
        self.score = score

    def __call__(self, obs: Observation, steps) -> Score:
        return self.score


class NaiveUpdatePolicy:
    """Refits a score to the latest observation and deploys it as-is."""

    def __init__(self, fitter: str = "logistic", p_s: int | None = None):
        if fitter not in ("logistic", "threshold"):
            raise ValueError("fitter must be 'logistic' or 'threshold'")
        self.fitter = fitter
        self.p_s = p_s

    def __call__(self, obs: Observation, steps) -> Score:
        p_s = obs.x_s.shape[1] if self.p_s is None else self.p_s
        batch = CovariateBatch(
            obs.x_s, obs.x_a, np.zeros((len(obs.outcomes), 0)), epoch=obs.epoch, time=0
        )
        data = make_dataset(batch, obs.outcomes)
        if self.fitter == "threshold":
            return fit_threshold(data)
        return fit_logistic(data).score()
