"""Seeded, reproducible sampling of populations, outcomes and training data.

All randomness flows through :class:`RngSeed`, a splittable seed backed by the
counter-based Philox generator, so identical seeds give bit-identical streams
on every platform and parallel call sites can derive independent substreams
instead of sharing mutable generator state.  Gaussian draws use numpy's
ziggurat (`standard_normal`), fixed per release.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CovariateBatch, Dimensions, Mechanism, Population

__all__ = [
    "RngSeed",
    "Dataset",
    "sample_covariates",
    "sample_outcomes",
    "make_dataset",
]


@dataclass(frozen=True)
class RngSeed:
    """A 64-bit seed plus a split path identifying a derived substream."""

    value: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.value) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def split(self, *indices: int) -> "RngSeed":
        """A child seed; distinct index paths give independent streams."""
        return RngSeed(self.value, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.value, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class Dataset:
    """Observed training data for one epoch: (x_s, x_a) columns and outcomes."""

    covariates: np.ndarray
    outcomes: np.ndarray
    epoch: int
    p_s: int

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        y = np.asarray(self.outcomes)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("outcomes must be binary")
        y = y.astype(np.int8)
        if cov.shape[0] != len(y):
            raise ValueError("covariate rows and outcome length differ")
        if cov.shape[0] == 0:
            raise ValueError("empty dataset")
        if not 0 <= self.p_s <= cov.shape[1]:
            raise ValueError("p_s must not exceed the covariate width")
        cov.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "outcomes", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p_a(self) -> int:
        return self.covariates.shape[1] - self.p_s

    @property
    def x_s(self) -> np.ndarray:
        return self.covariates[:, : self.p_s]

    @property
    def x_a(self) -> np.ndarray:
        return self.covariates[:, self.p_s :]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.covariates[indices], self.outcomes[indices], self.epoch, self.p_s)

    def header(self) -> list[str]:
        return (
            [f"s{i + 1}" for i in range(self.p_s)]
            + [f"a{i + 1}" for i in range(self.p_a)]
            + ["y"]
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for row, y in zip(self.covariates, self.outcomes):
                writer.writerow([repr(float(v)) for v in row] + [int(y)])

    @classmethod
    def from_csv(cls, path, p_s: int, epoch: int = 0) -> "Dataset":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        body = rows[1:]
        cov = np.array([[float(v) for v in r[:-1]] for r in body])
        y = np.array([int(r[-1]) for r in body])
        return cls(cov, y, epoch=epoch, p_s=p_s)

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "p_s": self.p_s,
            "covariates": self.covariates.tolist(),
            "outcomes": self.outcomes.tolist(),
        }


def sample_covariates(
    mu: Population, dims: Dimensions, n: int, seed: RngSeed, epoch: int = 0
) -> CovariateBatch:
    """n iid draws from the population at t=0, latent block included."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if mu.dim != dims.total:
        raise ValueError(f"population dimension {mu.dim} != {dims.total}")
    draws = mu.sample(n, seed.generator())
    x_s, x_a, x_l = dims.split(draws)
    return CovariateBatch(x_s, x_a, x_l, epoch=epoch, time=0)


def sample_outcomes(f: Mechanism, states: CovariateBatch, seed: RngSeed) -> np.ndarray:
    """Bernoulli outcomes from post-intervention covariates, one per row."""
    if states.time != 1:
        raise ValueError("outcomes are drawn from post-intervention states (time=1)")
    p = np.asarray(f.probability(states.x_s, states.x_a, states.x_l), dtype=float)
    u = seed.generator().random(len(states))
    return (u < p).astype(np.int8)


def make_dataset(states: CovariateBatch, outcomes: np.ndarray) -> Dataset:
    """Training data as the analyst sees it: latent columns dropped."""
    outcomes = np.asarray(outcomes)
    if len(states) != len(outcomes):
        raise ValueError("states and outcomes lengths differ")
    if len(states) == 0:
        raise ValueError("empty dataset")
    return Dataset(states.observed, outcomes, epoch=states.epoch, p_s=states.dims.p_s)
