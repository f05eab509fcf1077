"""Chart containers: per-cell messages, backpointers and node posteriors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from rbn.gauss import Gaussian, LogWeightedGaussian

GAUSSIAN_CHART = "gaussian"
DISCRETE_CHART = "discrete"


@dataclass(frozen=True, eq=False)
class DiscreteMessage:
    """Log-probabilities over the flattened non-terminal categories.

    Entries may be ``-inf`` for categories that cannot generate the span.
    """

    log_probs: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


CellMessage = Union[DiscreteMessage, LogWeightedGaussian]


@dataclass(frozen=True)
class SplitRecord:
    j: int | None
    tau: int
    used_terminal: bool
    score: float


@dataclass(frozen=True, eq=False)
class NodePosterior:
    span: tuple[int, int]
    existence_prob: float
    dist: CellMessage


@dataclass(frozen=True, eq=False)
class Chart:
    """Triangular table indexed by half-open spans ``(i, k)``, ``0 <= i < k <= n``.

    Gaussian charts hold ``log_c``/``mean``/``cov`` arrays of shape
    ``(n+1, n+1[, D[, D]])``; discrete charts hold ``log_beta`` of shape
    ``(n+1, n+1, K)``.  Outside fields are ``None`` until the outside pass ran.
    """

    n: int
    kind: str
    in_log_c: np.ndarray | None = None
    in_mean: np.ndarray | None = None
    in_cov: np.ndarray | None = None
    in_log: np.ndarray | None = None
    out_log_c: np.ndarray | None = None
    out_mean: np.ndarray | None = None
    out_cov: np.ndarray | None = None
    out_log: np.ndarray | None = None
    best_j: np.ndarray | None = None
    best_tau: np.ndarray | None = None
    used_terminal: np.ndarray | None = None
    best_score: np.ndarray | None = None
    log_likelihood: float | None = None
    extra: dict = field(default_factory=dict)

    def cells(self):
        for w in range(1, self.n + 1):
            for i in range(self.n - w + 1):
                yield i, i + w

    @property
    def has_outside(self) -> bool:
        return self.out_log_c is not None or self.out_log is not None

    def _check(self, i: int, k: int) -> None:
        if not 0 <= i < k <= self.n:
            raise IndexError(f"span ({i}, {k}) outside chart of length {self.n}")

    def inside(self, i: int, k: int):
        self._check(i, k)
        if self.kind == GAUSSIAN_CHART:
            return LogWeightedGaussian(self.in_log_c[i, k], Gaussian(self.in_mean[i, k], self.in_cov[i, k]))
        return DiscreteMessage(self.in_log[i, k].copy())

    def outside(self, i: int, k: int):
        self._check(i, k)
        if not self.has_outside:
            raise ValueError("outside pass has not been run")
        if self.kind == GAUSSIAN_CHART:
            return LogWeightedGaussian(self.out_log_c[i, k], Gaussian(self.out_mean[i, k], self.out_cov[i, k]))
        return DiscreteMessage(self.out_log[i, k].copy())

    def backpointer(self, i: int, k: int) -> SplitRecord:
        self._check(i, k)
        used = bool(self.used_terminal[i, k])
        return SplitRecord(
            None if used else int(self.best_j[i, k]),
            int(self.best_tau[i, k]),
            used,
            float(self.best_score[i, k]),
        )
