"""Model definition types: template variables, transition kernels,
structural distributions, priors, whole RBN specifications and PCFGs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

NON_TERMINAL = "non-terminal"
TERMINAL = "terminal"
STRUCTURAL = "structural"
VARIABLE_KINDS = (NON_TERMINAL, TERMINAL, STRUCTURAL)

DISCRETE = "discrete"
GAUSSIAN = "gaussian"


def _ro(a, ndmin: int = 0) -> np.ndarray:
    a = np.array(a, dtype=float, ndmin=ndmin)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Categorical:
    cardinality: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def size(self) -> int:
        return self.cardinality

    def label(self, value: int) -> str:
        if self.labels is not None and len(self.labels) == self.cardinality:
            return self.labels[value]
        return str(value)


@dataclass(frozen=True)
class Continuous:
    dimension: int

    @property
    def size(self) -> int:
        return self.dimension


Domain = Union[Categorical, Continuous]


@dataclass(frozen=True)
class TemplateVariable:
    id: str
    kind: str
    domain: Domain

    @property
    def categorical(self) -> bool:
        return isinstance(self.domain, Categorical)


@dataclass(frozen=True, eq=False)
class CategoricalKernel:
    """Joint table ``p(v_1, ..., v_eta | x)`` of shape ``(K_x, K_v1, ..., K_veta)``."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", _ro(self.table))


@dataclass(frozen=True, eq=False)
class LinearGaussianKernel:
    """Each target ``v_m ~ N(x, covs[m])``; the first target is additionally
    rotated by a cyclic transposition ``T_tau`` with ``tau ~ transposition_weights``
    when weights are given."""

    covs: tuple[np.ndarray, ...]
    transposition_weights: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "covs", tuple(_ro(c, ndmin=2) for c in self.covs))
        if self.transposition_weights is not None:
            object.__setattr__(self, "transposition_weights", _ro(self.transposition_weights, ndmin=1))


@dataclass(frozen=True, eq=False)
class MultiTerminalKernel:
    """Emits ``1 + Poisson(rate)`` i.i.d. observations ``y ~ N(x, cov)``."""

    cov: np.ndarray
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "cov", _ro(self.cov, ndmin=2))
        object.__setattr__(self, "rate", float(self.rate))


Kernel = Union[CategoricalKernel, LinearGaussianKernel, MultiTerminalKernel]


@dataclass(frozen=True, eq=False)
class Transition:
    source: str
    targets: tuple[str, ...]
    kernel: Kernel
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def arity(self) -> int:
        return len(self.targets)


@dataclass(frozen=True, eq=False)
class StructuralDistribution:
    """Transition-selection weights of one non-terminal.

    Columns follow the order in which the owner's transitions appear in
    ``RbnSpec.transitions``.  Discrete owners carry one row per value
    (shape ``(K, T)``); continuous owners a single constant vector ``(T,)``.
    """

    owner: str
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _ro(self.weights))


@dataclass(frozen=True, eq=False)
class CategoricalPrior:
    variable: str
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _ro(self.probs, ndmin=1))


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    variable: str
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _ro(self.mean, ndmin=1))
        object.__setattr__(self, "cov", _ro(self.cov, ndmin=2))


Prior = Union[CategoricalPrior, GaussianPrior]


@dataclass(frozen=True, eq=False)
class RbnSpec:
    variables: tuple[TemplateVariable, ...]
    transitions: tuple[Transition, ...]
    structural: tuple[StructuralDistribution, ...]
    prior: Prior
    kind: str = DISCRETE
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "structural", tuple(self.structural))
        object.__setattr__(self, "_index", {v.id: v for v in self.variables})

    @property
    def start(self) -> str:
        return self.prior.variable

    def variable(self, vid: str) -> TemplateVariable:
        return self._index[vid]

    def has_variable(self, vid: str) -> bool:
        return vid in self._index

    def ids(self, kind: str) -> list[str]:
        return [v.id for v in self.variables if v.kind == kind]

    @property
    def nonterminals(self) -> list[str]:
        return self.ids(NON_TERMINAL)

    @property
    def terminals(self) -> list[str]:
        return self.ids(TERMINAL)

    def transitions_from(self, vid: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == vid]

    def structural_for(self, vid: str) -> StructuralDistribution | None:
        for s in self.structural:
            if s.owner == vid:
                return s
        return None

    def structural_weights(self, vid: str) -> np.ndarray:
        """Weights as a ``(K, T)`` table (a single row for continuous owners)."""
        w = self.structural_for(vid).weights
        return w if w.ndim == 2 else w[None, :]

    def is_cnf(self) -> bool:
        for t in self.transitions:
            kinds = [self.variable(v).kind for v in t.targets]
            binary = t.arity == 2 and kinds == [NON_TERMINAL, NON_TERMINAL]
            unary_terminal = t.arity == 1 and kinds == [TERMINAL]
            if not (binary or unary_terminal):
                return False
        return True


@dataclass(frozen=True)
class Pcfg:
    """Weighted grammar; ``rules`` maps ``(lhs, rhs)`` to a non-negative weight."""

    nonterminals: tuple[str, ...]
    terminals: tuple[str, ...]
    start: str
    rules: dict

    def __post_init__(self):
        object.__setattr__(self, "nonterminals", tuple(self.nonterminals))
        object.__setattr__(self, "terminals", tuple(self.terminals))
        rules = {(lhs, tuple(rhs)): float(w) for (lhs, rhs), w in self.rules.items()}
        object.__setattr__(self, "rules", rules)

    def rules_from(self, lhs: str) -> dict:
        return {rhs: w for (a, rhs), w in self.rules.items() if a == lhs}

    def normalized(self) -> dict:
        totals: dict[str, float] = {}
        for (lhs, _), w in self.rules.items():
            totals[lhs] = totals.get(lhs, 0.0) + w
        return {(lhs, rhs): w / totals[lhs] for (lhs, rhs), w in self.rules.items() if totals[lhs] > 0}
