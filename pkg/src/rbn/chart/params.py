"""Parameters of a Gaussian RBN in CNF (optionally with multi-terminal leaves
and cyclic transpositions on the left child)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from rbn.errors import ValidationError
from rbn.model.types import (
    GAUSSIAN,
    NON_TERMINAL,
    TERMINAL,
    Continuous,
    GaussianPrior,
    LinearGaussianKernel,
    MultiTerminalKernel,
    RbnSpec,
    StructuralDistribution,
    TemplateVariable,
    Transition,
)


def _mat(a, d: int) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a * np.eye(d)
    elif a.ndim == 1:
        a = np.diag(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GrbnParams:
    """Scalars/vectors are promoted: a scalar covariance means ``s * I`` and a
    vector covariance means ``diag(v)``."""

    prior_mean: np.ndarray
    prior_cov: np.ndarray
    left_cov: np.ndarray
    right_cov: np.ndarray
    term_cov: np.ndarray
    p_term: float
    transposition_weights: np.ndarray | None = None
    rate: float = 0.0
    multi_terminal: bool = False
    transpositions: bool = False

    def __post_init__(self):
        mean = np.array(self.prior_mean, dtype=float, ndmin=1)
        mean.flags.writeable = False
        d = mean.size
        object.__setattr__(self, "prior_mean", mean)
        for name in ("prior_cov", "left_cov", "right_cov", "term_cov"):
            object.__setattr__(self, name, _mat(getattr(self, name), d))
        w = self.transposition_weights
        if w is None:
            w = np.zeros(d)
            w[0] = 1.0
        w = np.array(w, dtype=float, ndmin=1)
        w.flags.writeable = False
        object.__setattr__(self, "transposition_weights", w)
        object.__setattr__(self, "p_term", float(self.p_term))
        object.__setattr__(self, "rate", float(self.rate))
        problems = self.problems()
        if problems:
            raise ValidationError("; ".join(problems))

    @property
    def dim(self) -> int:
        return self.prior_mean.size

    def problems(self) -> list[str]:
        d = self.dim
        out = []
        for name in ("prior_cov", "left_cov", "right_cov", "term_cov"):
            c = getattr(self, name)
            if c.shape != (d, d):
                out.append(f"{name} has shape {c.shape}, expected {(d, d)}")
                continue
            if not np.all(np.isfinite(c)) or np.abs(c - c.T).max() > 1e-12 * max(np.abs(c).max(), 1e-300):
                out.append(f"{name} is not symmetric")
                continue
            if np.linalg.eigvalsh(c).min() <= 0:
                out.append(f"{name} is not positive definite")
        if not np.all(np.isfinite(self.prior_mean)):
            out.append("prior_mean is not finite")
        if not 0.0 < self.p_term < 1.0:
            out.append(f"p_term={self.p_term} outside (0, 1)")
        w = self.transposition_weights
        if w.shape != (d,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            out.append("transposition weights are not a probability vector of length D")
        if not (np.isfinite(self.rate) and self.rate >= 0):
            out.append(f"rate={self.rate} must be a finite non-negative number")
        return out

    def active_taus(self) -> np.ndarray:
        """Transpositions with non-zero weight (only ``0`` when disabled)."""
        if not self.transpositions:
            return np.array([0])
        return np.flatnonzero(self.transposition_weights > 0)

    def log_tau_weights(self) -> np.ndarray:
        if not self.transpositions:
            return np.zeros(1)
        return np.log(self.transposition_weights[self.active_taus()])

    def with_(self, **changes) -> "GrbnParams":
        return replace(self, **changes)

    def to_spec(self) -> RbnSpec:
        d = self.dim
        x = TemplateVariable("x", NON_TERMINAL, Continuous(d))
        y = TemplateVariable("y", TERMINAL, Continuous(d))
        w = self.transposition_weights if self.transpositions else None
        split = Transition("x", ("x", "x"), LinearGaussianKernel((self.left_cov, self.right_cov), w), id="split")
        if self.multi_terminal:
            term_kernel = MultiTerminalKernel(self.term_cov, self.rate)
        else:
            term_kernel = LinearGaussianKernel((self.term_cov,))
        term = Transition("x", ("y",), term_kernel, id="emit")
        structural = StructuralDistribution("x", np.array([1.0 - self.p_term, self.p_term]))
        prior = GaussianPrior("x", self.prior_mean, self.prior_cov)
        return RbnSpec((x, y), (split, term), (structural,), prior, kind=GAUSSIAN)

    @classmethod
    def from_spec(cls, spec: RbnSpec) -> "GrbnParams":
        """Recognise the single-variable CNF Gaussian shape produced by ``to_spec``."""
        if spec.kind != GAUSSIAN or not isinstance(spec.prior, GaussianPrior):
            raise ValidationError("not a Gaussian RBN specification")
        x = spec.prior.variable
        ts = spec.transitions_from(x)
        split = [t for t in ts if t.arity == 2]
        term = [t for t in ts if t.arity == 1]
        if len(split) != 1 or len(term) != 1 or len(ts) != 2 or len(spec.transitions) != 2:
            raise ValidationError("Gaussian RBN must have exactly one binary and one terminal transition")
        split, term = split[0], term[0]
        if split.targets != (x, x) or not isinstance(split.kernel, LinearGaussianKernel):
            raise ValidationError("binary transition must be linear-Gaussian x -> (x, x)")
        if spec.variable(term.targets[0]).kind != TERMINAL:
            raise ValidationError("unary transition must target a terminal variable")
        weights = spec.structural_weights(x)[0]
        p_term = float(weights[ts.index(term)])
        kw = split.kernel.transposition_weights
        if isinstance(term.kernel, MultiTerminalKernel):
            term_cov, rate, multi = term.kernel.cov, term.kernel.rate, True
        elif isinstance(term.kernel, LinearGaussianKernel):
            term_cov, rate, multi = term.kernel.covs[0], 0.0, False
        else:
            raise ValidationError("unsupported terminal kernel")
        return cls(
            prior_mean=spec.prior.mean,
            prior_cov=spec.prior.cov,
            left_cov=split.kernel.covs[0],
            right_cov=split.kernel.covs[1],
            term_cov=term_cov,
            p_term=p_term,
            transposition_weights=kw,
            rate=rate,
            multi_terminal=multi,
            transpositions=kw is not None,
        )
