"""Invariant checks for RBN specifications."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rbn.model.types import (
    DISCRETE,
    GAUSSIAN,
    NON_TERMINAL,
    STRUCTURAL,
    TERMINAL,
    VARIABLE_KINDS,
    Categorical,
    CategoricalKernel,
    CategoricalPrior,
    Continuous,
    GaussianPrior,
    LinearGaussianKernel,
    MultiTerminalKernel,
    RbnSpec,
)

SUM_TOL = 1e-12


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __len__(self) -> int:
        return len(self.violations)

    def add(self, msg: str) -> None:
        self.violations.append(msg)


def _is_pd(c: np.ndarray) -> bool:
    if c.ndim != 2 or c.shape[0] != c.shape[1] or not np.all(np.isfinite(c)):
        return False
    if np.abs(c - c.T).max() > 1e-12 * max(np.abs(c).max(), 1e-300):
        return False
    return bool(np.linalg.eigvalsh(c).min() > 0)


def _check_simplex(rep: ValidationReport, what: str, a: np.ndarray, axis=-1) -> None:
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        rep.add(f"{what}: entries must be finite and non-negative")
        return
    sums = a.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > SUM_TOL):
        rep.add(f"{what}: not normalized (sums {np.round(np.ravel(sums), 12).tolist()})")


def validate_spec(spec: RbnSpec) -> ValidationReport:
    rep = ValidationReport()
    ids = [v.id for v in spec.variables]
    seen = set()
    for vid in ids:
        if vid in seen:
            rep.add(f"duplicate variable id {vid!r}")
        seen.add(vid)
    if spec.kind not in (DISCRETE, GAUSSIAN):
        rep.add(f"unknown model kind {spec.kind!r}")

    for v in spec.variables:
        if v.kind not in VARIABLE_KINDS:
            rep.add(f"variable {v.id!r}: unknown kind {v.kind!r}")
        if isinstance(v.domain, Categorical):
            if v.domain.cardinality < 1:
                rep.add(f"variable {v.id!r}: cardinality must be >= 1")
        elif isinstance(v.domain, Continuous):
            if v.domain.dimension < 1:
                rep.add(f"variable {v.id!r}: dimension must be >= 1")
            if v.kind == STRUCTURAL:
                rep.add(f"variable {v.id!r}: structural variables must be categorical")
        else:
            rep.add(f"variable {v.id!r}: unknown domain")

    def size(vid):
        return spec.variable(vid).domain.size

    for idx, t in enumerate(spec.transitions):
        name = t.id or f"transition[{idx}]"
        if t.arity < 1:
            rep.add(f"{name}: epsilon production (no targets)")
            continue
        unresolved = [v for v in (t.source, *t.targets) if not spec.has_variable(v)]
        if unresolved:
            for v in unresolved:
                rep.add(f"{name}: unresolved id {v!r}")
            continue
        src = spec.variable(t.source)
        if src.kind != NON_TERMINAL:
            rep.add(f"{name}: source {t.source!r} is not a non-terminal")
        for v in t.targets:
            if spec.variable(v).kind == STRUCTURAL:
                rep.add(f"{name}: target {v!r} is a structural variable")
        k = t.kernel
        if isinstance(k, CategoricalKernel):
            if not all(spec.variable(v).categorical for v in (t.source, *t.targets)):
                rep.add(f"{name}: categorical kernel on continuous variables")
                continue
            want = (size(t.source), *(size(v) for v in t.targets))
            if k.table.shape != want:
                rep.add(f"{name}: table shape {k.table.shape}, expected {want}")
                continue
            _check_simplex(rep, f"{name} kernel", k.table.reshape(want[0], -1))
        elif isinstance(k, LinearGaussianKernel):
            if len(k.covs) != t.arity:
                rep.add(f"{name}: {len(k.covs)} covariances for {t.arity} targets")
            d = src.domain.size
            for m, c in enumerate(k.covs):
                if c.shape != (d, d) or not _is_pd(c):
                    rep.add(f"{name}: covariance {m} is not symmetric positive definite")
            if k.transposition_weights is not None:
                w = k.transposition_weights
                if w.shape != (d,):
                    rep.add(f"{name}: transposition weights must have length {d}")
                else:
                    _check_simplex(rep, f"{name} transposition weights", w)
        elif isinstance(k, MultiTerminalKernel):
            d = src.domain.size
            if t.arity != 1 or spec.variable(t.targets[0]).kind != TERMINAL:
                rep.add(f"{name}: multi-terminal kernel needs exactly one terminal target")
            if k.cov.shape != (d, d) or not _is_pd(k.cov):
                rep.add(f"{name}: covariance is not symmetric positive definite")
            if not (np.isfinite(k.rate) and k.rate >= 0):
                rep.add(f"{name}: Poisson rate must be non-negative")
        else:
            rep.add(f"{name}: unknown kernel type")

    for nt in spec.nonterminals:
        owned = [s for s in spec.structural if s.owner == nt]
        if len(owned) != 1:
            rep.add(f"non-terminal {nt!r} has {len(owned)} structural distributions (expected 1)")
            continue
        n_t = len(spec.transitions_from(nt))
        if n_t == 0:
            rep.add(f"non-terminal {nt!r} has no transitions")
        w = owned[0].weights
        var = spec.variable(nt)
        if var.categorical:
            w2 = w if w.ndim == 2 else w[None, :]
            if w2.shape[-1] != n_t or (w.ndim == 2 and w.shape[0] != var.domain.size):
                rep.add(f"structural weights of {nt!r}: shape {w.shape} does not match transitions")
                continue
        elif w.ndim != 1 or w.shape[0] != n_t:
            rep.add(f"structural weights of {nt!r}: shape {w.shape} does not match {n_t} transitions")
            continue
        _check_simplex(rep, f"structural weights of {nt!r}", w)
    for s in spec.structural:
        if not spec.has_variable(s.owner) or spec.variable(s.owner).kind != NON_TERMINAL:
            rep.add(f"structural distribution owner {s.owner!r} is not a non-terminal")

    p = spec.prior
    if not spec.has_variable(p.variable):
        rep.add(f"prior: unresolved id {p.variable!r}")
    elif spec.variable(p.variable).kind != NON_TERMINAL:
        rep.add(f"prior variable {p.variable!r} is not a non-terminal")
    else:
        var = spec.variable(p.variable)
        if isinstance(p, CategoricalPrior):
            if not var.categorical or p.probs.shape != (var.domain.size,):
                rep.add("prior: probability vector does not match the start variable")
            else:
                _check_simplex(rep, "prior", p.probs)
        elif isinstance(p, GaussianPrior):
            d = var.domain.size
            if var.categorical or p.mean.shape != (d,):
                rep.add("prior: mean does not match the start variable")
            if p.cov.shape != (d, d) or not _is_pd(p.cov):
                rep.add("prior: covariance is not symmetric positive definite")
        else:
            rep.add("prior: unknown prior type")
    return rep
