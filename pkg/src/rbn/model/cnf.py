"""Conversion of discrete RBNs to Chomsky normal form.

The four rewriting steps are:

1. terminals inside transitions of arity >= 2 are routed through fresh
   pre-terminal non-terminals with a deterministic emission;
2. transitions of arity > 2 are binarized by packing all but the last target
   into a fresh product-valued variable with a deterministic one-hot unpack;
3. and 4. unary non-terminal transitions (self cycles included) are removed by
   folding the unary closure ``(I - U)^-1`` into the remaining transitions.

Steps 3 and 4 are solved jointly in closed form: ``U`` is the substochastic
matrix of unary non-terminal moves over all (variable, value) pairs, so the
geometric series over any number of unary steps is a single linear solve.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from rbn.errors import NonConvergentCycle, NotCnf, ValidationError
from rbn.model.types import (
    DISCRETE,
    NON_TERMINAL,
    TERMINAL,
    Categorical,
    CategoricalKernel,
    RbnSpec,
    StructuralDistribution,
    TemplateVariable,
    Transition,
)

CYCLE_LIMIT = 1.0 - 1e-6


@dataclass
class _T:
    source: str
    targets: tuple
    table: np.ndarray
    weight: np.ndarray  # selection probability per source value
    id: str


def _unpack(spec: RbnSpec) -> tuple[dict, list[_T]]:
    variables = {v.id: v for v in spec.variables}
    trans = []
    counts: dict = {}
    for idx, t in enumerate(spec.transitions):
        if not isinstance(t.kernel, CategoricalKernel):
            raise ValidationError(f"transition {t.id or idx} is not categorical")
        pos = counts.get(t.source, 0)
        counts[t.source] = pos + 1
        w = spec.structural_weights(t.source)[:, pos]
        tid = t.id or f"{t.source}#{pos}"
        trans.append(_T(t.source, tuple(t.targets), np.array(t.kernel.table), np.array(w), tid))
    return variables, trans


def _card(variables: dict, vid: str) -> int:
    return variables[vid].domain.cardinality


def _labels(variables: dict, vid: str) -> list[str]:
    d = variables[vid].domain
    return [d.label(i) for i in range(d.cardinality)]


def _pre_terminals(variables: dict, trans: list[_T]) -> list[_T]:
    out = []
    fresh: dict = {}
    for t in trans:
        if len(t.targets) < 2:
            out.append(t)
            continue
        targets = []
        for v in t.targets:
            if variables[v].kind != TERMINAL:
                targets.append(v)
                continue
            if v not in fresh:
                fid = f"{v}~pre"
                k = _card(variables, v)
                variables[fid] = TemplateVariable(fid, NON_TERMINAL, Categorical(k, tuple(_labels(variables, v))))
                fresh[v] = _T(fid, (v,), np.eye(k), np.ones(k), f"{fid}>{v}")
            targets.append(fresh[v].source)
        t.targets = tuple(targets)
        out.append(t)
    return out + list(fresh.values())


def _binarize(variables: dict, trans: list[_T]) -> list[_T]:
    out = []
    queue = list(trans)
    while queue:
        t = queue.pop(0)
        if len(t.targets) <= 2:
            out.append(t)
            continue
        head = t.targets[:-1]
        sizes = [_card(variables, v) for v in head]
        k = int(np.prod(sizes))
        pid = f"{t.id}~pack"
        labels = ["|".join(p) for p in itertools.product(*(_labels(variables, v) for v in head))]
        variables[pid] = TemplateVariable(pid, NON_TERMINAL, Categorical(k, tuple(labels)))
        packed = t.table.reshape(t.table.shape[0], k, t.table.shape[-1])
        out.append(_T(t.source, (pid, t.targets[-1]), packed, t.weight, t.id))
        unpack = np.eye(k).reshape(k, *sizes)
        queue.insert(0, _T(pid, head, unpack, np.ones(k), f"{pid}>"))
    return out


def _is_unary_nt(variables: dict, t: _T) -> bool:
    return len(t.targets) == 1 and variables[t.targets[0]].kind == NON_TERMINAL


def _fold_unary(variables: dict, trans: list[_T]) -> list[_T]:
    if not any(_is_unary_nt(variables, t) for t in trans):
        return trans
    nts = [v for v in variables if variables[v].kind == NON_TERMINAL]
    offset, total = {}, 0
    for v in nts:
        offset[v] = total
        total += _card(variables, v)
    u = np.zeros((total, total))
    for t in trans:
        if _is_unary_nt(variables, t):
            a, b = offset[t.source], offset[t.targets[0]]
            ka, kb = t.table.shape
            u[a : a + ka, b : b + kb] += t.weight[:, None] * t.table
    rho = np.abs(np.linalg.eigvals(u)).max() if total else 0.0
    if rho >= CYCLE_LIMIT:
        raise NonConvergentCycle(f"unary cycle continuation probability {rho:.9f} is too close to 1")
    closure = np.linalg.solve(np.eye(total) - u, np.eye(total))
    closure[closure < 0] = 0.0

    keep = [t for t in trans if not _is_unary_nt(variables, t)]
    out = []
    for x in nts:
        ox, kx = offset[x], _card(variables, x)
        for y in nts:
            block = closure[ox : ox + kx, offset[y] : offset[y] + _card(variables, y)]
            if not np.any(block > 0):
                continue
            for t in keep:
                if t.source != y:
                    continue
                mass = block * t.weight[None, :]
                w = mass.sum(axis=1)
                if not np.any(w > 0):
                    continue
                flat = t.table.reshape(t.table.shape[0], -1)
                with np.errstate(invalid="ignore", divide="ignore"):
                    table = (mass @ flat) / w[:, None]
                table[w <= 0] = 1.0 / flat.shape[1]
                table /= table.sum(axis=1, keepdims=True)
                tid = t.id if y == x else f"{x}<{t.id}"
                out.append(_T(x, t.targets, table.reshape((kx,) + t.table.shape[1:]), w, tid))
    # renormalize the selection weights per owner
    for x in nts:
        own = [t for t in out if t.source == x]
        if own:
            s = np.sum([t.weight for t in own], axis=0)
            s[s <= 0] = 1.0
            for t in own:
                t.weight = t.weight / s
    return out


def _prune(variables: dict, trans: list[_T], start: str) -> tuple[dict, list[_T]]:
    reach, stack = {start}, [start]
    while stack:
        v = stack.pop()
        for t in trans:
            if t.source == v:
                for w in t.targets:
                    if w not in reach:
                        reach.add(w)
                        stack.append(w)
    variables = {k: v for k, v in variables.items() if k in reach}
    return variables, [t for t in trans if t.source in reach]


def _pack(spec: RbnSpec, variables: dict, trans: list[_T]) -> RbnSpec:
    structural = []
    for v in variables.values():
        if v.kind != NON_TERMINAL:
            continue
        own = [t for t in trans if t.source == v.id]
        w = np.stack([t.weight for t in own], axis=1) if own else np.zeros((v.domain.size, 0))
        structural.append(StructuralDistribution(v.id, w))
    transitions = [Transition(t.source, t.targets, CategoricalKernel(t.table), id=t.id) for t in trans]
    return RbnSpec(tuple(variables.values()), tuple(transitions), tuple(structural), spec.prior, kind=DISCRETE)


def to_cnf(spec: RbnSpec) -> RbnSpec:
    """Equivalent specification with only ``A -> B C`` and ``A -> b`` transitions."""
    if spec.kind != DISCRETE:
        from rbn.chart.params import GrbnParams

        try:
            GrbnParams.from_spec(spec)
        except ValidationError as exc:
            raise NotCnf(f"only CNF Gaussian models are supported: {exc}") from None
        return spec
    for t in spec.transitions:
        if t.arity < 1:
            raise ValidationError("epsilon productions are not supported")
    if spec.is_cnf():
        return spec
    variables, trans = _unpack(spec)
    trans = _pre_terminals(variables, trans)
    trans = _binarize(variables, trans)
    trans = _fold_unary(variables, trans)
    variables, trans = _prune(variables, trans, spec.start)
    return _pack(spec, variables, trans)
