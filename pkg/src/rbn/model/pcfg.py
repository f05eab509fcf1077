"""Conversions between PCFGs and discrete RBNs."""

from __future__ import annotations

import itertools

import numpy as np

from rbn.errors import ContinuousVariable, NotCnf
from rbn.model.types import (
    DISCRETE,
    NON_TERMINAL,
    TERMINAL,
    Categorical,
    CategoricalKernel,
    CategoricalPrior,
    Pcfg,
    RbnSpec,
    StructuralDistribution,
    TemplateVariable,
    Transition,
)

START_SYMBOL = "<S>"


def abstract_pcfg(g: Pcfg) -> RbnSpec:
    """Discrete RBN with one non-terminal variable ``x`` (values = non-terminals)
    and one terminal variable ``y`` (values = terminals).

    A start symbol whose rules are all unary ``S -> A`` (and which never occurs
    on a right-hand side) is turned into the prior over ``x`` instead.
    """
    nts, ts = list(g.nonterminals), list(g.terminals)
    nt_set, t_set = set(nts), set(ts)
    if g.start not in nt_set:
        raise NotCnf(f"start symbol {g.start!r} is not a non-terminal")

    start_rules = g.rules_from(g.start)
    unary_start = bool(start_rules) and all(len(r) == 1 and r[0] in nt_set for r in start_rules)
    if unary_start and any(g.start in rhs for (_, rhs) in g.rules):
        unary_start = False
    values = [a for a in nts if a != g.start] if unary_start else nts
    index = {a: i for i, a in enumerate(values)}
    tindex = {b: i for i, b in enumerate(ts)}
    k, m = len(values), len(ts)

    binary = np.zeros((k, k, k))
    term = np.zeros((k, m))
    prior = np.zeros(k)
    for (lhs, rhs), w in g.rules.items():
        if w < 0 or not np.isfinite(w):
            raise NotCnf(f"rule {lhs} -> {' '.join(rhs)} has invalid weight {w}")
        if unary_start and lhs == g.start:
            prior[index[rhs[0]]] += w
        elif len(rhs) == 2 and rhs[0] in index and rhs[1] in index and lhs in index:
            binary[index[lhs], index[rhs[0]], index[rhs[1]]] += w
        elif len(rhs) == 1 and rhs[0] in t_set and lhs in index:
            term[index[lhs], tindex[rhs[0]]] += w
        else:
            raise NotCnf(f"rule {lhs} -> {' '.join(rhs)} is not in CNF")
    if unary_start:
        if prior.sum() <= 0:
            raise NotCnf("start rules have zero total weight")
        prior /= prior.sum()
    else:
        prior[index[g.start]] = 1.0

    n_mass = binary.reshape(k, -1).sum(axis=1)
    t_mass = term.sum(axis=1)
    total = n_mass + t_mass
    structural = np.full((k, 2), 0.5)
    ok = total > 0
    structural[ok, 0] = n_mass[ok] / total[ok]
    structural[ok, 1] = t_mass[ok] / total[ok]
    p_n = np.full((k, k, k), 1.0 / max(k * k, 1))
    p_n[n_mass > 0] = binary[n_mass > 0] / n_mass[n_mass > 0, None, None]
    p_t = np.full((k, m), 1.0 / max(m, 1))
    p_t[t_mass > 0] = term[t_mass > 0] / t_mass[t_mass > 0, None]

    x = TemplateVariable("x", NON_TERMINAL, Categorical(k, tuple(values)))
    y = TemplateVariable("y", TERMINAL, Categorical(m, tuple(ts)))
    transitions = (
        Transition("x", ("x", "x"), CategoricalKernel(p_n), id="N"),
        Transition("x", ("y",), CategoricalKernel(p_t), id="T"),
    )
    return RbnSpec(
        (x, y),
        transitions,
        (StructuralDistribution("x", structural),),
        CategoricalPrior("x", prior),
        kind=DISCRETE,
    )


def _symbol_names(spec: RbnSpec, kind: str) -> dict:
    out = {}
    for v in spec.variables:
        if v.kind != kind:
            continue
        out[v.id] = [v.domain.label(i) for i in range(v.domain.size)]
    return out


def rbn_to_pcfg(spec: RbnSpec) -> Pcfg:
    """Grammar over the concatenated value ranges of all non-terminal and
    terminal variables, plus a fresh start symbol expanding to the prior."""
    for v in spec.variables:
        if not v.categorical:
            raise ContinuousVariable(f"variable {v.id!r} is continuous")
    labels = {**_symbol_names(spec, NON_TERMINAL), **_symbol_names(spec, TERMINAL)}
    flat = [lab for labs in labels.values() for lab in labs]
    unique = len(set(flat)) == len(flat) and START_SYMBOL not in flat
    names = {}
    for vid, labs in labels.items():
        names[vid] = labs if unique else [f"{vid}.{lab}" for lab in labs]

    rules: dict = {}

    def add(lhs, rhs, w):
        if w > 0:
            key = (lhs, tuple(rhs))
            rules[key] = rules.get(key, 0.0) + float(w)

    for a, p in enumerate(spec.prior.probs):
        add(START_SYMBOL, (names[spec.start][a],), p)
    for nt in spec.nonterminals:
        weights = spec.structural_weights(nt)
        for pos, t in enumerate(spec.transitions_from(nt)):
            table = t.kernel.table
            for a in range(table.shape[0]):
                s = weights[a, pos] if weights.shape[0] > 1 else weights[0, pos]
                if s <= 0:
                    continue
                for combo in itertools.product(*(range(n) for n in table.shape[1:])):
                    w = s * table[(a, *combo)]
                    rhs = [names[v][c] for v, c in zip(t.targets, combo)]
                    add(names[nt][a], rhs, w)
    nonterminals = [START_SYMBOL] + [s for v in spec.nonterminals for s in names[v]]
    terminals = [s for v in spec.terminals for s in names[v]]
    return Pcfg(nonterminals, terminals, START_SYMBOL, rules)
