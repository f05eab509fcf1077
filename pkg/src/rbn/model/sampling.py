"""Ancestral sampling of derivations and observation sequences."""

from __future__ import annotations

import numpy as np

from rbn.errors import BudgetExceeded, ValidationError
from rbn.model.tree import Tree, TreeNode
from rbn.model.types import (
    NON_TERMINAL,
    CategoricalKernel,
    CategoricalPrior,
    GaussianPrior,
    LinearGaussianKernel,
    MultiTerminalKernel,
    RbnSpec,
)

DEFAULT_MAX_NODES = 10_000


class _TooLong(Exception):
    pass


def _as_spec(model) -> RbnSpec:
    if isinstance(model, RbnSpec):
        return model
    from rbn.chart.params import GrbnParams

    if isinstance(model, GrbnParams):
        return model.to_spec()
    raise TypeError(f"cannot sample from {type(model).__name__}")


def _terminal_offsets(spec: RbnSpec) -> dict:
    out, off = {}, 0
    for v in spec.terminals:
        out[v] = off
        off += spec.variable(v).domain.size
    return out


def _draw_gaussian(rng: np.random.Generator, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    return mean + chol @ rng.standard_normal(mean.size)


class _Sampler:
    def __init__(self, spec: RbnSpec, rng: np.random.Generator, max_nodes: int, max_obs: int | None):
        self.spec = spec
        self.rng = rng
        self.max_nodes = max_nodes
        self.max_obs = max_obs
        self.offsets = _terminal_offsets(spec)
        self.trans = {v: spec.transitions_from(v) for v in spec.nonterminals}
        self.weights = {v: spec.structural_weights(v) for v in spec.nonterminals}
        self._chol: dict = {}

    def chol(self, cov: np.ndarray) -> np.ndarray:
        key = id(cov)
        if key not in self._chol:
            self._chol[key] = (cov, np.linalg.cholesky(cov))
        return self._chol[key][1]

    def root_value(self):
        p = self.spec.prior
        if isinstance(p, CategoricalPrior):
            return int(self.rng.choice(p.probs.size, p=p.probs))
        if isinstance(p, GaussianPrior):
            return _draw_gaussian(self.rng, p.mean, self.chol(p.cov))
        raise ValidationError("unknown prior type")

    def expand(self, var: str, value):
        """Pick a transition and draw target values: (targets, values, tau, counts)."""
        rng = self.rng
        w = self.weights[var]
        row = w[value] if w.shape[0] > 1 else w[0]
        t_idx = int(rng.choice(row.size, p=row / row.sum()))
        t = self.trans[var][t_idx]
        k = t.kernel
        if isinstance(k, CategoricalKernel):
            probs = k.table[value].ravel()
            flat = int(rng.choice(probs.size, p=probs / probs.sum()))
            vals = [int(v) for v in np.unravel_index(flat, k.table.shape[1:])]
            return t.targets, vals, None, None
        if isinstance(k, LinearGaussianKernel):
            tau = None
            if k.transposition_weights is not None:
                tw = k.transposition_weights
                tau = int(rng.choice(tw.size, p=tw / tw.sum()))
            vals = []
            for m, cov in enumerate(k.covs):
                mean = np.roll(value, -tau) if (m == 0 and tau) else value
                vals.append(_draw_gaussian(rng, mean, self.chol(cov)))
            return t.targets, vals, tau, None
        if isinstance(k, MultiTerminalKernel):
            count = 1 + int(rng.poisson(k.rate))
            ch = self.chol(k.cov)
            vals = [_draw_gaussian(rng, value, ch) for _ in range(count)]
            return t.targets * count, vals, None, count
        raise ValidationError(f"unsupported kernel {type(k).__name__}")

    def run(self):
        spec = self.spec
        # nodes: [var, value, tau, children(list of node ids), terminal]
        nodes = [[spec.start, self.root_value(), None, [], False]]
        stack = [0]
        n_obs = 0
        while stack:
            nid = stack.pop()
            var, value = nodes[nid][0], nodes[nid][1]
            targets, vals, tau, _ = self.expand(var, value)
            nodes[nid][2] = tau
            kids = []
            for v, x in zip(targets, vals):
                terminal = spec.variable(v).kind != NON_TERMINAL
                nodes.append([v, x, None, [], terminal])
                kids.append(len(nodes) - 1)
                if terminal:
                    n_obs += 1
            if len(nodes) > self.max_nodes:
                raise BudgetExceeded(f"derivation exceeded {self.max_nodes} nodes")
            if self.max_obs is not None and n_obs > self.max_obs:
                raise _TooLong
            nodes[nid][3] = kids
            stack.extend(k for k in reversed(kids) if not nodes[k][4])
        return self.build(nodes)

    def build(self, nodes):
        # in-order positions of terminals, then spans bottom-up
        order, stack = [], [0]
        while stack:
            nid = stack.pop()
            order.append(nid)
            stack.extend(reversed(nodes[nid][3]))
        start = {}
        pos = 0
        obs = []
        for nid in order:
            start[nid] = pos
            if nodes[nid][4]:
                var, x = nodes[nid][0], nodes[nid][1]
                obs.append(x if isinstance(x, np.ndarray) else self.offsets[var] + x)
                pos += 1
        built: dict = {}
        for nid in reversed(order):
            var, x, tau, kids, terminal = nodes[nid]
            if terminal:
                built[nid] = TreeNode(start[nid], start[nid] + 1, x, None, (), var, True)
            else:
                ch = tuple(built[c] for c in kids)
                built[nid] = TreeNode(start[nid], ch[-1].end, x, tau, ch, var, False)
        tree = Tree(built[0], pos)
        if obs and isinstance(obs[0], np.ndarray):
            observations = np.stack(obs)
        else:
            observations = np.array(obs, dtype=int)
        return tree, observations


def sample_with_rng(model, rng: np.random.Generator, max_nodes: int = DEFAULT_MAX_NODES, max_obs: int | None = None):
    return _Sampler(_as_spec(model), rng, max_nodes, max_obs).run()


def sample(model, seed: int, max_nodes: int = DEFAULT_MAX_NODES):
    """Draw one derivation; returns ``(tree, observations)``."""
    return sample_with_rng(model, np.random.default_rng(seed), max_nodes)


def sample_in_window(
    model,
    rng: np.random.Generator,
    min_len: int,
    max_len: int,
    max_attempts: int = 100_000,
    max_nodes: int = DEFAULT_MAX_NODES,
):
    """Rejection-sample whole derivations until the sequence length lies in
    ``[min_len, max_len]``.  Derivations are abandoned as soon as they exceed
    ``max_len`` observations."""
    spec = _as_spec(model)
    if min_len > max_len or max_len < 1:
        raise ValidationError("empty length window")
    for _ in range(max_attempts):
        try:
            tree, obs = _Sampler(spec, rng, max_nodes, max_len).run()
        except (_TooLong, BudgetExceeded):
            continue
        if min_len <= len(obs) <= max_len:
            return tree, obs
    raise BudgetExceeded(f"no sequence within [{min_len}, {max_len}] after {max_attempts} attempts")
