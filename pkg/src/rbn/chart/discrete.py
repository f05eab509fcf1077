"""Exact inside/outside and Viterbi passes for discrete RBNs in CNF.

The non-terminal template variables are flattened into one category axis
(their value ranges concatenated), giving a binary rule tensor
``R[A, B, C]`` and a lexical matrix ``L[A, b]`` that already include the
structural selection probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from rbn.chart.types import DISCRETE_CHART, Chart
from rbn.errors import LengthMismatch, NotCnf, ValidationError
from rbn.model.types import NON_TERMINAL, TERMINAL, CategoricalKernel, CategoricalPrior, RbnSpec


@dataclass(frozen=True, eq=False)
class FlatGrammar:
    symbols: tuple  # (variable id, value) per flattened non-terminal category
    terminal_symbols: tuple  # (variable id, value) per flattened terminal symbol
    binary: np.ndarray  # (K, K, K)
    lexical: np.ndarray  # (K, M)
    prior: np.ndarray  # (K,)

    @property
    def size(self) -> int:
        return len(self.symbols)

    def label(self, a: int) -> str:
        return f"{self.symbols[a][0]}={self.symbols[a][1]}"


def _offsets(spec: RbnSpec, kind: str) -> tuple[dict, list]:
    offsets, symbols, off = {}, [], 0
    for v in spec.variables:
        if v.kind != kind:
            continue
        if not v.categorical:
            raise ValidationError(f"variable {v.id!r} is not categorical")
        offsets[v.id] = off
        symbols.extend((v.id, i) for i in range(v.domain.size))
        off += v.domain.size
    return offsets, symbols


def compile_grammar(spec: RbnSpec) -> FlatGrammar:
    if not spec.is_cnf():
        raise NotCnf("discrete chart inference needs a CNF specification (see to_cnf)")
    if not isinstance(spec.prior, CategoricalPrior):
        raise ValidationError("discrete model needs a categorical prior")
    nt_off, symbols = _offsets(spec, NON_TERMINAL)
    t_off, tsymbols = _offsets(spec, TERMINAL)
    k, m = len(symbols), len(tsymbols)
    binary = np.zeros((k, k, k))
    lexical = np.zeros((k, m))
    for nt in spec.nonterminals:
        weights = spec.structural_weights(nt)
        a0 = nt_off[nt]
        for pos, t in enumerate(spec.transitions_from(nt)):
            if not isinstance(t.kernel, CategoricalKernel):
                raise ValidationError(f"transition {t.id!r} is not categorical")
            table = t.kernel.table * weights[:, pos].reshape((-1,) + (1,) * t.arity)
            ka = table.shape[0]
            if t.arity == 2:
                b0, c0 = nt_off[t.targets[0]], nt_off[t.targets[1]]
                binary[a0 : a0 + ka, b0 : b0 + table.shape[1], c0 : c0 + table.shape[2]] += table
            else:
                b0 = t_off[t.targets[0]]
                lexical[a0 : a0 + ka, b0 : b0 + table.shape[1]] += table
    prior = np.zeros(k)
    s0 = nt_off[spec.start]
    prior[s0 : s0 + spec.prior.probs.size] = spec.prior.probs
    return FlatGrammar(tuple(symbols), tuple(tsymbols), binary, lexical, prior)


def check_observations(g: FlatGrammar, y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1 or y.size < 1:
        raise LengthMismatch("discrete observations must be a non-empty 1-D integer sequence")
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise ValidationError("discrete observations must be integers")
    y = y.astype(int)
    if y.min() < 0 or y.max() >= g.lexical.shape[1]:
        raise ValidationError("observation outside the terminal alphabet")
    return y


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def logsumexp(a, axis=None):
    """Log-sum-exp that maps all ``-inf`` slices to ``-inf`` (no warnings)."""
    a = np.asarray(a, dtype=float)
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - mx), axis=axis, keepdims=True)) + mx
    return out.reshape(())[()] if axis is None else np.squeeze(out, axis=axis)


def _shifted(v: np.ndarray):
    """exp(v - max) along the last axis, with all -inf rows mapped to zeros."""
    mx = v.max(axis=-1, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    return np.exp(v - safe), np.where(np.isfinite(mx), mx, -np.inf)[..., 0]


def inside_pass(g: FlatGrammar, y) -> Chart:
    y = check_observations(g, y)
    n, k = y.size, g.size
    beta = np.full((n + 1, n + 1, k), -np.inf)
    idx = np.arange(n)
    beta[idx, idx + 1] = _log(g.lexical[:, y]).T
    best_j = np.full((n + 1, n + 1), -1)
    used = np.zeros((n + 1, n + 1), dtype=bool)
    used[idx, idx + 1] = True
    score = np.full((n + 1, n + 1), np.nan)
    score[idx, idx + 1] = logsumexp(beta[idx, idx + 1], axis=-1)

    for w in range(2, n + 1):
        m = n - w + 1
        ii = np.arange(m)
        kk = ii + w
        jj = ii[:, None] + np.arange(1, w)[None, :]
        left, lmax = _shifted(beta[ii[:, None], jj])
        right, rmax = _shifted(beta[jj, kk[:, None]])
        mass = np.einsum("abc,xsb,xsc->xsa", g.binary, left, right)
        with np.errstate(invalid="ignore"):
            terms = _log(mass) + (lmax + rmax)[..., None]
        terms = np.where(np.isnan(terms), -np.inf, terms)
        beta[ii, kk] = logsumexp(terms, axis=1)
        per_split = logsumexp(terms, axis=2)
        best = per_split.argmax(axis=1)
        best_j[ii, kk] = ii + 1 + best
        score[ii, kk] = per_split[ii, best]

    chart = Chart(
        n=n,
        kind=DISCRETE_CHART,
        in_log=beta,
        best_j=best_j,
        best_tau=np.zeros((n + 1, n + 1), dtype=int),
        used_terminal=used,
        best_score=score,
        extra={"observations": y},
    )
    return replace(chart, log_likelihood=marginal_likelihood(g, chart))


def marginal_likelihood(g: FlatGrammar, chart: Chart) -> float:
    return float(logsumexp(chart.in_log[0, chart.n] + _log(g.prior)))


def outside_pass(g: FlatGrammar, chart: Chart) -> Chart:
    n, k = chart.n, g.size
    beta = chart.in_log
    alpha = np.full((n + 1, n + 1, k), -np.inf)
    alpha[0, n] = _log(g.prior)
    for w in range(n - 1, 0, -1):
        m = n - w + 1
        n_slot = n - w
        jcell = np.arange(m)[:, None]
        slot = np.arange(n_slot)[None, :]
        right = np.broadcast_to(slot < jcell, (m, n_slot))
        jb = np.broadcast_to(jcell, (m, n_slot))
        sb = np.broadcast_to(slot, (m, n_slot))
        contrib = np.full((m, n_slot, k), -np.inf)

        r_j, r_s = jb[right], sb[right]
        if r_j.size:
            pa, pmax = _shifted(alpha[r_s, r_j + w])
            sib, smax = _shifted(beta[r_s, r_j])
            mass = np.einsum("abc,xa,xb->xc", g.binary, pa, sib)
            contrib[right] = _log(mass) + (pmax + smax)[:, None]

        left = ~right
        l_j, l_s = jb[left], sb[left]
        if l_j.size:
            l_l = w + 1 + l_s
            pa, pmax = _shifted(alpha[l_j, l_l])
            sib, smax = _shifted(beta[l_j + w, l_l])
            mass = np.einsum("abc,xa,xc->xb", g.binary, pa, sib)
            contrib[left] = _log(mass) + (pmax + smax)[:, None]

        contrib = np.where(np.isnan(contrib), -np.inf, contrib)
        ii = np.arange(m)
        alpha[ii, ii + w] = logsumexp(contrib, axis=1)
    return replace(chart, out_log=alpha)


def existence(chart: Chart):
    """``(log_exist, log_posterior)`` over the ``(n+1, n+1[, K])`` grid."""
    joint = chart.in_log + chart.out_log
    with np.errstate(invalid="ignore"):
        log_e = logsumexp(joint, axis=-1)
        post = joint - log_e[..., None]
    log_e = log_e - chart.log_likelihood
    iu = np.tril_indices(chart.n + 1)
    log_e[iu] = -np.inf
    return log_e, post


def viterbi(g: FlatGrammar, y):
    """Max-product CYK over categories.

    Returns ``(log_score, spans)`` where spans maps ``(i, k)`` to
    ``(category, split j or None)`` for the nodes of the best derivation.
    """
    y = check_observations(g, y)
    n, k = y.size, g.size
    log_r = _log(g.binary)
    delta = np.full((n + 1, n + 1, k), -np.inf)
    back = {}
    idx = np.arange(n)
    delta[idx, idx + 1] = _log(g.lexical[:, y]).T
    for w in range(2, n + 1):
        for i in range(n - w + 1):
            kk = i + w
            js = np.arange(i + 1, kk)
            # (split, A, B, C)
            cand = log_r[None] + delta[i, js][:, None, :, None] + delta[js, kk][:, None, None, :]
            flat = cand.transpose(1, 0, 2, 3).reshape(k, -1)
            arg = flat.argmax(axis=1)
            delta[i, kk] = flat[np.arange(k), arg]
            s, b, c = np.unravel_index(arg, (js.size, k, k))
            back[(i, kk)] = (js[s], b, c)
    root_scores = delta[0, n] + _log(g.prior)
    a = int(root_scores.argmax())
    best = float(root_scores[a])
    spans = {}
    stack = [(0, n, a)]
    while stack:
        i, kk, a = stack.pop()
        if kk - i == 1:
            spans[(i, kk)] = (a, None)
            continue
        js, bs, cs = back[(i, kk)]
        j, b, c = int(js[a]), int(bs[a]), int(cs[a])
        spans[(i, kk)] = (a, j)
        stack.append((j, kk, c))
        stack.append((i, j, b))
    return best, spans
