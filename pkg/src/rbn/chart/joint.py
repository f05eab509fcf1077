"""Inference with every latent value fixed: only the structure is summed
(or maximised) over, so all quantities are exact sums of scalars.

A latent assignment ``X`` gives one value per cell ``(i, k)``: an
``(n+1, n+1, D)`` array of vectors for Gaussian models or an
``(n+1, n+1)`` integer array of flattened categories for discrete ones
(entries with ``i >= k`` are ignored).  A dict ``{(i, k): value}`` is also
accepted.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, logsumexp

from rbn import gauss
from rbn.chart.discrete import FlatGrammar
from rbn.chart.params import GrbnParams
from rbn.errors import LengthMismatch, NonFinite, ValidationError


def as_assignment(X, n: int, d: int | None) -> np.ndarray:
    if isinstance(X, dict):
        shape = (n + 1, n + 1) if d is None else (n + 1, n + 1, d)
        out = np.zeros(shape, dtype=int if d is None else float)
        for (i, k), v in X.items():
            out[i, k] = v
        X = out
    X = np.asarray(X)
    want = (n + 1, n + 1) if d is None else (n + 1, n + 1, d)
    if X.shape != want:
        raise LengthMismatch(f"assignment has shape {X.shape}, expected {want}")
    return X


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _log_pois(rate: float, k):
    k = np.asarray(k, dtype=float)
    if rate == 0:
        return np.where(k == 0, 0.0, -np.inf)
    return k * np.log(rate) - rate - gammaln(k + 1)


def _triples(n: int):
    """All ``(i, j, k)`` with ``i < j < k <= n``."""
    t = [(i, j, k) for i in range(n) for k in range(i + 2, n + 1) for j in range(i + 1, k)]
    if not t:
        return (np.zeros(0, dtype=int),) * 3
    return tuple(np.array(t).T)


def gaussian_weights(params: GrbnParams, y: np.ndarray, X: np.ndarray, maximize: bool = False):
    """Terminal log weights ``lt[i, k]``, binary edge log weights ``E[i, j, k]``,
    the best transposition per edge, and the root log prior."""
    n, d = y.shape
    iu, ku = np.triu_indices(n + 1, k=1)
    lt = np.full((n + 1, n + 1), -np.inf)
    log_p = np.log(params.p_term)
    width = ku - iu
    if params.multi_terminal:
        # sum_j log N(y_j | x_ik, Sigma_T) via prefix sums over the per-position densities
        dens = gauss.log_density_batch(y[None, :, :], X[iu, ku][:, None, :], params.term_cov)  # (cells, n)
        csum = np.concatenate([np.zeros((iu.size, 1)), np.cumsum(dens, axis=1)], axis=1)
        emit = csum[np.arange(iu.size), ku] - csum[np.arange(iu.size), iu]
        lt[iu, ku] = log_p + _log_pois(params.rate, width - 1) + emit
    else:
        one = width == 1
        lt[iu[one], ku[one]] = log_p + gauss.log_density_batch(y[iu[one]], X[iu[one], ku[one]], params.term_cov)

    ii, jj, kk = _triples(n)
    edge = np.full((n + 1, n + 1, n + 1), -np.inf)
    edge_tau = np.zeros((n + 1, n + 1, n + 1), dtype=int)
    if ii.size:
        taus = params.active_taus()
        parent = X[ii, kk]
        per_tau = np.stack(
            [gauss.log_density_batch(X[ii, jj], np.roll(parent, -t, axis=-1), params.left_cov) for t in taus],
            axis=1,
        ) + params.log_tau_weights()[None, :]
        if maximize:
            pick = per_tau.argmax(axis=1)
            left = per_tau[np.arange(ii.size), pick]
            edge_tau[ii, jj, kk] = taus[pick]
        else:
            left = logsumexp(per_tau, axis=1)
        right = gauss.log_density_batch(X[jj, kk], parent, params.right_cov)
        edge[ii, jj, kk] = np.log1p(-params.p_term) + left + right
    root = float(gauss.log_density_batch(X[0, n], params.prior_mean, params.prior_cov))
    return lt, edge, edge_tau, root


def discrete_weights(g: FlatGrammar, y: np.ndarray, X: np.ndarray):
    n = y.size
    X = X.astype(int)
    if X.min() < 0 or X.max() >= g.size:
        raise ValidationError("assignment category out of range")
    lt = np.full((n + 1, n + 1), -np.inf)
    idx = np.arange(n)
    lt[idx, idx + 1] = _log(g.lexical[X[idx, idx + 1], y])
    log_r = _log(g.binary)
    edge = np.full((n + 1, n + 1, n + 1), -np.inf)
    for i in range(n):
        for k in range(i + 2, n + 1):
            js = np.arange(i + 1, k)
            edge[i, js, k] = log_r[X[i, k], X[i, js], X[js, k]]
    root = float(_log(g.prior[X[0, n]]))
    return lt, edge, np.zeros_like(edge, dtype=int), root


def scalar_inside(lt: np.ndarray, edge: np.ndarray, maximize: bool = False):
    n = lt.shape[0] - 1
    beta = np.full((n + 1, n + 1), -np.inf)
    arg = np.full((n + 1, n + 1), -1)
    for w in range(1, n + 1):
        for i in range(n - w + 1):
            k = i + w
            js = np.arange(i + 1, k)
            cand = np.concatenate([edge[i, js, k] + beta[i, js] + beta[js, k], [lt[i, k]]])
            if maximize:
                a = int(cand.argmax())
                beta[i, k] = cand[a]
                arg[i, k] = js[a] if a < js.size else -1
            else:
                beta[i, k] = logsumexp(cand) if np.any(np.isfinite(cand)) else -np.inf
    return beta, arg


def scalar_outside(beta: np.ndarray, edge: np.ndarray, root: float):
    n = beta.shape[0] - 1
    alpha = np.full((n + 1, n + 1), -np.inf)
    alpha[0, n] = root
    for w in range(n - 1, 0, -1):
        for j in range(n - w + 1):
            k = j + w
            parts = []
            s = np.arange(0, j)  # parent (s, k), left sibling (s, j)
            parts.append(alpha[s, k] + edge[s, j, k] + beta[s, j])
            ls = np.arange(k + 1, n + 1)  # parent (j, l), right sibling (k, l)
            parts.append(alpha[j, ls] + edge[j, k, ls] + beta[k, ls])
            cand = np.concatenate(parts)
            alpha[j, k] = logsumexp(cand) if np.any(np.isfinite(cand)) else -np.inf
    return alpha


def joint_log_prob(weights) -> float:
    lt, edge, _, root = weights
    beta, _ = scalar_inside(lt, edge)
    return float(root + beta[0, -1])


def joint_inside_outside(weights):
    """``(log p(X, Y), existence)`` with ``existence[i, k]`` the probability
    that cell ``(i, k)`` is part of the structure given ``X`` and ``Y``."""
    lt, edge, _, root = weights
    beta, _ = scalar_inside(lt, edge)
    log_joint = float(root + beta[0, -1])
    if not np.isfinite(log_joint):
        raise NonFinite("the assignment has zero joint probability")
    alpha = scalar_outside(beta, edge, root)
    with np.errstate(invalid="ignore"):
        exist = np.exp(alpha + beta - log_joint)
    return log_joint, np.nan_to_num(exist)


def viterbi_spans(weights):
    """Best structure for fixed values: ``(log score, {(i, k): (split j or None, tau)})``."""
    lt, edge, edge_tau, root = weights
    beta, arg = scalar_inside(lt, edge, maximize=True)
    n = beta.shape[0] - 1
    spans = {}
    stack = [(0, n)]
    while stack:
        i, k = stack.pop()
        j = int(arg[i, k])
        if j < 0:
            spans[(i, k)] = (None, 0)
            continue
        spans[(i, k)] = (j, int(edge_tau[i, j, k]))
        stack.append((j, k))
        stack.append((i, j))
    return float(root + beta[0, n]), spans
