"""Compiled inside pass returning only ``log p(Y)``.

Training evaluates the marginal likelihood thousands of times; this kernel
performs the same per-cell computation as ``chart.gaussian.inside_pass``
(same component order, same moment matching) without backpointers, with
small dense linear algebra written out by hand.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy.special import gammaln

from rbn.chart.params import GrbnParams
from rbn.errors import NonFinite, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True, error_model="numpy")
def _chol(a, out):
    d = a.shape[0]
    for i in range(d):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, d):
            out[i, j] = 0.0
    return True


@njit(cache=True, error_model="numpy")
def _chol_solve(ch, b, out):
    # solves (L L^T) x = b for a vector b
    d = ch.shape[0]
    for i in range(d):
        s = b[i]
        for k in range(i):
            s -= ch[i, k] * out[k]
        out[i] = s / ch[i, i]
    for i in range(d - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, d):
            s -= ch[k, i] * out[k]
        out[i] = s / ch[i, i]


@njit(cache=True, error_model="numpy")
def _product(m1, s1, m2, s2, mean_out, cov_out, tot, ch, tmp, col, sol, x2):
    """exp(return) * N(mean_out, cov_out) = N(m1, s1) N(m2, s2); -inf if S1+S2 is not PD.

    With ``L L^T = S1 + S2`` and ``A = L^-1 S1``: cov = S1 - A^T A and
    mean = m1 - A^T L^-1 (m1 - m2).  The factor with the smaller trace plays S1.
    """
    d = m1.shape[0]
    tr1 = 0.0
    tr2 = 0.0
    for a in range(d):
        tr1 += s1[a, a]
        tr2 += s2[a, a]
    if tr1 > tr2:
        m1, m2 = m2, m1
        s1, s2 = s2, s1
    for a in range(d):
        for b in range(d):
            tot[a, b] = s1[a, b] + s2[a, b]
    if not _chol(tot, ch):
        return -np.inf
    # z = L^-1 (m1 - m2)
    quad = 0.0
    det = 1.0
    for a in range(d):
        acc = m1[a] - m2[a]
        for k in range(a):
            acc -= ch[a, k] * tmp[k]
        tmp[a] = acc / ch[a, a]
        quad += tmp[a] * tmp[a]
        det *= ch[a, a]
    log_scale = -0.5 * (d * LOG_2PI + quad) - math.log(det)
    # A = L^-1 S1 (columns)
    for b in range(d):
        for a in range(d):
            acc = s1[a, b]
            for k in range(a):
                acc -= ch[a, k] * x2[k, b]
            x2[a, b] = acc / ch[a, a]
    for a in range(d):
        acc = m1[a]
        for k in range(d):
            acc -= x2[k, a] * tmp[k]
        mean_out[a] = acc
    for a in range(d):
        for b in range(a, d):
            acc = s1[a, b]
            for k in range(d):
                acc -= x2[k, a] * x2[k, b]
            cov_out[a, b] = acc
            cov_out[b, a] = acc
    return log_scale


@njit(cache=True, error_model="numpy")
def _moment_match(lw, means, covs, count, mean_out, cov_out):
    d = mean_out.shape[0]
    mx = -np.inf
    for m in range(count):
        if lw[m] > mx:
            mx = lw[m]
    if mx == -np.inf:
        return -np.inf
    tot = 0.0
    for m in range(count):
        lw[m] = math.exp(lw[m] - mx)
        tot += lw[m]
    log_c = mx + math.log(tot)
    for m in range(count):
        lw[m] /= tot
    for a in range(d):
        mean_out[a] = 0.0
    for m in range(count):
        for a in range(d):
            mean_out[a] += lw[m] * means[m, a]
    for a in range(d):
        for b in range(d):
            cov_out[a, b] = 0.0
    for m in range(count):
        wm = lw[m]
        for a in range(d):
            da = means[m, a] - mean_out[a]
            for b in range(a, d):
                cov_out[a, b] += wm * (covs[m, a, b] + da * (means[m, b] - mean_out[b]))
    for a in range(d):
        for b in range(a):
            cov_out[a, b] = cov_out[b, a]
    return log_c


@njit(cache=True, error_model="numpy", nogil=True)
def _inside_loglik(y, tcov, prior_mean, prior_cov, left_cov, right_cov, log_p, log_q, perms, log_tw, multi, log_pois):
    n, d = y.shape
    n_tau = perms.shape[0]
    log_c = np.full((n + 1, n + 1), np.nan)
    mean = np.zeros((n + 1, n + 1, d))
    cov = np.zeros((n + 1, n + 1, d, d))
    max_comp = (n - 1) * n_tau + 1
    lw = np.empty(max_comp)
    cm = np.empty((max_comp, d))
    cc = np.empty((max_comp, d, d))
    t_log = np.zeros(n)
    t_mean = y.copy()
    t_cov = tcov.copy()
    tot = np.empty((d, d))
    ch = np.empty((d, d))
    tmp = np.empty(d)
    col = np.empty(d)
    sol = np.empty(d)
    x2 = np.empty((d, d))
    lm = np.empty(d)
    lv = np.empty((d, d))
    rv = np.empty((d, d))
    rm = np.empty(d)
    tm = np.empty(d)
    tv = np.empty((d, d))
    ym = np.empty(d)
    yv = np.empty((d, d))
    new_m = np.empty(d)
    new_v = np.empty((d, d))

    lw1 = log_p + (log_pois[0] if multi else 0.0)
    for i in range(n):
        log_c[i, i + 1] = lw1
        for a in range(d):
            mean[i, i + 1, a] = y[i, a]
            for b in range(d):
                cov[i, i + 1, a, b] = tcov[i, a, b]

    for w in range(2, n + 1):
        for i in range(n - w + 1):
            k = i + w
            count = 0
            for j in range(i + 1, k):
                for a in range(d):
                    for b in range(d):
                        rv[a, b] = cov[j, k, a, b] + right_cov[a, b]
                    rm[a] = mean[j, k, a]
                for t in range(n_tau):
                    p = perms[t]
                    for a in range(d):
                        lm[a] = mean[i, j, p[a]]
                        for b in range(d):
                            lv[a, b] = cov[i, j, p[a], p[b]] + left_cov[p[a], p[b]]
                    ls = _product(lm, lv, rm, rv, new_m, new_v, tot, ch, tmp, col, sol, x2)
                    for a in range(d):
                        cm[count, a] = new_m[a]
                        for b in range(d):
                            cc[count, a, b] = new_v[a, b]
                    lw[count] = log_q + log_tw[t] + log_c[i, j] + log_c[j, k] + ls
                    count += 1
            if multi:
                for a in range(d):
                    tm[a] = t_mean[i, a]
                    ym[a] = y[k - 1, a]
                    for b in range(d):
                        tv[a, b] = t_cov[i, a, b]
                        yv[a, b] = tcov[k - 1, a, b]
                ls = _product(tm, tv, ym, yv, new_m, new_v, tot, ch, tmp, col, sol, x2)
                t_log[i] += ls
                for a in range(d):
                    t_mean[i, a] = new_m[a]
                    for b in range(d):
                        t_cov[i, a, b] = new_v[a, b]
                lw[count] = log_p + log_pois[w - 1] + t_log[i]
                for a in range(d):
                    cm[count, a] = t_mean[i, a]
                    for b in range(d):
                        cc[count, a, b] = t_cov[i, a, b]
                count += 1
            log_c[i, k] = _moment_match(lw, cm, cc, count, new_m, new_v)
            for a in range(d):
                mean[i, k, a] = new_m[a]
                for b in range(d):
                    cov[i, k, a, b] = new_v[a, b]

    for a in range(d):
        for b in range(d):
            tot[a, b] = cov[0, n, a, b] + prior_cov[a, b]
    if not _chol(tot, ch):
        return np.nan
    for a in range(d):
        tmp[a] = mean[0, n, a] - prior_mean[a]
    _chol_solve(ch, tmp, sol)
    quad = 0.0
    logdet = 0.0
    for a in range(d):
        quad += tmp[a] * sol[a]
        logdet += 2.0 * math.log(ch[a, a])
    return log_c[0, n] - 0.5 * (d * LOG_2PI + logdet + quad)


def _log_pois(rate: float, n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    if rate == 0:
        return np.where(k == 0, 0.0, -np.inf)
    return k * np.log(rate) - rate - gammaln(k + 1)


def log_marginal_fast(params: GrbnParams, y: np.ndarray, term_covs: np.ndarray | None = None) -> float:
    """``log p(Y)`` via the compiled kernel; raises on numeric breakdown."""
    y = np.ascontiguousarray(y, dtype=float)
    n, d = y.shape
    if term_covs is None:
        tcov = np.ascontiguousarray(np.broadcast_to(params.term_cov, (n, d, d)))
    else:
        tcov = np.ascontiguousarray(term_covs, dtype=float)
    taus = params.active_taus()
    perms = np.stack([(np.arange(d) - t) % d for t in taus]).astype(np.int64)
    val = _inside_loglik(
        y,
        tcov,
        np.ascontiguousarray(params.prior_mean),
        np.ascontiguousarray(params.prior_cov),
        np.ascontiguousarray(params.left_cov),
        np.ascontiguousarray(params.right_cov),
        float(np.log(params.p_term)),
        float(np.log1p(-params.p_term)),
        perms,
        np.ascontiguousarray(params.log_tau_weights(), dtype=float),
        bool(params.multi_terminal),
        _log_pois(params.rate, n),
    )
    if np.isnan(val):
        raise NotPositiveDefinite("covariance lost positive definiteness in the inside pass")
    if not np.isfinite(val):
        raise NonFinite("log marginal likelihood is not finite")
    return float(val)
