"""Inside/outside passes for Gaussian RBNs.

Every cell message is a single log-weighted Gaussian.  Within a cell all
mixture components (splits ``j`` ascending, then transpositions ``tau``
ascending, then the terminal branch) are formed in one batch and reduced by
moment matching, so the result does not depend on evaluation order.  All
cells of one span width are processed together.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.special import gammaln

from rbn import gauss
from rbn.chart.params import GrbnParams
from rbn.chart.types import GAUSSIAN_CHART, Chart
from rbn.errors import LengthMismatch, NonFinite

# relative tolerance under which two backpointer scores count as tied
TIE_RTOL = 1e-11


def check_observations(params: GrbnParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1 and params.dim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[1] != params.dim:
        raise LengthMismatch(f"observations have shape {y.shape}, expected (n, {params.dim})")
    if y.shape[0] < 1:
        raise LengthMismatch("empty observation sequence")
    if not np.all(np.isfinite(y)):
        raise NonFinite("observations contain non-finite values")
    return y


def _term_covs(params: GrbnParams, n: int, term_covs) -> np.ndarray:
    if term_covs is None:
        return np.broadcast_to(params.term_cov, (n, params.dim, params.dim))
    term_covs = np.asarray(term_covs, dtype=float)
    if term_covs.ndim == 2:
        term_covs = np.stack([np.diag(v) for v in term_covs])
    if term_covs.shape != (n, params.dim, params.dim):
        raise LengthMismatch("per-observation covariances do not match the observations")
    return term_covs


def _perms(params: GrbnParams) -> np.ndarray:
    d = params.dim
    return np.stack([gauss.transposition_perm(t, d) for t in params.active_taus()])


def _pick(scores: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    """Best component per row; near-ties go to the lowest index (or a seeded random one)."""
    best = scores.max(axis=1)
    tol = TIE_RTOL * (1.0 + np.abs(best))
    cand = scores >= (best - tol)[:, None]
    choice = cand.argmax(axis=1)
    if rng is not None:
        for r in np.flatnonzero(cand.sum(axis=1) > 1):
            choice[r] = rng.choice(np.flatnonzero(cand[r]))
    return choice


def inside_pass(
    params: GrbnParams,
    y,
    *,
    backpointers: bool = True,
    tie_rng: np.random.Generator | None = None,
    term_covs=None,
) -> Chart:
    y = check_observations(params, y)
    n, d = y.shape
    tcov = _term_covs(params, n, term_covs)
    perms = _perms(params)
    log_tw = params.log_tau_weights()
    taus = params.active_taus()
    n_tau = perms.shape[0]
    log_p = np.log(params.p_term)
    log_q = np.log1p(-params.p_term)
    multi = params.multi_terminal
    lam = params.rate

    def log_pois(k):
        if lam == 0:
            return 0.0 if k == 0 else -np.inf
        return k * np.log(lam) - lam - gammaln(k + 1)

    log_c = np.full((n + 1, n + 1), np.nan)
    mean = np.zeros((n + 1, n + 1, d))
    cov = np.zeros((n + 1, n + 1, d, d))
    best_j = np.full((n + 1, n + 1), -1)
    best_tau = np.zeros((n + 1, n + 1), dtype=int)
    used_term = np.zeros((n + 1, n + 1), dtype=bool)
    best_score = np.full((n + 1, n + 1), np.nan)

    # running product of terminal likelihoods over a span, as a function of x
    t_log = np.zeros(n)
    t_mean = y.copy()
    t_cov = np.array(tcov)

    idx = np.arange(n)
    lw1 = log_p + (log_pois(0) if multi else 0.0)
    log_c[idx, idx + 1] = lw1
    mean[idx, idx + 1] = y
    cov[idx, idx + 1] = tcov
    if backpointers:
        used_term[idx, idx + 1] = True
        best_score[idx, idx + 1] = lw1 - 0.5 * (d * gauss.LOG_2PI + gauss.logdet_batch(np.asarray(tcov)))

    for w in range(2, n + 1):
        m = n - w + 1
        ii = np.arange(m)
        kk = ii + w
        jj = ii[:, None] + np.arange(1, w)[None, :]  # (m, w-1)
        iib = np.broadcast_to(ii[:, None], jj.shape)
        kkb = np.broadcast_to(kk[:, None], jj.shape)

        lc = log_c[iib, jj]  # (m, s)
        lm = mean[iib, jj]
        lcv = cov[iib, jj] + params.left_cov
        rc = log_c[jj, kkb]
        rm = mean[jj, kkb]
        rcv = cov[jj, kkb] + params.right_cov

        # left child rotated back by each active transposition: (m, s, T, ...)
        lm_t = np.stack([lm[..., p] for p in perms], axis=2)
        lcv_t = np.stack([lcv[..., p[:, None], p[None, :]] for p in perms], axis=2)
        ls, cm, ccv = gauss.product_batch(lm_t, lcv_t, rm[:, :, None, :], rcv[:, :, None])
        lw = log_q + log_tw[None, None, :] + (lc + rc)[:, :, None] + ls
        lw = lw.reshape(m, -1)
        cm = cm.reshape(m, -1, d)
        ccv = ccv.reshape(m, -1, d, d)

        if multi:
            ls_t, t_mean_new, t_cov_new = gauss.product_batch(t_mean[:m], t_cov[:m], y[kk - 1], tcov[kk - 1])
            t_log = t_log[:m] + ls_t
            t_mean, t_cov = t_mean_new, t_cov_new
            lw_t = log_p + log_pois(w - 1) + t_log
            lw = np.concatenate([lw, lw_t[:, None]], axis=1)
            cm = np.concatenate([cm, t_mean[:, None]], axis=1)
            ccv = np.concatenate([ccv, t_cov[:, None]], axis=1)

        if backpointers:
            scores = lw - 0.5 * (d * gauss.LOG_2PI + gauss.logdet_batch(ccv))
            choice = _pick(scores, tie_rng)
            n_split = (w - 1) * n_tau
            is_term = choice >= n_split
            best_score[ii, kk] = scores[ii, choice]
            used_term[ii, kk] = is_term
            sc = np.where(is_term, 0, choice)
            best_j[ii, kk] = np.where(is_term, -1, ii + 1 + sc // n_tau)
            best_tau[ii, kk] = np.where(is_term, 0, taus[sc % n_tau])

        lcell, mcell, ccell = gauss.moment_match_batch(lw, cm, ccv)
        log_c[ii, kk] = lcell
        mean[ii, kk] = mcell
        cov[ii, kk] = ccell

    if not np.isfinite(log_c[0, n]):
        raise NonFinite("inside probability of the full sequence is not finite")
    chart = Chart(
        n=n,
        kind=GAUSSIAN_CHART,
        in_log_c=log_c,
        in_mean=mean,
        in_cov=cov,
        best_j=best_j if backpointers else None,
        best_tau=best_tau if backpointers else None,
        used_terminal=used_term if backpointers else None,
        best_score=best_score if backpointers else None,
    )
    return replace(chart, log_likelihood=marginal_likelihood(params, chart))


def marginal_likelihood(params: GrbnParams, chart: Chart) -> float:
    n = chart.n
    return float(
        chart.in_log_c[0, n]
        + gauss.log_density_batch(chart.in_mean[0, n], params.prior_mean, chart.in_cov[0, n] + params.prior_cov)
    )


def log_marginal(params: GrbnParams, y, term_covs=None) -> float:
    """``log p(Y)`` without backpointers (the training objective)."""
    return inside_pass(params, y, backpointers=False, term_covs=term_covs).log_likelihood


def outside_pass(params: GrbnParams, y, chart: Chart) -> Chart:
    y = check_observations(params, y)
    n, d = y.shape
    if chart.n != n:
        raise LengthMismatch("chart and observations differ in length")
    perms = _perms(params)
    inv_perms = np.stack([np.argsort(p) for p in perms])
    log_tw = params.log_tau_weights()
    n_tau = perms.shape[0]
    log_q = np.log1p(-params.p_term)

    b_c, b_m, b_v = chart.in_log_c, chart.in_mean, chart.in_cov
    a_c = np.full((n + 1, n + 1), np.nan)
    a_m = np.zeros((n + 1, n + 1, d))
    a_v = np.zeros((n + 1, n + 1, d, d))
    a_c[0, n] = 0.0
    a_m[0, n] = params.prior_mean
    a_v[0, n] = params.prior_cov

    for w in range(n - 1, 0, -1):
        m = n - w + 1
        n_slot = n - w
        jcell = np.arange(m)[:, None]
        slot = np.arange(n_slot)[None, :]
        right = np.broadcast_to(slot < jcell, (m, n_slot))
        jb = np.broadcast_to(jcell, (m, n_slot))
        sb = np.broadcast_to(slot, (m, n_slot))

        lw = np.empty((m, n_slot, n_tau))
        cm = np.empty((m, n_slot, n_tau, d))
        cv = np.empty((m, n_slot, n_tau, d, d))

        # generated as the right child of parent (s, k) with left sibling (s, j)
        r_j, r_s = jb[right], sb[right]
        if r_j.size:
            r_k = r_j + w
            pc, pm, pv = a_c[r_s, r_k], a_m[r_s, r_k], a_v[r_s, r_k]
            sc, sm, sv = b_c[r_s, r_j], b_m[r_s, r_j], b_v[r_s, r_j] + params.left_cov
            sm_t = np.stack([sm[:, p] for p in perms], axis=1)
            sv_t = np.stack([sv[:, p[:, None], p[None, :]] for p in perms], axis=1)
            ls, m2, v2 = gauss.product_batch(pm[:, None], pv[:, None], sm_t, sv_t)
            lw[right] = log_q + log_tw[None, :] + (pc + sc)[:, None] + ls
            cm[right] = m2
            cv[right] = v2 + params.right_cov

        # generated as the left child of parent (j, l) with right sibling (k, l)
        left = ~right
        l_j, l_s = jb[left], sb[left]
        if l_j.size:
            l_k = l_j + w
            l_l = w + 1 + l_s
            pc, pm, pv = a_c[l_j, l_l], a_m[l_j, l_l], a_v[l_j, l_l]
            sc, sm, sv = b_c[l_k, l_l], b_m[l_k, l_l], b_v[l_k, l_l] + params.right_cov
            ls, m2, v2 = gauss.product_batch(pm, pv, sm, sv)
            m2_t = np.stack([m2[:, q] for q in inv_perms], axis=1)
            v2_t = np.stack([v2[:, q[:, None], q[None, :]] for q in inv_perms], axis=1)
            lw[left] = log_q + log_tw[None, :] + (pc + sc + ls)[:, None]
            cm[left] = m2_t
            cv[left] = v2_t + params.left_cov

        lc, mc, vc = gauss.moment_match_batch(lw.reshape(m, -1), cm.reshape(m, -1, d), cv.reshape(m, -1, d, d))
        ii = np.arange(m)
        a_c[ii, ii + w] = lc
        a_m[ii, ii + w] = mc
        a_v[ii, ii + w] = vc

    return replace(chart, out_log_c=a_c, out_mean=a_m, out_cov=a_v)


def existence(params: GrbnParams, chart: Chart):
    """Existence log-probabilities and posterior moments for every cell.

    Returns ``(log_exist, post_mean, post_cov)`` arrays over the ``(n+1, n+1)`` grid.
    """
    n = chart.n
    iu, ku = np.triu_indices(n + 1, k=1)
    ls, pm, pv = gauss.product_batch(
        chart.out_mean[iu, ku], chart.out_cov[iu, ku], chart.in_mean[iu, ku], chart.in_cov[iu, ku]
    )
    d = chart.in_mean.shape[-1]
    log_e = np.full((n + 1, n + 1), -np.inf)
    log_e[iu, ku] = chart.out_log_c[iu, ku] + chart.in_log_c[iu, ku] + ls - chart.log_likelihood
    post_mean = np.zeros((n + 1, n + 1, d))
    post_cov = np.zeros((n + 1, n + 1, d, d))
    post_mean[iu, ku] = pm
    post_cov[iu, ku] = pv
    return log_e, post_mean, post_cov
