"""Gaussian algebra: densities, products, cyclic transpositions, moment
matching and the categorical-to-log-normal observation transform.

Every operation has a batched ``*_batch`` form working on stacked arrays
(``mean`` of shape ``(..., D)``, ``cov`` of shape ``(..., D, D)``); the chart
uses those directly and the object-level functions are thin wrappers, so both
paths share one numerical implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from rbn.errors import NotPositiveDefinite, NotSimplex

LOG_2PI = float(np.log(2.0 * np.pi))

# jitter schedule, relative to trace(cov) / D
JITTER_START = 1e-12
JITTER_STOP = 1e-6


def symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def cholesky(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor of a single matrix, escalating diagonal jitter on failure."""
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    d = cov.shape[-1]
    scale = np.trace(cov) / d
    if not np.isfinite(scale) or scale <= 0:
        raise NotPositiveDefinite("covariance has non-positive trace")
    eps = JITTER_START
    while eps <= JITTER_STOP * (1 + 1e-9):
        try:
            return np.linalg.cholesky(cov + eps * scale * np.eye(d))
        except np.linalg.LinAlgError:
            eps *= 10
    raise NotPositiveDefinite("covariance is not positive definite after jitter")


def cholesky_batch(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        d = cov.shape[-1]
        flat = cov.reshape(-1, d, d)
        return np.stack([cholesky(c) for c in flat]).reshape(cov.shape)


def _logdet_from_chol(chol: np.ndarray) -> np.ndarray:
    return 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)


def log_density_batch(x, mean, cov) -> np.ndarray:
    """log N(x | mean, cov), broadcasting over leading axes."""
    diff = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    shape = np.broadcast_shapes(diff.shape[:-1], cov.shape[:-2])
    diff = np.broadcast_to(diff, shape + diff.shape[-1:])
    chol = cholesky_batch(np.broadcast_to(cov, shape + cov.shape[-2:]))
    z = np.linalg.solve(chol, diff[..., None])[..., 0]
    d = chol.shape[-1]
    return -0.5 * (d * LOG_2PI + _logdet_from_chol(chol) + (z * z).sum(-1))


def logdet_batch(cov: np.ndarray) -> np.ndarray:
    return _logdet_from_chol(cholesky_batch(cov))


def product_batch(mean1, cov1, mean2, cov2):
    """Product of two Gaussian densities over the same variable.

    Returns ``(log_scale, mean, cov)`` with
    ``N(x|m1,S1) N(x|m2,S2) = exp(log_scale) N(x|mean,cov)``.  Uses
    ``(S1^-1 + S2^-1)^-1 = S1 (S1+S2)^-1 S2`` so only ``S1+S2`` is factored.
    """
    total = cov1 + cov2
    chol = cholesky_batch(total)
    d = total.shape[-1]
    diff = mean1 - mean2
    z = np.linalg.solve(chol, diff[..., None])[..., 0]
    log_scale = -0.5 * (d * LOG_2PI + _logdet_from_chol(chol) + (z * z).sum(-1))
    # one solve against S1+S2 for both the covariance and the mean
    rhs = np.concatenate([cov2, mean2[..., None]], axis=-1)
    sol = np.linalg.solve(total, rhs)
    x2 = sol[..., :d]  # (S1+S2)^-1 S2
    v2 = sol[..., d]  # (S1+S2)^-1 m2
    # einsum rather than matmul: matmul switches kernels with the batch size,
    # which would make a cell's value depend on how many cells share its level
    cov = symmetrize(np.einsum("...ab,...bc->...ac", cov1, x2))
    mean = np.einsum("...ba,...b->...a", x2, mean1) + np.einsum("...ab,...b->...a", cov1, v2)
    return log_scale, mean, cov


def moment_match_batch(log_w: np.ndarray, means: np.ndarray, covs: np.ndarray):
    """Collapse mixtures along the component axis (the last axis of ``log_w``).

    Returns ``(log_c, mean, cov)``; ``log_c`` is the log of the total mass.
    """
    log_c = logsumexp(log_w, axis=-1)
    with np.errstate(invalid="ignore"):
        w = np.exp(log_w - log_c[..., None])
    w = np.nan_to_num(w)
    mean = np.einsum("...m,...md->...d", w, means)
    diff = means - mean[..., None, :]
    cov = np.einsum("...m,...mde->...de", w, covs) + np.einsum("...m,...md,...me->...de", w, diff, diff)
    return log_c, mean, symmetrize(cov)


def transposition_perm(tau: int, dim: int) -> np.ndarray:
    """Index array ``p`` with ``(T_tau^T v) == v[p]``."""
    return (np.arange(dim) - tau) % dim


def transposition_matrix(tau: int, dim: int) -> np.ndarray:
    """Identity with columns cyclically shifted by ``tau``: ``(T x)_i = x_{(i+tau) mod D}``."""
    return np.roll(np.eye(dim), tau, axis=1)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"shape mismatch: mean {mean.shape}, cov {cov.shape}")
        scale = np.abs(cov).max() if cov.size else 0.0
        if np.abs(cov - cov.T).max() > 1e-12 * max(scale, 1e-300):
            raise ValueError("covariance is not symmetric")
        cholesky(cov)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, x) -> float:
        return log_density(self, x)


@dataclass(frozen=True, eq=False)
class LogWeightedGaussian:
    """``exp(log_c) * N(x | g.mean, g.cov)``."""

    log_c: float
    g: Gaussian

    def __post_init__(self):
        if not np.isfinite(self.log_c):
            raise ValueError("log_c must be finite")
        object.__setattr__(self, "log_c", float(self.log_c))

    @property
    def c(self) -> float:
        return float(np.exp(self.log_c))

    @property
    def mean(self) -> np.ndarray:
        return self.g.mean

    @property
    def cov(self) -> np.ndarray:
        return self.g.cov


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    components: tuple[LogWeightedGaussian, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        if len({c.g.dim for c in comps}) != 1:
            raise ValueError("mixture components differ in dimension")
        object.__setattr__(self, "components", comps)

    def log_density(self, x) -> float:
        return float(logsumexp([c.log_c + log_density(c.g, x) for c in self.components]))


@dataclass(frozen=True)
class Transposition:
    tau: int
    dim: int

    def __post_init__(self):
        if self.dim < 1 or not 0 <= self.tau < self.dim:
            raise ValueError(f"transposition {self.tau} out of range for dimension {self.dim}")

    @property
    def matrix(self) -> np.ndarray:
        return transposition_matrix(self.tau, self.dim)

    def apply(self, x) -> np.ndarray:
        """``T_tau @ x``."""
        return np.roll(np.asarray(x, dtype=float), -self.tau)


def log_density(g: Gaussian, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"point has shape {x.shape}, expected {g.mean.shape}")
    return float(log_density_batch(x, g.mean, g.cov))


def product(a: Gaussian, b: Gaussian) -> tuple[float, Gaussian]:
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    log_scale, mean, cov = product_batch(a.mean, a.cov, b.mean, b.cov)
    return float(log_scale), Gaussian(mean, cov)


def transform(g: Gaussian, t: Transposition) -> Gaussian:
    """Rewrite a density over ``T_tau x`` as a density over ``x``."""
    if t.dim != g.dim:
        raise ValueError("dimension mismatch")
    p = transposition_perm(t.tau, t.dim)
    return Gaussian(g.mean[p], g.cov[np.ix_(p, p)])


def moment_match(m: GaussianMixture) -> LogWeightedGaussian:
    comps = m.components
    if len(comps) == 1:
        return comps[0]
    log_w = np.array([c.log_c for c in comps])
    means = np.stack([c.g.mean for c in comps])
    covs = np.stack([c.g.cov for c in comps])
    log_c, mean, cov = moment_match_batch(log_w, means, covs)
    return LogWeightedGaussian(float(log_c), Gaussian(mean, cov))


def dirichlet_to_lognormal(y, smoothing: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Log-space Gaussian likelihood for a normalised count vector.

    Returns the mean vector and the diagonal of the covariance.  ``smoothing``
    pseudo-mass is spread uniformly and the vector renormalised first so that
    every entry lies strictly inside (0, 1).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 1 or np.any(y < 0) or abs(y.sum() - 1.0) > 1e-9:
        raise NotSimplex("observation is not a probability vector")
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    y = (y + smoothing / y.size) / (1.0 + smoothing)
    if np.any(y <= 0) or np.any(y >= 1):
        raise NotSimplex("entries must lie in (0, 1); increase smoothing")
    var = np.log1p(1.0 / y)
    return np.log(y) - var / 2, var
