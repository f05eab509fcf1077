"""Maximum-likelihood training by gradient descent on the negative log
marginal likelihood, with central finite-difference gradients over an
unconstrained parametrization."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from rbn.chart.discrete import compile_grammar, inside_pass as discrete_inside
from rbn.chart.fast import log_marginal_fast
from rbn.chart.gaussian import check_observations
from rbn.chart.params import GrbnParams
from rbn.errors import NonFinite, NumericError, ValidationError
from rbn.model.types import DISCRETE, CategoricalKernel, CategoricalPrior, RbnSpec, StructuralDistribution, Transition

COV_FIELDS = ("prior_cov", "left_cov", "right_cov", "term_cov")
GAUSSIAN_FIELDS = ("prior_mean",) + COV_FIELDS + ("p_term", "transposition_weights", "rate")
COV_MODES = ("diagonal", "full", "isotropic")

# entries of probability vectors below this are treated as structural zeros
ZERO = 1e-300


def _simplex_encode(p: np.ndarray, support: np.ndarray) -> np.ndarray:
    logits = np.log(p[support])
    return logits - logits.mean()


def _simplex_decode(z: np.ndarray, support: np.ndarray) -> np.ndarray:
    out = np.zeros(support.size)
    e = np.exp(z - z.max())
    out[support] = e / e.sum()
    return out


@dataclass(frozen=True, eq=False)
class GaussianLayout:
    template: GrbnParams
    free: tuple[str, ...]
    cov_mode: str = "diagonal"

    def _cov_size(self, d: int) -> int:
        return {"diagonal": d, "full": d * (d + 1) // 2, "isotropic": 1}[self.cov_mode]

    def w_support(self) -> np.ndarray:
        return np.flatnonzero(self.template.transposition_weights > ZERO)

    def size(self) -> int:
        d = self.template.dim
        n = 0
        for f in self.free:
            if f == "prior_mean":
                n += d
            elif f in COV_FIELDS:
                n += self._cov_size(d)
            elif f in ("p_term", "rate"):
                n += 1
            elif f == "transposition_weights":
                n += self.w_support().size
        return n

    def _enc_cov(self, c: np.ndarray) -> np.ndarray:
        if self.cov_mode == "diagonal":
            return np.log(np.diag(c))
        if self.cov_mode == "isotropic":
            return np.array([np.log(np.mean(np.diag(c)))])
        chol = np.linalg.cholesky(c)
        il = np.tril_indices(c.shape[0])
        vals = chol[il].copy()
        diag = il[0] == il[1]
        vals[diag] = np.log(vals[diag])
        return vals

    def _dec_cov(self, z: np.ndarray, d: int) -> np.ndarray:
        if self.cov_mode == "diagonal":
            return np.diag(np.exp(z))
        if self.cov_mode == "isotropic":
            return np.exp(z[0]) * np.eye(d)
        il = np.tril_indices(d)
        vals = z.copy()
        diag = il[0] == il[1]
        vals[diag] = np.exp(vals[diag])
        chol = np.zeros((d, d))
        chol[il] = vals
        c = chol @ chol.T
        return 0.5 * (c + c.T)

    def encode(self, p: GrbnParams) -> np.ndarray:
        parts = []
        for f in self.free:
            if f == "prior_mean":
                parts.append(np.array(p.prior_mean))
            elif f in COV_FIELDS:
                parts.append(self._enc_cov(getattr(p, f)))
            elif f == "p_term":
                parts.append(np.array([np.log(p.p_term) - np.log1p(-p.p_term)]))
            elif f == "rate":
                parts.append(np.array([np.log(max(p.rate, ZERO))]))
            elif f == "transposition_weights":
                parts.append(_simplex_encode(p.transposition_weights, self.w_support()))
        return np.concatenate(parts) if parts else np.zeros(0)

    def decode(self, theta: np.ndarray) -> GrbnParams:
        d = self.template.dim
        changes = {}
        pos = 0
        for f in self.free:
            if f == "prior_mean":
                changes[f] = theta[pos : pos + d]
                pos += d
            elif f in COV_FIELDS:
                m = self._cov_size(d)
                changes[f] = self._dec_cov(theta[pos : pos + m], d)
                pos += m
            elif f == "p_term":
                changes[f] = float(1.0 / (1.0 + np.exp(-theta[pos])))
                pos += 1
            elif f == "rate":
                changes[f] = float(np.exp(theta[pos]))
                pos += 1
            elif f == "transposition_weights":
                sup = self.w_support()
                w = np.zeros(d)
                w[sup] = _simplex_decode(theta[pos : pos + sup.size], np.arange(sup.size))
                changes[f] = w
                pos += sup.size
        return self.template.with_(**changes)


@dataclass(frozen=True, eq=False)
class DiscreteLayout:
    """Softmax logits for every kernel row, structural row and the prior,
    restricted to the entries that are non-zero in the template."""

    template: RbnSpec

    def _blocks(self):
        spec = self.template
        blocks = []
        for t in spec.transitions:
            tab = t.kernel.table.reshape(t.kernel.table.shape[0], -1)
            blocks.extend(("kernel", t, r, tab[r] > ZERO) for r in range(tab.shape[0]))
        for s in spec.structural:
            w = s.weights if s.weights.ndim == 2 else s.weights[None, :]
            blocks.extend(("structural", s, r, w[r] > ZERO) for r in range(w.shape[0]))
        blocks.append(("prior", spec.prior, 0, spec.prior.probs > ZERO))
        return blocks

    def size(self) -> int:
        return int(sum(b[3].sum() for b in self._blocks()))

    def encode(self, spec: RbnSpec) -> np.ndarray:
        parts = []
        by_id = {id(t): i for i, t in enumerate(self.template.transitions)}
        s_by = {id(s): i for i, s in enumerate(self.template.structural)}
        for kind, obj, r, sup in self._blocks():
            if kind == "kernel":
                t = spec.transitions[by_id[id(obj)]]
                row = t.kernel.table.reshape(t.kernel.table.shape[0], -1)[r]
            elif kind == "structural":
                s = spec.structural[s_by[id(obj)]]
                row = (s.weights if s.weights.ndim == 2 else s.weights[None, :])[r]
            else:
                row = spec.prior.probs
            parts.append(_simplex_encode(row, sup))
        return np.concatenate(parts)

    def decode(self, theta: np.ndarray) -> RbnSpec:
        spec = self.template
        tables = {id(t): np.array(t.kernel.table, dtype=float) for t in spec.transitions}
        weights = {id(s): np.array(s.weights, dtype=float) for s in spec.structural}
        prior = None
        pos = 0
        for kind, obj, r, sup in self._blocks():
            k = int(sup.sum())
            row = _simplex_decode(theta[pos : pos + k], sup)
            pos += k
            if kind == "kernel":
                tab = tables[id(obj)]
                flat = tab.reshape(tab.shape[0], -1)
                flat[r] = row
            elif kind == "structural":
                w = weights[id(obj)]
                if w.ndim == 2:
                    w[r] = row
                else:
                    w[:] = row
            else:
                prior = row
        transitions = tuple(Transition(t.source, t.targets, CategoricalKernel(tables[id(t)]), id=t.id) for t in spec.transitions)
        structural = tuple(StructuralDistribution(s.owner, weights[id(s)]) for s in spec.structural)
        return RbnSpec(spec.variables, transitions, structural, CategoricalPrior(spec.prior.variable, prior), kind=DISCRETE)


@dataclass(frozen=True, eq=False)
class FreeParams:
    """Unconstrained vector ``theta`` plus the layout that maps it to a model."""

    theta: np.ndarray
    layout: object

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.layout.size(),):
            raise ValidationError(f"theta has shape {theta.shape}, layout expects ({self.layout.size()},)")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_params(cls, params, free=None, cov_mode: str = "diagonal") -> "FreeParams":
        if isinstance(params, RbnSpec):
            if params.kind != DISCRETE:
                params = GrbnParams.from_spec(params)
            else:
                layout = DiscreteLayout(params)
                return cls(layout.encode(params), layout)
        if cov_mode not in COV_MODES:
            raise ValidationError(f"unknown covariance mode {cov_mode!r}")
        if free is None:
            free = list(GAUSSIAN_FIELDS)
            if not params.multi_terminal:
                free.remove("rate")
            if not params.transpositions or np.count_nonzero(params.transposition_weights > ZERO) < 2:
                free.remove("transposition_weights")
        free = tuple(f for f in GAUSSIAN_FIELDS if f in set(free))
        layout = GaussianLayout(params, free, cov_mode)
        return cls(layout.encode(params), layout)

    def decode(self):
        return self.layout.decode(self.theta)

    def with_theta(self, theta) -> "FreeParams":
        return FreeParams(theta, self.layout)


def default_init(
    dataset,
    dim: int | None = None,
    *,
    transpositions: bool = False,
    transposition_support=None,
    multi_terminal: bool = False,
) -> GrbnParams:
    """Data-driven starting point: prior mean = data mean, every covariance =
    diag(data variance), p_term = 0.5, uniform transposition weights (over
    ``transposition_support`` if given), rate = mean length / 3."""
    ys = [np.atleast_2d(np.asarray(y, dtype=float)) for y in dataset]
    if not ys:
        raise ValidationError("empty dataset")
    allv = np.concatenate(ys)
    d = allv.shape[1] if dim is None else dim
    var = np.maximum(allv.var(axis=0), 1e-6)
    w = np.zeros(d)
    sup = np.arange(d) if transposition_support is None else np.asarray(transposition_support)
    w[sup] = 1.0 / sup.size
    return GrbnParams(
        prior_mean=allv.mean(axis=0),
        prior_cov=np.diag(var),
        left_cov=np.diag(var),
        right_cov=np.diag(var),
        term_cov=np.diag(var),
        p_term=0.5,
        transposition_weights=w,
        rate=np.mean([len(y) for y in ys]) / 3.0,
        multi_terminal=multi_terminal,
        transpositions=transpositions,
    )


def dataset_nll(model, dataset, threads: int = 1) -> float:
    """``-sum_s log p(Y_s)``.  With ``threads > 1`` the Gaussian terms are
    evaluated concurrently; the sum is always taken in dataset order."""
    if isinstance(model, FreeParams):
        model = model.decode()
    if isinstance(model, RbnSpec) and model.kind != DISCRETE:
        model = GrbnParams.from_spec(model)
    total = 0.0
    if isinstance(model, GrbnParams):
        ys = [check_observations(model, y) for y in dataset]
        if threads > 1 and len(ys) > 1:
            with ThreadPoolExecutor(threads) as pool:
                terms = list(pool.map(lambda y: log_marginal_fast(model, y), ys))
        else:
            terms = [log_marginal_fast(model, y) for y in ys]
        for t in terms:
            total -= t
        return float(total)
    grammar = compile_grammar(model)
    for y in dataset:
        total -= discrete_inside(grammar, y).log_likelihood
    return float(total)


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 50
    tol: float = 1e-6
    step_size: float = 0.1
    line_search: bool = True
    max_halvings: int = 30


@dataclass
class FitReport:
    nll_trace: list[float]
    params: object
    free: FreeParams
    converged: bool
    iterations: int
    wall_time: float
    evaluations: int = 0
    history: list = field(default_factory=list)

    def to_dict(self, include_time: bool = True) -> dict:
        from rbn.model.serialize import spec_to_dict

        p = self.params
        spec = p.to_spec() if isinstance(p, GrbnParams) else p
        out = {
            "nll_trace": [float(x) for x in self.nll_trace],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "evaluations": int(self.evaluations),
            "params": spec_to_dict(spec),
        }
        if include_time:
            out["wall_time"] = float(self.wall_time)
        return out


def _objective(free: FreeParams, dataset, threads: int = 1):
    def f(theta: np.ndarray) -> float:
        try:
            val = dataset_nll(free.layout.decode(theta), dataset, threads)
        except (NumericError, ValidationError, np.linalg.LinAlgError, FloatingPointError):
            return np.inf
        return val if np.isfinite(val) else np.inf

    return f


def fd_gradient(f, theta: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central differences with step ``rel_step * (1 + |theta_a|)``."""
    g = np.empty_like(theta)
    for a in range(theta.size):
        h = rel_step * (1.0 + abs(theta[a]))
        tp, tm = theta.copy(), theta.copy()
        tp[a] += h
        tm[a] -= h
        g[a] = (f(tp) - f(tm)) / (2.0 * h)
    return g


def fit(init: FreeParams, dataset, config: FitConfig | None = None, callback=None, threads: int = 1) -> FitReport:
    """Gradient descent with backtracking.

    The first trial step moves the largest gradient coordinate by
    ``config.step_size``; afterwards the learning rate doubles after every
    accepted step and halves on every rejected trial, so the trace of
    accepted objective values is non-increasing.
    """
    cfg = config or FitConfig()
    dataset = list(dataset)
    t0 = time.perf_counter()
    f = _objective(init, dataset, threads)
    theta = np.array(init.theta)
    nll = f(theta)
    evals = 1
    if not np.isfinite(nll):
        raise NonFinite("negative log-likelihood is not finite at the initial parameters")
    trace = [nll]
    eta = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g = fd_gradient(f, theta)
        evals += 2 * theta.size
        g[~np.isfinite(g)] = 0.0
        gmax = np.abs(g).max() if g.size else 0.0
        if gmax == 0.0:
            converged = True
            break
        if eta is None:
            eta = cfg.step_size / gmax
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = theta - eta * g
            val = f(cand)
            evals += 1
            if val <= nll:
                accepted = True
                break
            if not cfg.line_search:
                break
            eta *= 0.5
        if not accepted:
            converged = True
            it -= 1
            break
        delta = nll - val
        theta, nll = cand, val
        trace.append(nll)
        if callback is not None:
            callback(it, nll, init.with_theta(theta))
        eta *= 2.0
        if abs(delta) < cfg.tol * abs(nll):
            converged = True
            break
    final = init.with_theta(theta)
    return FitReport(
        nll_trace=trace,
        params=final.decode(),
        free=final,
        converged=converged,
        iterations=it,
        wall_time=time.perf_counter() - t0,
        evaluations=evals,
    )
