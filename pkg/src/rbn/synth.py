"""Synthetic-data evaluation: data generation from a known GRBN, a
change-point + hierarchical-clustering baseline, and node-level metrics."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from rbn.chart import api
from rbn.chart.params import GrbnParams
from rbn.errors import LengthMismatch, ValidationError
from rbn.model.sampling import sample_in_window
from rbn.model.tree import Tree, TreeNode
from rbn.train import FitConfig, FreeParams, default_init, fit

NOISE_LEVELS = (0.01, 0.05, 0.1, 0.15, 0.2, 0.25)
PENALTY_GRID = tuple(float(x) for x in np.logspace(-4, 2, 49))
METHODS = ("rbn-max", "rbn-marginal", "baseline")
# iteration cap keeping one noise level of the evaluation at a few minutes
EVAL_FIT = FitConfig(max_iters=30)


@dataclass(frozen=True)
class SynthConfig:
    dim: int = 3
    prior_mean: float = 0.0
    prior_var: float = 1.0
    child_var: float = 0.1**2
    rate: float = 5.0
    transposition_weights: tuple = (0.5, 0.5)
    noise: float = 0.1
    p_term: float = 0.6
    min_len: int = 50
    max_len: int = 55

    def problems(self) -> list[str]:
        out = []
        if self.dim < 1:
            out.append("dim must be positive")
        if len(self.transposition_weights) > self.dim:
            out.append("more transposition weights than dimensions")
        if not self.noise > 0:
            out.append("noise must be positive")
        if not 0 < self.p_term < 1:
            out.append("p_term must lie in (0, 1)")
        if not 1 <= self.min_len <= self.max_len:
            out.append("length window must satisfy 1 <= min_len <= max_len")
        if self.prior_var <= 0 or self.child_var <= 0 or self.rate < 0:
            out.append("variances must be positive and the rate non-negative")
        return out

    def params(self) -> GrbnParams:
        if self.problems():
            raise ValidationError("; ".join(self.problems()))
        d = self.dim
        w = np.zeros(d)
        w[: len(self.transposition_weights)] = self.transposition_weights
        return GrbnParams(
            prior_mean=np.full(d, self.prior_mean),
            prior_cov=self.prior_var,
            left_cov=self.child_var,
            right_cov=self.child_var,
            term_cov=self.noise**2,
            p_term=self.p_term,
            transposition_weights=w,
            rate=self.rate,
            multi_terminal=True,
            transpositions=True,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["transposition_weights"] = list(self.transposition_weights)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "transposition_weights" in data:
            data["transposition_weights"] = tuple(float(x) for x in data["transposition_weights"])
        cfg = cls(**data)
        if cfg.problems():
            raise ValidationError("; ".join(cfg.problems()))
        return cfg


@dataclass(frozen=True)
class Metrics:
    tp: float
    fp: float
    fn: float

    @property
    def precision(self) -> float:
        den = self.tp + self.fp
        return self.tp / den if den > 0 else 0.0

    @property
    def recall(self) -> float:
        den = self.tp + self.fn
        return self.tp / den if den > 0 else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def generate_dataset(cfg: SynthConfig, count: int, seed) -> list[tuple[np.ndarray, Tree]]:
    """``count`` derivations whose length lies in the config window, drawn
    by whole-derivation rejection from one generator seeded by ``seed``."""
    params = cfg.params()
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        tree, y = sample_in_window(params, rng, cfg.min_len, cfg.max_len)
        out.append((y, tree))
    return out


# ---------------------------------------------------------------- baseline


def _l2_costs(series: np.ndarray):
    y = np.asarray(series, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    s1 = np.concatenate([np.zeros((1, y.shape[1])), np.cumsum(y, axis=0)])
    s2 = np.concatenate([[0.0], np.cumsum((y * y).sum(axis=1))])

    def cost(s, t):
        # sum of squared deviations from the mean of y[s:t]; s may be an array
        d = s1[t] - s1[s]
        return (s2[t] - s2[s]) - (d * d).sum(axis=-1) / (t - s)

    return y.shape[0], cost


def _backtrack(last: np.ndarray, n: int) -> list[int]:
    cps, t = [], n
    while t > 0:
        t = int(last[t])
        if t > 0:
            cps.append(t)
    return cps[::-1]


def pelt_l2(series, penalty: float) -> list[int]:
    """Change points (segment start indices, excluding 0) minimising the sum
    of per-segment squared deviations plus ``penalty`` per change point.

    Candidates whose cost exceeds the current optimum by more than a small
    relative margin are pruned; the margin keeps the result identical to the
    unpruned recursion under floating point.  Ties go to the earliest split.
    """
    if not penalty > 0:
        raise ValidationError("penalty must be positive")
    n, cost = _l2_costs(series)
    if n < 2:
        raise LengthMismatch("series needs at least two points")
    f = np.empty(n + 1)
    f[0] = -penalty
    last = np.zeros(n + 1, dtype=int)
    cand = np.array([0])
    for t in range(1, n + 1):
        vals = f[cand] + cost(cand, t) + penalty
        a = int(np.argmin(vals))
        f[t] = vals[a]
        last[t] = cand[a]
        keep = vals - penalty <= f[t] + 1e-9 * (1.0 + abs(f[t]))
        cand = np.append(cand[keep], t)
    return _backtrack(last, n)


def exhaustive_l2(series, penalty: float) -> tuple[float, list[int]]:
    """Unpruned O(n^2) recursion; returns ``(optimal cost, change points)``."""
    n, cost = _l2_costs(series)
    f = np.empty(n + 1)
    f[0] = -penalty
    last = np.zeros(n + 1, dtype=int)
    for t in range(1, n + 1):
        s = np.arange(t)
        vals = f[s] + cost(s, t) + penalty
        a = int(np.argmin(vals))
        f[t], last[t] = vals[a], s[a]
    return float(f[n]), _backtrack(last, n)


def segmentation_cost(series, change_points, penalty: float) -> float:
    n, cost = _l2_costs(series)
    bounds = [0, *change_points, n]
    return float(sum(cost(a, b) for a, b in zip(bounds[:-1], bounds[1:])) + penalty * len(change_points))


def bottom_up_hc(series, change_points) -> Tree:
    """Agglomerate adjacent segments, always merging the pair whose span
    means are closest (Euclidean); the earliest pair wins ties."""
    y = np.asarray(series, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    cps = [int(c) for c in change_points]
    if any(b <= a for a, b in zip(cps[:-1], cps[1:])) or (cps and (cps[0] <= 0 or cps[-1] >= n)):
        raise ValidationError("change points must be strictly increasing inside the series")
    csum = np.concatenate([np.zeros((1, y.shape[1])), np.cumsum(y, axis=0)])

    def mean(a, b):
        return (csum[b] - csum[a]) / (b - a)

    bounds = [0, *cps, n]
    nodes = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        kids = tuple(TreeNode(p, p + 1, terminal=True) for p in range(a, b))
        nodes.append(TreeNode(a, b, mean(a, b), None, kids))
    while len(nodes) > 1:
        dist = [np.linalg.norm(nodes[i].value - nodes[i + 1].value) for i in range(len(nodes) - 1)]
        i = int(np.argmin(dist))
        a, b = nodes[i].start, nodes[i + 1].end
        nodes[i : i + 2] = [TreeNode(a, b, mean(a, b), None, (nodes[i], nodes[i + 1]))]
    return Tree(nodes[0], n)


def change_points_of(tree: Tree) -> list[int]:
    """Start indices (excluding 0) of the nodes that emit observations directly."""
    starts = {nd.start for nd in tree.latent_nodes() if nd.children and all(c.terminal for c in nd.children)}
    return sorted(s for s in starts if s > 0)


def change_point_metrics(predicted, truth, slack: int = 0) -> Metrics:
    """Greedy one-to-one matching of change points within ``slack`` indices."""
    truth = sorted(truth)
    used = [False] * len(truth)
    tp = 0
    for p in sorted(predicted):
        for i, t in enumerate(truth):
            if not used[i] and abs(p - t) <= slack:
                used[i] = True
                tp += 1
                break
    return Metrics(tp, len(predicted) - tp, len(truth) - tp)


def select_penalty(items, grid=PENALTY_GRID, slack: int = 0) -> tuple[float, float]:
    """Penalty with the best mean change-point F1 over ``items``
    (``(series, tree)`` pairs); the smallest such penalty on ties."""
    best, best_f1 = None, -1.0
    truths = [change_points_of(t) for _, t in items]
    for pen in grid:
        f1 = float(np.mean([change_point_metrics(pelt_l2(y, pen), cps, slack).f1 for (y, _), cps in zip(items, truths)]))
        if f1 > best_f1:
            best, best_f1 = pen, f1
    return best, best_f1


# ----------------------------------------------------------------- metrics


def tree_metrics(predicted: Tree, truth: Tree) -> Metrics:
    if predicted.n != truth.n:
        raise LengthMismatch(f"trees cover {predicted.n} and {truth.n} observations")
    p, t = predicted.span_set(), truth.span_set()
    return Metrics(len(p & t), len(p - t), len(t - p))


def marginal_metrics(posteriors, truth: Tree) -> Metrics:
    """Soft counts from existence probabilities clamped to ``[0, 1]``."""
    spans = truth.span_set()
    total = tp = 0.0
    for post in posteriors:
        e = min(max(post.existence_prob, 0.0), 1.0)
        total += e
        if tuple(post.span) in spans:
            tp += e
    return Metrics(tp, total - tp, len(spans) - tp)


def bootstrap_ci(values, resamples: int | None = 1000, seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile interval of the resampled mean.  ``resamples=None``
    enumerates all ``n**n`` resamples (small ``n`` only)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValidationError("bootstrap needs at least two values")
    if resamples is None:
        idx = np.array(list(itertools.product(range(v.size), repeat=v.size)))
    else:
        idx = np.random.default_rng(seed).integers(0, v.size, size=(resamples, v.size))
    means = v[idx].mean(axis=1)
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)


# ---------------------------------------------------------------- pipeline


@dataclass
class MethodResult:
    method: str
    per_item: list[Metrics] = field(default_factory=list)
    ci: tuple[float, float] = (0.0, 0.0)

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(m, attr) for m in self.per_item])) if self.per_item else 0.0

    def row(self) -> dict:
        return {
            "method": self.method,
            "precision": self.mean("precision"),
            "recall": self.mean("recall"),
            "f1": self.mean("f1"),
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
        }


@dataclass
class EvalResult:
    noise: float
    penalty: float
    fitted: GrbnParams
    nll_trace: list[float]
    methods: dict

    def rows(self) -> list[dict]:
        return [{"noise": self.noise, **self.methods[m].row()} for m in METHODS if m in self.methods]


def _streams(seed: int, noise: float):
    # independent generators for the training, penalty and test splits
    key = int(round(noise * 1e6))
    return [np.random.SeedSequence([seed, key, s]) for s in range(3)]


def training_init(dataset, cfg: SynthConfig) -> GrbnParams:
    """Default initialisation with the model family of ``cfg``: multi-terminal
    leaves and transpositions on the shifts that carry weight."""
    support = np.flatnonzero(np.asarray(cfg.transposition_weights) > 0)
    return default_init(
        dataset,
        cfg.dim,
        transpositions=support.size > 1 or (support.size == 1 and support[0] != 0),
        transposition_support=support,
        multi_terminal=True,
    )


def evaluate(
    cfg: SynthConfig,
    noise: float | None = None,
    *,
    n_train: int = 10,
    n_test: int = 50,
    n_penalty: int = 100,
    seed: int = 0,
    fit_config: FitConfig | None = None,
    cov_mode: str = "isotropic",
    resamples: int = 1000,
    slack: int = 0,
    threads: int = 1,
    progress=None,
) -> EvalResult:
    """Train a GRBN on ``n_train`` sequences, select the baseline penalty on
    ``n_penalty`` sequences, and score both on ``n_test`` held-out ones."""
    if noise is not None:
        cfg = replace(cfg, noise=noise)
    s_train, s_pen, s_test = _streams(seed, cfg.noise)
    train = generate_dataset(cfg, n_train, s_train)
    pen_items = generate_dataset(cfg, n_penalty, s_pen)
    test = generate_dataset(cfg, n_test, s_test)

    ys = [y for y, _ in train]
    init = FreeParams.from_params(training_init(ys, cfg), cov_mode=cov_mode)
    report = fit(init, ys, fit_config or EVAL_FIT, threads=threads)
    model = report.params
    if progress:
        progress(f"noise {cfg.noise}: trained in {report.iterations} iterations, nll {report.nll_trace[-1]:.4f}")

    penalty, _ = select_penalty(pen_items, slack=slack)
    results = {m: MethodResult(m) for m in METHODS}
    for y, truth in test:
        chart = api.parse(model, y)
        results["rbn-max"].per_item.append(tree_metrics(api.best_tree(model, chart), truth))
        results["rbn-marginal"].per_item.append(marginal_metrics(api.node_posteriors(model, chart), truth))
        base = bottom_up_hc(y, pelt_l2(y, penalty))
        results["baseline"].per_item.append(tree_metrics(base, truth))
    for r in results.values():
        r.ci = bootstrap_ci([m.f1 for m in r.per_item], resamples, seed) if len(r.per_item) > 1 else (r.mean("f1"),) * 2
    return EvalResult(cfg.noise, penalty, model, report.nll_trace, results)
