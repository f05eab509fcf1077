"""Model-agnostic entry points.

``model`` may be a :class:`GrbnParams`, a Gaussian :class:`RbnSpec` of the
shape produced by ``GrbnParams.to_spec``, or a discrete CNF :class:`RbnSpec`
(or an already compiled :class:`FlatGrammar`).
"""

from __future__ import annotations

import csv
import io

import numpy as np

from rbn import gauss
from rbn.chart import discrete, gaussian, joint
from rbn.chart.discrete import FlatGrammar, compile_grammar
from rbn.chart.params import GrbnParams
from rbn.chart.types import GAUSSIAN_CHART, Chart, DiscreteMessage, NodePosterior
from rbn.errors import NonFinite, ValidationError
from rbn.gauss import Gaussian, LogWeightedGaussian
from rbn.model.tree import Tree, TreeNode
from rbn.model.types import GAUSSIAN, RbnSpec


def resolve(model):
    """Normalize ``model`` to a :class:`GrbnParams` or :class:`FlatGrammar`."""
    if isinstance(model, (GrbnParams, FlatGrammar)):
        return model
    if isinstance(model, RbnSpec):
        if model.kind == GAUSSIAN:
            return GrbnParams.from_spec(model)
        return compile_grammar(model)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def inside_pass(model, observations, *, tie_rng=None, term_covs=None) -> Chart:
    m = resolve(model)
    if isinstance(m, GrbnParams):
        chart = gaussian.inside_pass(m, observations, tie_rng=tie_rng, term_covs=term_covs)
        chart.extra["observations"] = gaussian.check_observations(m, observations)
        return chart
    return discrete.inside_pass(m, observations)


def outside_pass(model, observations, chart: Chart) -> Chart:
    m = resolve(model)
    if isinstance(m, GrbnParams):
        return gaussian.outside_pass(m, observations, chart)
    return discrete.outside_pass(m, chart)


def parse(model, observations, *, tie_rng=None, term_covs=None) -> Chart:
    """Inside and outside pass in one call."""
    chart = inside_pass(model, observations, tie_rng=tie_rng, term_covs=term_covs)
    return outside_pass(model, observations, chart)


def marginal_likelihood(model, chart: Chart) -> float:
    """Natural log of ``p(Y)``."""
    m = resolve(model)
    if isinstance(m, GrbnParams):
        return gaussian.marginal_likelihood(m, chart)
    return discrete.marginal_likelihood(m, chart)


def existence_probs(model, chart: Chart) -> np.ndarray:
    """Raw existence probabilities on the ``(n+1, n+1)`` grid (zero off the chart)."""
    m = resolve(model)
    if isinstance(m, GrbnParams):
        log_e, _, _ = gaussian.existence(m, chart)
    else:
        log_e, _ = discrete.existence(chart)
    return np.exp(log_e)


def node_posteriors(model, chart: Chart) -> list[NodePosterior]:
    if not chart.has_outside:
        raise ValidationError("node posteriors need the outside pass")
    m = resolve(model)
    out = []
    if isinstance(m, GrbnParams):
        log_e, pm, pv = gaussian.existence(m, chart)
        for i, k in chart.cells():
            dist = LogWeightedGaussian(0.0, Gaussian(pm[i, k], pv[i, k]))
            out.append(NodePosterior((i, k), float(np.exp(log_e[i, k])), dist))
    else:
        log_e, post = discrete.existence(chart)
        for i, k in chart.cells():
            out.append(NodePosterior((i, k), float(np.exp(log_e[i, k])), DiscreteMessage(post[i, k])))
    return out


def _tree_from_splits(n: int, splits: dict, values=None, taus=None) -> Tree:
    """Build a tree from ``{(i, k): split j or None}``; leaves emit their whole span."""
    built = {}
    for (i, k) in sorted(splits, key=lambda s: s[1] - s[0]):
        j = splits[(i, k)]
        v = None if values is None else values(i, k)
        if j is None:
            kids = tuple(TreeNode(p, p + 1, terminal=True) for p in range(i, k))
            built[(i, k)] = TreeNode(i, k, v, None, kids)
        else:
            tau = None if taus is None else taus.get((i, k), 0)
            built[(i, k)] = TreeNode(i, k, v, tau, (built[(i, j)], built[(j, k)]))
    return Tree(built[(0, n)], n)


def best_tree(model, chart: Chart) -> Tree:
    """Gaussian models: unwind the backpointers (node values are posterior
    means when the outside pass is available, inside means otherwise).
    Discrete models: Viterbi-CYK over categories."""
    m = resolve(model)
    n = chart.n
    if isinstance(m, FlatGrammar):
        _, spans = discrete.viterbi(m, chart.extra["observations"])
        splits = {s: j for s, (_, j) in spans.items()}
        return _tree_from_splits(n, splits, values=lambda i, k: spans[(i, k)][0])
    if chart.best_j is None:
        raise ValidationError("chart was built without backpointers")
    if chart.has_outside:
        _, means, _ = gaussian.existence(m, chart)
    else:
        means = chart.in_mean
    splits, taus = {}, {}
    stack = [(0, n)]
    while stack:
        i, k = stack.pop()
        if chart.used_terminal[i, k]:
            splits[(i, k)] = None
            continue
        j = int(chart.best_j[i, k])
        splits[(i, k)] = j
        taus[(i, k)] = int(chart.best_tau[i, k])
        stack.extend([(j, k), (i, j)])
    return _tree_from_splits(n, splits, values=lambda i, k: means[i, k].copy(), taus=taus)


def _weights(m, y, X, maximize=False):
    if isinstance(m, GrbnParams):
        y = gaussian.check_observations(m, y)
        X = joint.as_assignment(X, y.shape[0], m.dim).astype(float)
        return joint.gaussian_weights(m, y, X, maximize=maximize)
    y = discrete.check_observations(m, y)
    X = joint.as_assignment(X, y.size, None)
    return joint.discrete_weights(m, y, X)


def joint_inside_outside(model, observations, X):
    """``(log p(X, Y), existence)`` for a full latent assignment ``X``."""
    return joint.joint_inside_outside(_weights(resolve(model), observations, X))


def joint_log_prob(model, observations, X) -> float:
    return joint.joint_log_prob(_weights(resolve(model), observations, X))


def viterbi_structure(model, observations, X=None) -> Tree:
    """Most probable structure.  With ``X`` given the values are held fixed
    (transpositions are maximised over as part of the structure); for a
    discrete model with ``X=None`` this is Viterbi-CYK over categories."""
    m = resolve(model)
    if X is None:
        if not isinstance(m, FlatGrammar):
            raise ValidationError("Gaussian Viterbi needs a latent assignment X")
        y = discrete.check_observations(m, observations)
        _, spans = discrete.viterbi(m, y)
        splits = {s: j for s, (_, j) in spans.items()}
        return _tree_from_splits(y.size, splits, values=lambda i, k: spans[(i, k)][0])
    w = _weights(m, observations, X, maximize=True)
    _, spans = joint.viterbi_spans(w)
    n = w[0].shape[0] - 1
    Xa = joint.as_assignment(X, n, m.dim if isinstance(m, GrbnParams) else None)
    splits = {s: j for s, (j, _) in spans.items()}
    taus = {s: t for s, (j, t) in spans.items() if j is not None} if isinstance(m, GrbnParams) else None
    return _tree_from_splits(n, splits, values=lambda i, k: np.array(Xa[i, k]), taus=taus)


def map_estimate(
    model,
    observations,
    init,
    steps: int = 200,
    step_size: float = 0.1,
    tol: float = 1e-10,
    trace: list | None = None,
):
    """Gradient ascent on ``log p(X, Y)`` over all cell values.

    Gradients are central finite differences with ``h = 1e-5 * (1 + |x|)``;
    each step uses a backtracking line search (halving up to 30 times), so the
    objective never decreases.  The objective is highly non-convex in general:
    the result is a local optimum near ``init``.
    """
    m = resolve(model)
    if not isinstance(m, GrbnParams):
        raise ValidationError("MAP estimation by gradient ascent needs continuous latent variables")
    y = gaussian.check_observations(m, observations)
    n, d = y.shape
    X = joint.as_assignment(init, n, d).astype(float).copy()
    iu, ku = np.triu_indices(n + 1, k=1)

    def unpack(v):
        Z = X.copy()
        Z[iu, ku] = v.reshape(-1, d)
        return Z

    def f(v):
        return joint.joint_log_prob(joint.gaussian_weights(m, y, unpack(v)))

    v = X[iu, ku].ravel().copy()
    fv = f(v)
    if not np.isfinite(fv):
        raise NonFinite("initial assignment has non-finite log probability")
    if trace is not None:
        trace.append(fv)
    eta = step_size
    for _ in range(steps):
        g = np.empty_like(v)
        for a in range(v.size):
            h = 1e-5 * (1.0 + abs(v[a]))
            vp, vm = v.copy(), v.copy()
            vp[a] += h
            vm[a] -= h
            g[a] = (f(vp) - f(vm)) / (2 * h)
        if not np.all(np.isfinite(g)):
            raise NonFinite("gradient is not finite")
        accepted = False
        for _ in range(31):
            cand = v + eta * g
            fc = f(cand)
            if np.isfinite(fc) and fc >= fv:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        improvement = fc - fv
        v, fv = cand, fc
        if trace is not None:
            trace.append(fv)
        eta *= 2.0
        if improvement <= tol * (1.0 + abs(fv)):
            break
    return unpack(v)


def chart_rows(model, chart: Chart) -> tuple[list[str], list[list]]:
    """Scape-plot table: one row per cell with existence probability,
    posterior mean/variance (Gaussian) or category posteriors (discrete),
    and the best split/transposition."""
    m = resolve(model)
    exist = existence_probs(m, chart) if chart.has_outside else None
    rows = []
    if isinstance(m, GrbnParams):
        d = m.dim
        if chart.has_outside:
            _, means, covs = gaussian.existence(m, chart)
        else:
            means, covs = chart.in_mean, chart.in_cov
        header = ["i", "k", "existence_prob"] + [f"mean_{a + 1}" for a in range(d)]
        header += [f"var_{a + 1}" for a in range(d)] + ["best_j", "best_tau"]
        for i, k in chart.cells():
            j = -1 if chart.used_terminal[i, k] else int(chart.best_j[i, k])
            row = [i, k, float("nan") if exist is None else float(exist[i, k])]
            row += [float(x) for x in means[i, k]] + [float(x) for x in np.diag(covs[i, k])]
            rows.append(row + [j, int(chart.best_tau[i, k])])
        return header, rows
    k_size = m.size
    header = ["i", "k", "existence_prob"] + [f"p_{m.label(a)}" for a in range(k_size)] + ["best_j", "best_tau"]
    post = discrete.existence(chart)[1] if chart.has_outside else None
    for i, k in chart.cells():
        probs = np.exp(post[i, k]) if post is not None else np.full(k_size, np.nan)
        j = -1 if chart.used_terminal[i, k] else int(chart.best_j[i, k])
        row = [i, k, float("nan") if exist is None else float(exist[i, k])]
        rows.append(row + [float(x) for x in np.nan_to_num(probs)] + [j, 0])
    return header, rows


def export_chart_csv(model, chart: Chart) -> str:
    header, rows = chart_rows(model, chart)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.12g}" if isinstance(x, float) else x for x in r])
    return buf.getvalue()
