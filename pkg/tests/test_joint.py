import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import binary_trees, gaussian_logpdf, grbn_fixed_x_logjoint, random_pcfg, tree_spans
from rbn.chart import GrbnParams, api
from rbn.errors import LengthMismatch, NonFinite, ValidationError
from rbn.model import abstract_pcfg


def random_assignment(rng, n, d, scale=1.0):
    return {(i, k): scale * rng.standard_normal(d) for i in range(n) for k in range(i + 1, n + 1)}


def random_params(rng, d, multi=False, transpositions=False):
    w = rng.dirichlet(np.ones(d)) if transpositions else None
    return GrbnParams(
        prior_mean=rng.standard_normal(d),
        prior_cov=np.diag(rng.uniform(0.5, 2.0, d)),
        left_cov=np.diag(rng.uniform(0.3, 1.5, d)),
        right_cov=np.diag(rng.uniform(0.3, 1.5, d)),
        term_cov=np.diag(rng.uniform(0.3, 1.5, d)),
        p_term=float(rng.uniform(0.2, 0.8)),
        transposition_weights=w,
        transpositions=transpositions,
        rate=float(rng.uniform(0.5, 3.0)),
        multi_terminal=multi,
    )


def enumerate_gaussian(params, y, X):
    widths = None if params.multi_terminal else (1,)
    trees = binary_trees(0, len(y), widths)
    scores = [grbn_fixed_x_logjoint(params, y, X, t) for t in trees]
    mx = max(scores)
    total = mx + math.log(sum(math.exp(s - mx) for s in scores))
    exist = {}
    for t, s in zip(trees, scores):
        for span in tree_spans(t):
            exist[span] = exist.get(span, 0.0) + math.exp(s - total)
    return total, exist, trees, scores


# --------------------------------------------------------------- Gaussian


def test_single_observation_joint(appb_params):
    X = {(0, 1): np.array([0.4])}
    want = math.log(0.5) + gaussian_logpdf([1.0], [0.4], [[1.0]]) + gaussian_logpdf([0.4], [0.0], [[1.0]])
    assert api.joint_log_prob(appb_params, [[1.0]], X) == pytest.approx(want, abs=1e-14)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.booleans(), st.booleans())
def test_gaussian_joint_matches_enumeration(seed, n, multi, transpositions):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    p = random_params(rng, d, multi=multi, transpositions=transpositions)
    y = rng.standard_normal((n, d))
    X = random_assignment(rng, n, d, 0.7)
    total, exist, _, _ = enumerate_gaussian(p, y, X)
    log_joint, e = api.joint_inside_outside(p, y, X)
    assert log_joint == pytest.approx(total, abs=1e-10)
    assert api.joint_log_prob(p, y, X) == log_joint
    for i in range(n):
        for k in range(i + 1, n + 1):
            assert e[i, k] == pytest.approx(exist.get((i, k), 0.0), abs=1e-10)


def test_joint_array_and_dict_forms_agree():
    rng = np.random.default_rng(3)
    p = random_params(rng, 2)
    y = rng.standard_normal((4, 2))
    X = random_assignment(rng, 4, 2)
    arr = np.zeros((5, 5, 2))
    for (i, k), v in X.items():
        arr[i, k] = v
    assert api.joint_log_prob(p, y, arr) == api.joint_log_prob(p, y, X)
    with pytest.raises(LengthMismatch):
        api.joint_log_prob(p, y, np.zeros((4, 4, 2)))


def test_joint_existence_counting():
    rng = np.random.default_rng(5)
    p = random_params(rng, 1)
    y = rng.standard_normal((5, 1))
    _, e = api.joint_inside_outside(p, y, random_assignment(rng, 5, 1))
    assert e[0, 5] == pytest.approx(1.0, abs=1e-12)
    assert e.sum() == pytest.approx(9.0, abs=1e-9)


def test_viterbi_structure_worked_example(appb_params, appb_y):
    chart = api.inside_pass(appb_params, appb_y)
    X = {(i, k): chart.in_mean[i, k] for i, k in chart.cells()}
    _, _, trees, scores = enumerate_gaussian(appb_params, appb_y, X)
    assert len(trees) == 5
    best = trees[int(np.argmax(scores))]
    tree = api.viterbi_structure(appb_params, appb_y, X)
    assert tree.span_set() == set(tree_spans(best))
    assert np.allclose(next(nd.value for nd in tree.latent_nodes() if nd.span == (0, 4)), chart.in_mean[0, 4])


@pytest.mark.parametrize("seed", range(5))
def test_viterbi_structure_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 2, multi=seed % 2 == 1)
    y = rng.standard_normal((5, 2))
    X = random_assignment(rng, 5, 2, 0.5)
    _, _, trees, scores = enumerate_gaussian(p, y, X)
    best = trees[int(np.argmax(scores))]
    assert api.viterbi_structure(p, y, X).span_set() == set(tree_spans(best))


def test_viterbi_structure_picks_transposition():
    p = GrbnParams(
        prior_mean=np.zeros(3),
        prior_cov=np.eye(3),
        left_cov=0.01 * np.eye(3),
        right_cov=0.01 * np.eye(3),
        term_cov=0.01 * np.eye(3),
        p_term=0.5,
        transpositions=True,
        transposition_weights=[0.5, 0.5, 0.0],
    )
    root = np.array([1.0, 2.0, 3.0])
    X = {(0, 2): root, (0, 1): np.roll(root, -1), (1, 2): root}
    y = np.stack([X[(0, 1)], X[(1, 2)]])
    tree = api.viterbi_structure(p, y, X)
    assert tree.root.tau == 1


def test_zero_probability_assignment_raises():
    spec = abstract_pcfg(random_pcfg(np.random.default_rng(0), 2, 2))
    # category 1 of the abstracted grammar never appears at the root
    with pytest.raises(NonFinite):
        api.joint_inside_outside(spec, [0, 1], {(0, 2): 1, (0, 1): 0, (1, 2): 0})


def test_gaussian_viterbi_needs_assignment(appb_params, appb_y):
    with pytest.raises(ValidationError):
        api.viterbi_structure(appb_params, appb_y)


# --------------------------------------------------------------- discrete


def labelled_tree_prob(rules, labels, words, tree, X):
    (i, k) = tree[0]
    a = labels[X[(i, k)]]
    if len(tree) == 1:
        return rules.get((a, (words[i],)), 0.0)
    left, right = tree[1], tree[2]
    p = rules.get((a, (labels[X[left[0]]], labels[X[right[0]]])), 0.0)
    return p * labelled_tree_prob(rules, labels, words, left, X) * labelled_tree_prob(rules, labels, words, right, X)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_discrete_joint_matches_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    g = random_pcfg(rng, 3, 3)
    spec = abstract_pcfg(g)
    labels = list(spec.variable("x").domain.labels)
    rules = g.normalized()
    y = rng.integers(0, 3, size=n)
    words = [g.terminals[v] for v in y]
    X = {(i, k): int(rng.integers(3)) for i in range(n) for k in range(i + 1, n + 1)}
    X[(0, n)] = labels.index(g.start)
    trees = binary_trees(0, n)
    probs = [labelled_tree_prob(rules, labels, words, t, X) for t in trees]
    total = sum(probs)
    if total == 0.0:
        assert api.joint_log_prob(spec, y, X) == -np.inf
        return
    log_joint, e = api.joint_inside_outside(spec, y, X)
    assert log_joint == pytest.approx(math.log(total), abs=1e-10)
    for i in range(n):
        for k in range(i + 1, n + 1):
            want = sum(p for t, p in zip(trees, probs) if (i, k) in tree_spans(t)) / total
            assert e[i, k] == pytest.approx(want, abs=1e-10)
    assert e.sum() == pytest.approx(2 * n - 1, abs=1e-9)


def test_discrete_assignment_out_of_range():
    spec = abstract_pcfg(random_pcfg(np.random.default_rng(1), 2, 2))
    with pytest.raises(ValidationError):
        api.joint_log_prob(spec, [0], {(0, 1): 5})


# -------------------------------------------------------------------- MAP


def test_map_symmetric_case(appb_params):
    X = api.map_estimate(appb_params, [[0.0]], {(0, 1): [0.7]})
    assert X[0, 1, 0] == pytest.approx(0.0, abs=1e-4)


def test_map_posterior_mean():
    p = GrbnParams(prior_mean=[0.0], prior_cov=1.0, left_cov=1.0, right_cov=1.0, term_cov=1.0, p_term=0.5)
    trace = []
    X = api.map_estimate(p, [[2.0]], {(0, 1): [-1.0]}, trace=trace)
    assert X[0, 1, 0] == pytest.approx(1.0, abs=1e-3)
    assert all(b >= a for a, b in zip(trace, trace[1:]))


def test_map_never_decreases(appb_params, appb_y):
    rng = np.random.default_rng(0)
    init = random_assignment(rng, 4, 1)
    trace = []
    X = api.map_estimate(appb_params, appb_y, init, steps=15, trace=trace)
    assert len(trace) >= 2
    assert all(b >= a for a, b in zip(trace, trace[1:]))
    assert api.joint_log_prob(appb_params, appb_y, X) == pytest.approx(trace[-1], abs=1e-12)
    assert trace[-1] > trace[0]


def test_map_rejects_discrete():
    spec = abstract_pcfg(random_pcfg(np.random.default_rng(2), 2, 2))
    with pytest.raises(ValidationError):
        api.map_estimate(spec, [0, 1], {(0, 2): 0, (0, 1): 0, (1, 2): 0})
