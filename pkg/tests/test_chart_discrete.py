import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import (
    binary_trees,
    bracketing_max,
    cnf_tree_prob,
    cyk_batch,
    cyk_prob,
    cyk_viterbi,
    random_cnf_spec,
    random_pcfg,
    spec_sequence_prob,
    tree_spans,
)
from rbn.chart import api, compile_grammar, discrete
from rbn.errors import NotCnf, ValidationError
from rbn.model import abstract_pcfg
from rbn.model.types import (
    NON_TERMINAL,
    TERMINAL,
    Categorical,
    CategoricalKernel,
    CategoricalPrior,
    RbnSpec,
    StructuralDistribution,
    TemplateVariable,
    Transition,
)


def exact_existence(spec, y):
    """Span existence probabilities by enumerating every binary tree."""
    n = len(y)
    per_tree = [(t, cnf_tree_prob(spec, y, t)) for t in binary_trees(0, n)]
    total = sum(p for _, p in per_tree)
    out = {}
    for t, p in per_tree:
        for s in tree_spans(t):
            out[s] = out.get(s, 0.0) + p / total
    return total, out


# ------------------------------------------------------- oracle agreement


def test_batch_cyk_agrees_with_textbook_cyk():
    g = random_pcfg(np.random.default_rng(1), 3, 2)
    rules = g.normalized()
    probs = cyk_batch(rules, g.nonterminals, g.terminals, g.start, 3)
    for s, words in enumerate(itertools.product(g.terminals, repeat=3)):
        assert probs[s] == pytest.approx(cyk_prob(rules, g.start, words), rel=1e-13)


@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 4))
def test_abstracted_pcfg_matches_cyk(seed, n_nt, n_t):
    g = random_pcfg(np.random.default_rng(seed), n_nt, n_t)
    fg = compile_grammar(abstract_pcfg(g))
    n = 4
    ref = cyk_batch(g.normalized(), g.nonterminals, g.terminals, g.start, n)
    for s, y in enumerate(itertools.product(range(n_t), repeat=n)):
        ll = discrete.inside_pass(fg, np.array(y)).log_likelihood
        assert math.exp(ll) == pytest.approx(ref[s], rel=1e-12, abs=1e-300)


@given(st.integers(0, 2**31 - 1))
def test_multi_variable_spec_matches_direct_recursion(seed):
    rng = np.random.default_rng(seed)
    spec = random_cnf_spec(rng, cards=(2, 3), n_terminals=3)
    n = int(rng.integers(1, 6))
    y = rng.integers(0, 3, size=n)
    ll = api.parse(spec, y).log_likelihood
    assert ll == pytest.approx(math.log(spec_sequence_prob(spec, y)), abs=1e-11)


def test_marginal_likelihood_equals_tree_sum():
    spec = random_cnf_spec(np.random.default_rng(7))
    y = [0, 2, 1, 1, 0]
    total, _ = exact_existence(spec, y)
    chart = api.parse(spec, y)
    assert api.marginal_likelihood(spec, chart) == pytest.approx(math.log(total), abs=1e-12)


# ------------------------------------------------------------- existence


@pytest.mark.parametrize("seed", range(6))
def test_existence_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    spec = random_cnf_spec(rng, zero_frac=0.3 if seed % 2 else 0.0)
    n = 2 + seed % 5
    y = rng.integers(0, 3, size=n)
    _, exact = exact_existence(spec, y)
    chart = api.parse(spec, y)
    e = api.existence_probs(spec, chart)
    for i, k in chart.cells():
        assert e[i, k] == pytest.approx(exact.get((i, k), 0.0), abs=1e-10)


@given(st.integers(0, 2**31 - 1), st.integers(3, 6))
def test_counting_identity(seed, n):
    rng = np.random.default_rng(seed)
    spec = random_cnf_spec(rng, cards=(int(rng.integers(1, 4)), int(rng.integers(1, 4))))
    y = rng.integers(0, 3, size=n)
    chart = api.parse(spec, y)
    assert api.existence_probs(spec, chart).sum() == pytest.approx(2 * n - 1, abs=1e-9)


def test_length_two_all_cells_certain():
    spec = random_cnf_spec(np.random.default_rng(3))
    chart = api.parse(spec, [1, 2])
    e = api.existence_probs(spec, chart)
    for s in [(0, 1), (1, 2), (0, 2)]:
        assert e[s] == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_width_one_cells_certain(seed, n):
    rng = np.random.default_rng(seed)
    spec = random_cnf_spec(rng)
    chart = api.parse(spec, rng.integers(0, 3, size=n))
    e = api.existence_probs(spec, chart)
    for i in range(n):
        assert e[i, i + 1] == pytest.approx(1.0, abs=1e-9)
    assert e[0, n] == pytest.approx(1.0, abs=1e-9)


def test_length_one_sequence():
    spec = random_cnf_spec(np.random.default_rng(4))
    chart = api.parse(spec, [2])
    assert chart.log_likelihood == pytest.approx(math.log(spec_sequence_prob(spec, [2])), abs=1e-13)
    assert api.existence_probs(spec, chart)[0, 1] == pytest.approx(1.0)


def test_node_posteriors_are_distributions():
    spec = random_cnf_spec(np.random.default_rng(5))
    chart = api.parse(spec, [0, 1, 2, 0])
    posts = api.node_posteriors(spec, chart)
    assert len(posts) == 10
    for p in posts:
        assert p.dist.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= p.existence_prob <= 1.0 + 1e-12


# ---------------------------------------------------------------- Viterbi


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_viterbi_matches_reference(seed, n):
    rng = np.random.default_rng(seed)
    g = random_pcfg(rng, 4, 3)
    fg = compile_grammar(abstract_pcfg(g))
    y = rng.integers(0, 3, size=n)
    ref, ref_spans = cyk_viterbi(g.normalized(), g.start, [g.terminals[v] for v in y])
    score, spans = discrete.viterbi(fg, y)
    if ref == 0.0:
        assert score == -np.inf
        return
    assert score == pytest.approx(math.log(ref), abs=1e-12)
    # exact ties between bracketings are possible; the chosen one must attain the optimum
    words = [g.terminals[v] for v in y]
    assert bracketing_max(g.normalized(), g.start, words, set(spans)) == pytest.approx(ref, rel=1e-12)
    assert bracketing_max(g.normalized(), g.start, words, ref_spans) == pytest.approx(ref, rel=1e-12)


def test_best_tree_is_most_probable_bracketing_labels():
    spec = random_cnf_spec(np.random.default_rng(9))
    y = [0, 1, 2, 2]
    chart = api.parse(spec, y)
    tree = api.best_tree(spec, chart)
    assert tree.check() == []
    assert api.viterbi_structure(spec, y).span_set() == tree.span_set()


# ------------------------------------------------------------ validation


def test_rejects_non_cnf():
    x = TemplateVariable("x", NON_TERMINAL, Categorical(1))
    yv = TemplateVariable("y", TERMINAL, Categorical(1))
    spec = RbnSpec(
        [x, yv],
        [
            Transition("x", ("x", "x", "x"), CategoricalKernel(np.ones((1, 1, 1, 1))), id="t"),
            Transition("x", ("y",), CategoricalKernel([[1.0]]), id="e"),
        ],
        [StructuralDistribution("x", [[0.3, 0.7]])],
        CategoricalPrior("x", [1.0]),
    )
    with pytest.raises(NotCnf):
        compile_grammar(spec)


def test_rejects_out_of_alphabet():
    spec = random_cnf_spec(np.random.default_rng(0))
    with pytest.raises(ValidationError):
        api.parse(spec, [0, 7])


def test_impossible_sequence_has_minus_inf():
    x = TemplateVariable("x", NON_TERMINAL, Categorical(1))
    yv = TemplateVariable("y", TERMINAL, Categorical(2))
    spec = RbnSpec(
        [x, yv],
        [
            Transition("x", ("x", "x"), CategoricalKernel(np.ones((1, 1, 1))), id="b"),
            Transition("x", ("y",), CategoricalKernel([[1.0, 0.0]]), id="e"),
        ],
        [StructuralDistribution("x", [[0.4, 0.6]])],
        CategoricalPrior("x", [1.0]),
    )
    assert api.parse(spec, [0, 0]).log_likelihood == pytest.approx(math.log(0.4 * 0.36))
    assert api.inside_pass(spec, [0, 1]).log_likelihood == -np.inf


def test_chart_accessors():
    spec = random_cnf_spec(np.random.default_rng(2))
    chart = api.inside_pass(spec, [0, 1, 2])
    assert not chart.has_outside
    with pytest.raises(ValueError):
        chart.outside(0, 3)
    with pytest.raises(IndexError):
        chart.inside(2, 2)
    rec = chart.backpointer(0, 3)
    assert rec.j in (1, 2) and not rec.used_terminal
    assert chart.backpointer(1, 2).used_terminal
