import csv
import io
import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import gaussian_logpdf, grbn_exact_loglik
from rbn.chart import GrbnParams, api, gaussian
from rbn.errors import LengthMismatch, NonFinite, ValidationError
from rbn.model.sampling import sample_with_rng
from rbn.synth import SynthConfig, generate_dataset


def random_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T / d + 0.5 * np.eye(d))


def random_params(rng, d, transpositions=None, multi=False):
    w = None
    if transpositions is not None:
        w = np.zeros(d)
        w[transpositions] = 1.0
    return GrbnParams(
        prior_mean=rng.standard_normal(d),
        prior_cov=random_spd(rng, d),
        left_cov=random_spd(rng, d, 0.5),
        right_cov=random_spd(rng, d, 0.5),
        term_cov=random_spd(rng, d, 0.3),
        p_term=float(rng.uniform(0.2, 0.8)),
        transposition_weights=w,
        transpositions=transpositions is not None,
        rate=float(rng.uniform(0.5, 3.0)) if multi else 0.0,
        multi_terminal=multi,
    )


# ------------------------------------------------------- worked example


def test_worked_example_inside_values(appb_params, appb_y):
    chart = api.inside_pass(appb_params, appb_y)
    c = np.exp(chart.in_log_c)
    for i in range(4):
        assert c[i, i + 1] == pytest.approx(0.5, abs=1e-15)
        assert chart.in_mean[i, i + 1, 0] == appb_y[i, 0]
        assert chart.in_cov[i, i + 1, 0, 0] == 1.0
    assert c[0, 2] == pytest.approx(2.20e-2, rel=5e-3)
    assert chart.in_mean[0, 2, 0] == pytest.approx(0.5, abs=1e-12)
    assert chart.in_cov[0, 2, 0, 0] == pytest.approx(1.0, abs=1e-12)
    assert c[2, 4] == pytest.approx(1.51e-2, rel=5e-3)
    assert chart.in_mean[2, 4, 0] == pytest.approx(1.0, abs=1e-12)
    assert c[0, 3] == pytest.approx(1.66e-3, rel=5e-3)
    assert chart.in_cov[0, 3, 0, 0] == pytest.approx(17 / 16, abs=1e-12)
    assert c[1, 4] == pytest.approx(1.58e-3, rel=5e-3)
    assert chart.in_mean[1, 4, 0] == pytest.approx(0.869, abs=1e-3)
    assert chart.in_cov[1, 4, 0, 0] == pytest.approx(1.016, abs=1e-3)
    assert c[0, 4] == pytest.approx(1.76e-4, rel=5e-3)
    assert chart.in_mean[0, 4, 0] == pytest.approx(0.515, abs=1e-3)
    assert chart.in_cov[0, 4, 0, 0] == pytest.approx(1.021, abs=1e-3)


def test_worked_example_likelihood_and_tree(appb_params, appb_y):
    t0 = time.perf_counter()
    chart = api.parse(appb_params, appb_y)
    tree = api.best_tree(appb_params, chart)
    assert time.perf_counter() - t0 < 1.0
    assert math.exp(chart.log_likelihood) == pytest.approx(4.63e-5, rel=1e-2)
    assert chart.backpointer(0, 4).j == 3
    assert tree.span_set() == {(0, 4), (0, 3), (3, 4), (0, 1), (1, 3), (1, 2), (2, 3)}
    assert tree.check() == []


def test_worked_example_tie_policy(appb_params, appb_y):
    chart = api.inside_pass(appb_params, appb_y)
    scores = []
    # both splits of (0, 3) give identical scores; the lowest j wins
    assert chart.backpointer(0, 3).j == 1
    picks = {api.inside_pass(appb_params, appb_y, tie_rng=np.random.default_rng(s)).backpointer(0, 3).j for s in range(20)}
    assert picks == {1, 2}
    scores.append(chart.backpointer(0, 3).score)
    again = api.inside_pass(appb_params, appb_y, tie_rng=np.random.default_rng(3))
    assert again.backpointer(0, 3).score == scores[0]


# ------------------------------------------------------ exact small cases


def test_single_observation_closed_form(appb_params):
    chart = api.parse(appb_params, [[0.0]])
    want = math.log(0.5) + gaussian_logpdf([0.0], [0.0], [[2.0]])
    assert chart.log_likelihood == pytest.approx(want, abs=1e-14)


def test_single_observation_multi_terminal():
    p = GrbnParams(prior_mean=[0.0], prior_cov=1.0, left_cov=1.0, right_cov=1.0, term_cov=1.0, p_term=0.5, rate=2.0, multi_terminal=True)
    want = math.log(0.5) - 2.0 + gaussian_logpdf([0.3], [0.0], [[2.0]])
    assert api.inside_pass(p, [[0.3]]).log_likelihood == pytest.approx(want, abs=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("n", [1, 2])
def test_no_mixture_matches_exact_integral(d, n):
    rng = np.random.default_rng(10 * d + n)
    p = random_params(rng, d, transpositions=d - 1 if d > 1 else None)
    y = rng.standard_normal((n, d))
    assert api.inside_pass(p, y).log_likelihood == pytest.approx(grbn_exact_loglik(p, y), abs=1e-12)


def _joint_cov(blocks, d):
    """Covariance of stacked linear combinations ``sum_b A_b e_b`` of independent noises."""
    a = np.hstack([np.vstack(col) for col in blocks])
    return a


def test_length_two_outside_is_exact():
    rng = np.random.default_rng(4)
    d = 2
    p = random_params(rng, d, transpositions=1)
    y = rng.standard_normal((2, d))
    chart = api.parse(p, y)
    T = np.roll(np.eye(d), 1, axis=1)
    Lp, Ll, Lr, Lt = (np.linalg.cholesky(c) for c in (p.prior_cov, p.left_cov, p.right_cov, p.term_cov))
    Z = np.zeros((d, d))
    mu = p.prior_mean
    log_w = math.log1p(-p.p_term) + math.log(p.p_term)
    # noises (root, left, right, term0, term1); left = T root + eL, right = root + eR
    left = np.hstack([T @ Lp, Ll, Z, Z, Z])
    right = np.hstack([Lp, Z, Lr, Z, Z])
    y0 = np.hstack([T @ Lp, Ll, Z, Lt, Z])
    y1 = np.hstack([Lp, Z, Lr, Z, Lt])
    for (i, k), var, obs, other, obs_mean in [
        ((0, 1), left, y1, y[1], mu),
        ((1, 2), right, y0, y[0], T @ mu),
    ]:
        a = np.vstack([var, obs])
        cov = a @ a.T
        mean = np.concatenate([T @ mu if (i, k) == (0, 1) else mu, obs_mean])
        msg = chart.outside(i, k)
        for _ in range(5):
            x = rng.standard_normal(d)
            want = log_w + gaussian_logpdf(np.concatenate([x, other]), mean, cov)
            got = msg.log_c + gaussian_logpdf(x, msg.mean, msg.cov)
            assert got == pytest.approx(want, abs=1e-12)
    e = api.existence_probs(p, chart)
    for s in [(0, 1), (1, 2), (0, 2)]:
        assert e[s] == pytest.approx(1.0, abs=1e-12)


def test_root_outside_is_prior(appb_params, appb_y):
    chart = api.parse(appb_params, appb_y)
    root = chart.outside(0, 4)
    assert root.log_c == 0.0
    assert np.array_equal(root.mean, appb_params.prior_mean)
    assert np.array_equal(root.cov, appb_params.prior_cov)


# ------------------------------------------------------------- existence


@given(st.integers(0, 2**31 - 1), st.integers(1, 9), st.booleans())
def test_root_existence_is_one(seed, n, multi):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    p = random_params(rng, d, transpositions=0 if d == 1 else int(rng.integers(d)), multi=multi)
    chart = api.parse(p, rng.standard_normal((n, d)))
    assert api.existence_probs(p, chart)[0, n] == pytest.approx(1.0, abs=1e-9)


def test_leaf_existence_close_to_one(appb_params, appb_y):
    # exact value is 1; the single-Gaussian reduction leaves a small deviation
    e = api.existence_probs(appb_params, api.parse(appb_params, appb_y))
    for i in range(4):
        assert e[i, i + 1] == pytest.approx(1.0, abs=1e-2)


def test_node_posteriors_cover_chart(appb_params, appb_y):
    chart = api.parse(appb_params, appb_y)
    posts = api.node_posteriors(appb_params, chart)
    assert [p.span for p in posts] == list(chart.cells())
    assert posts[-1].existence_prob == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValidationError):
        api.node_posteriors(appb_params, api.inside_pass(appb_params, appb_y))


# ------------------------------------------------------------ invariances


@given(st.integers(0, 2**31 - 1))
def test_sub_chart_bit_identical(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    p = random_params(rng, d, transpositions=None, multi=bool(rng.integers(2)))
    y = rng.standard_normal((8, d))
    a, b = int(rng.integers(0, 4)), int(rng.integers(5, 9))
    full = api.inside_pass(p, y)
    sub = api.inside_pass(p, y[a:b])
    m = b - a
    iu, ku = np.triu_indices(m + 1, k=1)
    assert np.array_equal(full.in_log_c[a:b + 1, a:b + 1][iu, ku], sub.in_log_c[iu, ku])
    assert np.array_equal(full.in_mean[a:b + 1, a:b + 1][iu, ku], sub.in_mean[iu, ku])
    assert np.array_equal(full.in_cov[a:b + 1, a:b + 1][iu, ku], sub.in_cov[iu, ku])


def test_reversal_symmetry():
    rng = np.random.default_rng(2)
    c = random_spd(rng, 2, 0.5)
    p = GrbnParams(prior_mean=[0.0, 1.0], prior_cov=np.eye(2), left_cov=c, right_cov=c, term_cov=0.2, p_term=0.4)
    y = rng.standard_normal((6, 2))
    assert api.inside_pass(p, y).log_likelihood == pytest.approx(api.inside_pass(p, y[::-1]).log_likelihood, abs=1e-12)


def test_inflated_terminal_noise_lowers_fit():
    cfg = SynthConfig(noise=0.01)
    params = cfg.params()
    loose = params.with_(term_cov=params.term_cov * 10)
    for y, _ in generate_dataset(cfg, 20, seed=5):
        assert api.inside_pass(loose, y).log_likelihood <= api.inside_pass(params, y).log_likelihood


def test_per_observation_covariances():
    rng = np.random.default_rng(6)
    p = random_params(rng, 2)
    y = rng.standard_normal((5, 2))
    same = api.inside_pass(p, y, term_covs=np.broadcast_to(p.term_cov, (5, 2, 2)))
    assert same.log_likelihood == pytest.approx(api.inside_pass(p, y).log_likelihood, abs=1e-12)
    diag = api.inside_pass(p, y, term_covs=np.ones((5, 2)))
    full = api.inside_pass(p, y, term_covs=np.broadcast_to(np.eye(2), (5, 2, 2)))
    assert diag.log_likelihood == full.log_likelihood
    with pytest.raises(LengthMismatch):
        api.inside_pass(p, y, term_covs=np.ones((4, 2)))


# ------------------------------------------------------------- best tree


def test_best_tree_two_observations(appb_params):
    tree = api.best_tree(appb_params, api.parse(appb_params, [[0.0], [1.0]]))
    assert tree.span_set() == {(0, 2), (0, 1), (1, 2)}


def test_best_tree_multi_terminal_leaf():
    p = GrbnParams(prior_mean=[0.0], prior_cov=1.0, left_cov=1.0, right_cov=1.0, term_cov=0.01, p_term=0.5, rate=5.0, multi_terminal=True)
    y = np.array([[0.0], [0.0], [0.0], [5.0], [5.0], [5.0]])
    tree = api.best_tree(p, api.parse(p, y))
    assert tree.check() == []
    assert {(0, 3), (3, 6)} <= tree.span_set()
    assert chart_leaf(tree, (0, 3))


def chart_leaf(tree, span):
    node = next(nd for nd in tree.latent_nodes() if nd.span == span)
    return all(ch.terminal for ch in node.children)


def test_best_tree_recovers_low_noise_truth():
    cfg = SynthConfig(noise=0.01)
    params = cfg.params()
    hits = 0
    data = generate_dataset(cfg, 50, seed=1)
    for y, truth in data:
        tree = api.best_tree(params, api.inside_pass(params, y))
        hits += tree.span_set() == truth.span_set()
    assert hits >= 45


def test_best_tree_transpositions_recorded():
    rng = np.random.default_rng(8)
    p = GrbnParams(
        prior_mean=np.zeros(3),
        prior_cov=np.eye(3),
        left_cov=1e-4 * np.eye(3),
        right_cov=1e-4 * np.eye(3),
        term_cov=1e-4 * np.eye(3),
        p_term=0.5,
        transpositions=True,
        transposition_weights=[0.5, 0.5, 0.0],
    )
    x = rng.standard_normal(3)
    y = np.stack([np.roll(x, -1), x])  # left child is T_1 x
    tree = api.best_tree(p, api.parse(p, y))
    assert tree.root.tau == 1


# ------------------------------------------------------------ validation


def test_rejects_bad_observations(appb_params):
    with pytest.raises(LengthMismatch):
        api.inside_pass(appb_params, np.zeros((3, 2)))
    with pytest.raises(LengthMismatch):
        api.inside_pass(appb_params, np.zeros((0, 1)))
    with pytest.raises(NonFinite):
        api.inside_pass(appb_params, [[0.0], [np.nan]])


def test_params_validation():
    with pytest.raises(ValidationError):
        GrbnParams(prior_mean=[0.0], prior_cov=1.0, left_cov=1.0, right_cov=1.0, term_cov=1.0, p_term=1.0)
    with pytest.raises(ValidationError):
        GrbnParams(prior_mean=[0.0, 0.0], prior_cov=1.0, left_cov=1.0, right_cov=1.0, term_cov=-1.0, p_term=0.5)
    with pytest.raises(ValidationError):
        GrbnParams(prior_mean=[0.0, 0.0], prior_cov=1.0, left_cov=1.0, right_cov=1.0, term_cov=1.0, p_term=0.5, transposition_weights=[0.7, 0.7])


def test_params_spec_round_trip():
    p = random_params(np.random.default_rng(1), 3, transpositions=2, multi=True)
    back = GrbnParams.from_spec(p.to_spec())
    for name in ("prior_mean", "prior_cov", "left_cov", "right_cov", "term_cov", "transposition_weights"):
        assert np.array_equal(getattr(back, name), getattr(p, name))
    assert (back.p_term, back.rate, back.multi_terminal, back.transpositions) == (p.p_term, p.rate, True, True)
    # model-agnostic entry points accept the spec form
    y = np.random.default_rng(2).standard_normal((4, 3))
    assert api.inside_pass(p.to_spec(), y).log_likelihood == api.inside_pass(p, y).log_likelihood


# ------------------------------------------------------------ chart export


def test_chart_csv(appb_params, appb_y):
    chart = api.parse(appb_params, appb_y)
    rows = list(csv.reader(io.StringIO(api.export_chart_csv(appb_params, chart))))
    assert rows[0] == ["i", "k", "existence_prob", "mean_1", "var_1", "best_j", "best_tau"]
    assert len(rows) == 1 + 10
    root = next(r for r in rows[1:] if r[:2] == ["0", "4"])
    assert float(root[2]) == pytest.approx(1.0, abs=1e-9)
    assert root[5] == "3"
    leaf = next(r for r in rows[1:] if r[:2] == ["2", "3"])
    assert leaf[5] == "-1"


def test_chart_csv_without_outside(appb_params, appb_y):
    text = api.export_chart_csv(appb_params, api.inside_pass(appb_params, appb_y))
    first = text.splitlines()[1].split(",")
    assert first[2] == "nan"


def test_sampled_sequences_parse():
    cfg = SynthConfig()
    params = cfg.params()
    rng = np.random.default_rng(0)
    for _ in range(3):
        tree, y = sample_with_rng(params, rng)
        chart = api.inside_pass(params, y)
        assert np.isfinite(chart.log_likelihood)
        assert gaussian.log_marginal(params, y) == chart.log_likelihood
