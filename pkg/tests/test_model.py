import math

import numpy as np
import pytest
from scipy import integrate, stats

from bshape.bernstein import BernsteinCurve, curve_eval
from bshape.model import (
    DegenerateGeneWarning,
    GenePriorSpec,
    HierarchicalModel,
    ModelError,
    ModelState,
    TimeCourseDataset,
    VarianceModel,
    beta_moment_match,
    build_prior_specs,
    fit_variance_model,
    log_likelihood,
    log_posterior,
    log_prior,
    onset_hyperbounds,
    replicate_means,
    sample_prior,
    sample_prior_batch,
    select_variance_exponent,
)

X6 = np.linspace(0.0, 1.0, 6)


def dataset_from_means(means, x=X6, spread=0.1, ids=None):
    means = np.asarray(means, dtype=float)
    G = means.shape[0]
    vals = tuple(np.stack([means[:, k] - spread, means[:, k] + spread], axis=1) for k in range(x.size))
    return TimeCourseDataset(x, np.full(x.size, 2), vals, ids or [f"g{i}" for i in range(G)])


def test_dataset_validation():
    with pytest.raises(ValueError):
        dataset_from_means([[1, 2, 3, 4, 5, 6]], x=np.array([0.0, 0.3, 0.2, 0.5, 0.8, 1.0]))
    with pytest.raises(ValueError):
        dataset_from_means([[1, 2, 3, 4, 5, math.nan]])
    with pytest.raises(ValueError):
        TimeCourseDataset(X6, np.full(6, 2), tuple(np.ones((1, 3)) for _ in X6), ["a"])


def test_replicate_means():
    x = np.array([0.0, 1.0])
    ds = TimeCourseDataset(x, [4, 4], (np.array([[1.0, 2.0, 3.0, 4.0]]), np.full((1, 4), 7.0)), ["a"])
    assert np.array_equal(replicate_means(ds, 0), [2.5, 7.0])
    rng = np.random.default_rng(0)
    vals = tuple(rng.normal(size=(3, 5)) for _ in X6)
    ds = TimeCourseDataset(X6, np.full(6, 5), vals, ["a", "b", "c"])
    naive = [sum(float(v) for v in vals[k][1]) / 5 for k in range(6)]
    assert np.allclose(replicate_means(ds, 1), naive, rtol=0, atol=1e-15)


def test_beta_moment_match_uniform():
    a, b = beta_moment_match(0.5, 1.0 / 12.0)
    assert a == pytest.approx(1.0, abs=1e-12) and b == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("mean, var", [(0.3, 0.21), (0.3, 0.25), (0.0, 0.01), (0.4, 0.0)])
def test_beta_moment_match_rejects(mean, var):
    with pytest.raises(ValueError):
        beta_moment_match(mean, var)


@pytest.mark.parametrize("a, b", [(2.7771, 2.4481), (0.7, 3.0), (12.0, 5.5)])
def test_beta_moment_match_round_trip(a, b):
    m1, _ = integrate.quad(lambda u: u * stats.beta.pdf(u, a, b), 0, 1, epsabs=1e-14, epsrel=1e-13)
    m2, _ = integrate.quad(lambda u: u * u * stats.beta.pdf(u, a, b), 0, 1, epsabs=1e-14, epsrel=1e-13)
    a2, b2 = beta_moment_match(m1, m2 - m1 * m1)
    assert abs(a2 - a) < 1e-8 * max(1.0, a) and abs(b2 - b) < 1e-8 * max(1.0, b)


HAND_MEANS = [
    [1.0, 1.5, 3.0, 5.0, 4.0, 2.0],   # peak 3, floor 2, midpoint (2+3) rounds up to 3
    [2.0, 3.0, 5.0, 6.0, 8.0, 7.0],   # peak 4, floor 2, midpoint 3
    [1.0, 1.0, 1.5, 2.0, 10.0, 3.0],  # peak 4, floor 4 (2.0 counts as <= twice the start)
]


def test_prior_specs_hand_table():
    ds = dataset_from_means(HAND_MEANS)
    specs, a1, a2, bounds = build_prior_specs(ds)
    table = [(s.onset_floor_index, s.peak_index, s.onset_scale, s.xtilde) for s in specs]
    assert table == [(2, 3, X6[3], X6[2]), (2, 4, X6[3], X6[2]), (4, 4, X6[4], X6[4])]
    assert [s.mu_bound for s in specs] == pytest.approx([2.0, 4.0, 2.0])
    assert [s.coeff_scale for s in specs] == pytest.approx([2 * 5.1, 2 * 8.1, 2 * 10.1])
    r = np.array([X6[2] / X6[3], X6[2] / X6[3], 1.0])
    ea, eb = beta_moment_match(r.mean(), ((r.max() - r.min()) / 4) ** 2)
    assert (a1, a2) == pytest.approx((ea, eb), rel=1e-12)
    assert bounds[0] == pytest.approx([ea - 0.5, ea + 0.5]) and bounds[1] == pytest.approx([eb - 0.5, eb + 0.5])
    assert np.array_equal(bounds[2:], [[0.5, 1.5], [0.5, 1.5]])


def test_prior_specs_exclude_degenerate_gene():
    ds = dataset_from_means(HAND_MEANS + [[1.0, 1.5, 2.0, 1.8, 1.0, 1.0]])
    with pytest.warns(DegenerateGeneWarning, match="g3"):
        specs, *_ = build_prior_specs(ds)
    assert [s.gene_id for s in specs] == ["g0", "g1", "g2"]
    with pytest.warns(DegenerateGeneWarning):
        model = HierarchicalModel.from_dataset(ds)
    assert model.dataset.gene_ids == ("g0", "g1", "g2")


def test_prior_specs_are_deterministic():
    ds = dataset_from_means(HAND_MEANS)
    assert build_prior_specs(ds)[0] == build_prior_specs(ds)[0]


def test_zero_spread_uses_variance_floor():
    ds = dataset_from_means([HAND_MEANS[0], HAND_MEANS[0]])
    specs, a1, a2, _ = build_prior_specs(ds)
    r = 2.0 / 3.0
    assert (a1, a2) == pytest.approx(beta_moment_match(r, r * (1 - r) / 100.0))


def test_all_genes_degenerate_is_an_error():
    ds = dataset_from_means([[1.0, 1.0, 1.5, 1.2, 1.0, 1.0]])
    with pytest.warns(DegenerateGeneWarning), pytest.raises(ModelError):
        build_prior_specs(ds)


def test_variance_exponent_constant_data_ties_to_zero():
    ds = dataset_from_means([[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], spread=0.0)
    xi, s2 = select_variance_exponent(ds, 0)
    assert xi == 0 and s2 > 0


def test_variance_exponent_needs_replicates():
    ds = TimeCourseDataset(X6, np.ones(6, dtype=int), tuple(np.ones((1, 1)) for _ in X6), ["a"])
    with pytest.raises(ValueError):
        select_variance_exponent(ds, 0)


def test_variance_exponent_loss_hand_check():
    rng = np.random.default_rng(4)
    vals = tuple(rng.uniform(1, 3, (1, 4)) * (k + 1) for k in range(6))
    ds = TimeCourseDataset(X6, np.full(6, 4), vals, ["a"])
    ybar = np.array([v.mean() for v in vals])
    s2 = np.array([v.var(ddof=1) for v in vals])
    losses = [np.sum((s2 / ybar ** x - np.mean(s2 / ybar ** x)) ** 2) / 5 for x in range(3)]
    xi, sigma2 = select_variance_exponent(ds, 0)
    assert xi == int(np.argmin(losses))
    assert sigma2 == pytest.approx(np.mean(s2 / ybar ** xi), rel=1e-12)


def two_point_model(y0, y1, xi=0, sigma2=0.5):
    x = np.array([0.0, 1.0])
    ds = TimeCourseDataset(x, [1, 1], (np.array([[y0]]), np.array([[y1]])), ["a"])
    spec = GenePriorSpec("a", onset_scale=0.5, onset_floor_index=1, peak_index=1, coeff_scale=4.0, mu_bound=1.0,
                         xtilde=1.0)
    var = VarianceModel(np.array([xi]), np.array([sigma2]), np.zeros((1, 2)))
    bounds = [[1.0, 3.0], [2.0, 2.5], [0.5, 1.5], [0.5, 1.5]]
    return HierarchicalModel(ds, [spec], bounds, var, order=3)


def test_log_posterior_scalar_hand_oracle():
    model = two_point_model(0.3, 2.9)
    state = ModelState([2.0, 2.2, 1.0, 0.8], [0.25], [[1.5, 2.5]], [0.4])
    f1 = 2.5  # F(1) is the last coefficient
    s2 = 0.5
    lik = stats.norm.logpdf(0.3, 0.4, math.sqrt(s2)) + stats.norm.logpdf(2.9, f1 + 0.4, math.sqrt(s2))
    prior = (-math.log(2.0) - math.log(0.5) - math.log(1.0) - math.log(1.0)
             + stats.beta.logpdf(0.25 / 0.5, 2.0, 2.2) - math.log(0.5)
             + stats.beta.logpdf(1.5 / 4.0, 1.0, 0.8) + stats.beta.logpdf(2.5 / 4.0, 1.0, 0.8) - 2 * math.log(4.0)
             - math.log(1.0))
    assert log_posterior(state, model) == pytest.approx(lik + prior, rel=1e-12)


def test_log_posterior_outside_support():
    model = two_point_model(0.3, 2.9)
    good = ModelState([2.0, 2.2, 1.0, 0.8], [0.25], [[1.5, 2.5]], [0.4])
    assert math.isfinite(log_posterior(good, model))
    bad = [
        ModelState([0.5, 2.2, 1.0, 0.8], [0.25], [[1.5, 2.5]], [0.4]),
        ModelState([2.0, 2.2, 1.0, 0.8], [0.6], [[1.5, 2.5]], [0.4]),
        ModelState([2.0, 2.2, 1.0, 0.8], [0.25], [[0.0, 0.0]], [0.4]),
        ModelState([2.0, 2.2, 1.0, 0.8], [0.25], [[1.5, 4.5]], [0.4]),
        ModelState([2.0, 2.2, 1.0, 0.8], [0.25], [[1.5, 2.5]], [1.4]),
    ]
    for s in bad:
        assert log_posterior(s, model) == -math.inf


def test_phi_change_only_moves_prior():
    ds = dataset_from_means(HAND_MEANS)
    model = HierarchicalModel.from_dataset(ds, order=6)
    st = sample_prior(model.specs, model.phi_bounds, np.random.default_rng(1), order=6)
    other = st.copy()
    other.phi = np.mean(model.phi_bounds, axis=1)
    diff = log_posterior(other, model) - log_posterior(st, model)
    assert diff == pytest.approx(log_prior(other, model) - log_prior(st, model), rel=1e-12, abs=1e-12)
    assert log_likelihood(other, model) == log_likelihood(st, model)


def test_replicate_order_invariance():
    rng = np.random.default_rng(2)
    vals = tuple(rng.uniform(1, 5, (3, 4)) for _ in X6)
    ds = TimeCourseDataset(X6, np.full(6, 4), vals, ["a", "b", "c"])
    perm = TimeCourseDataset(X6, np.full(6, 4), tuple(v[:, ::-1] for v in vals), ["a", "b", "c"])
    var = fit_variance_model(ds)
    spec = [GenePriorSpec(g, 0.6, 2, 4, 20.0, 10.0, 0.4) for g in "abc"]
    bounds = [[1, 2], [1, 2], [0.5, 1.5], [0.5, 1.5]]
    m1 = HierarchicalModel(ds, spec, bounds, var, order=5)
    m2 = HierarchicalModel(perm, spec, bounds, fit_variance_model(perm), order=5)
    st = sample_prior(spec, bounds, np.random.default_rng(3), order=5)
    assert log_posterior(st, m1) == pytest.approx(log_posterior(st, m2), rel=1e-13)


def test_location_shift_identity():
    model = two_point_model(0.3, 2.9)
    shifted = two_point_model(0.3 + 0.25, 2.9 + 0.25)
    st = ModelState([2.0, 2.2, 1.0, 0.8], [0.25], [[1.5, 2.5]], [0.4])
    moved = st.copy()
    moved.background = st.background + 0.25
    assert log_likelihood(moved, shifted) == pytest.approx(log_likelihood(st, model), rel=1e-13)


def test_sample_prior_support_and_density():
    ds = dataset_from_means(HAND_MEANS)
    model = HierarchicalModel.from_dataset(ds)
    rng = np.random.default_rng(7)
    for _ in range(300):
        st = sample_prior(model.specs, model.phi_bounds, rng)
        assert st.order == 15
        assert math.isfinite(log_prior(st, model))


def test_sample_prior_onset_mean():
    ds = dataset_from_means(HAND_MEANS)
    specs, _, _, bounds = build_prior_specs(ds)
    n = 100_000
    _, onset, _, _ = sample_prior_batch(specs, bounds, np.random.default_rng(12), n)
    u = onset[:, 0] / specs[0].onset_scale
    (l1, h1), (l2, h2) = bounds[0], bounds[1]
    expect, _ = integrate.dblquad(lambda p2, p1: p1 / (p1 + p2), l1, h1, l2, h2)
    expect /= (h1 - l1) * (h2 - l2)
    assert abs(u.mean() - expect) < 3 * u.std() / math.sqrt(n)


def test_sample_prior_uniform_coefficients():
    specs, _, _, bounds = build_prior_specs(dataset_from_means(HAND_MEANS))
    bounds = np.array(bounds)
    bounds[2:] = 1.0
    _, _, coeffs, _ = sample_prior_batch(specs, bounds, np.random.default_rng(5), 100_000)
    v = coeffs[:, 1, 4] / specs[1].coeff_scale
    assert stats.kstest(v, "uniform").statistic < 0.01


def test_batch_prior_matches_loop_prior():
    specs, _, _, bounds = build_prior_specs(dataset_from_means(HAND_MEANS))
    rng = np.random.default_rng(9)
    loop = np.array([sample_prior(specs, bounds, rng).onset for _ in range(3000)])
    _, batch, _, _ = sample_prior_batch(specs, bounds, np.random.default_rng(10), 3000)
    for g in range(3):
        assert stats.ks_2samp(loop[:, g], batch[:, g]).pvalue > 1e-3


def test_design_curve_matches_bernstein():
    from bshape.model import design_curves

    st = ModelState([1, 1, 1, 1], [0.3, 0.1], [[0.5, 2.0, 1.0], [1.0, 1.0, 3.0]], [0.0, 0.0])
    x = np.linspace(0, 1, 7)
    F = design_curves(st, x)
    for g in range(2):
        assert np.allclose(F[g], curve_eval(BernsteinCurve(st.onset[g], st.coeffs[g]), x), rtol=1e-13, atol=0)
