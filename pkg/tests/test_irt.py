import numpy as np
import pytest

from oracles import central_differences, naive_log_posterior

from greenwash.irt import (
    Classification,
    FitError,
    IrtConfig,
    IrtParams,
    McmcError,
    NonFiniteError,
    Posterior,
    ScoreSummary,
    classify,
    config_from_dict,
    fit_map,
    grad_log_posterior,
    laplace_draws,
    log_posterior,
    mcmc_validate,
    response_probability,
)
from greenwash.irt.config import ConfigError
from greenwash.irt.marginal import MarginalPosterior, sample_theta
from greenwash.matrix import MISSING, IndicatorMatrix, ItemDescriptor, from_rows
from greenwash.simulate import SimConfig, generate


def random_instance(seed, n_ads=None, n_items=None, anchors=True):
    rng = np.random.default_rng(seed)
    n = n_ads or int(rng.integers(2, 51))
    J = n_items or int(rng.integers(2, 11))
    keys = [f"item{j}" for j in range(J)]
    if anchors and J >= 2:
        keys[0], keys[1] = "natural_gas", "fossil_fuel"
    missable = rng.random(J) < 0.5
    items = tuple(ItemDescriptor(k, "llm" if m else "keyword", bool(m)) for k, m in zip(keys, missable))
    cells = rng.integers(0, 2, size=(n, J))
    cells[(rng.random((n, J)) < 0.25) & missable] = MISSING
    order = np.argsort(keys)
    matrix = IndicatorMatrix(tuple(f"a{i:02d}" for i in range(n)), tuple(items[k] for k in order), cells[:, order])
    M = len(matrix.missable)
    params = IrtParams(rng.normal(0, 1.5, n), rng.normal(0, 1.5, J), rng.normal(0, 1, J),
                       rng.normal(0, 1.5, M), rng.normal(0, 1, M))
    return matrix, params


def oracle_value(matrix, params, config):
    return naive_log_posterior(params.theta, params.disc_raw, params.difficulty, params.miss_disc_raw,
                               params.miss_difficulty, matrix, config.discrimination_priors,
                               config.missing_discrimination, config.theta_sd, config.difficulty_sd)


def one_cell(value, missable):
    item = ItemDescriptor("x", "llm" if missable else "keyword", missable)
    return IndicatorMatrix(("a",), (item,), np.array([[value]]))


# likelihood


def test_single_observed_cell_at_zero():
    cfg = IrtConfig()
    m = one_cell(1, False)
    post = Posterior(m, cfg)
    ll, _ = post.log_likelihood_and_grad(IrtParams.zeros(m), want_grad=False)
    assert ll == pytest.approx(np.log(0.5), abs=1e-15)


def test_single_missing_cell_at_zero():
    m = one_cell(MISSING, True)
    ll, _ = Posterior(m, IrtConfig()).log_likelihood_and_grad(IrtParams.zeros(m), want_grad=False)
    assert ll == pytest.approx(np.log(0.5), abs=1e-15)


def test_two_by_two_against_oracle():
    items = (ItemDescriptor("fossil_fuel", "llm", True), ItemDescriptor("natural_gas"))
    m = from_rows(("a", "b"), items, [[None, 1], [0, 0]])
    params = IrtParams(np.array([0.3, -0.7]), np.array([0.2, -0.4]), np.array([0.1, 0.5]),
                       np.array([0.6]), np.array([-0.2]))
    cfg = IrtConfig()
    assert abs(log_posterior(params, m, cfg) - oracle_value(m, params, cfg)) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_log_posterior_matches_naive_loop(seed):
    m, params = random_instance(seed, n_ads=int(3 + 2 * seed), n_items=int(2 + seed % 6))
    cfg = IrtConfig()
    assert abs(log_posterior(params, m, cfg) - oracle_value(m, params, cfg)) < 1e-12


def test_non_finite_reports_index():
    m, params = random_instance(0, 5, 3)
    params.difficulty[1] = np.nan
    with pytest.raises(NonFiniteError) as exc:
        log_posterior(params, m, IrtConfig())
    assert exc.value.index == 5 + 3 + 1


# gradients


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    m, params = random_instance(100 + seed)
    cfg = IrtConfig()
    post = Posterior(m, cfg)
    x = params.pack()
    fd = central_differences(lambda v: post.log_posterior(post.unpack(v)), x)
    an = grad_log_posterior(params, m, cfg)
    err = np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd)))
    assert err < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_marginal_gradient_matches_finite_differences(seed):
    m, params = random_instance(200 + seed, n_ads=30, n_items=6)
    mp = MarginalPosterior(m, IrtConfig())
    z = params.pack()[m.shape[0]:]
    fd = central_differences(mp.value, z)
    _, an = mp.value_and_grad(z)
    assert np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd))) < 1e-5


def _flip(priors):
    return {k: (b, a) for k, (a, b) in priors.items()}


def test_reflection_negates_theta_gradient():
    m, p = random_instance(7, 12, 5)
    cfg = IrtConfig()
    flipped = cfg.with_(discrimination_priors=_flip(cfg.discrimination_priors))
    q = IrtParams(-p.theta, -p.disc_raw, p.difficulty, -p.miss_disc_raw, p.miss_difficulty)
    g, gq = grad_log_posterior(p, m, cfg), grad_log_posterior(q, m, flipped)
    n = m.shape[0]
    np.testing.assert_allclose(gq[:n], -g[:n], atol=1e-12)
    assert log_posterior(q, m, flipped) == pytest.approx(log_posterior(p, m, cfg), abs=1e-10)


def test_response_swap_negates_theta_gradient():
    m, p = random_instance(8, 12, 5, anchors=False)
    cfg = IrtConfig()
    cells = np.where(m.cells == MISSING, MISSING, 1 - m.cells)
    swapped = IndicatorMatrix(m.ads, m.items, cells)
    q = IrtParams(-p.theta, p.disc_raw, -p.difficulty, -p.miss_disc_raw, p.miss_difficulty)
    n = m.shape[0]
    np.testing.assert_allclose(grad_log_posterior(q, swapped, cfg)[:n], -grad_log_posterior(p, m, cfg)[:n],
                               atol=1e-12)


def test_thread_count_invariance():
    m, p = random_instance(9, 50, 8)
    one = IrtConfig(chunk_size=7)
    four = one.with_(threads=4)
    assert log_posterior(p, m, one) == log_posterior(p, m, four)
    np.testing.assert_array_equal(grad_log_posterior(p, m, one), grad_log_posterior(p, m, four))


# MAP fit


@pytest.fixture(scope="module")
def sim500():
    ds = generate(SimConfig(n_ads=500, seed=11))
    cfg = IrtConfig(seed=11)
    return ds, cfg, fit_map(ds.matrix, cfg)


def test_map_recovers_scores(sim500):
    ds, _, fit = sim500
    assert fit.converged and fit.grad_norm < 1e-4
    assert np.corrcoef(fit.params.theta, ds.truth.theta)[0, 1] >= 0.9
    lam = dict(zip(ds.matrix.keys, fit.params.discrimination))
    assert lam["natural_gas"] > 0.9 and lam["fossil_fuel"] < -0.9


def test_map_theta_is_conditional_mode(sim500):
    ds, cfg, fit = sim500
    _, g = Posterior(ds.matrix, cfg).value_and_grad(fit.params)
    assert np.max(np.abs(g[: ds.matrix.shape[0]])) < 1e-6


def test_identical_rows_give_equal_scores():
    items = (ItemDescriptor("fossil_fuel"), ItemDescriptor("llm_a", "llm", True), ItemDescriptor("natural_gas"))
    m = from_rows(tuple(f"a{i}" for i in range(6)), items, [[0, 1, 1]] * 6)
    fit = fit_map(m, IrtConfig())
    assert np.ptp(fit.params.theta) < 1e-6
    assert np.all(np.isfinite(fit.params.theta))


def test_rotation_needs_anchor():
    m, _ = random_instance(3, 10, 4, anchors=False)
    with pytest.raises(FitError, match="rotation unidentified"):
        fit_map(m, IrtConfig())


def test_too_small_matrix():
    with pytest.raises(FitError):
        fit_map(one_cell(1, False), IrtConfig())


# draws


@pytest.fixture(scope="module")
def small_posterior():
    ds = generate(SimConfig(n_ads=80, seed=5))
    cfg = IrtConfig(seed=5, draws=400, item_groups=40, hmc_burn=40)
    fit = fit_map(ds.matrix, cfg)
    return ds, cfg, fit, laplace_draws(fit, ds.matrix, cfg)


def test_draw_summaries_ordered(small_posterior):
    _, cfg, _, post = small_posterior
    assert post.n_draws == cfg.draws
    for _, s, _ in post.score_table():
        assert s.q05 <= s.mean <= s.q95
    for _, _, s in post.item_table():
        assert s.q05 <= s.mean <= s.q95


def test_discrimination_draws_bounded(small_posterior):
    post = small_posterior[3]
    for arr in (post.discrimination, post.miss_discrimination):
        assert np.all(np.abs(arr) < 1.0)


def test_draws_reproducible(small_posterior):
    ds, cfg, fit, post = small_posterior
    again = laplace_draws(fit, ds.matrix, cfg)
    np.testing.assert_array_equal(post.theta, again.theta)


def test_gaussian_item_sampler(small_posterior):
    ds, cfg, fit, _ = small_posterior
    post = laplace_draws(fit, ds.matrix, cfg.with_(item_sampler="gaussian"))
    assert post.diagnostics["item_sampler"] == "gaussian"
    assert np.all(np.abs(post.discrimination) < 1.0)


def test_theta_draws_match_curvature_one_ad():
    # exact conditional of one score given items against the analytic curvature at the mode
    m = one_cell(1, False)
    cfg = IrtConfig(theta_sd=1.0, grid_points=801)
    mp = MarginalPosterior(m, cfg)
    z = np.array([1.5, 0.3])
    mode = mp.theta_modes(z)
    lam = np.tanh(0.75)
    p = 1 / (1 + np.exp(-(lam * mode[0] - 0.3)))
    curvature = lam**2 * p * (1 - p) + 1.0
    draws = sample_theta(mp.theta_log_conditional(z), mp.nodes, 200000, np.random.default_rng(0))
    assert draws.std() == pytest.approx(curvature**-0.5, rel=0.05)


def test_wider_prior_widens_intervals():
    ds = generate(SimConfig(n_ads=60, seed=2))
    widths = []
    for sd in (1.0, 10.0):
        cfg = IrtConfig(theta_sd=sd, seed=2, draws=400, item_groups=40, hmc_burn=40)
        post = laplace_draws(fit_map(ds.matrix, cfg), ds.matrix, cfg)
        widths.append(np.array([s.q95 - s.q05 for _, s, _ in post.score_table()]))
    assert np.all(widths[1] >= widths[0])


# MCMC


def test_mcmc_deterministic_and_guarded():
    ds = generate(SimConfig(n_ads=30, seed=1))
    cfg = IrtConfig(seed=1, mcmc_iter=300, mcmc_burn=100, draws=100)
    a, b = mcmc_validate(ds.matrix, cfg), mcmc_validate(ds.matrix, cfg)
    np.testing.assert_array_equal(a.theta, b.theta)
    with pytest.raises(McmcError):
        mcmc_validate(ds.matrix, cfg.with_(mcmc_max_ads=10))


def test_mcmc_flat_data_stays_near_prior():
    rng = np.random.default_rng(4)
    items = tuple(ItemDescriptor(f"item{j}") for j in range(4))
    m = IndicatorMatrix(tuple(f"a{i:02d}" for i in range(60)), items, rng.integers(0, 2, (60, 4)))
    cfg = IrtConfig(theta_sd=1.0, discrimination_priors={"item0": (1.5, 1.0)}, seed=4,
                    mcmc_iter=3000, mcmc_burn=1000, draws=500)
    post = mcmc_validate(m, cfg)
    assert post.theta.std() == pytest.approx(1.0, rel=0.15)


# classification and config


@pytest.mark.parametrize("summary,expected", [
    ((7.05, 3.06, 10.9), Classification.GREENWASHING),
    ((0.0, -1.0, 1.0), Classification.UNCLASSIFIED),
    ((-2.0, -3.0, -0.5), Classification.NON_GREENWASHING),
    ((0.5, 0.0, 1.0), Classification.UNCLASSIFIED),
    ((-0.5, -1.0, 0.0), Classification.UNCLASSIFIED),
    ((0.1, 1e-9, 0.2), Classification.GREENWASHING),
    ((-0.1, -0.2, -1e-9), Classification.NON_GREENWASHING),
    ((0.0, 0.0, 0.0), Classification.UNCLASSIFIED),
])
def test_classification_rule(summary, expected):
    assert classify(ScoreSummary(*summary)) is expected


def test_classify_rejects_inverted_interval():
    with pytest.raises(ValueError):
        classify(ScoreSummary(0.0, 1.0, -1.0))


def test_response_probability_monotone():
    theta = np.linspace(-5, 5, 101)
    p = response_probability(theta, 0.4, 0.2)
    assert np.all(np.diff(p) > 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        IrtConfig(draws=0)
    with pytest.raises(ConfigError):
        IrtConfig(tol=0)
    with pytest.raises(ConfigError):
        IrtConfig(discrimination_priors={"x": (0, 1)})
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"nonsense": 1})
    cfg = config_from_dict({"discrimination_priors": {"fossil_fuel": None, "coal": [2, 1]}})
    assert "fossil_fuel" not in cfg.discrimination_priors and cfg.prior_for("coal") == (2.0, 1.0)
