import numpy as np
import pytest

from oracles import normal_equations

from greenwash.ingest import parse_covariates
from greenwash.stats import (
    OlsFit,
    StatsError,
    design_matrix,
    fit_model,
    fit_table,
    marginal_effect,
    ols,
    parse_terms,
)


def with_intercept(x):
    return np.column_stack([np.ones(len(x)), x])


@pytest.mark.parametrize("seed", range(10))
def test_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    X = with_intercept(rng.normal(size=(20, 2)))
    y = rng.normal(size=20)
    fit = ols(X, y)
    np.testing.assert_allclose(fit.coef, normal_equations(X, y), rtol=0, atol=1e-10)
    # residuals orthogonal to the design
    assert np.max(np.abs(X.T @ fit.resid)) < 1e-8 * np.linalg.norm(y)
    # classical covariance
    np.testing.assert_allclose(fit.cov, fit.resid_se**2 * np.linalg.inv(X.T @ X), rtol=1e-10)


def test_exact_fit():
    x = np.arange(5.0)
    fit = ols(with_intercept(x), 2 * x + 1)
    np.testing.assert_allclose(fit.coef, [1.0, 2.0], atol=1e-12)
    assert fit.r2 == 1.0 and fit.resid_se == pytest.approx(0.0, abs=1e-12)
    assert fit.f_stat == np.inf


def test_constant_outcome():
    fit = ols(with_intercept(np.arange(6.0)), np.full(6, 3.0))
    assert fit.coef[1] == pytest.approx(0.0, abs=1e-12) and fit.r2 == 0.0


def test_rank_deficiency_named():
    x = np.arange(6.0)
    with pytest.raises(StatsError, match="x2"):
        ols(np.column_stack([np.ones(6), x, 2 * x]), x, names=["(Intercept)", "x1", "x2"])


def test_affine_equivariance():
    rng = np.random.default_rng(1)
    X = with_intercept(rng.normal(size=(30, 2)))
    y = rng.normal(size=30)
    a = ols(X, y)
    Xs = X.copy()
    Xs[:, 1] *= 7.5
    b = ols(Xs, y)
    assert b.coef[1] == pytest.approx(a.coef[1] / 7.5, rel=1e-10)
    assert b.r2 == pytest.approx(a.r2, abs=1e-10) and b.f_stat == pytest.approx(a.f_stat, rel=1e-10)
    np.testing.assert_allclose(b.fitted, a.fitted, atol=1e-10)


def test_noise_column_never_lowers_r2():
    rng = np.random.default_rng(2)
    for _ in range(20):
        X = with_intercept(rng.normal(size=(25, 2)))
        y = X @ [1.0, 0.5, -0.3] + rng.normal(size=25)
        assert ols(np.column_stack([X, rng.normal(size=25)]), y).r2 >= ols(X, y).r2 - 1e-12


TABLE = parse_covariates(
    "unit_id,y,polyarchy,oil\n"
    + "".join(f"u{i},{0.3 * i + (i % 3)},{0.1 * i},{(i * 7) % 5}\n" for i in range(12))
    + "u12,1.0,NA,2\n"
)


def test_design_matrix_columns_and_drops():
    spec = parse_terms("y", "polyarchy + oil + polyarchy^2 + oil^2 + polyarchy:oil")
    dm = design_matrix(TABLE, spec)
    assert dm.X.shape == (12, 6) and dm.dropped == 1
    assert dm.names == ["(Intercept)", "polyarchy", "oil", "polyarchy^2", "oil^2", "polyarchy:oil"]
    np.testing.assert_array_equal(dm.X[:, 5], dm.X[:, 1] * dm.X[:, 2])


def test_star_expands():
    spec = parse_terms("y", "polyarchy*oil")
    assert spec.column_names == ["(Intercept)", "polyarchy", "oil", "polyarchy:oil"]


def test_insufficient_observations():
    small = parse_covariates("unit_id,y,x\na,1,1\nb,2,NA\n")
    with pytest.raises(StatsError, match="insufficient observations"):
        design_matrix(small, parse_terms("y", "x"))


def fixed_fit(b_t, b_tr, cov=None):
    names = ["(Intercept)", "transition", "republican", "transition:republican"]
    coef = np.array([0.1, b_t, 0.2, b_tr])
    return OlsFit(names, coef, np.eye(4) * 0.01 if cov is None else cov, 100, 96)


def test_marginal_effect_reported_coefficients():
    fit = fixed_fit(0.674, -0.683)
    (m0, e0, _), (m1, e1, _) = marginal_effect(fit, None, "transition", "republican", [0, 1])
    assert e0 == 0.674
    assert e1 == pytest.approx(-0.009, abs=1e-12)


def test_marginal_effect_delta_method():
    cov = np.diag([0.01, 0.04, 0.01, 0.09])
    cov[1, 3] = cov[3, 1] = -0.02
    fit = fixed_fit(0.5, 0.0, cov)
    rows = marginal_effect(fit, None, "transition", "republican", [0.0, 0.5, 2.0])
    assert [e for _, e, _ in rows] == [0.5, 0.5, 0.5]
    for m, _, se in rows:
        assert se == pytest.approx(np.sqrt(0.04 + m * m * 0.09 - 2 * m * 0.02), rel=1e-12)


def test_marginal_effect_needs_interaction():
    fit, _ = fit_model(TABLE, parse_terms("y", "polyarchy + oil"))
    with pytest.raises(StatsError, match="interaction"):
        marginal_effect(fit, None, "polyarchy", "oil", [0])


def test_fit_table_block():
    fit, dm = fit_model(TABLE, parse_terms("y", "polyarchy + oil"))
    lines = fit_table(fit, dm.dropped).splitlines()
    assert lines[0].startswith("section\tterm") and "fit\tdropped_rows\t1\t\t\t" in lines
    assert fit.df_resid == fit.n - 3
