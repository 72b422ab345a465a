import numpy as np
import pytest
import yaml

from greenwash.ingest import load_ads
from greenwash.irt.config import IrtConfig
from greenwash.irt.model import IrtParams, log_posterior, response_probability, unbounded
from greenwash.irt.posterior import IrtPosterior
from greenwash.matrix import MISSING, load_matrix
from greenwash.simulate import (
    SimConfig,
    generate,
    read_truth,
    recovery_report,
    sim_config_from_dict,
    write_dataset,
    write_truth,
)


def test_deterministic():
    a, b = generate(SimConfig(n_ads=200, seed=5)), generate(SimConfig(n_ads=200, seed=5))
    assert a.matrix == b.matrix and a.replay == b.replay
    assert np.array_equal(a.truth.theta, b.truth.theta)
    assert generate(SimConfig(n_ads=200, seed=6)).matrix != a.matrix


def test_missing_disabled():
    ds = generate(SimConfig(n_ads=300, seed=1, missing_disabled=True))
    assert not np.any(ds.matrix.cells == MISSING)
    assert np.any(generate(SimConfig(n_ads=300, seed=1)).matrix.cells == MISSING)


def test_shape_and_anchor_signs():
    ds = generate(SimConfig(n_ads=50, seed=2))
    assert ds.matrix.shape == (50, 15)
    lam = dict(zip(ds.truth.item_keys, ds.truth.discrimination))
    assert lam["natural_gas"] > 0 > lam["fossil_fuel"]
    assert sum(it.can_be_missing for it in ds.matrix.items) == 6


def test_response_frequency_matches_model():
    # 12500 ads x 8 keyword items = 1e5 cells
    ds = generate(SimConfig(n_ads=12500, n_missable=0, stance=False, seed=9))
    t = ds.truth
    p = response_probability(t.theta, t.discrimination, t.difficulty)
    order = [t.item_keys.index(k) for k in ds.matrix.keys]
    Y = ds.matrix.cells
    assert Y.size == 100_000
    observed = Y.sum()
    expected = p[:, order].sum()
    se = np.sqrt((p * (1 - p)).sum())
    assert abs(observed - expected) < 3 * se
    # per item as well, with a Bonferroni-style margin
    for j in range(Y.shape[1]):
        pj = p[:, order[j]]
        assert abs(Y[:, j].sum() - pj.sum()) < 4 * np.sqrt((pj * (1 - pj)).sum())


def truth_params(ds):
    t = ds.truth
    order = [t.item_keys.index(k) for k in ds.matrix.keys]
    return IrtParams(t.theta.copy(), unbounded(t.discrimination[order]), t.difficulty[order].copy(),
                     unbounded(t.miss_discrimination), t.miss_difficulty.copy())


def test_truth_beats_perturbations():
    ds = generate(SimConfig(n_ads=2000, seed=3))
    config = IrtConfig(seed=0)
    base = truth_params(ds)
    best = log_posterior(base, ds.matrix, config)
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = base.copy()
        family = rng.choice(["difficulty", "miss_difficulty"])
        arr = getattr(p, family)
        arr[rng.integers(len(arr))] += 0.5
        assert log_posterior(p, ds.matrix, config) < best


def fake_posterior(ds, theta_draws):
    J, M = len(ds.matrix.keys), len(ds.matrix.missable)
    D = theta_draws.shape[0]
    return IrtPosterior.for_matrix(
        ds.matrix, theta=theta_draws, discrimination=np.tile(ds.truth.discrimination, (D, 1))[:, :J],
        difficulty=np.zeros((D, J)), miss_discrimination=np.zeros((D, M)), miss_difficulty=np.zeros((D, M)))


def test_recovery_report_degenerate_truth():
    ds = generate(SimConfig(n_ads=400, seed=4))
    theta = ds.truth.theta
    rep = recovery_report(ds.truth, fake_posterior(ds, np.stack([theta - 0.1, theta, theta + 0.1])))
    assert rep.correlation == pytest.approx(1.0) and rep.coverage == 1.0


def test_recovery_report_permuted():
    ds = generate(SimConfig(n_ads=2000, seed=4))
    perm = np.random.default_rng(1).permutation(ds.truth.theta)
    rep = recovery_report(ds.truth, fake_posterior(ds, np.stack([perm, perm])))
    assert abs(rep.correlation) < 0.1


def test_truth_round_trip(tmp_path):
    ds = generate(SimConfig(n_ads=120, seed=8))
    write_truth(ds.truth, tmp_path)
    again = read_truth(tmp_path)
    assert again.ads == ds.truth.ads and again.item_keys == ds.truth.item_keys
    for name in ("theta", "discrimination", "difficulty", "miss_discrimination", "miss_difficulty"):
        assert np.array_equal(getattr(again, name), getattr(ds.truth, name))
    assert again.planted_edges == ds.truth.planted_edges
    assert again.score_threshold == ds.truth.score_threshold


def test_write_dataset(tmp_path):
    ds = generate(SimConfig(n_ads=150, seed=8))
    paths = write_dataset(ds, tmp_path / "sim")
    assert load_matrix(paths["matrix"]) == ds.matrix
    ads = load_ads(paths["ads"])
    assert [a.ad_id for a in ads] == list(ds.truth.ads)
    assert all(sum(a.breakdown("country").values()) <= 1.0 for a in ads)
    with open(paths["sim_config"]) as fh:
        assert sim_config_from_dict(yaml.safe_load(fh)) == ds.config
    with open(paths["pipeline"]) as fh:
        assert yaml.safe_load(fh)["seed"] == 8


@pytest.mark.parametrize("bad", [{"n_ads": 0}, {"disc_range": (0.5, 1.2)}, {"n_seed_pages": 60}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SimConfig(**bad)


def test_unknown_config_key():
    with pytest.raises(ValueError, match="bogus"):
        sim_config_from_dict({"bogus": 1})
