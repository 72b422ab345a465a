"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line with its measured values and runtime;
the lines are printed together at the end of the pytest run (see
conftest.py) and also when this file is executed directly.
"""

import contextlib
import time

import numpy as np
import pytest

from oracles import brute_force_links, central_differences, naive_log_posterior, normal_equations

from greenwash.aggregate import weighted_group_scores
from greenwash.cli import run as cli_run
from greenwash.filtering import keyword_count_table, load_lexicon, match_keywords
from greenwash.ingest import AdRecord, ImpressionCell
from greenwash.irt import (
    Classification,
    IrtConfig,
    Posterior,
    ScoreSummary,
    classify,
    fit_map,
    grad_log_posterior,
    laplace_draws,
    load_fit_table,
    log_posterior,
    mcmc_validate,
)
from greenwash.network import build_links
from greenwash.simulate import SimConfig, generate, recovery_report
from greenwash.stats import OlsFit, marginal_effect, ols

from test_filter import CORPUS, EXPECTED_COUNTS
from test_irt import random_instance

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(name, budget_s=None):
    info = {}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        if budget_s is not None and elapsed >= budget_s:
            ok = False
            info["budget"] = f"over {budget_s:g}s budget"
        detail = "  ".join(f"{k}={v}" for k, v in info.items())
        RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {name:<32} {elapsed:7.1f}s  {detail}")
    assert ok, f"{name} exceeded its runtime budget"


def test_gradient_check():
    with criterion("IRT gradient check", 10) as info:
        worst = 0.0
        for seed in range(20):
            m, params = random_instance(1000 + seed)
            assert m.shape[0] <= 50 and m.shape[1] <= 10
            cfg = IrtConfig()
            post = Posterior(m, cfg)
            x = params.pack()
            fd = central_differences(lambda v: post.log_posterior(post.unpack(v)), x)
            an = grad_log_posterior(params, m, cfg)
            worst = max(worst, float(np.max(np.abs(an - fd) / np.maximum(1.0, np.abs(fd)))))
        info["max_rel_err"] = f"{worst:.2e}"
        assert worst < 1e-5


def test_likelihood_oracle():
    fixtures = [random_instance(2000 + s, n_ads=6, n_items=5) for s in range(8)]
    assert any((m.cells == -1).any() for m, _ in fixtures)
    cfg = IrtConfig()
    # the mpmath oracle is the slow side; only the package call is timed
    expected = [naive_log_posterior(p.theta, p.disc_raw, p.difficulty, p.miss_disc_raw, p.miss_difficulty, m,
                                    cfg.discrimination_priors, cfg.missing_discrimination,
                                    cfg.theta_sd, cfg.difficulty_sd) for m, p in fixtures]
    with criterion("Likelihood oracle", 1) as info:
        errs = [abs(log_posterior(p, m, cfg) - e) for (m, p), e in zip(fixtures, expected)]
        info["max_abs_err"] = f"{max(errs):.1e}"
        assert max(errs) < 1e-12


def test_parameter_recovery():
    with criterion("Parameter recovery", 300) as info:
        corrs, signs, covered, total = [], [], 0, 0
        for seed in range(10):
            ds = generate(SimConfig(n_ads=2000, seed=seed))
            cfg = IrtConfig(seed=seed)
            rep = recovery_report(ds.truth, laplace_draws(fit_map(ds.matrix, cfg), ds.matrix, cfg))
            corrs.append(rep.correlation)
            signs.append(rep.sign_agreement)
            covered += rep.coverage * rep.n_ads
            total += rep.n_ads
        coverage = covered / total
        info.update(min_corr=f"{min(corrs):.3f}", min_sign=f"{min(signs):.2f}", coverage=f"{coverage:.3f}")
        assert min(corrs) >= 0.9 and min(signs) >= 0.9 and 0.85 <= coverage <= 0.95


def test_anchor_behavior():
    with criterion("Anchor behavior") as info:
        recovered = 0
        for seed in range(20):
            ds = generate(SimConfig(n_ads=500, seed=seed,
                                    fixed_discrimination={"natural_gas": 0.97, "fossil_fuel": -0.97}))
            fit = fit_map(ds.matrix, IrtConfig(seed=seed))
            lam = dict(zip(ds.matrix.keys, fit.params.discrimination))
            r = np.corrcoef(fit.params.theta, ds.truth.theta)[0, 1]
            recovered += bool(lam["natural_gas"] > 0.9 and lam["fossil_fuel"] < -0.9 and r > 0)
        info["runs_ok"] = f"{recovered}/20"
        assert recovered == 20


def test_missingness_informativeness():
    with criterion("Missingness informativeness", 120) as info:
        ds = generate(SimConfig(seed=3, fixed_miss_discrimination={"llm_mistral": -0.6}))
        cfg = IrtConfig(seed=3)
        post = laplace_draws(fit_map(ds.matrix, cfg), ds.matrix, cfg)
        row = next(s for k, stage, s in post.item_table() if k == "llm_mistral" and stage == "missingness")
        info.update(mean=f"{row.mean:.3f}", q05=f"{row.q05:.3f}", q95=f"{row.q95:.3f}")
        assert row.mean < 0 and row.q95 < 0


def test_mcmc_cross_check():
    with criterion("MCMC cross-check", 180) as info:
        fracs = []
        for seed in range(3):
            ds = generate(SimConfig(n_ads=100, seed=seed, planted_edges=0))
            cfg = IrtConfig(seed=seed)
            lap = laplace_draws(fit_map(ds.matrix, cfg), ds.matrix, cfg)
            mc = mcmc_validate(ds.matrix, cfg)
            gap = np.abs(lap.theta.mean(0) - mc.theta.mean(0)) / mc.theta.std(0)
            fracs.append(float(np.mean(gap < 0.2)))
        info["within_0.2sd"] = ",".join(f"{f:.2f}" for f in fracs)
        assert min(fracs) >= 0.9


RULE_TABLE = [
    ((7.05, 3.06, 10.9), Classification.GREENWASHING),
    ((0.2, -0.5, 0.9), Classification.UNCLASSIFIED),
    ((-0.2, -0.9, 0.5), Classification.UNCLASSIFIED),
    ((-2.0, -3.0, -0.5), Classification.NON_GREENWASHING),
    ((0.5, 0.0, 1.0), Classification.UNCLASSIFIED),
    ((-0.5, -1.0, 0.0), Classification.UNCLASSIFIED),
]


def test_classification_rule():
    with criterion("Classification rule") as info:
        got = [classify(ScoreSummary(*s)) for s, _ in RULE_TABLE]
        info["cases"] = len(RULE_TABLE)
        assert got == [c for _, c in RULE_TABLE]


def test_network_oracle():
    with criterion("Network oracle", 10) as info:
        for seed in range(10):
            rng = np.random.default_rng(seed)
            centers = rng.normal(size=(4, 6))
            ads, emb, scores = [], {}, {}
            for i in range(50):
                a = f"ad{i:02d}"
                ads.append(AdRecord(a, f"page{rng.integers(0, 6)}", "t"))
                emb[a] = centers[rng.integers(0, 4)] + 0.3 * rng.normal(size=6)
                scores[a] = float(rng.normal() + 2.0 * (rng.random() < 0.4))
            for min_pairs in (1, 2, 3):
                g = build_links(ads, emb, scores, min_pairs=min_pairs)
                assert {(e.page_a, e.page_b): e.count for e in g.edges} == brute_force_links(
                    ads, emb, scores, min_pairs, 0.8)
        false_edges = 0
        for seed in (21, 22):
            ds = generate(SimConfig(n_ads=1500, seed=seed))
            g = build_links(ds.ads, ds.embeddings, ds.truth.theta_map(), min_pairs=5, min_cos=0.8)
            assert set(ds.truth.planted_edges) <= g.edge_set()
            false_edges += len(g.edge_set() - set(ds.truth.planted_edges))
        info["false_edges"] = false_edges
        assert false_edges == 0


def test_ols_oracle():
    with criterion("OLS oracle", 1) as info:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])
            y = rng.normal(size=20)
            worst = max(worst, float(np.max(np.abs(ols(X, y).coef - normal_equations(X, y)))))
        assert worst < 1e-10
        x = np.arange(6.0)
        assert ols(np.column_stack([np.ones(6), x]), 3 * x - 1).r2 == 1.0
        names = ["(Intercept)", "transition", "republican", "transition:republican"]
        fit = OlsFit(names, np.array([0.3, 0.674, 0.1, -0.683]), np.eye(4) * 0.01, 50, 46)
        (_, e0, _), (_, e1, _) = marginal_effect(fit, None, "transition", "republican", [0, 1])
        info.update(max_coef_err=f"{worst:.1e}", effect_m0=e0, effect_m1=f"{e1:.3f}")
        assert e0 == 0.674 and round(e1, 3) == -0.009


def test_filter_counts():
    with criterion("Filter determinism & counts", 1) as info:
        lex = load_lexicon()
        corpus = [AdRecord(f"a{i}", "p", t) for i, (t, _) in enumerate(CORPUS)]
        first = dict(keyword_count_table(corpus, lex))
        assert first == EXPECTED_COUNTS == dict(keyword_count_table(corpus, lex))
        assert match_keywords("Charcoal grills", lex).bits["coal"] == 0
        assert match_keywords("icecap and melt", lex).bits["icecap_melt_flood"] == 1
        assert match_keywords("icecap and flood", lex).bits["icecap_melt_flood"] == 1
        assert match_keywords("icecap alone", lex).bits["icecap_melt_flood"] == 0
        info["keys"] = len(first)


def test_aggregation_identities():
    def ad(ad_id, weights):
        return AdRecord(ad_id, "p", "t", impressions=tuple(
            ImpressionCell("country", g, w, False) for g, w in weights.items()))

    def means(scores, ads):
        return {g.group_key: (g.weighted_mean, g.total_weight) for g in weighted_group_scores(scores, ads, "country")}

    with criterion("Aggregation identities", 5) as info:
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(3, 30))
            weights = [{g: float(rng.exponential()) for g in ("g0", "g1", "g2") if rng.random() < 0.7}
                       for _ in range(n)]
            ads = [ad(f"a{i}", w) for i, w in enumerate(weights)]
            scores = {f"a{i}": float(rng.normal(0, 2)) for i in range(n)}
            base = means(scores, ads)
            c = float(rng.uniform(-3, 3))
            scaled = means({k: c * v for k, v in scores.items()}, ads)
            assert all(np.isclose(scaled[g][0], c * m, rtol=1e-12, atol=1e-12) for g, (m, _) in base.items())
            k = float(rng.uniform(0.1, 10))
            heavy = means(scores, [ad(a.ad_id, {g: k * w for g, w in ws.items()}) for a, ws in zip(ads, weights)])
            assert all(np.isclose(heavy[g][0], m, rtol=1e-12, atol=1e-12) for g, (m, _) in base.items())
            if "g0" in base and "g1" in base:
                merged = means(scores, [ad(a.ad_id, {"g01": ws.get("g0", 0.0) + ws.get("g1", 0.0)})
                                        for a, ws in zip(ads, weights)])
                (m0, w0), (m1, w1) = base["g0"], base["g1"]
                assert np.isclose(merged["g01"][0], (m0 * w0 + m1 * w1) / (w0 + w1), rtol=1e-12, atol=1e-12)
        info["seeds"] = 100


def test_end_to_end_determinism(tmp_path):
    with criterion("End-to-end determinism") as info:
        sim = tmp_path / "sim"
        assert cli_run(["simulate", "--seed", "11", "--n-ads", "150", "--out", str(sim)]) == 0
        outs = {}
        for name, threads in (("first", 1), ("second", 1), ("threaded", 4)):
            outs[name] = tmp_path / name
            assert cli_run(["pipeline", "--config", str(sim / "pipeline.yaml"), "--draws", "200",
                            "--threads", str(threads), "--out", str(outs[name])]) == 0
        names = sorted(p.name for p in outs["first"].iterdir() if p.is_file() and p.name != "manifest.json")
        identical = all((outs["first"] / n).read_bytes() == (outs["second"] / n).read_bytes() for n in names)
        one = load_fit_table(outs["first"] / "fit.tsv").scores
        many = load_fit_table(outs["threaded"] / "fit.tsv").scores
        gap = max(abs(getattr(one[a][0], f) - getattr(many[a][0], f)) for a in one for f in ("mean", "q05", "q95"))
        info.update(files=len(names), byte_identical=identical, thread_gap=f"{gap:.1e}")
        assert identical and gap <= 1e-8


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
