"""Synthetic corpora with known ground truth.

A generated dataset contains everything the pipeline reads (ads with text
and impressions, an annotator replay cache, a stance column, embeddings, an
entity registry) together with the parameters that generated it. Indicator
cells are drawn from the same response function the model fits.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np
import yaml

from .annotate import AnnotationColumn, build_prompt, prompt_hash, write_column
from .ingest import AdRecord, EntityRegistry, ImpressionCell, RegistryEntry, write_ads
from .irt.model import response_probability
from .irt.posterior import IrtPosterior
from .matrix import MISSING, IndicatorMatrix, ItemDescriptor
from .network import write_embeddings

log = logging.getLogger(__name__)

# keyword items, in the order they are allocated; each phrase matches only its own key
KEYWORD_PHRASES = {
    "natural_gas": "natural gas",
    "fossil_fuel": "fossil fuels",
    "climate": "climate",
    "coal": "coal",
    "carbon_capture": "carbon capture",
    "greenhouse": "greenhouse",
    "global_warming": "global warming",
    "sustainable": "sustainable",
    "recycle": "recycle",
    "extinction": "extinction",
    "carbon_removal": "carbon removal",
    "icecap_melt_flood": "icecaps melting",
}
LLM_NAMES = ("llm_deepseek", "llm_gemma2", "llm_llama", "llm_mistral", "llm_phi3", "llm_qwen")
STANCE_KEY = "stance_debate"
ENTITY_CYCLE = ("oil_company", "trade_association", "think_tank", "interest_group", "subsidiary", "other")
DUPLICATE_NOISE_BOUND = 0.3

RESPONSES = {1: "Yes", 0: "No.", MISSING: "As a language model I cannot determine this."}


@dataclass(frozen=True)
class SimConfig:
    n_ads: int = 2000
    n_keyword: int = 8
    stance: bool = True
    n_missable: int = 6
    disc_range: tuple[float, float] = (0.5, 0.95)
    difficulty_range: tuple[float, float] = (-1.0, 1.0)
    anchors: bool = True
    missing_strength: float = 1.0
    missing_difficulty_range: tuple[float, float] = (0.5, 1.5)
    missing_disabled: bool = False
    fixed_discrimination: Mapping[str, float] = field(default_factory=dict)
    fixed_miss_discrimination: Mapping[str, float] = field(default_factory=dict)
    theta_mean: float = 0.0
    theta_sd: float = 3.0
    n_pages: int = 60
    n_seed_pages: int = 6
    planted_edges: int = 8
    planted_ads: tuple[int, int] = (3, 2)
    embedding_dim: int = 64
    duplicate_noise: float = 0.2
    groups: tuple[str, ...] = ("AU", "BR", "DE", "GB", "US")
    seed: int = 0

    def __post_init__(self):
        for name in ("n_ads", "n_pages", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_keyword + int(self.stance) + self.n_missable < 1:
            raise ValueError("need at least one item")
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if not 0 < self.disc_range[0] <= self.disc_range[1] < 1:
            raise ValueError("disc_range must lie inside (0, 1)")
        if self.n_seed_pages >= self.n_pages:
            raise ValueError("need more pages than seed pages")

    @property
    def keyword_keys(self) -> list[str]:
        base = list(KEYWORD_PHRASES)
        return base[: self.n_keyword] + [f"kw_{k:02d}" for k in range(len(base), self.n_keyword)]

    @property
    def missable_keys(self) -> list[str]:
        return list(LLM_NAMES[: self.n_missable]) + [f"llm_{k:02d}" for k in range(len(LLM_NAMES), self.n_missable)]

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
            elif isinstance(v, Mapping):
                out[k] = dict(v)
        return out


def sim_config_from_dict(data: Mapping | None) -> SimConfig:
    data = dict(data or {})
    known = {f.name for f in fields(SimConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown simulate config keys: {', '.join(sorted(unknown))}")
    for k, v in list(data.items()):
        if isinstance(v, list):
            data[k] = tuple(v)
    return SimConfig(**data)


@dataclass
class SimTruth:
    ads: tuple[str, ...]
    theta: np.ndarray
    item_keys: tuple[str, ...]
    discrimination: np.ndarray
    difficulty: np.ndarray
    missable_keys: tuple[str, ...]
    miss_discrimination: np.ndarray
    miss_difficulty: np.ndarray
    planted_edges: tuple[tuple[str, str], ...] = ()
    score_threshold: float = float("nan")

    def theta_map(self) -> dict[str, float]:
        return dict(zip(self.ads, self.theta.tolist()))


@dataclass
class SyntheticDataset:
    config: SimConfig
    truth: SimTruth
    matrix: IndicatorMatrix
    ads: list[AdRecord]
    embeddings: dict[str, np.ndarray]
    registry: EntityRegistry
    stance: AnnotationColumn | None
    replay: list[dict]


def _signed(rng, n, lo, hi):
    return rng.uniform(lo, hi, n) * rng.choice([-1.0, 1.0], n)


def generate(config: SimConfig) -> SyntheticDataset:
    rng = np.random.default_rng(config.seed)
    N = config.n_ads
    kw_keys = config.keyword_keys
    nonmiss_keys = kw_keys + ([STANCE_KEY] if config.stance else [])
    miss_keys = config.missable_keys
    keys = nonmiss_keys + miss_keys
    J, M = len(keys), len(miss_keys)

    theta = rng.normal(config.theta_mean, config.theta_sd, N)
    lam = _signed(rng, J, *config.disc_range)
    if config.anchors:
        for k, sign in (("natural_gas", 1.0), ("fossil_fuel", -1.0)):
            if k in keys:
                lam[keys.index(k)] = sign * abs(lam[keys.index(k)])
    beta = rng.uniform(*config.difficulty_range, J)
    lam_m = _signed(rng, M, *config.disc_range) * config.missing_strength
    lam_m = np.clip(lam_m, -0.999, 0.999)
    beta_m = rng.uniform(*config.missing_difficulty_range, M)
    for k, v in config.fixed_discrimination.items():
        lam[keys.index(k)] = v
    for k, v in config.fixed_miss_discrimination.items():
        lam_m[miss_keys.index(k)] = v

    # missingness first, then outcomes, then mask
    if M and not config.missing_disabled:
        missing = rng.random((N, M)) < response_probability(theta, lam_m, beta_m)
    else:
        missing = np.zeros((N, M), dtype=bool)
    Y = (rng.random((N, J)) < response_probability(theta, lam, beta)).astype(np.int8)
    Y[:, len(nonmiss_keys):][missing] = MISSING

    ad_ids = tuple(f"ad{i:05d}" for i in range(N))
    items = [ItemDescriptor(k, "keyword", False) for k in kw_keys]
    if config.stance:
        items.append(ItemDescriptor(STANCE_KEY, "stance", False))
    items += [ItemDescriptor(k, "llm", True) for k in miss_keys]
    order = np.argsort(keys, kind="stable")
    matrix = IndicatorMatrix(ad_ids, tuple(items[j] for j in order), Y[:, order])

    pages, planted, threshold, embeddings = _pages_and_embeddings(config, rng, theta, ad_ids)
    seed_pages = [f"page{p:03d}" for p in range(config.n_seed_pages)]
    registry = EntityRegistry(tuple(
        RegistryEntry(p, f"Seed Entity {i}", ENTITY_CYCLE[i % len(ENTITY_CYCLE)]) for i, p in enumerate(seed_pages)
    ))

    ads = []
    for i, ad in enumerate(ad_ids):
        phrases = [KEYWORD_PHRASES[k] for j, k in enumerate(kw_keys) if Y[i, j] == 1 and k in KEYWORD_PHRASES]
        text = f"Synthetic ad {i}: a message about the environment."
        if phrases:
            text += " It mentions " + ", ".join(phrases) + "."
        # truncated, never rounded up, so shares cannot sum past 1
        share = np.floor(rng.dirichlet(np.ones(len(config.groups))) * 1e6) / 1e6
        cells = tuple(ImpressionCell("country", g, float(s), True) for g, s in zip(config.groups, share))
        page = pages[i]
        ads.append(AdRecord(ad, page, text, page_name=f"Page {page[4:]}", funder=f"Funder {page[4:]}",
                            language="en", impressions=cells))

    replay = []
    for m, k in enumerate(miss_keys):
        col = Y[:, len(nonmiss_keys) + m]
        for ad, rec, v in zip(ad_ids, ads, col):
            replay.append({
                "item_key": k, "ad_id": ad,
                "prompt_hash": prompt_hash(build_prompt(rec.text, rec.page_name)),
                "raw_response": RESPONSES[int(v)],
            })
    stance = None
    if config.stance:
        col = Y[:, len(kw_keys)]
        stance = AnnotationColumn(STANCE_KEY, dict(zip(ad_ids, (int(v) for v in col))), "stance",
                                  {"annotator": "synthetic-stance", "seed": config.seed})

    truth = SimTruth(
        ads=ad_ids, theta=theta, item_keys=tuple(keys), discrimination=lam, difficulty=beta,
        missable_keys=tuple(miss_keys), miss_discrimination=lam_m, miss_difficulty=beta_m,
        planted_edges=tuple(planted), score_threshold=threshold,
    )
    return SyntheticDataset(config, truth, matrix, ads, embeddings, registry, stance, replay)


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _pages_and_embeddings(config: SimConfig, rng, theta, ad_ids):
    N, d = len(theta), config.embedding_dim
    n_seed = config.n_seed_pages
    pages = np.array([f"page{p:03d}" for p in rng.integers(0, config.n_pages, N)], dtype=object)
    threshold = float(theta.mean() + theta.std(ddof=1)) if N > 1 else float("inf")
    high = [i for i in np.argsort(-theta, kind="stable") if theta[i] >= threshold]
    per_edge = sum(config.planted_ads)
    n_edges = min(config.planted_edges, len(high) // per_edge, config.n_pages - n_seed)
    if n_edges < config.planted_edges:
        log.warning("only %d of %d planted edges fit among %d high-score ads", n_edges, config.planted_edges, len(high))
    vectors = np.array([_unit(rng, d) for _ in range(N)])
    planted = []
    cursor = 0
    for e in range(n_edges):
        seed_page = f"page{e % n_seed:03d}"
        other = f"page{n_seed + e:03d}"
        base = _unit(rng, d)
        for page, k in ((seed_page, config.planted_ads[0]), (other, config.planted_ads[1])):
            for _ in range(k):
                i = high[cursor]
                cursor += 1
                pages[i] = page
                vectors[i] = base + config.duplicate_noise * rng.standard_normal(d) / np.sqrt(d)
        planted.append(tuple(sorted((seed_page, other))))
    embeddings = {ad: vectors[i] for i, ad in enumerate(ad_ids)}
    return list(pages), planted, threshold, embeddings


# recovery


@dataclass
class RecoveryReport:
    correlation: float
    sign_agreement: float
    coverage: float
    n_ads: int
    n_items: int

    def as_dict(self) -> dict:
        return asdict(self)


def recovery_report(truth: SimTruth, posterior: IrtPosterior) -> RecoveryReport:
    if tuple(posterior.ads) != tuple(truth.ads):
        pos = {a: i for i, a in enumerate(posterior.ads)}
        try:
            idx = [pos[a] for a in truth.ads]
        except KeyError as exc:
            raise ValueError(f"posterior lacks ad {exc.args[0]}") from None
    else:
        idx = list(range(len(truth.ads)))
    draws = posterior.theta[:, idx]
    est = draws.mean(axis=0)
    lo, hi = np.quantile(draws, [0.05, 0.95], axis=0)
    return _report(truth, est, lo, hi, dict(zip(posterior.item_keys, posterior.discrimination.mean(axis=0))))


def recovery_from_tables(truth: SimTruth, scores: Mapping[str, tuple[float, float, float]],
                         items: Mapping[str, float]) -> RecoveryReport:
    """Same report from (mean, q05, q95) score rows and outcome discrimination means."""
    est = np.array([scores[a][0] for a in truth.ads])
    lo = np.array([scores[a][1] for a in truth.ads])
    hi = np.array([scores[a][2] for a in truth.ads])
    return _report(truth, est, lo, hi, items)


def _report(truth, est, lo, hi, disc_means):
    if np.std(est) > 0 and np.std(truth.theta) > 0:
        corr = float(np.corrcoef(est, truth.theta)[0, 1])
    else:
        corr = float("nan")
    keys = [k for k in truth.item_keys if k in disc_means]
    true_lam = dict(zip(truth.item_keys, truth.discrimination))
    agree = [np.sign(disc_means[k]) == np.sign(true_lam[k]) for k in keys]
    covered = (lo <= truth.theta) & (truth.theta <= hi)
    return RecoveryReport(corr, float(np.mean(agree)) if agree else float("nan"), float(covered.mean()),
                          len(truth.ads), len(keys))


# files


def write_truth(truth: SimTruth, out_dir) -> None:
    with open(os.path.join(out_dir, "truth_ads.tsv"), "w", encoding="utf-8") as fh:
        fh.write("ad_id\ttheta\n")
        for a, t in zip(truth.ads, truth.theta):
            fh.write(f"{a}\t{float(t)!r}\n")
    with open(os.path.join(out_dir, "truth_items.tsv"), "w", encoding="utf-8") as fh:
        fh.write("key\tstage\tdiscrimination\tdifficulty\n")
        for k, l, b in zip(truth.item_keys, truth.discrimination, truth.difficulty):
            fh.write(f"{k}\toutcome\t{float(l)!r}\t{float(b)!r}\n")
        for k, l, b in zip(truth.missable_keys, truth.miss_discrimination, truth.miss_difficulty):
            fh.write(f"{k}\tmissingness\t{float(l)!r}\t{float(b)!r}\n")
    with open(os.path.join(out_dir, "truth_edges.tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"#threshold\t{float(truth.score_threshold)!r}\n")
        fh.write("page_a\tpage_b\n")
        for a, b in truth.planted_edges:
            fh.write(f"{a}\t{b}\n")


def read_truth(out_dir) -> SimTruth:
    ads, theta = [], []
    with open(os.path.join(out_dir, "truth_ads.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            a, t = line.rstrip("\n").split("\t")
            ads.append(a)
            theta.append(float(t))
    outcome, miss = [], []
    with open(os.path.join(out_dir, "truth_items.tsv"), encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            k, stage, l, b = line.rstrip("\n").split("\t")
            (outcome if stage == "outcome" else miss).append((k, float(l), float(b)))
    edges, threshold = [], float("nan")
    with open(os.path.join(out_dir, "truth_edges.tsv"), encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "#threshold":
                threshold = float(parts[1])
            elif parts[0] != "page_a":
                edges.append((parts[0], parts[1]))
    return SimTruth(
        tuple(ads), np.array(theta),
        tuple(k for k, _, _ in outcome), np.array([l for _, l, _ in outcome]), np.array([b for _, _, b in outcome]),
        tuple(k for k, _, _ in miss), np.array([l for _, l, _ in miss]), np.array([b for _, _, b in miss]),
        tuple(edges), threshold,
    )


def write_dataset(ds: SyntheticDataset, out_dir) -> dict[str, str]:
    """Write every pipeline input plus truth files; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "matrix": "matrix.tsv",
        "ads": "ads.jsonl",
        "embeddings": "embeddings.txt",
        "registry": "registry.csv",
        "replay": "replay.jsonl",
        "stance": "stance.tsv",
        "pipeline": "pipeline.yaml",
        "sim_config": "sim_config.yaml",
    }
    full = {k: os.path.join(out_dir, v) for k, v in paths.items()}
    ds.matrix.save(full["matrix"])
    with open(full["ads"], "w", encoding="utf-8") as fh:
        write_ads(ds.ads, fh)
    with open(full["embeddings"], "w", encoding="utf-8") as fh:
        write_embeddings(ds.embeddings, fh)
    with open(full["registry"], "w", encoding="utf-8") as fh:
        fh.write(ds.registry.to_csv())
    with open(full["replay"], "w", encoding="utf-8") as fh:
        for rec in ds.replay:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if ds.stance is not None:
        with open(full["stance"], "w", encoding="utf-8") as fh:
            write_column(ds.stance, fh)
    else:
        del full["stance"]
    write_truth(ds.truth, out_dir)
    with open(full["sim_config"], "w", encoding="utf-8") as fh:
        yaml.safe_dump(ds.config.to_dict(), fh, sort_keys=True)
    pipeline = {
        "ads": paths["ads"],
        "annotators": [{"item_key": k, "replay": paths["replay"]} for k in ds.config.missable_keys],
        "stance": [paths["stance"]] if ds.stance is not None else [],
        "embeddings": paths["embeddings"],
        "registry": paths["registry"],
        "keyword_items": [k for k in ds.config.keyword_keys if k in KEYWORD_PHRASES],
        "by": "country",
        "seed": ds.config.seed,
    }
    with open(full["pipeline"], "w", encoding="utf-8") as fh:
        yaml.safe_dump(pipeline, fh, sort_keys=True)
    return full
