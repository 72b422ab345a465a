"""Page-level similarity network over high-scoring ads.

Two pages are linked when enough cross-page pairs of high-scoring ads have
embedding cosine similarity at or above ``min_cos``. "High-scoring" means a
score at least one sample standard deviation above the corpus mean.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import AdRecord, EntityRegistry

PAIR_RULES = ("pairs", "per-page-ads")


class NetworkError(ValueError):
    pass


class EmbeddingStore(dict):
    """ad_id -> embedding vector, all of one dimension and nonzero."""

    def __init__(self, vectors: Mapping[str, Sequence[float]] = ()):
        super().__init__()
        dim = None
        for ad, vec in dict(vectors).items():
            arr = np.asarray(vec, dtype=float)
            if arr.ndim != 1:
                raise NetworkError(f"embedding for {ad} is not a vector")
            if dim is None:
                dim = len(arr)
            elif len(arr) != dim:
                raise NetworkError(f"embedding for {ad} has dimension {len(arr)}, expected {dim}")
            if not np.any(arr):
                raise NetworkError(f"embedding for {ad} is a zero vector")
            self[ad] = arr
        self.dim = dim or 0


def parse_embeddings(stream: Iterable[str]) -> EmbeddingStore:
    vectors = {}
    for lineno, line in enumerate(stream, start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise NetworkError(f"line {lineno}: empty embedding for {parts[0]}")
        if parts[0] in vectors:
            raise NetworkError(f"line {lineno}: duplicate embedding for {parts[0]}")
        try:
            vectors[parts[0]] = [float(x) for x in parts[1:]]
        except ValueError:
            raise NetworkError(f"line {lineno}: non-numeric embedding value") from None
    return EmbeddingStore(vectors)


def load_embeddings(path) -> EmbeddingStore:
    with open(path, encoding="utf-8") as fh:
        return parse_embeddings(fh)


def write_embeddings(store: Mapping[str, np.ndarray], fh) -> None:
    for ad in sorted(store):
        fh.write(ad + " " + " ".join(repr(float(x)) for x in store[ad]) + "\n")


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise NetworkError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise NetworkError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def high_score_threshold(scores: Iterable[float], n_sd: float = 1.0) -> float:
    arr = np.asarray(list(scores), dtype=float)
    if len(arr) < 2:
        raise NetworkError("need at least 2 scores for a threshold")
    return float(arr.mean() + n_sd * arr.std(ddof=1))


@dataclass(frozen=True)
class PageNode:
    page_id: str
    name: str
    mean_score: float
    n_ads: int
    is_seed: bool = False


@dataclass(frozen=True)
class PageEdge:
    page_a: str
    page_b: str
    count: int
    mean_cosine: float
    score_difference: float


@dataclass
class PageGraph:
    nodes: dict[str, PageNode] = field(default_factory=dict)
    edges: list[PageEdge] = field(default_factory=list)
    threshold: float = math.nan
    funders: dict[str, str] = field(default_factory=dict)

    def edge_set(self) -> set[tuple[str, str]]:
        return {(e.page_a, e.page_b) for e in self.edges}

    def neighbors(self, page_id: str) -> set[str]:
        out = set()
        for e in self.edges:
            if e.page_a == page_id:
                out.add(e.page_b)
            elif e.page_b == page_id:
                out.add(e.page_a)
        return out


def _check_coverage(ads, embeddings, scores):
    no_score = [a.ad_id for a in ads if a.ad_id not in scores]
    if no_score:
        raise NetworkError(f"ads without scores: {', '.join(no_score[:10])}")
    no_emb = [a.ad_id for a in ads if a.ad_id not in embeddings]
    if no_emb:
        raise NetworkError(f"ads without embeddings: {', '.join(no_emb[:10])}")


def _most_common_funder(ads: Sequence[AdRecord]) -> dict[str, str]:
    per_page: dict[str, Counter] = defaultdict(Counter)
    for a in ads:
        if a.funder:
            per_page[a.page_id][a.funder] += 1
    # ties broken alphabetically so output does not depend on input order
    return {p: sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] for p, c in per_page.items()}


def qualifying_pairs(
    ads: Sequence[AdRecord], embeddings: Mapping[str, np.ndarray], min_cos: float, block: int = 2048
) -> list[tuple[int, int, float]]:
    """Index pairs (i < j) of ads on different pages with cosine >= min_cos."""
    if not ads:
        return []
    V = np.array([embeddings[a.ad_id] for a in ads], dtype=float)
    norms = np.linalg.norm(V, axis=1)
    pages = np.array([a.page_id for a in ads], dtype=object)
    out = []
    for s in range(0, len(ads), block):
        stop = min(s + block, len(ads))
        dots = V[s:stop] @ V.T
        cos = np.clip(dots / np.outer(norms[s:stop], norms), -1.0, 1.0)
        ii, jj = np.nonzero(cos >= min_cos)
        for i, j in zip(ii + s, jj):
            if j > i and pages[i] != pages[j]:
                out.append((int(i), int(j), float(cos[i - s, j])))
    return out


def build_links(
    ads: Sequence[AdRecord],
    embeddings: Mapping[str, np.ndarray],
    scores: Mapping[str, float],
    min_pairs: int = 5,
    min_cos: float = 0.8,
    pair_rule: str = "pairs",
    registry: EntityRegistry | None = None,
    threshold: float | None = None,
) -> PageGraph:
    if pair_rule not in PAIR_RULES:
        raise NetworkError(f"pair_rule must be one of {PAIR_RULES}")
    ads = sorted(ads, key=lambda a: a.ad_id)
    _check_coverage(ads, embeddings, scores)
    if threshold is None:
        threshold = high_score_threshold(scores[a.ad_id] for a in ads)
    seeds = registry.page_ids if registry is not None else frozenset()

    by_page: dict[str, list[AdRecord]] = defaultdict(list)
    for a in ads:
        by_page[a.page_id].append(a)
    nodes = {}
    for page, page_ads in sorted(by_page.items()):
        vals = [scores[a.ad_id] for a in page_ads]
        name = next((a.page_name for a in page_ads if a.page_name), page)
        nodes[page] = PageNode(page, name, float(np.mean(vals)), len(vals), page in seeds)

    high = [a for a in ads if scores[a.ad_id] >= threshold]
    stats: dict[tuple[str, str], list] = defaultdict(lambda: [0, 0.0, set(), set()])
    for i, j, c in qualifying_pairs(high, embeddings, min_cos):
        a, b = high[i], high[j]
        if a.page_id > b.page_id:
            a, b = b, a
        st = stats[(a.page_id, b.page_id)]
        st[0] += 1
        st[1] += c
        st[2].add(a.ad_id)
        st[3].add(b.ad_id)

    edges = []
    for (pa, pb), (count, csum, ads_a, ads_b) in sorted(stats.items()):
        strength = count if pair_rule == "pairs" else min(len(ads_a), len(ads_b))
        if strength >= min_pairs:
            edges.append(PageEdge(pa, pb, strength, csum / count,
                                  nodes[pb].mean_score - nodes[pa].mean_score))
    return PageGraph(nodes, edges, threshold, _most_common_funder(ads))


def seed_filter(graph: PageGraph, registry: EntityRegistry) -> PageGraph:
    seeds = registry.page_ids
    edges = [e for e in graph.edges if e.page_a in seeds or e.page_b in seeds]
    keep = {p for e in edges for p in (e.page_a, e.page_b)}
    nodes = {}
    for p in sorted(keep):
        n = graph.nodes[p]
        nodes[p] = PageNode(n.page_id, n.name, n.mean_score, n.n_ads, p in seeds)
    return PageGraph(nodes, edges, graph.threshold, {p: f for p, f in graph.funders.items() if p in keep})


@dataclass(frozen=True)
class DifferenceRow:
    seed_page: str
    seed_name: str
    linked_page: str
    linked_name: str
    linked_funder: str
    difference: float


def score_differences(graph: PageGraph) -> list[DifferenceRow]:
    """Linked-page mean minus seed-page mean, largest first.

    A seed-to-seed edge yields one row per orientation.
    """
    rows = []
    for e in graph.edges:
        for seed, other in ((e.page_a, e.page_b), (e.page_b, e.page_a)):
            s, o = graph.nodes[seed], graph.nodes[other]
            if not s.is_seed:
                continue
            rows.append(DifferenceRow(
                seed, s.name, other, o.name, graph.funders.get(other, "NA"), o.mean_score - s.mean_score
            ))
    rows.sort(key=lambda r: (-r.difference, r.seed_page, r.linked_page))
    return rows


def _dot_quote(s: str) -> str:
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: PageGraph) -> str:
    lines = ["graph pages {"]
    for p, n in sorted(graph.nodes.items()):
        lines.append(
            f"  {_dot_quote(p)} [label={_dot_quote(n.name)}, mean_score={n.mean_score:.6f}, "
            f"is_seed={str(n.is_seed).lower()}];"
        )
    for e in graph.edges:
        lines.append(
            f"  {_dot_quote(e.page_a)} -- {_dot_quote(e.page_b)} [count={e.count}, "
            f"mean_cosine={e.mean_cosine:.6f}, difference={e.score_difference:.6f}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def edge_table(graph: PageGraph) -> str:
    out = ["page_a\tpage_b\tcount\tmean_cosine\tscore_difference"]
    for e in graph.edges:
        out.append(f"{e.page_a}\t{e.page_b}\t{e.count}\t{e.mean_cosine:.6f}\t{e.score_difference:.6f}")
    return "\n".join(out) + "\n"


def difference_table(rows: Sequence[DifferenceRow]) -> str:
    out = ["seed_page\tseed_name\tlinked_page\tlinked_name\tlinked_funder\tdifference"]
    for r in rows:
        out.append(f"{r.seed_page}\t{r.seed_name}\t{r.linked_page}\t{r.linked_name}\t{r.linked_funder}\t{r.difference:.6f}")
    return "\n".join(out) + "\n"
