"""Impression-weighted group summaries of ad scores."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

from .ingest import AdRecord
from .irt.posterior import Classification


class AggregateError(ValueError):
    pass


@dataclass(frozen=True)
class GroupScore:
    group_key: str
    weighted_mean: float
    total_weight: float
    n_ads: int


def _weights(ads: Sequence[AdRecord], dimension: str, known: Mapping[str, object]):
    """Yield (ad_id, group, weight) for every positive impression cell."""
    for ad in ads:
        cells = ad.breakdown(dimension)
        if not cells:
            continue
        if ad.ad_id not in known:
            raise AggregateError(f"ad {ad.ad_id} has {dimension} impressions but no score")
        for group, w in cells.items():
            if w > 0:
                yield ad.ad_id, group, w


def weighted_group_scores(
    scores: Mapping[str, float], ads: Sequence[AdRecord], dimension: str
) -> list[GroupScore]:
    """Per-group mean of ad scores weighted by each ad's impressions in the group.

    Count breakdowns weight by impression counts; share breakdowns use the
    share itself as the weight.
    """
    num: dict[str, list[float]] = defaultdict(list)
    den: dict[str, list[float]] = defaultdict(list)
    for ad_id, group, w in _weights(ads, dimension, scores):
        num[group].append(scores[ad_id] * w)
        den[group].append(w)
    out = []
    for group in sorted(den):
        total = math.fsum(den[group])
        if total > 0:
            out.append(GroupScore(group, math.fsum(num[group]) / total, total, len(den[group])))
    return out


def classification_shares(
    classifications: Mapping[str, Classification], ads: Sequence[AdRecord], dimension: str
) -> dict[str, dict[Classification, float]]:
    totals: dict[str, dict[Classification, list[float]]] = defaultdict(lambda: {c: [] for c in Classification})
    for ad_id, group, w in _weights(ads, dimension, classifications):
        totals[group][Classification(classifications[ad_id])].append(w)
    out = {}
    for group in sorted(totals):
        sums = {c: math.fsum(v) for c, v in totals[group].items()}
        total = math.fsum(sums.values())
        if total > 0:
            out[group] = {c: s / total for c, s in sums.items()}
    return out


def group_table(dimension: str, groups: Sequence[GroupScore],
                shares: Mapping[str, Mapping[Classification, float]] | None = None) -> str:
    head = ["dimension", "group_key", "weighted_mean", "total_weight", "n_ads"]
    if shares is not None:
        head += ["share_greenwashing", "share_non_greenwashing", "share_unclassified"]
    lines = ["\t".join(head)]
    for g in groups:
        row = [dimension, g.group_key, f"{g.weighted_mean:.10g}", f"{g.total_weight:.10g}", str(g.n_ads)]
        if shares is not None:
            s = shares.get(g.group_key, {})
            row += [f"{s.get(c, 0.0):.10g}" for c in Classification]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
