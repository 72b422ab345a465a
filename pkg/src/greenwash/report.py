"""Optional matplotlib renderings of pipeline outputs.

Figures are written next to the delimited tables they display; nothing in
the core pipeline depends on them.
"""

from __future__ import annotations

import math
import os
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .aggregate import GroupScore  # noqa: E402
from .irt.posterior import Classification, FitTable  # noqa: E402
from .network import PageGraph  # noqa: E402

_COLORS = {
    Classification.GREENWASHING: "#2a9d8f",
    Classification.NON_GREENWASHING: "#e76f51",
    Classification.UNCLASSIFIED: "#8d99ae",
}
# no Software/date stamps so reruns give identical files
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def score_intervals(fit: FitTable, path, max_ads: int = 200):
    """Ads ranked by posterior mean with 90% intervals, colored by class."""
    rows = sorted(fit.scores.items(), key=lambda kv: (kv[1][0].mean, kv[0]))
    if len(rows) > max_ads:
        idx = np.linspace(0, len(rows) - 1, max_ads).round().astype(int)
        rows = [rows[i] for i in idx]
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(rows))
    for i, (_, (s, c)) in zip(x, rows):
        ax.plot([i, i], [s.q05, s.q95], color=_COLORS[c], lw=0.8)
    ax.scatter(x, [s.mean for _, (s, _) in rows], s=4, c=[_COLORS[c] for _, (_, c) in rows])
    ax.axhline(0, color="black", lw=0.5)
    ax.set_xlabel("ads (ranked by mean score)")
    ax.set_ylabel("score (90% interval)")
    return _save(fig, path)


def item_discriminations(fit: FitTable, path):
    items = sorted(fit.items.items(), key=lambda kv: (kv[0][1] != "outcome", kv[1].mean))
    fig, ax = plt.subplots(figsize=(6, 0.3 * len(items) + 1.2))
    y = np.arange(len(items))
    for i, ((key, stage), s) in zip(y, items):
        color = "#264653" if stage == "outcome" else "#f4a261"
        ax.plot([s.q05, s.q95], [i, i], color=color)
        ax.plot(s.mean, i, "o", color=color, ms=4)
    ax.set_yticks(y, [f"{k} ({'miss' if st == 'missingness' else 'out'})" for (k, st), _ in items], fontsize=7)
    ax.axvline(0, color="black", lw=0.5)
    ax.set_xlim(-1.05, 1.05)
    ax.set_xlabel("discrimination")
    fig.tight_layout()
    return _save(fig, path)


def group_scores(groups: Sequence[GroupScore], path, dimension: str = ""):
    fig, ax = plt.subplots(figsize=(6, 0.3 * len(groups) + 1.2))
    ordered = sorted(groups, key=lambda g: g.weighted_mean)
    y = np.arange(len(ordered))
    ax.barh(y, [g.weighted_mean for g in ordered], color="#2a9d8f")
    ax.set_yticks(y, [g.group_key for g in ordered], fontsize=7)
    ax.axvline(0, color="black", lw=0.5)
    ax.set_xlabel(f"impression-weighted mean score{' by ' + dimension if dimension else ''}")
    fig.tight_layout()
    return _save(fig, path)


def page_network(graph: PageGraph, path):
    """Circular layout; seed pages drawn as squares, node color is mean score."""
    nodes = sorted(p for e in graph.edges for p in (e.page_a, e.page_b))
    nodes = sorted(set(nodes))
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.set_axis_off()
    if not nodes:
        ax.text(0.5, 0.5, "no edges", ha="center", va="center")
        return _save(fig, path)
    pos = {p: (math.cos(2 * math.pi * k / len(nodes)), math.sin(2 * math.pi * k / len(nodes)))
           for k, p in enumerate(nodes)}
    for e in graph.edges:
        (x0, y0), (x1, y1) = pos[e.page_a], pos[e.page_b]
        ax.plot([x0, x1], [y0, y1], color="#adb5bd", lw=0.5 + 0.2 * math.log1p(e.count), zorder=1)
    vals = [graph.nodes[p].mean_score for p in nodes]
    for marker, seed in (("s", True), ("o", False)):
        sel = [i for i, p in enumerate(nodes) if graph.nodes[p].is_seed == seed]
        if sel:
            ax.scatter([pos[nodes[i]][0] for i in sel], [pos[nodes[i]][1] for i in sel],
                       c=[vals[i] for i in sel], cmap="viridis", vmin=min(vals), vmax=max(vals),
                       marker=marker, s=40, zorder=2)
    for p in nodes:
        x, y = pos[p]
        ax.annotate(graph.nodes[p].name, (x, y), fontsize=6, xytext=(3, 3), textcoords="offset points")
    return _save(fig, path)


def render_all(out_dir, fit: FitTable | None = None, groups: Sequence[GroupScore] | None = None,
               graph: PageGraph | None = None, dimension: str = "") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fit is not None:
        written.append(score_intervals(fit, os.path.join(out_dir, "scores.png")))
        if fit.items:
            written.append(item_discriminations(fit, os.path.join(out_dir, "items.png")))
    if groups:
        written.append(group_scores(groups, os.path.join(out_dir, "groups.png"), dimension))
    if graph is not None:
        written.append(page_network(graph, os.path.join(out_dir, "network.png")))
    return written


def group_scores_from_table(path) -> list[GroupScore]:
    out = []
    with open(path, encoding="utf-8") as fh:
        head = next(fh).rstrip("\n").split("\t")
        col = {h: i for i, h in enumerate(head)}
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            out.append(GroupScore(parts[col["group_key"]], float(parts[col["weighted_mean"]]),
                                  float(parts[col["total_weight"]]), int(parts[col["n_ads"]])))
    return out


def classification_counts(fit: FitTable) -> Mapping[Classification, int]:
    counts = {c: 0 for c in Classification}
    for _, c in fit.scores.values():
        counts[c] += 1
    return counts
