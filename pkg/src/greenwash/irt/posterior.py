from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..matrix import IndicatorMatrix


class Classification(str, enum.Enum):
    GREENWASHING = "GREENWASHING"
    NON_GREENWASHING = "NON_GREENWASHING"
    UNCLASSIFIED = "UNCLASSIFIED"


@dataclass(frozen=True)
class ScoreSummary:
    mean: float
    q05: float
    q95: float


def classify(summary: ScoreSummary) -> Classification:
    if summary.q05 > summary.q95:
        raise ValueError(f"q05 {summary.q05} exceeds q95 {summary.q95}")
    if summary.q05 > 0:
        return Classification.GREENWASHING
    if summary.q95 < 0:
        return Classification.NON_GREENWASHING
    return Classification.UNCLASSIFIED


def summarize(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Column-wise mean and empirical 5% / 95% quantiles (linear interpolation)."""
    draws = np.asarray(draws, dtype=float)
    if draws.shape[1] == 0:
        empty = np.zeros(0)
        return empty, empty, empty
    q05, q95 = np.quantile(draws, [0.05, 0.95], axis=0)
    mean = draws.mean(axis=0)
    # reported means are kept inside the interval; binds only for heavily skewed draw sets
    return np.clip(mean, q05, q95), q05, q95


@dataclass
class IrtPosterior:
    """Posterior draws for all parameter families plus derived summaries.

    Draw arrays are (D, N) for theta, (D, J) for outcome items and (D, M)
    for the missingness stage of missable items.
    """

    ads: tuple[str, ...]
    item_keys: tuple[str, ...]
    missable_keys: tuple[str, ...]
    theta: np.ndarray
    discrimination: np.ndarray
    difficulty: np.ndarray
    miss_discrimination: np.ndarray
    miss_difficulty: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    method: str = "laplace"

    @classmethod
    def for_matrix(cls, matrix: IndicatorMatrix, **arrays) -> "IrtPosterior":
        keys = tuple(matrix.keys)
        return cls(
            ads=matrix.ads,
            item_keys=keys,
            missable_keys=tuple(keys[j] for j in matrix.missable),
            **arrays,
        )

    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]

    def score_table(self) -> list[tuple[str, ScoreSummary, Classification]]:
        mean, q05, q95 = summarize(self.theta)
        rows = []
        for ad, m, lo, hi in zip(self.ads, mean, q05, q95):
            s = ScoreSummary(float(m), float(lo), float(hi))
            rows.append((ad, s, classify(s)))
        return rows

    def score_means(self) -> dict[str, float]:
        return dict(zip(self.ads, self.theta.mean(axis=0).tolist()))

    def item_table(self) -> list[tuple[str, str, ScoreSummary]]:
        rows = []
        for stage, keys, draws in (
            ("outcome", self.item_keys, self.discrimination),
            ("missingness", self.missable_keys, self.miss_discrimination),
        ):
            mean, q05, q95 = summarize(draws)
            for k, m, lo, hi in zip(keys, mean, q05, q95):
                rows.append((k, stage, ScoreSummary(float(m), float(lo), float(hi))))
        return rows

    def classification_counts(self) -> dict[Classification, int]:
        counts = {c: 0 for c in Classification}
        for _, _, c in self.score_table():
            counts[c] += 1
        return counts


# fit output file


@dataclass
class FitTable:
    """Summaries read back from a fit output file."""

    scores: dict[str, tuple[ScoreSummary, Classification]]
    items: dict[tuple[str, str], ScoreSummary]
    diagnostics: dict[str, str]

    def score_means(self) -> dict[str, float]:
        return {a: s.mean for a, (s, _) in self.scores.items()}

    def classifications(self) -> dict[str, Classification]:
        return {a: c for a, (_, c) in self.scores.items()}


FIT_HEADER = "section\tkey\tstage\tmean\tq05\tq95\tclassification"


def _fmt(x) -> str:
    return repr(float(x))


def write_fit_table(posterior: IrtPosterior, fh) -> None:
    fh.write(FIT_HEADER + "\n")
    for ad, s, c in posterior.score_table():
        fh.write(f"ad\t{ad}\t\t{_fmt(s.mean)}\t{_fmt(s.q05)}\t{_fmt(s.q95)}\t{c.value}\n")
    for key, stage, s in posterior.item_table():
        fh.write(f"item\t{key}\t{stage}\t{_fmt(s.mean)}\t{_fmt(s.q05)}\t{_fmt(s.q95)}\t\n")
    diag = {"method": posterior.method, "draws": posterior.n_draws, **posterior.diagnostics}
    for name in sorted(diag):
        value = diag[name]
        value = _fmt(value) if isinstance(value, float) else str(value)
        fh.write(f"diagnostic\t{name}\t\t{value}\t\t\t\n")


def read_fit_table(stream) -> FitTable:
    lines = iter(stream)
    head = next(lines, "").rstrip("\n")
    if head != FIT_HEADER:
        raise ValueError("not a fit output file (bad header)")
    scores, items, diag = {}, {}, {}
    for lineno, line in enumerate(lines, start=2):
        parts = line.rstrip("\n").split("\t")
        if parts == [""]:
            continue
        if len(parts) != 7:
            raise ValueError(f"fit file line {lineno}: expected 7 fields, got {len(parts)}")
        section, key, stage, mean, q05, q95, cls = parts
        if section == "ad":
            scores[key] = (ScoreSummary(float(mean), float(q05), float(q95)), Classification(cls))
        elif section == "item":
            items[(key, stage)] = ScoreSummary(float(mean), float(q05), float(q95))
        elif section == "diagnostic":
            diag[key] = mean
        else:
            raise ValueError(f"fit file line {lineno}: unknown section {section!r}")
    return FitTable(scores, items, diag)


def load_fit_table(path) -> FitTable:
    with open(path, encoding="utf-8") as fh:
        return read_fit_table(fh)
