"""OLS with squares and pairwise interactions, classical inference, marginal effects."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps
from scipy.linalg import solve_triangular

from .ingest import CovariateTable

RANK_TOL = 1e-10


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    kind: str  # "main" | "square" | "interaction"
    columns: tuple[str, ...]

    @property
    def name(self) -> str:
        if self.kind == "square":
            return f"{self.columns[0]}^2"
        return ":".join(self.columns)

    def values(self, table: CovariateTable, rows: np.ndarray) -> np.ndarray:
        cols = [table[c][rows] for c in self.columns]
        if self.kind == "square":
            return cols[0] ** 2
        if self.kind == "interaction":
            return cols[0] * cols[1]
        return cols[0]


_ORDER = {"main": 0, "square": 1, "interaction": 2}


@dataclass(frozen=True)
class ModelSpec:
    outcome: str
    terms: tuple[Term, ...]
    intercept: bool = True

    def __post_init__(self):
        seen = set()
        for t in self.terms:
            key = (t.kind, tuple(sorted(t.columns)) if t.kind == "interaction" else t.columns)
            if key in seen:
                raise StatsError(f"duplicate term {t.name}")
            seen.add(key)
            if t.kind == "interaction" and (len(t.columns) != 2 or t.columns[0] == t.columns[1]):
                raise StatsError(f"interaction {t.name} needs two distinct columns")

    @property
    def ordered_terms(self) -> list[Term]:
        return sorted(self.terms, key=lambda t: _ORDER[t.kind])

    @property
    def column_names(self) -> list[str]:
        return (["(Intercept)"] if self.intercept else []) + [t.name for t in self.ordered_terms]

    @property
    def referenced(self) -> list[str]:
        cols = [self.outcome]
        for t in self.terms:
            cols += [c for c in t.columns if c not in cols]
        return cols


def parse_terms(outcome: str, spec: str) -> ModelSpec:
    """Parse "a + b + a^2 + a:b" (also "a*b" for a + b + a:b, "-1" to drop the intercept)."""
    intercept = True
    terms: list[Term] = []

    def add(t):
        if t not in terms:
            terms.append(t)

    for raw in re.split(r"\s*\+\s*|\s+(?=-)", spec.strip()):
        tok = raw.strip()
        if not tok:
            continue
        if tok in ("-1", "0", "- 1"):
            intercept = False
        elif tok == "1":
            intercept = True
        elif "*" in tok:
            a, b = (s.strip() for s in tok.split("*", 1))
            add(Term("main", (a,)))
            add(Term("main", (b,)))
            add(Term("interaction", (a, b)))
        elif ":" in tok:
            a, b = (s.strip() for s in tok.split(":", 1))
            add(Term("interaction", (a, b)))
        elif re.fullmatch(r"I?\(?\s*[\w.]+\s*(\^|\*\*)\s*2\s*\)?", tok):
            col = re.match(r"I?\(?\s*([\w.]+)", tok).group(1)
            add(Term("square", (col,)))
        elif re.fullmatch(r"[\w.]+", tok):
            add(Term("main", (tok,)))
        else:
            raise StatsError(f"cannot parse term {tok!r}")
    return ModelSpec(outcome, tuple(terms), intercept)


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    names: list[str]
    units: tuple[str, ...]
    dropped: int


def design_matrix(table: CovariateTable, spec: ModelSpec) -> DesignMatrix:
    absent = [c for c in spec.referenced if c not in table.columns]
    if absent:
        raise StatsError(f"unknown column(s): {', '.join(absent)}")
    complete = np.ones(table.n_rows, dtype=bool)
    for c in spec.referenced:
        complete &= ~np.isnan(table[c])
    rows = np.flatnonzero(complete)
    cols = []
    if spec.intercept:
        cols.append(np.ones(len(rows)))
    cols += [t.values(table, rows) for t in spec.ordered_terms]
    X = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    if len(rows) <= X.shape[1]:
        raise StatsError(f"insufficient observations: n = {len(rows)} for p = {X.shape[1]}")
    return DesignMatrix(X, table[spec.outcome][rows], spec.column_names,
                        tuple(table.unit_ids[i] for i in rows), int((~complete).sum()))


@dataclass
class OlsFit:
    names: list[str]
    coef: np.ndarray
    cov: np.ndarray
    n: int
    df_resid: int
    r2: float = float("nan")
    adj_r2: float = float("nan")
    resid_se: float = float("nan")
    f_stat: float = float("nan")
    f_df: tuple[int, int] = (0, 0)
    f_pvalue: float = float("nan")
    fitted: np.ndarray = field(default=None, repr=False)
    resid: np.ndarray = field(default=None, repr=False)
    robust: bool = False

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def t_stat(self) -> np.ndarray:
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(se > 0, self.coef / se, np.nan)

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * sps.t.sf(np.abs(self.t_stat), self.df_resid)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise StatsError(f"term {name} not in model") from None

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.index(name)])


def ols(X, y, names: Sequence[str] | None = None, robust: bool = False) -> OlsFit:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    names = list(names) if names is not None else [f"x{k}" for k in range(p)]
    if n <= p:
        raise StatsError(f"insufficient observations: n = {n} for p = {p}")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    scale = max(diag.max(initial=0.0), 1.0)
    for k in range(p):
        if diag[k] <= RANK_TOL * scale:
            raise StatsError(f"design matrix is rank deficient: column {names[k]} is linearly dependent")
    coef = solve_triangular(R, Q.T @ y)
    fitted = X @ coef
    resid = y - fitted
    df = n - p
    rss = float(resid @ resid)
    sigma2 = rss / df
    r_inv = solve_triangular(R, np.eye(p))
    xtx_inv = r_inv @ r_inv.T
    if robust:
        meat = (X * resid[:, None] ** 2).T @ X
        cov = xtx_inv @ meat @ xtx_inv * n / df
    else:
        cov = sigma2 * xtx_inv

    has_int = bool(np.any(np.all(X == 1.0, axis=0)))
    tss = float(np.sum((y - y.mean()) ** 2)) if has_int else float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    r2 = min(max(r2, 0.0), 1.0) if has_int else r2
    df_model = p - 1 if has_int else p
    adj = 1.0 - (1.0 - r2) * ((n - 1) if has_int else n) / df
    if df_model > 0:
        if rss <= 1e-24 * max(tss, 1.0):
            f = np.inf if tss > 0 else np.nan
        else:
            f = ((tss - rss) / df_model) / (rss / df)
        fp = float(sps.f.sf(f, df_model, df)) if np.isfinite(f) else (0.0 if f == np.inf else np.nan)
    else:
        f, fp = np.nan, np.nan
    return OlsFit(names, coef, cov, n, df, r2, adj, float(np.sqrt(sigma2)), float(f), (df_model, df), fp,
                  fitted, resid, robust)


def fit_model(table: CovariateTable, spec: ModelSpec, robust: bool = False) -> tuple[OlsFit, DesignMatrix]:
    dm = design_matrix(table, spec)
    return ols(dm.X, dm.y, dm.names, robust=robust), dm


def _interaction_name(fit: OlsFit, var: str, moderator: str) -> str:
    for name in (f"{var}:{moderator}", f"{moderator}:{var}"):
        if name in fit.names:
            return name
    raise StatsError(f"model has no {var} x {moderator} interaction")


def marginal_effect(fit: OlsFit, spec: ModelSpec | None, var: str, moderator: str, grid) -> list[tuple[float, float, float]]:
    """Effect of ``var`` at each moderator value with delta-method standard errors."""
    if spec is not None and Term("main", (var,)) not in spec.terms:
        raise StatsError(f"{var} is not a main effect in the model")
    i = fit.index(var)
    k = fit.index(_interaction_name(fit, var, moderator))
    b_v, b_i = fit.coef[i], fit.coef[k]
    v_v, v_i, c_vi = fit.cov[i, i], fit.cov[k, k], fit.cov[i, k]
    out = []
    for m in np.asarray(grid, dtype=float).ravel():
        eff = b_v + b_i * m
        var_m = v_v + m * m * v_i + 2.0 * m * c_vi
        out.append((float(m), float(eff), float(np.sqrt(max(var_m, 0.0)))))
    return out


def fit_table(fit: OlsFit, dropped: int = 0) -> str:
    lines = ["section\tterm\testimate\tstd_error\tt_stat\tp_value"]
    for name, b, se, t, p in zip(fit.names, fit.coef, fit.se, fit.t_stat, fit.p_values):
        lines.append(f"coef\t{name}\t{b:.10g}\t{se:.10g}\t{t:.10g}\t{p:.10g}")
    block = [
        ("n", fit.n), ("DF", fit.df_resid), ("R2", fit.r2), ("Adj_R2", fit.adj_r2),
        ("Residual_SE", fit.resid_se), ("F_stat", fit.f_stat), ("F_pvalue", fit.f_pvalue),
        ("dropped_rows", dropped),
    ]
    for name, v in block:
        lines.append(f"fit\t{name}\t{v:.10g}\t\t\t")
    return "\n".join(lines) + "\n"
