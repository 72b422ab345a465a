"""Log posterior of the two-stage ideal-point model and its analytic gradient.

For ad i and item j with outcome discrimination lam_j = 2 g_j - 1 and
difficulty b_j, P(y_ij = 1) = sigmoid(lam_j * theta_i - b_j). Items that can
be missing also carry a missingness stage sharing theta:
P(cell missing) = sigmoid(lamm_j * theta_i - bm_j). Observed cells contribute
both stages, missing cells only the missingness stage.

Discriminations are optimized on u = logit(g), so the Beta prior on g picks
up the Jacobian g (1 - g); the resulting log density in u is
a * log(g) + b * log(1 - g) - log B(a, b).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, expit

from ..matrix import MISSING, IndicatorMatrix
from .config import IrtConfig

LOG_2PI = np.log(2.0 * np.pi)


class NonFiniteError(FloatingPointError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def bounded(u):
    """Map unconstrained u to a discrimination strictly inside (-1, 1)."""
    return np.tanh(np.asarray(u, dtype=float) / 2.0)


def unbounded(lam):
    lam = np.asarray(lam, dtype=float)
    return 2.0 * np.arctanh(lam)


@dataclass
class IrtParams:
    theta: np.ndarray
    disc_raw: np.ndarray
    difficulty: np.ndarray
    miss_disc_raw: np.ndarray
    miss_difficulty: np.ndarray

    @property
    def discrimination(self) -> np.ndarray:
        return bounded(self.disc_raw)

    @property
    def miss_discrimination(self) -> np.ndarray:
        return bounded(self.miss_disc_raw)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.theta), len(self.disc_raw), len(self.miss_disc_raw)

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.theta, self.disc_raw, self.difficulty, self.miss_disc_raw, self.miss_difficulty]
        ).astype(float)

    @classmethod
    def unpack(cls, vec, n_ads: int, n_items: int, n_missable: int) -> "IrtParams":
        vec = np.asarray(vec, dtype=float)
        cuts = np.cumsum([n_ads, n_items, n_items, n_missable])
        if len(vec) != cuts[-1] + n_missable:
            raise ValueError(f"parameter vector has length {len(vec)}, expected {cuts[-1] + n_missable}")
        parts = np.split(vec, cuts)
        return cls(*(p.copy() for p in parts))

    @classmethod
    def zeros(cls, matrix: IndicatorMatrix) -> "IrtParams":
        n, j = matrix.shape
        m = len(matrix.missable)
        return cls(np.zeros(n), np.zeros(j), np.zeros(j), np.zeros(m), np.zeros(m))

    def copy(self) -> "IrtParams":
        return IrtParams(*(np.array(a, dtype=float) for a in
                           (self.theta, self.disc_raw, self.difficulty, self.miss_disc_raw, self.miss_difficulty)))


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(s, min(s + size, n)) for s in range(0, n, size)] or [slice(0, 0)]


def _pairwise_sum(parts: list):
    """Fixed-shape tree reduction; result depends only on the chunk list."""
    while len(parts) > 1:
        nxt = [parts[k] + parts[k + 1] for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _chunk_terms(theta, Y, lam, beta, lam_m, beta_m, midx, want_grad):
    obs = Y != MISSING
    y = (Y == 1).astype(float)
    eta = np.outer(theta, lam) - beta
    ll = np.where(obs, y * eta + log_sigmoid(-eta), 0.0).sum()
    if len(midx):
        miss = (Y[:, midx] == MISSING).astype(float)
        eta_m = np.outer(theta, lam_m) - beta_m
        ll += (miss * eta_m + log_sigmoid(-eta_m)).sum()
    if not want_grad:
        return ll, None
    r = np.where(obs, y - expit(eta), 0.0)
    g_theta = r @ lam
    g_lam = theta @ r
    g_beta = -r.sum(axis=0)
    if len(midx):
        rm = miss - expit(eta_m)
        g_theta = g_theta + rm @ lam_m
        g_lam_m = theta @ rm
        g_beta_m = -rm.sum(axis=0)
    else:
        g_lam_m = np.zeros(0)
        g_beta_m = np.zeros(0)
    return ll, (g_theta, g_lam, g_beta, g_lam_m, g_beta_m)


class Posterior:
    """Log posterior bound to one matrix and config.

    Row chunks have a fixed size, so the reduction tree (and therefore every
    bit of the result) is the same for any thread count.
    """

    def __init__(self, matrix: IndicatorMatrix, config: IrtConfig):
        self.matrix = matrix
        self.config = config
        self.Y = matrix.cells
        self.midx = matrix.missable
        self.n_ads, self.n_items = matrix.shape
        self.n_missable = len(self.midx)
        self.prior_ab = np.array([config.prior_for(k) for k in matrix.keys], dtype=float).reshape(-1, 2)
        ma, mb = config.missing_discrimination
        self.miss_prior_ab = np.tile([ma, mb], (self.n_missable, 1)).astype(float)
        self.slices = _chunks(self.n_ads, config.chunk_size)

    @property
    def dim(self) -> int:
        return self.n_ads + 2 * self.n_items + 2 * self.n_missable

    def unpack(self, vec) -> IrtParams:
        return IrtParams.unpack(vec, self.n_ads, self.n_items, self.n_missable)

    def _map_chunks(self, fn):
        if self.config.threads > 1 and len(self.slices) > 1:
            with ThreadPoolExecutor(self.config.threads) as pool:
                return list(pool.map(fn, self.slices))
        return [fn(s) for s in self.slices]

    def _check_finite(self, params: IrtParams):
        vec = params.pack()
        bad = np.flatnonzero(~np.isfinite(vec))
        if len(bad):
            raise NonFiniteError(f"non-finite parameter at index {bad[0]}", int(bad[0]))

    def _prior(self, params: IrtParams, want_grad: bool):
        cfg = self.config
        th, b, bm = params.theta, params.difficulty, params.miss_difficulty
        lp = -0.5 * np.sum(th**2) / cfg.theta_sd**2 - len(th) * (np.log(cfg.theta_sd) + 0.5 * LOG_2PI)
        nd = len(b) + len(bm)
        lp += -0.5 * (np.sum(b**2) + np.sum(bm**2)) / cfg.difficulty_sd**2 - nd * (
            np.log(cfg.difficulty_sd) + 0.5 * LOG_2PI
        )
        grads = None
        for raw, ab, slot in ((params.disc_raw, self.prior_ab, 0), (params.miss_disc_raw, self.miss_prior_ab, 1)):
            a, bb = ab[:, 0], ab[:, 1]
            lp += np.sum(a * log_sigmoid(raw) + bb * log_sigmoid(-raw) - betaln(a, bb))
        if want_grad:
            g = expit(params.disc_raw)
            gm = expit(params.miss_disc_raw)
            a, bb = self.prior_ab[:, 0], self.prior_ab[:, 1]
            am, bbm = self.miss_prior_ab[:, 0], self.miss_prior_ab[:, 1]
            grads = (
                -th / cfg.theta_sd**2,
                a * (1.0 - g) - bb * g,
                -b / cfg.difficulty_sd**2,
                am * (1.0 - gm) - bbm * gm,
                -bm / cfg.difficulty_sd**2,
            )
        return lp, grads

    def log_likelihood_and_grad(self, params: IrtParams, want_grad: bool = True):
        lam, lam_m = params.discrimination, params.miss_discrimination
        beta, beta_m = params.difficulty, params.miss_difficulty
        th = params.theta

        def work(s):
            return _chunk_terms(th[s], self.Y[s], lam, beta, lam_m, beta_m, self.midx, want_grad)

        results = self._map_chunks(work)
        ll = _pairwise_sum([r[0] for r in results])
        if not want_grad:
            return ll, None
        g_theta = np.concatenate([r[1][0] for r in results])
        g_lam = _pairwise_sum([r[1][1] for r in results])
        g_beta = _pairwise_sum([r[1][2] for r in results])
        g_lam_m = _pairwise_sum([r[1][3] for r in results])
        g_beta_m = _pairwise_sum([r[1][4] for r in results])
        return ll, (g_theta, g_lam, g_beta, g_lam_m, g_beta_m)

    def log_posterior(self, params: IrtParams) -> float:
        self._check_finite(params)
        ll, _ = self.log_likelihood_and_grad(params, want_grad=False)
        lp, _ = self._prior(params, want_grad=False)
        value = float(ll + lp)
        if not np.isfinite(value):
            raise NonFiniteError("log posterior is not finite")
        return value

    def value_and_grad(self, params: IrtParams) -> tuple[float, np.ndarray]:
        self._check_finite(params)
        ll, (g_th, g_lam, g_b, g_lam_m, g_bm) = self.log_likelihood_and_grad(params)
        lp, (p_th, p_u, p_b, p_um, p_bm) = self._prior(params, want_grad=True)
        # d lambda / du for lambda = 2 sigmoid(u) - 1
        dl = 2.0 * expit(params.disc_raw) * expit(-params.disc_raw)
        dlm = 2.0 * expit(params.miss_disc_raw) * expit(-params.miss_disc_raw)
        grad = np.concatenate(
            [g_th + p_th, g_lam * dl + p_u, g_b + p_b, g_lam_m * dlm + p_um, g_bm + p_bm]
        )
        value = float(ll + lp)
        if not np.isfinite(value):
            raise NonFiniteError("log posterior is not finite")
        bad = np.flatnonzero(~np.isfinite(grad))
        if len(bad):
            raise NonFiniteError(f"non-finite gradient at index {bad[0]}", int(bad[0]))
        return value, grad

    def theta_curvature(self, params: IrtParams) -> np.ndarray:
        """Negative second derivative of the log posterior in each theta_i."""
        lam, lam_m = params.discrimination, params.miss_discrimination
        obs = self.Y != MISSING
        p = expit(np.outer(params.theta, lam) - params.difficulty)
        curv = np.where(obs, p * (1.0 - p), 0.0) @ (lam**2)
        if self.n_missable:
            pm = expit(np.outer(params.theta, lam_m) - params.miss_difficulty)
            curv = curv + (pm * (1.0 - pm)) @ (lam_m**2)
        return curv + 1.0 / self.config.theta_sd**2


def log_posterior(params: IrtParams, matrix: IndicatorMatrix, config: IrtConfig) -> float:
    return Posterior(matrix, config).log_posterior(params)


def grad_log_posterior(params: IrtParams, matrix: IndicatorMatrix, config: IrtConfig) -> np.ndarray:
    return Posterior(matrix, config).value_and_grad(params)[1]


def response_probability(theta, discrimination, difficulty):
    """P(y = 1) under the logistic link; shared with the simulator."""
    return expit(np.multiply.outer(theta, discrimination) - difficulty)
