"""Item posterior with theta integrated out on a fixed grid.

The ad scores are integrated against their Normal prior with a rectangle
rule on ``grid_points`` equally spaced nodes spanning ``grid_width`` prior
standard deviations either side of zero. Item parameters are found by
maximizing this marginal posterior; scores then follow from their exact
one-dimensional conditional on the same grid. Maximizing the joint
posterior over scores and items instead inflates |lambda| toward the
bound and shrinks the scores, because every ad adds its own parameter.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import expit, logsumexp

from ..matrix import MISSING, IndicatorMatrix
from .config import IrtConfig
from .model import IrtParams, NonFiniteError, Posterior, _chunks, _pairwise_sum, bounded, log_sigmoid


def theta_grid(config: IrtConfig) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and log quadrature weights (prior density times spacing)."""
    half = config.grid_width * config.theta_sd
    nodes = np.linspace(-half, half, config.grid_points)
    h = nodes[1] - nodes[0]
    logw = -0.5 * (nodes / config.theta_sd) ** 2 - np.log(config.theta_sd) - 0.5 * np.log(2 * np.pi) + np.log(h)
    return nodes, logw


class MarginalPosterior:
    """log p(items | Y) up to a constant, with its gradient.

    Item vectors are laid out as [u, b, u_miss, b_miss], the item part of
    ``IrtParams.pack``.
    """

    def __init__(self, matrix: IndicatorMatrix, config: IrtConfig):
        self.matrix = matrix
        self.config = config
        self.joint = Posterior(matrix, config)
        Y = matrix.cells
        self.n_ads, self.n_items = Y.shape
        self.midx = np.asarray(matrix.missable, dtype=int)
        self.n_missable = len(self.midx)
        self.Y1 = (Y == 1).astype(float)
        self.Y0 = (Y == 0).astype(float)
        self.Mi = (Y[:, self.midx] == MISSING).astype(float)
        self.Mo = 1.0 - self.Mi
        self.nodes, self.logw = theta_grid(config)
        self.slices = _chunks(self.n_ads, config.chunk_size)

    @property
    def dim(self) -> int:
        return 2 * (self.n_items + self.n_missable)

    def split(self, z):
        z = np.asarray(z, dtype=float)
        j, m = self.n_items, self.n_missable
        if len(z) != self.dim:
            raise ValueError(f"item vector has length {len(z)}, expected {self.dim}")
        return z[:j], z[j:2 * j], z[2 * j:2 * j + m], z[2 * j + m:]

    def params(self, z, theta=None) -> IrtParams:
        u, b, um, bm = self.split(z)
        th = np.zeros(self.n_ads) if theta is None else np.asarray(theta, dtype=float)
        return IrtParams(th, u.copy(), b.copy(), um.copy(), bm.copy())

    def _tables(self, z):
        u, b, um, bm = self.split(z)
        eta = np.outer(self.nodes, bounded(u)) - b
        eta_m = np.outer(self.nodes, bounded(um)) - bm
        return eta, eta_m

    def _grid_loglik(self, s, eta, eta_m):
        """(n_chunk, G) log-likelihood of each ad's row at each node."""
        ll = self.Y1[s] @ log_sigmoid(eta).T + self.Y0[s] @ log_sigmoid(-eta).T
        if self.n_missable:
            ll += self.Mi[s] @ log_sigmoid(eta_m).T + self.Mo[s] @ log_sigmoid(-eta_m).T
        return ll

    def _map(self, fn):
        if self.config.threads > 1 and len(self.slices) > 1:
            with ThreadPoolExecutor(self.config.threads) as pool:
                return list(pool.map(fn, self.slices))
        return [fn(s) for s in self.slices]

    def _prior(self, z, want_grad):
        lp, grads = self.joint._prior(self.params(z, np.zeros(0)), want_grad)
        if not want_grad:
            return lp, None
        return lp, np.concatenate(grads[1:])

    def value_and_grad(self, z, want_grad: bool = True):
        z = np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            bad = int(np.flatnonzero(~np.isfinite(z))[0])
            raise NonFiniteError(f"non-finite item parameter at index {bad}", bad)
        eta, eta_m = self._tables(z)

        def work(s):
            L = self._grid_loglik(s, eta, eta_m) + self.logw
            lse = logsumexp(L, axis=1)
            if not want_grad:
                return lse.sum(), None
            R = np.exp(L - lse[:, None])
            return lse.sum(), (R.T @ self.Y1[s], R.T @ (self.Y1[s] + self.Y0[s]), R.T @ self.Mi[s], R.sum(axis=0))

        parts = self._map(work)
        value = _pairwise_sum([p[0] for p in parts])
        lp, gp = self._prior(z, want_grad)
        value = float(value + lp)
        if not np.isfinite(value):
            raise NonFiniteError("log marginal posterior is not finite")
        if not want_grad:
            return value, None
        A = _pairwise_sum([p[1][0] for p in parts])
        B = _pairwise_sum([p[1][1] for p in parts])
        C = _pairwise_sum([p[1][2] for p in parts])
        n_g = _pairwise_sum([p[1][3] for p in parts])
        u, _, um, _ = self.split(z)
        d_eta = A - expit(eta) * B
        dl = 0.5 * (1.0 - bounded(u) ** 2)
        g_u = (self.nodes @ d_eta) * dl
        g_b = -d_eta.sum(axis=0)
        d_eta_m = C - expit(eta_m) * n_g[:, None]
        dlm = 0.5 * (1.0 - bounded(um) ** 2)
        g_um = (self.nodes @ d_eta_m) * dlm
        g_bm = -d_eta_m.sum(axis=0)
        grad = np.concatenate([g_u, g_b, g_um, g_bm]) + gp
        if not np.all(np.isfinite(grad)):
            bad = int(np.flatnonzero(~np.isfinite(grad))[0])
            raise NonFiniteError(f"non-finite gradient at index {bad}", bad)
        return value, grad

    def value(self, z) -> float:
        return self.value_and_grad(z, want_grad=False)[0]

    def hessian(self, z, rel_step: float = 1e-5) -> np.ndarray:
        """Negative Hessian by central differences of the analytic gradient."""
        z = np.asarray(z, dtype=float)
        H = np.empty((self.dim, self.dim))
        for k in range(self.dim):
            h = rel_step * max(1.0, abs(z[k]))
            zp, zm = z.copy(), z.copy()
            zp[k] += h
            zm[k] -= h
            H[:, k] = -(self.value_and_grad(zp)[1] - self.value_and_grad(zm)[1]) / (2 * h)
        return 0.5 * (H + H.T)

    def theta_log_conditional(self, z) -> np.ndarray:
        """(N, G) normalized log posterior of each score on the grid nodes."""
        eta, eta_m = self._tables(z)

        def work(s):
            L = self._grid_loglik(s, eta, eta_m) + self.logw
            return L - logsumexp(L, axis=1, keepdims=True)

        return np.concatenate(self._map(work), axis=0)

    def theta_modes(self, z, iters: int = 50) -> np.ndarray:
        """Conditional posterior modes of the scores given items, by 1-D Newton from the best node."""
        logp = self.theta_log_conditional(z)
        theta = self.nodes[np.argmax(logp, axis=1)]
        params = self.params(z, theta)
        for _ in range(iters):
            _, grad = self.joint.value_and_grad(params)
            g = grad[: self.n_ads]
            h = self.joint.theta_curvature(params)
            step = g / h
            params.theta = params.theta + step
            if np.max(np.abs(step)) < 1e-10:
                break
        return params.theta


def sample_theta(logp: np.ndarray, nodes: np.ndarray, n_draws: int, rng) -> np.ndarray:
    """Draws (D, N) from grid posteriors, uniform within each node's cell."""
    h = nodes[1] - nodes[0]
    P = np.exp(logp)
    cum = np.cumsum(P, axis=1)
    cum /= cum[:, -1:]
    U = rng.random((logp.shape[0], n_draws))
    idx = np.empty(U.shape, dtype=int)
    for i in range(logp.shape[0]):
        idx[i] = np.searchsorted(cum[i], U[i], side="right")
    idx = np.minimum(idx, len(nodes) - 1)
    jitter = rng.random(U.shape) - 0.5
    return (nodes[idx] + h * jitter).T
