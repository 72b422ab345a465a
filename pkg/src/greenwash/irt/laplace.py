"""Posterior draws around the MAP fit.

Item parameters (u, b for both stages) are drawn as ``item_groups``
vectors, either by Hamiltonian Monte Carlo on the exact log marginal
posterior (scores integrated out on the quadrature grid) or from the
Gaussian given by its curvature at the mode. With few ads the marginal is
skewed toward larger |lambda| and the Gaussian misplaces it, so small
matrices use HMC by default. Within each group, scores are drawn from their
exact conditional on the grid, so every draw pairs one item vector with
scores consistent with it and score summaries carry item uncertainty.

A discrimination whose mode sits at the bound (an anchor whose prior
outweighs the likelihood) has an almost flat log density in u past the
mode, so a sampler in u would wander over the whole (-1, 1) range although
nearly all posterior mass is at the bound. Such coordinates are held at the
mode and the rest are drawn conditional on them.
"""

from __future__ import annotations

import logging

import numpy as np

from ..matrix import IndicatorMatrix
from .config import IrtConfig
from .fit import MapFit
from .marginal import MarginalPosterior, sample_theta
from .model import NonFiniteError, bounded
from .posterior import IrtPosterior

log = logging.getLogger(__name__)

SATURATED = 1.0 - 1e-4


def item_covariance(H: np.ndarray) -> np.ndarray:
    """Inverse of the negative Hessian; non-positive eigenvalues are floored with a warning."""
    try:
        np.linalg.cholesky(H)
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(H)
        floor = max(np.abs(w).max() * 1e-8, 1e-8)
        log.warning("item curvature is not positive definite (min eigenvalue %.3g); flooring", w.min())
        cov = (V / np.maximum(w, floor)) @ V.T
    return 0.5 * (cov + cov.T)


def saturated_coordinates(mp: MarginalPosterior, z) -> np.ndarray:
    """Indices into the item vector of discriminations pinned at the bound."""
    u, _, um, _ = mp.split(z)
    j = mp.n_items
    sat = [k for k in range(j) if abs(bounded(u[k])) > SATURATED]
    sat += [2 * j + k for k in range(mp.n_missable) if abs(bounded(um[k])) > SATURATED]
    return np.array(sat, dtype=int)


def _gaussian_items(z, free, cov, K, rng):
    Z = np.tile(z, (K, 1))
    Z[:, free] = rng.multivariate_normal(z[free], cov, size=K, method="eigh")
    return Z


def _hmc_items(mp: MarginalPosterior, z, free, cov, config: IrtConfig, rng):
    """Item vectors from HMC with the Laplace covariance as inverse mass matrix.

    The step size is tuned during burn-in toward 80% acceptance and
    jittered by +-20% per trajectory. Returns (items, acceptance rate).
    """
    d = len(free)
    L = np.linalg.cholesky(cov)

    def logp(x):
        zz = z.copy()
        zz[free] = x
        v, g = mp.value_and_grad(zz)
        return v, g[free]

    x = z[free].copy()
    v, g = logp(x)
    steps = config.hmc_steps
    eps = 1.0 / np.sqrt(steps)
    out = np.tile(z, (config.item_groups, 1))
    accepted = 0
    for it in range(config.hmc_burn + config.item_groups):
        p = np.linalg.solve(L.T, rng.standard_normal(d))
        e = eps * rng.uniform(0.8, 1.2)
        x1, p1 = x.copy(), p + 0.5 * e * g
        try:
            for s in range(steps):
                x1 = x1 + e * (cov @ p1)
                v1, g1 = logp(x1)
                p1 = p1 + (e if s < steps - 1 else 0.5 * e) * g1
            log_a = min(0.0, (v1 - 0.5 * p1 @ cov @ p1) - (v - 0.5 * p @ cov @ p))
        except NonFiniteError:
            log_a = -np.inf
        if not np.isfinite(log_a):
            log_a = -np.inf
        if np.log(rng.random()) < log_a:
            x, v, g = x1, v1, g1
            if it >= config.hmc_burn:
                accepted += 1
        if it < config.hmc_burn:
            eps *= np.exp(0.05 * (np.exp(log_a) - 0.8))
        else:
            out[it - config.hmc_burn, free] = x
    rate = accepted / config.item_groups
    if rate < 0.3:
        log.warning("item HMC acceptance %.2f is low", rate)
    return out, rate


def sample_items(mp: MarginalPosterior, z, config: IrtConfig, rng):
    """Item vectors (K, dim) around the mode ``z``; returns (items, method, acceptance)."""
    K = config.item_groups
    pinned = saturated_coordinates(mp, z)
    free = np.setdiff1d(np.arange(mp.dim), pinned)
    if not len(free):
        return np.tile(z, (K, 1)), "fixed", 1.0
    cov = item_covariance(mp.hessian(z)[np.ix_(free, free)])
    method = config.item_sampler
    if method == "auto":
        method = "hmc" if mp.n_ads <= config.hmc_max_ads else "gaussian"
    if method == "gaussian":
        return _gaussian_items(z, free, cov, K, rng), method, 1.0
    items, rate = _hmc_items(mp, z, free, cov, config, rng)
    return items, method, rate


def laplace_draws(map_fit: MapFit, matrix: IndicatorMatrix, config: IrtConfig) -> IrtPosterior:
    if not map_fit.converged:
        log.warning("drawing around a MAP fit that did not converge (grad norm %.3g)", map_fit.grad_norm)
    mp = MarginalPosterior(matrix, config)
    n = mp.n_ads
    z = map_fit.params.pack()[n:]
    rng = np.random.default_rng(config.seed)
    D = config.draws

    items, method, rate = sample_items(mp, z, config, rng)
    sizes = [len(c) for c in np.array_split(np.arange(D), len(items))]
    Z = np.repeat(items, sizes, axis=0)
    theta = np.empty((D, n))
    start = 0
    cache: dict[bytes, np.ndarray] = {}
    for zk, size in zip(items, sizes):
        if size == 0:
            continue
        key = zk.tobytes()
        if key not in cache:
            cache[key] = mp.theta_log_conditional(zk)
        theta[start:start + size] = sample_theta(cache[key], mp.nodes, size, rng)
        start += size

    j, m = mp.n_items, mp.n_missable
    u, b, um, bm = Z[:, :j], Z[:, j:2 * j], Z[:, 2 * j:2 * j + m], Z[:, 2 * j + m:]
    diagnostics = dict(map_fit.diagnostics())
    diagnostics["draws"] = D
    diagnostics["pinned_items"] = len(saturated_coordinates(mp, z))
    diagnostics["item_sampler"] = method
    diagnostics["item_acceptance"] = rate
    return IrtPosterior.for_matrix(
        matrix,
        theta=theta,
        discrimination=bounded(u),
        difficulty=b,
        miss_discrimination=bounded(um),
        miss_difficulty=bm,
        diagnostics=diagnostics,
        method="laplace",
    )
