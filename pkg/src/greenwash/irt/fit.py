from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logit

from ..matrix import MISSING, IndicatorMatrix
from .config import IrtConfig
from .marginal import MarginalPosterior
from .model import IrtParams, NonFiniteError, Posterior

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


@dataclass
class MapFit:
    """Item parameters at the marginal posterior mode, scores at their conditional modes.

    ``grad_norm`` is the gradient norm of the log marginal posterior of the
    items; ``log_posterior`` is the joint log posterior at the reported
    point.
    """

    params: IrtParams
    log_posterior: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str = ""
    log_marginal: float = float("nan")

    def diagnostics(self) -> dict:
        return {
            "log_posterior": self.log_posterior,
            "log_marginal": self.log_marginal,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def anchor_signs(matrix: IndicatorMatrix, config: IrtConfig) -> np.ndarray:
    """+1 / -1 for items whose prior pushes the discrimination up / down, else 0."""
    ab = np.array([config.prior_for(k) for k in matrix.keys], dtype=float).reshape(-1, 2)
    return np.sign(ab[:, 0] - ab[:, 1]).astype(int)


def initial_params(matrix: IndicatorMatrix, config: IrtConfig) -> IrtParams:
    signs = anchor_signs(matrix, config)
    if not signs.any():
        raise FitError("rotation unidentified: no item has a sign-anchoring prior")
    Y = matrix.cells
    obs = Y != MISSING
    y = np.where(obs, Y, 0).astype(float)
    n_obs = obs.sum(axis=0)
    col_mean = np.divide(y.sum(axis=0), n_obs, out=np.zeros(Y.shape[1]), where=n_obs > 0)
    centered = np.where(obs, y - col_mean, 0.0)

    anchored = signs != 0
    base = _row_mean(centered[:, anchored] * signs[anchored], obs[:, anchored])
    item_sign = signs.astype(float).copy()
    for j in np.flatnonzero(~anchored):
        x = centered[obs[:, j], j]
        b = base[obs[:, j]]
        if x.std() > 0 and b.std() > 0:
            item_sign[j] = np.sign(np.corrcoef(x, b)[0, 1])
    use = item_sign != 0
    score = _row_mean(centered[:, use] * item_sign[use], obs[:, use])
    sd = score.std()
    theta = (score - score.mean()) / sd if sd > 0 else np.zeros_like(score)

    g = np.where(signs > 0, 0.55, np.where(signs < 0, 0.45, 0.5))
    m = len(matrix.missable)
    return IrtParams(theta, logit(g), np.zeros(len(g)), np.zeros(m), np.zeros(m))


def _row_mean(values, mask):
    cnt = mask.sum(axis=1)
    tot = np.where(mask, values, 0.0).sum(axis=1)
    return np.divide(tot, cnt, out=np.zeros(len(cnt)), where=cnt > 0)


def fit_map(matrix: IndicatorMatrix, config: IrtConfig, init: IrtParams | None = None) -> MapFit:
    n, j = matrix.shape
    if n < 2 or j < 2:
        raise FitError(f"need at least 2 ads and 2 items to fit, got {n} x {j}")
    mp = MarginalPosterior(matrix, config)
    start = initial_params(matrix, config) if init is None else init
    state = {"it": 0}

    def objective(z):
        try:
            value, grad = mp.value_and_grad(z)
        except NonFiniteError as exc:
            raise FitError(f"divergence at iteration {state['it']}: {exc}") from exc
        return -value, -grad

    def callback(_):
        state["it"] += 1

    res = minimize(
        objective,
        start.pack()[n:],
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_iter, "gtol": config.tol * 1e-2, "ftol": 1e-15, "maxcor": 20},
    )
    z = res.x
    value, grad = mp.value_and_grad(z)
    # L-BFGS can stall just above tol along flat anchor directions; finish with damped Newton
    for _ in range(20):
        if np.linalg.norm(grad) < config.tol:
            break
        H = mp.hessian(z)
        z, value, grad, moved = _newton_step(mp, z, value, grad, H, config.step_size)
        state["it"] += 1
        if not moved:
            break
    gnorm = float(np.linalg.norm(grad))
    converged = gnorm < config.tol
    if not converged:
        log.warning("MAP fit stopped with gradient norm %.3g >= tol %.3g", gnorm, config.tol)
    theta = mp.theta_modes(z)
    params = mp.params(z, theta)
    joint = Posterior(matrix, config).log_posterior(params)
    return MapFit(params, joint, gnorm, state["it"], converged, str(res.message), value)


def _newton_step(mp: MarginalPosterior, z, value, grad, H, step_size):
    try:
        np.linalg.cholesky(H)
        step = np.linalg.solve(H, grad)
    except np.linalg.LinAlgError:
        step = grad / np.maximum(np.abs(np.diag(H)), 1e-8)
    scale = step_size
    while scale > 1e-6:
        trial = z + scale * step
        try:
            tv, tg = mp.value_and_grad(trial)
        except NonFiniteError:
            tv = -np.inf
        if tv >= value:
            return trial, tv, tg, True
        scale /= 2
    return z, value, grad, False
