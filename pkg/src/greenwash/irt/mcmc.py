from __future__ import annotations

import logging

import numpy as np

from ..matrix import MISSING, IndicatorMatrix
from .config import IrtConfig
from .fit import fit_map
from .model import bounded, log_sigmoid
from .posterior import IrtPosterior

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.35


class McmcError(RuntimeError):
    pass


def _cell_loglik(Y, obs, y, miss, midx, theta, u, b, um, bm):
    eta = np.outer(theta, bounded(u)) - b
    L = np.where(obs, y * eta + log_sigmoid(-eta), 0.0)
    if len(midx):
        eta_m = np.outer(theta, bounded(um)) - bm
        Lm = miss * eta_m + log_sigmoid(-eta_m)
    else:
        Lm = np.zeros((len(theta), 0))
    return L, Lm


def _disc_prior(u, ab):
    return ab[:, 0] * log_sigmoid(u) + ab[:, 1] * log_sigmoid(-u)


def _log_prior(theta, u, b, um, bm, ab, ab_m, s_th, s_d):
    return (
        -0.5 * np.sum(theta**2) / s_th**2
        + np.sum(_disc_prior(u, ab)) + np.sum(_disc_prior(um, ab_m))
        - 0.5 * (np.sum(b**2) + np.sum(bm**2)) / s_d**2
    )


def mcmc_validate(matrix: IndicatorMatrix, config: IrtConfig) -> IrtPosterior:
    """Random-walk Metropolis within conditionally independent blocks.

    Blocks are each theta_i, each (u_j, b_j) and each missingness pair. A
    further shift move (theta + d, b + lam * d, bm + lamm * d) follows the
    ridge along which the likelihood is exactly flat, because it depends on
    lam * theta - b only; it is accepted on the prior ratio alone. The chain
    starts at the MAP fit; step sizes adapt during burn-in and are frozen
    afterwards.
    """
    n, J = matrix.shape
    if n > config.mcmc_max_ads:
        raise McmcError(f"MCMC validation is limited to {config.mcmc_max_ads} ads, matrix has {n}")
    if config.mcmc_iter <= config.mcmc_burn:
        raise McmcError("mcmc_iter must exceed mcmc_burn")
    rng = np.random.default_rng(config.seed)
    start = fit_map(matrix, config).params
    Y = matrix.cells
    midx = matrix.missable
    M = len(midx)
    obs = Y != MISSING
    y = (Y == 1).astype(float)
    miss = (Y[:, midx] == MISSING).astype(float)
    ab = np.array([config.prior_for(k) for k in matrix.keys], dtype=float).reshape(-1, 2)
    ab_m = np.tile(config.missing_discrimination, (M, 1)).astype(float)
    s_th, s_d = config.theta_sd, config.difficulty_sd

    theta = start.theta.copy()
    u, b = start.disc_raw.copy(), start.difficulty.copy()
    um, bm = start.miss_disc_raw.copy(), start.miss_difficulty.copy()

    step_th = np.full(n, 0.8)
    step_it = np.full((J, 2), 0.3)
    step_m = np.full((M, 2), 0.3)
    acc_th = np.zeros(n)
    acc_it = np.zeros(J)
    acc_m = np.zeros(M)
    step_shift = 0.05
    acc_shift = 0
    window = 0

    def loglik(theta, u, b, um, bm):
        return _cell_loglik(Y, obs, y, miss, midx, theta, u, b, um, bm)

    keep = config.mcmc_iter - config.mcmc_burn
    pick_idx = np.linspace(0, keep - 1, config.draws).round().astype(int)
    saved = {k: [] for k in ("theta", "u", "b", "um", "bm")}

    L, Lm = loglik(theta, u, b, um, bm)
    for it in range(config.mcmc_iter):
        # theta block, one accept/reject per ad
        prop = theta + step_th * rng.standard_normal(n)
        Lp, Lmp = loglik(prop, u, b, um, bm)
        cur = L.sum(1) + Lm.sum(1) - 0.5 * theta**2 / s_th**2
        new = Lp.sum(1) + Lmp.sum(1) - 0.5 * prop**2 / s_th**2
        ok = np.log(rng.random(n)) < new - cur
        theta = np.where(ok, prop, theta)
        L = np.where(ok[:, None], Lp, L)
        Lm = np.where(ok[:, None], Lmp, Lm)
        acc_th += ok

        # item blocks, one accept/reject per item and stage
        zu = rng.standard_normal((J, 2)) * step_it
        zm = rng.standard_normal((M, 2)) * step_m
        pu, pb = u + zu[:, 0], b + zu[:, 1]
        pum, pbm = um + zm[:, 0], bm + zm[:, 1]
        Lp, Lmp = loglik(theta, pu, pb, pum, pbm)
        cur = L.sum(0) + _disc_prior(u, ab) - 0.5 * b**2 / s_d**2
        new = Lp.sum(0) + _disc_prior(pu, ab) - 0.5 * pb**2 / s_d**2
        ok = np.log(rng.random(J)) < new - cur
        u, b = np.where(ok, pu, u), np.where(ok, pb, b)
        L = np.where(ok[None, :], Lp, L)
        acc_it += ok
        if M:
            cur = Lm.sum(0) + _disc_prior(um, ab_m) - 0.5 * bm**2 / s_d**2
            new = Lmp.sum(0) + _disc_prior(pum, ab_m) - 0.5 * pbm**2 / s_d**2
            okm = np.log(rng.random(M)) < new - cur
            um, bm = np.where(okm, pum, um), np.where(okm, pbm, bm)
            Lm = np.where(okm[None, :], Lmp, Lm)
            acc_m += okm

        # shift along the ridge: likelihood unchanged, so only the prior ratio enters
        prior = _log_prior(theta, u, b, um, bm, ab, ab_m, s_th, s_d)
        delta = step_shift * rng.standard_normal()
        pth, pb, pbm = theta + delta, b + bounded(u) * delta, bm + bounded(um) * delta
        new_prior = _log_prior(pth, u, pb, um, pbm, ab, ab_m, s_th, s_d)
        if np.log(rng.random()) < new_prior - prior:
            theta, b, bm = pth, pb, pbm
            acc_shift += 1
            L, Lm = loglik(theta, u, b, um, bm)

        window += 1
        if it < config.mcmc_burn and window == 50:
            step_th *= np.exp(acc_th / window - TARGET_ACCEPT)
            step_it *= np.exp(acc_it / window - TARGET_ACCEPT)[:, None]
            step_m *= np.exp(acc_m / window - TARGET_ACCEPT)[:, None]
            step_shift *= np.exp(acc_shift / window - TARGET_ACCEPT)
            acc_th[:], acc_it[:], acc_m[:] = 0, 0, 0
            acc_shift = 0
            window = 0
        if it == config.mcmc_burn - 1:
            acc_th[:], acc_it[:], acc_m[:] = 0, 0, 0
            acc_shift = 0
            window = 0
        if it >= config.mcmc_burn:
            saved["theta"].append(theta.copy())
            saved["u"].append(u.copy())
            saved["b"].append(b.copy())
            saved["um"].append(um.copy())
            saved["bm"].append(bm.copy())

    rates = {
        "theta": float(acc_th.mean() / keep),
        "items": float(acc_it.mean() / keep) if J else float("nan"),
        "missingness": float(acc_m.mean() / keep) if M else float("nan"),
        "shift": float(acc_shift / keep),
    }
    for name, r in rates.items():
        if np.isfinite(r) and not 0.1 <= r <= 0.6:
            log.warning("MCMC acceptance rate for %s blocks is %.2f, outside [0.1, 0.6]", name, r)
    widths = {"theta": n, "u": J, "b": J, "um": M, "bm": M}
    arr = {k: np.asarray(v, dtype=float).reshape(keep, widths[k])[pick_idx] for k, v in saved.items()}
    return IrtPosterior.for_matrix(
        matrix,
        theta=arr["theta"],
        discrimination=bounded(arr["u"]),
        difficulty=arr["b"],
        miss_discrimination=bounded(arr["um"]),
        miss_difficulty=arr["bm"],
        diagnostics={"acceptance_" + k: v for k, v in rates.items()} | {"draws": config.draws},
        method="mcmc",
    )
