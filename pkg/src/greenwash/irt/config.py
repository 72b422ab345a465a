from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

import yaml

DEFAULT_ANCHORS = {
    "natural_gas": (1000.0, 0.001),
    "fossil_fuel": (0.001, 1000.0),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class IrtConfig:
    """Priors, optimizer and sampler settings for the ideal-point model.

    ``discrimination_priors`` maps item keys to the (alpha, beta) shape of a
    Beta prior on g = (lambda + 1) / 2; items not listed use
    ``default_discrimination``. Missingness discriminations always use
    ``missing_discrimination``.

    ``item_sampler`` picks how item vectors are drawn around the MAP fit:
    Hamiltonian Monte Carlo on the exact marginal, the Gaussian at its
    mode, or (``auto``) HMC up to ``hmc_max_ads`` ads and the Gaussian above.
    """

    discrimination_priors: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_ANCHORS)
    )
    default_discrimination: tuple[float, float] = (1.0, 1.0)
    missing_discrimination: tuple[float, float] = (1.0, 1.0)
    theta_sd: float = 3.0
    difficulty_sd: float = 3.0
    max_iter: int = 5000
    tol: float = 1e-4
    step_size: float = 1.0
    draws: int = 1000
    seed: int = 0
    threads: int = 1
    chunk_size: int = 4096
    item_sampler: str = "auto"
    item_groups: int = 200
    hmc_max_ads: int = 500
    hmc_burn: int = 100
    hmc_steps: int = 10
    grid_points: int = 241
    grid_width: float = 6.0
    mcmc_max_ads: int = 200
    mcmc_iter: int = 6000
    mcmc_burn: int = 2000

    def __post_init__(self):
        pairs = dict(self.discrimination_priors)
        for key, (a, b) in pairs.items():
            if not (a > 0 and b > 0):
                raise ConfigError(f"discrimination prior for {key} must have alpha, beta > 0")
        object.__setattr__(self, "discrimination_priors", {k: (float(a), float(b)) for k, (a, b) in pairs.items()})
        for name in ("default_discrimination", "missing_discrimination"):
            a, b = getattr(self, name)
            if not (a > 0 and b > 0):
                raise ConfigError(f"{name} must have alpha, beta > 0")
            object.__setattr__(self, name, (float(a), float(b)))
        if self.draws < 1:
            raise ConfigError("draws must be >= 1")
        if self.tol <= 0:
            raise ConfigError("tol must be > 0")
        if self.theta_sd <= 0 or self.difficulty_sd <= 0:
            raise ConfigError("prior scales must be > 0")
        if self.item_sampler not in ("auto", "hmc", "gaussian"):
            raise ConfigError("item_sampler must be one of auto, hmc, gaussian")
        if self.item_groups < 1 or self.hmc_steps < 1 or self.hmc_burn < 0:
            raise ConfigError("item_groups and hmc_steps must be >= 1, hmc_burn >= 0")
        if self.grid_points < 3 or self.grid_width <= 0:
            raise ConfigError("grid_points must be >= 3 and grid_width > 0")
        if self.threads < 1 or self.chunk_size < 1:
            raise ConfigError("threads and chunk_size must be >= 1")

    def prior_for(self, key: str) -> tuple[float, float]:
        return self.discrimination_priors.get(key, self.default_discrimination)

    def with_(self, **kw) -> "IrtConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Mapping):
                v = {k: list(ab) for k, ab in sorted(v.items())}
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def config_from_dict(data: Mapping[str, Any] | None) -> IrtConfig:
    data = dict(data or {})
    known = {f.name for f in fields(IrtConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown IRT config keys: {', '.join(sorted(unknown))}")
    if "discrimination_priors" in data:
        priors = dict(DEFAULT_ANCHORS)
        for k, v in data["discrimination_priors"].items():
            if v is None:
                priors.pop(k, None)
            else:
                priors[k] = tuple(v)
        data["discrimination_priors"] = priors
    for name in ("default_discrimination", "missing_discrimination"):
        if name in data:
            data[name] = tuple(data[name])
    return IrtConfig(**data)


def load_config(path) -> IrtConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data.get("irt", data))
