"""Adaptive permutation p-values for the component score tests.

Resampling follows Freedman and Lane: the mediator log-ratio is split into
fitted values and residuals under the null model, the residuals are permuted,
and the statistic is recomputed on ``fitted + permuted residuals``. The
outcome is never permuted.

Draws are made in batches. Batch ``b`` of test ``kind`` at node ``node`` uses
its own generator seeded from ``(seed, node, kind, b)``, so p-values do not
depend on how nodes are scheduled across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .models import Design

__all__ = [
    "PermConfig",
    "PermResult",
    "substream",
    "perm_pvalue",
    "alpha_resampler",
    "beta_resampler",
    "resample_alpha",
    "resample_beta",
]

KIND_CODES = {"alpha": 0, "beta": 1}

Resampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class PermConfig:
    max_perms: int = 100_000
    target_exceedances: int = 50
    batch: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.target_exceedances < 10:
            raise ValueError("target_exceedances must be at least 10")
        if self.max_perms < 1000:
            raise ValueError("max_perms must be at least 1000")
        if not 1 <= self.batch <= self.max_perms:
            raise ValueError("batch must lie in [1, max_perms]")


class PermResult(NamedTuple):
    p: float
    perms_used: int


def substream(seed: int, node: int, kind: str | int, batch: int) -> np.random.Generator:
    """Independent generator for one batch of one test at one node."""
    code = KIND_CODES[kind] if isinstance(kind, str) else int(kind)
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=(int(node), code, int(batch)))
    return np.random.Generator(np.random.PCG64(ss))


def perm_pvalue(observed_stat: float, resample: Resampler, config: PermConfig,
                node: int = 0, kind: str = "alpha") -> PermResult:
    """Sequential Monte Carlo p-value.

    Batches of ``config.batch`` permuted statistics are drawn until at least
    ``config.target_exceedances`` of them are ``>=`` the observed statistic or
    ``config.max_perms`` have been drawn. Returns ``(1 + exceedances) / (1 +
    draws)`` and the number of draws.

    ``resample(rng, size)`` must return ``size`` statistics drawn from the
    permutation null. NaN draws count as exceedances.
    """
    obs = float(observed_stat)
    # guards against rounding when a permutation reproduces the observed data
    threshold = obs - 1e-10 * abs(obs) if np.isfinite(obs) else obs
    draws = exceed = 0
    b = 0
    while draws < config.max_perms:
        size = min(config.batch, config.max_perms - draws)
        stats = np.asarray(resample(substream(config.seed, node, kind, b), size), dtype=float)
        exceed += int(np.count_nonzero(~(stats < threshold)))
        draws += size
        b += 1
        if exceed >= config.target_exceedances:
            break
    return PermResult((1 + exceed) / (1 + draws), draws)


def _permuted_indices(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)


def alpha_resampler(design: Design, logratio) -> Resampler:
    """Batched Freedman-Lane resampler for the ``alpha = 0`` score statistic."""
    L = np.asarray(logratio, dtype=float)
    fitted, resid = design.residualize_mediator(L, "x")
    n = L.shape[0]

    def draw(rng: np.random.Generator, size: int) -> np.ndarray:
        idx = _permuted_indices(rng, n, size)
        Lp = fitted[:, None] + resid[idx].T
        return design.alpha_stats(Lp)[0]

    return draw


def beta_resampler(design: Design, logratio) -> Resampler:
    """Batched Freedman-Lane resampler for the ``beta = 0`` score statistic.

    Residuals of the log-ratio on ``[X, T]`` are permuted, preserving the
    treatment-mediator association, while the outcome stays fixed.
    """
    L = np.asarray(logratio, dtype=float)
    fitted, resid = design.residualize_mediator(L, "xt")
    n = L.shape[0]

    def draw(rng: np.random.Generator, size: int) -> np.ndarray:
        idx = _permuted_indices(rng, n, size)
        Lp = fitted[:, None] + resid[idx].T
        return design.beta_stats(Lp)[0]

    return draw


def resample_alpha(design: Design, logratio, rng: np.random.Generator) -> float:
    """One permuted ``alpha`` score statistic."""
    return float(alpha_resampler(design, logratio)(rng, 1)[0])


def resample_beta(design: Design, logratio, rng: np.random.Generator) -> float:
    """One permuted ``beta`` score statistic."""
    return float(beta_resampler(design, logratio)(rng, 1)[0])
