"""Over-dispersed chain seeds and the Gelman-Rubin convergence statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["DegenerateChainError", "SeedSearchConfig", "search_overdispersed", "gelman_rubin"]


class DegenerateChainError(ValueError):
    """All chains are constant, so the within-chain variance is zero."""


@dataclass(frozen=True)
class SeedSearchConfig:
    """Search for an extreme reordering.

    `direction` ``"lower"`` accepts only candidates strictly less probable
    than the incumbent, ``"upper"`` only strictly more probable ones.
    """

    length: int
    direction: str = "lower"
    gammas: tuple | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("search length must be non-negative")
        if self.direction not in ("lower", "upper"):
            raise ValueError("direction must be 'lower' or 'upper'")


def search_overdispersed(data, cfg: SeedSearchConfig, start=None, rng=None, trace: list | None = None):
    """Greedy search for a low- or high-probability consistent reordering.

    Starts from the original ordering (or `start`) and makes ``cfg.length``
    proposal draws.  If `trace` is a list, ``(step, accepted, log_p)`` rows
    are appended to it.
    """
    from .reorder import default_gammas, original_ordering, space_for

    sp = space_for(data)
    v = original_ordering(data) if start is None else start
    gammas = default_gammas(data.K) if cfg.gammas is None else tuple(cfg.gammas)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    lower = cfg.direction == "lower"
    if trace is not None:
        trace.append((0, False, v.log_p))
    for a in range(1, cfg.length + 1):
        prop = sp.propose(v.initial, gammas, rng)
        ok = False
        if not prop.rejected and sp.counts_match(prop.candidate):
            lp = sp.log_prob(prop.candidate)
            if lp > -math.inf and (lp < v.log_p if lower else lp > v.log_p):
                v = sp.make(prop.candidate, lp)
                ok = True
        if trace is not None:
            trace.append((a, ok, v.log_p))
    return v


def gelman_rubin(traces) -> float:
    """Potential scale reduction factor of two or more equal-length chains.

    ``W`` is the mean within-chain sample variance, ``B`` is ``m`` times the
    sample variance of the chain means and the statistic is
    ``sqrt(((m - 1) / m * W + B / m) / W)``.  Nothing is discarded as
    burn-in.
    """
    chains = np.asarray([np.asarray(t, float) for t in traces])
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise ValueError("need at least two equal-length traces")
    m = chains.shape[1]
    if m < 2:
        raise ValueError("traces must have at least two values")
    W = chains.var(axis=1, ddof=1).mean()
    if W == 0:
        raise DegenerateChainError("within-chain variance is zero")
    B = m * chains.mean(axis=1).var(ddof=1)
    return float(math.sqrt(((m - 1) / m * W + B / m) / W))
