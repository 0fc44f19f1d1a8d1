"""Rao-Blackwellized estimates: the conditional expectation of an estimator
over the reorderings consistent with the reduced data, computed exactly by
enumeration or approximately by averaging Metropolis-Hastings chain states.

An *estimator* here is any callable ``f(data, initial_mask)`` returning a
float, a ``(point, variance)`` pair (scalars or equal-shape arrays) or an
:class:`~linktrace.estimators.EstimateWithVariance`.

Variance estimates use the decomposition ``E[var | dR] - Var(est | dR)``;
when that is negative the first term alone is reported and the result is
flagged conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import ObservedSample, SampleData
from .diagnostics import DegenerateChainError, gelman_rubin
from .estimators import EstimateWithVariance
from .reorder import Reordering, default_gammas, original_ordering, run_chain, space_for

__all__ = ["RBResult", "evaluate", "rb_from_weights", "rb_exact", "rb_mcmc"]


@dataclass
class RBResult:
    preliminary: float | np.ndarray
    preliminary_variance: float | np.ndarray
    rb_point: float | np.ndarray
    rb_variance: float | np.ndarray
    conservative: bool | np.ndarray
    method: str
    chain_length: int = 0
    acceptance_rate: float = 0.0
    gelman_rubin: float | None = None
    n_reorderings: int | None = None
    chains: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.bool_)):
                return v.item()
            return v

        return {
            "method": self.method,
            "preliminary": conv(self.preliminary),
            "preliminary_variance": conv(self.preliminary_variance),
            "rb_point": conv(self.rb_point),
            "rb_variance": conv(self.rb_variance),
            "conservative_flag": conv(self.conservative),
            "chain_length": self.chain_length,
            "acceptance_rate": self.acceptance_rate,
            "gelman_rubin": self.gelman_rubin,
            "n_reorderings": self.n_reorderings,
        }


def evaluate(estimator, data: SampleData, initial: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Call `estimator` and normalise its output to ``(point, variance)`` arrays."""
    out = estimator(data, initial)
    if isinstance(out, EstimateWithVariance):
        return np.asarray(out.point, float), np.asarray(out.variance, float)
    if isinstance(out, tuple):
        point, var = out
        return np.asarray(point, float), np.asarray(var, float)
    return np.asarray(out, float), np.full(np.shape(out), np.nan)


def _scalar(a):
    a = np.asarray(a)
    return a.item() if a.ndim == 0 else a


def rb_from_weights(points, variances, log_weights):
    """Weighted conditional mean and decomposed variance.

    Parameters
    ----------
    points, variances : (R, ...) arrays
        Estimator value and variance estimate for each reordering.
    log_weights : (R,) array
        Unnormalised log weights; adding a constant changes nothing.

    Returns
    -------
    point, variance, conservative
    """
    points = np.asarray(points, float)
    variances = np.asarray(variances, float)
    lw = np.asarray(log_weights, float)
    w = np.exp(lw - lw.max())
    w /= w.sum()
    shape = (-1,) + (1,) * (points.ndim - 1)
    w = w.reshape(shape)
    point = (w * points).sum(axis=0)
    between = (w * (points - point) ** 2).sum(axis=0)
    within = (w * variances).sum(axis=0)
    var = within - between
    conservative = var < 0
    var = np.where(conservative, within, var)
    return point, var, conservative


def _preliminary(data, estimator, original):
    if original is None and isinstance(data, ObservedSample):
        original = original_ordering(data)
    if original is None:
        return None, np.nan, np.nan
    p, v = evaluate(estimator, data, original.initial)
    return original, p, v


def rb_exact(data: SampleData, estimator, cap: int = 10**6, original: Reordering | None = None,
             log_weight_offset: float = 0.0) -> RBResult:
    """Rao-Blackwellize `estimator` by enumerating every consistent reordering.

    Weights are the conditional wave-one probabilities ``P(S1 | S0)``.
    `log_weight_offset` is added to every log weight (for instance
    ``log P(S0)``, which is common to all reorderings); it has no effect on
    the result.
    """
    original, p0, v0 = _preliminary(data, estimator, original)
    reorderings = space_for(data).enumerate(cap)
    if not reorderings:
        raise ValueError("no consistent reordering")
    pts, vrs = zip(*(evaluate(estimator, data, r.initial) for r, _ in reorderings))
    lw = np.array([lp for _, lp in reorderings]) + log_weight_offset
    point, var, cons = rb_from_weights(np.array(pts), np.array(vrs), lw)
    return RBResult(
        preliminary=_scalar(p0),
        preliminary_variance=_scalar(v0),
        rb_point=_scalar(point),
        rb_variance=_scalar(var),
        conservative=_scalar(cons),
        method="exact",
        n_reorderings=len(reorderings),
    )


def rb_mcmc(
    data: SampleData,
    estimator,
    n_states: int = 2000,
    gammas=None,
    rng: np.random.Generator | None = None,
    seeds: list | None = None,
    original: Reordering | None = None,
    keep_chains: bool = False,
    swap_prob: float = 0.0,
) -> RBResult:
    """Approximate the Rao-Blackwellized estimator with Metropolis-Hastings.

    One chain of `n_states` states is run from each reordering in `seeds`
    (default: the original ordering).  All states of all chains are averaged
    with no burn-in; rejected proposals repeat the current state.  With two
    or more chains the Gelman-Rubin statistic of the first estimator
    component is reported.  `swap_prob` is passed to
    :func:`~linktrace.reorder.run_chain`.
    """
    if n_states < 1:
        raise ValueError("chain length must be positive")
    rng = np.random.default_rng() if rng is None else rng
    gammas = default_gammas(data.K) if gammas is None else tuple(gammas)
    original, p0, v0 = _preliminary(data, estimator, original)
    if seeds is None:
        if original is None:
            raise ValueError("reduced data needs explicit chain seeds")
        seeds = [original]

    def est(d, x):
        return evaluate(estimator, d, x)

    chains = [run_chain(data, s, n_states, gammas, rng, est, swap_prob) for s in seeds]
    pts = np.array([t[0] for c in chains for t in c.trace])
    vrs = np.array([t[1] for c in chains for t in c.trace])
    point = pts.mean(axis=0)
    between = pts.var(axis=0)
    within = vrs.mean(axis=0)
    var = within - between
    cons = var < 0
    var = np.where(cons, within, var)
    steps = sum(c.step for c in chains)
    acc = sum(c.n_accepted for c in chains) / steps if steps else 0.0
    gr = None
    if len(chains) >= 2:
        traces = [np.array([np.ravel(t[0])[0] for t in c.trace]) for c in chains]
        try:
            gr = gelman_rubin(traces)
        except DegenerateChainError:
            gr = math.nan
    return RBResult(
        preliminary=_scalar(p0),
        preliminary_variance=_scalar(v0),
        rb_point=_scalar(point),
        rb_variance=_scalar(var),
        conservative=_scalar(cons),
        method="mcmc",
        chain_length=n_states,
        acceptance_rate=acc,
        gelman_rubin=gr,
        chains=chains if keep_chains else [],
    )
