"""Moment estimators of stratum sizes, proportions and means, with jackknife
variances and confidence intervals.

All functions take sample data plus a *role assignment*, a boolean mask over
the sample members (or an iterable of unit ids) marking the initial sample.
Evaluating the same estimator under different role assignments is what
Rao-Blackwellization averages over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import SampleData

__all__ = [
    "EstimationError",
    "CountStatistics",
    "EstimateWithVariance",
    "count_statistics",
    "stratum_size_estimates",
    "stratum_size_estimate",
    "population_size_estimate",
    "leave_one_out_sizes",
    "jackknife_variance_size",
    "delete_one_variance",
    "size_estimate",
    "mean_estimate",
    "proportion_estimate",
    "ci_log_transform",
    "ci_normal",
]

Z95 = 1.959963984540054


class EstimationError(ArithmeticError):
    """An estimator is undefined for the given data."""


@dataclass(frozen=True)
class CountStatistics:
    """Initial-sample link counts.

    ``r[l, k]`` counts links from initial units in stratum ``l`` to initial
    units in stratum ``k`` (no self-loops); ``s[l, k]`` counts links from
    initial units in ``l`` to units of ``k`` outside the initial sample.
    """

    n0: np.ndarray
    r: np.ndarray
    s: np.ndarray
    certainty: np.ndarray
    include: np.ndarray

    @property
    def K(self) -> int:
        return len(self.n0)


@dataclass(frozen=True)
class EstimateWithVariance:
    point: float
    variance: float
    lo: float
    hi: float
    method: str
    conservative: bool = False

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def to_record(self, quantity: str, setup: str = "") -> dict:
        return {
            "quantity": quantity,
            "setup": setup,
            "point": self.point,
            "variance": self.variance,
            "ci_lo": self.lo,
            "ci_hi": self.hi,
            "method": self.method,
            "conservative_flag": self.conservative,
        }


def _raw_counts(data: SampleData, x: np.ndarray):
    X = data.onehot * x[:, None]
    r = X.T @ data.adj_f @ X
    s = X.T @ data.out_counts - r
    return X.sum(axis=0), r, s


def count_statistics(data: SampleData, initial) -> CountStatistics:
    """Counts ``n0``, ``r`` and ``s`` for the initial sample `initial`."""
    x = data.as_mask(initial)
    n0, r, s = _raw_counts(data, x.astype(float))
    return CountStatistics(
        n0=np.rint(n0).astype(np.int64),
        r=np.rint(r).astype(np.int64),
        s=np.rint(s).astype(np.int64),
        certainty=data.certainty.copy(),
        include=data.include.copy(),
    )


def _sizes(n0, r, s, certainty, stabilized: bool) -> np.ndarray:
    """Stratum size estimates; leading batch dimensions are allowed."""
    R = r.sum(axis=-2)
    S = s.sum(axis=-2)
    K = n0.shape[-1]
    if stabilized:
        est = (n0 + 1.0) * ((R + K) + (S + K)) / (R + K) - 1.0
    else:
        bad = (R == 0) & ~certainty
        if np.any(bad):
            raise EstimationError("no initial-sample links into a stratum; use the stabilized estimator")
        with np.errstate(divide="ignore", invalid="ignore"):
            est = n0 * (R + S) / R
    return np.where(certainty, n0, est)


def stratum_size_estimates(stats: CountStatistics, stabilized: bool = False) -> np.ndarray:
    """All ``K`` stratum size estimates.

    Unstabilized, stratum ``k`` is estimated by ``n0k * (sum_l r_lk + sum_l
    s_lk) / sum_l r_lk``.  Stabilized, one is added to ``n0k`` and to every
    ``r_lk`` and ``s_lk`` term and one is subtracted from the result, in the
    manner of Chapman's correction.  Certainty strata return ``n0k``.
    """
    return _sizes(
        stats.n0.astype(float), stats.r.astype(float), stats.s.astype(float), stats.certainty, stabilized
    )


def stratum_size_estimate(stats: CountStatistics, k: int, stabilized: bool = False) -> float:
    """Size estimate of stratum `k` (1-based id)."""
    if not 1 <= k <= stats.K:
        raise ValueError(f"stratum {k} outside 1..{stats.K}")
    return float(stratum_size_estimates(stats, stabilized)[k - 1])


def population_size_estimate(stats: CountStatistics, stabilized: bool = False) -> float:
    """Sum of the stratum estimates over strata included in the total."""
    return float(stratum_size_estimates(stats, stabilized)[stats.include].sum())


def leave_one_out_sizes(data: SampleData, initial, stabilized: bool = False):
    """Stratum size estimates with each deletable initial unit removed in turn.

    Certainty members are never removed.  Returns ``(members, sizes)`` where
    `members` indexes the removed sample members and ``sizes[j]`` is the
    length-``K`` vector of estimates without ``members[j]``.
    """
    x = data.as_mask(initial)
    return _loo(data, x.astype(float), x & ~data.certainty_members, stabilized)


def _loo(data: SampleData, xf: np.ndarray, deletable: np.ndarray, stabilized: bool):
    n0, r, s = _raw_counts(data, xf)
    idx = np.flatnonzero(deletable)
    K = data.K
    if len(idx) == 0:
        return idx, np.empty((0, K))
    X = data.onehot * xf[:, None]
    out = data.adj_f[idx] @ X
    inn = data.adj_f[:, idx].T @ X
    E = data.onehot[idx]
    row = E[:, :, None]
    col = E[:, None, :]
    r_i = r - row * out[:, None, :] - inn[:, :, None] * col
    s_i = s - row * (data.out_counts[idx] - out)[:, None, :] + inn[:, :, None] * col
    n0_i = n0 - E
    return idx, _sizes(n0_i, r_i, s_i, data.certainty, stabilized)


def _check_jackknife(data: SampleData, x: np.ndarray):
    n0k = np.bincount(data.group[x & ~data.certainty_members], minlength=data.K)
    small = (~data.certainty) & (n0k < 3)
    if np.any(small):
        k = int(np.flatnonzero(small)[0]) + 1
        raise EstimationError(f"stratum {k} has {n0k[k - 1]} deletable initial units; the jackknife needs 3")
    return n0k


def delete_one_variance(replicates) -> float:
    """``(m - 2) / (2 m) * sum_i (x_(i) - x_(.))**2`` for `m` leave-one-out replicates."""
    loo = np.asarray(replicates, float)
    m = len(loo)
    if m < 3:
        raise EstimationError("the jackknife needs at least 3 replicates")
    return float((m - 2) / (2 * m) * np.sum((loo - loo.mean()) ** 2))


def _jk_size(data, idx, loo_k, total):
    """Jackknife variance from precomputed leave-one-out stratum estimates."""
    if len(idx) == 0:
        return 0.0
    loo = loo_k[:, data.include].sum(axis=1)
    if data.K == 1:
        return delete_one_variance(loo)
    n0k = np.bincount(data.group[idx], minlength=data.K)
    g = data.group[idx]
    factor = (n0k[g] - 2) / (2.0 * n0k[g])
    return float(np.sum(factor * (loo - total) ** 2))


def jackknife_variance_size(data: SampleData, initial, stabilized: bool = False) -> float:
    """Delete-one jackknife variance of the population size estimate.

    With one stratum the squared deviations are centred at the mean of the
    leave-one-out estimates and scaled by ``(n0 - 2) / (2 n0)``.  With several
    strata each deleted unit contributes ``(n0k - 2) / (2 n0k)`` times its
    squared deviation from the full-sample estimate, ``k`` being the unit's
    stratum.
    """
    x = data.as_mask(initial)
    _check_jackknife(data, x)
    idx, loo_k = leave_one_out_sizes(data, x, stabilized)
    total = population_size_estimate(count_statistics(data, x), stabilized)
    return _jk_size(data, idx, loo_k, total)


def ci_log_transform(point: float, variance: float, n: int, z: float = Z95) -> tuple[float, float]:
    """Log-transformed interval for a population size (Chao, 1987).

    ``log(N - n)`` is treated as normal, so the interval is ``(n + f / C,
    n + f * C)`` with ``f = point - n`` and ``C = exp(z * sqrt(log(1 +
    variance / f**2)))``.  If ``point <= n`` the interval degenerates to the
    point.
    """
    if variance < 0:
        raise ValueError("variance must be non-negative")
    f = point - n
    if f <= 0:
        return (float(point), float(point))
    C = math.exp(z * math.sqrt(math.log1p(variance / f**2)))
    return (n + f / C, n + f * C)


def ci_normal(point: float, variance: float, z: float = Z95) -> tuple[float, float]:
    half = z * math.sqrt(max(variance, 0.0))
    return (point - half, point + half)


def _final_n(data: SampleData) -> int:
    return int(np.count_nonzero(data.include[data.group]))


def size_estimate(data: SampleData, initial, stabilized: bool = False) -> EstimateWithVariance:
    """Population size with jackknife variance and log-transformed interval."""
    x = data.as_mask(initial)
    point = population_size_estimate(count_statistics(data, x), stabilized)
    var = jackknife_variance_size(data, x, stabilized)
    lo, hi = ci_log_transform(point, var, _final_n(data))
    return EstimateWithVariance(point, var, lo, hi, "log-transform")


def _mean_parts(data: SampleData, x: np.ndarray, z: np.ndarray, Nk: np.ndarray, mode: str):
    """Point and variance of the one-stratum or stratified mean."""
    inc = data.include
    if mode == "one-stratum":
        sel = x & inc[data.group]
        n0 = int(sel.sum())
        if n0 < 2:
            raise EstimationError("mean needs at least 2 initial units")
        N = Nk[inc].sum()
        zs = z[sel]
        point = zs.mean()
        var = (N - n0) / N * zs.var(ddof=1) / n0
        return float(point), float(var)
    if mode != "stratified":
        raise ValueError(f"unknown mean mode {mode!r}")
    N = Nk[inc].sum()
    if N <= 0:
        raise EstimationError("non-positive population size estimate")
    point = 0.0
    var = 0.0
    for k in np.flatnonzero(inc):
        sel = x & (data.group == k)
        nk = int(sel.sum())
        if nk == 0:
            if Nk[k] > 0:
                raise EstimationError(f"stratum {k + 1} has no initial units")
            continue
        zk = z[sel]
        point += Nk[k] * zk.mean()
        if data.certainty[k] or Nk[k] <= nk:
            continue
        if nk < 2:
            raise EstimationError(f"stratum {k + 1} has fewer than 2 initial units")
        var += (Nk[k] / N) ** 2 * (Nk[k] - nk) / Nk[k] * zk.var(ddof=1) / nk
    return float(point / N), float(var)


def mean_estimate(
    data: SampleData, initial, response: str, mode: str = "stratified", stabilized: bool = False
) -> EstimateWithVariance:
    """Mean of `response` with a normal-theory interval.

    ``mode="one-stratum"`` uses the plain initial-sample mean with variance
    ``(N - n0) / N * s**2 / n0``; ``"stratified"`` weights stratum means by
    estimated stratum sizes, with the matching stratified variance.  Estimated
    sizes are substituted for the unknown ``N`` and ``N_k``.
    """
    x = data.as_mask(initial)
    Nk = stratum_size_estimates(count_statistics(data, x), stabilized)
    point, var = _mean_parts(data, x, np.asarray(data.responses[response], float), Nk, mode)
    lo, hi = ci_normal(point, var)
    return EstimateWithVariance(point, var, lo, hi, "clt")


def _weights_for(data: SampleData, stratum) -> np.ndarray:
    ks = [stratum] if np.ndim(stratum) == 0 else list(stratum)
    w = np.zeros(data.K)
    for k in ks:
        if not 1 <= int(k) <= data.K:
            raise ValueError(f"stratum {k} outside 1..{data.K}")
        w[int(k) - 1] = 1.0
    return w


def _jk_proportion(data, idx, loo_k, w, nJ_pop, scale: str = "printed"):
    if scale not in ("printed", "fpc"):
        raise ValueError(f"unknown jackknife scale {scale!r}")
    m = len(idx)
    if m == 0:
        return 0.0
    if m < 2:
        raise EstimationError("proportion jackknife needs at least 2 deletable initial units")
    inc = data.include
    tot = loo_k[:, inc].sum(axis=1)
    if np.any(tot <= 0):
        raise EstimationError("non-positive leave-one-out size estimate")
    p_i = (loo_k[:, inc] @ w[inc]) / tot
    denom = m if scale == "printed" else nJ_pop
    return float((nJ_pop - m) / denom * (m - 1) / m * np.sum((p_i - p_i.mean()) ** 2))


def proportion_estimate(
    data: SampleData, initial, stratum, stabilized: bool = False, weights=None, scale: str = "printed"
) -> EstimateWithVariance:
    """Estimated share of the population in `stratum` (an id or a collection of ids).

    `weights`, if given, replaces the 0/1 stratum indicator with the known
    share of each stratum belonging to the group of interest (useful for a
    certainty stratum that mixes groups).  The variance is the delete-one
    jackknife ``((N - n0) / n0) ((n0 - 1) / n0) sum_i (p_(i) - p_(.))**2``
    over the removable initial units, with certainty strata left out of both
    ``N`` and ``n0``.  ``scale="fpc"`` divides by ``N`` instead of ``n0`` in
    the first factor, the usual finite-population correction; it gives
    intervals roughly ``sqrt(N / n0)`` times narrower.
    """
    if scale not in ("printed", "fpc"):
        raise ValueError(f"unknown jackknife scale {scale!r}")
    x = data.as_mask(initial)
    w = _weights_for(data, stratum) if weights is None else np.asarray(weights, float)
    Nk = stratum_size_estimates(count_statistics(data, x), stabilized)
    inc = data.include
    N = Nk[inc].sum()
    if N <= 0:
        raise EstimationError("non-positive population size estimate")
    point = float(Nk[inc] @ w[inc] / N)
    idx, loo_k = leave_one_out_sizes(data, x, stabilized)
    nJ_pop = N - Nk[inc & data.certainty].sum()
    var = _jk_proportion(data, idx, loo_k, w, nJ_pop, scale)
    lo, hi = ci_normal(point, var)
    return EstimateWithVariance(point, var, lo, hi, "clt")
