"""Sample reorderings: consistency with the reduced data, conditional
selection probabilities, the interchange Metropolis-Hastings chain and exact
enumeration.

A reordering assigns each sampled member to the initial sample or to wave
one.  It is *consistent* with the reduced data when it has the observed
per-stratum initial counts, keeps every certainty member initial, and the
design could have produced it (every wave-one member has an initial nominator
whose link could be traced, and no initial member has an untraced link that
the design traces with certainty).

Probabilities are handled on the log scale throughout.  Only the
wave-one factor ``P(S1 | S0)`` is computed: ``P(S0)`` is the same for every
consistent reordering and cancels in all ratios.
"""

from __future__ import annotations

import itertools
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .design import ObservedSample, SampleData

__all__ = [
    "Reordering",
    "ChainState",
    "Proposal",
    "ReorderingSpace",
    "space_for",
    "original_ordering",
    "is_consistent",
    "log_conditional_prob",
    "propose",
    "mh_step",
    "run_chain",
    "enumerate_reorderings",
    "default_gammas",
]


@dataclass(frozen=True, eq=False)
class Reordering:
    """Roles of the sampled members; ``initial[a]`` is True for initial units."""

    initial: np.ndarray
    units: np.ndarray = field(repr=False)
    n0: np.ndarray
    log_p: float

    @property
    def key(self) -> bytes:
        return np.packbits(self.initial).tobytes()

    @property
    def assignment(self) -> dict:
        return {int(u): ("initial" if f else "wave1") for u, f in zip(self.units, self.initial)}

    @property
    def initial_units(self) -> np.ndarray:
        return self.units[self.initial]


@dataclass
class ChainState:
    """A running chain.  ``trace`` holds one estimator value per state and
    ``accepted[m]`` whether state ``m`` was reached by an accepted move."""

    current: Reordering
    step: int = 0
    n_accepted: int = 0
    trace: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    log_p: list = field(default_factory=list)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.step if self.step else 0.0


@dataclass(frozen=True)
class Proposal:
    candidate: np.ndarray | None
    log_forward: float = -math.inf
    log_reverse: float = -math.inf
    reason: str = ""

    @property
    def rejected(self) -> bool:
        return self.candidate is None


def default_gammas(K: int) -> tuple:
    """Interchange-size probabilities: 0.9 for single swaps, the rest spread evenly."""
    if K <= 1:
        return (1.0,)
    rest = 0.1 / (K - 1)
    return (0.9,) + (rest,) * (K - 1)


def _permanent(M: np.ndarray) -> int:
    k = M.shape[0]
    if k == 1:
        return int(M[0, 0])
    if k == 2:
        return int(M[0, 0] * M[1, 1] + M[0, 1] * M[1, 0])
    rows = range(k)
    return sum(int(all(M[i, p[i]] for i in rows)) for p in itertools.permutations(rows))


class ReorderingSpace:
    """Precomputed structure of one reduced data set.

    Parameters
    ----------
    data : SampleData
        Observed or reduced data.  For observed data the wave labels only
        supply the per-stratum initial counts and the original ordering.
    """

    def __init__(self, data: SampleData):
        self.data = data
        n, K = data.n, data.K
        g = data.group
        beta = data.design.beta
        A = data.adj
        pair_beta = beta[g[:, None], g[None, :]]
        self.n = n
        self.K = K
        self.n0 = np.asarray(data.n0, dtype=np.int64)
        self.group = g
        self.A = A
        # nominations able to justify a wave-one membership
        self.Apos = A & (pair_beta > 0)
        self.Apos_f = self.Apos.astype(float)
        certain = A & (pair_beta >= 1)
        self.H_f = certain.astype(float)
        with np.errstate(divide="ignore"):
            log_miss = np.log1p(-pair_beta)
        self.L = np.where(self.Apos & ~certain, log_miss, 0.0)
        # untraced out-links of each member to unsampled units, by stratum
        within = A.astype(np.int64) @ np.eye(K, dtype=np.int64)[g] if n else np.zeros((0, K), np.int64)
        self.untraced = data.out_counts - within
        with np.errstate(divide="ignore", invalid="ignore"):
            lm = np.log1p(-beta)[g]
            self.c = np.where(self.untraced > 0, self.untraced * lm, 0.0).sum(axis=1) if n else np.zeros(0)
        self.certainty_members = data.certainty_members
        self.n1 = n - int(self.n0.sum())

    # -- probabilities -------------------------------------------------------

    def log_prob(self, x: np.ndarray) -> float:
        """Log ``P(S1 | S0)`` for the roles `x`; ``-inf`` if impossible."""
        xf = x.astype(float)
        w1 = ~x
        m = xf @ self.Apos_f
        if np.any(m[w1] == 0):
            return -math.inf
        c = self.c[x]
        if np.any(c == -math.inf):
            return -math.inf
        h = xf @ self.H_f
        e = xf @ self.L
        sel = w1 & (h == 0)
        return float(np.sum(np.log(-np.expm1(e[sel]))) + c.sum())

    def counts_match(self, x: np.ndarray) -> bool:
        n0 = np.bincount(self.group[x], minlength=self.K)
        return bool(np.array_equal(n0, self.n0)) and bool(np.all(x[self.certainty_members]))

    def is_consistent(self, x: np.ndarray) -> bool:
        return self.counts_match(x) and self.log_prob(x) > -math.inf

    def make(self, x: np.ndarray, log_p: float | None = None) -> Reordering:
        x = np.array(x, dtype=bool)
        if x.shape != (self.n,):
            raise ValueError("reordering does not cover the sampled units")
        x.setflags(write=False)
        if log_p is None:
            log_p = self.log_prob(x)
        return Reordering(
            initial=x,
            units=self.data.units,
            n0=np.bincount(self.group[x], minlength=self.K),
            log_p=log_p,
        )

    # -- proposals -------------------------------------------------------------

    def propose(self, x: np.ndarray, gammas, rng: np.random.Generator) -> Proposal:
        """Interchange ``k`` wave-one units with initial units that nominate them.

        ``k`` is drawn from `gammas`; the wave-one units are a simple random
        sample of size ``k`` and each picks one of its (traceable) initial
        nominators uniformly.  Collisions and moves without a reverse are
        rejections.  The forward and reverse log proposal probabilities sum
        over every nominator matching that yields the same candidate.
        """
        cum = np.cumsum(gammas)
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right")) + 1
        k = min(k, len(gammas))
        wave1 = np.flatnonzero(~x)
        n1 = len(wave1)
        if k > n1:
            return Proposal(None, reason="k exceeds wave-one size")
        W = wave1[rng.integers(n1)][None] if k == 1 else rng.choice(wave1, size=k, replace=False)
        B = np.empty(k, dtype=np.int64)
        log_fwd = math.log(gammas[k - 1] / cum[-1]) - math.log(math.comb(n1, k))
        for j, w in enumerate(W):
            noms = np.flatnonzero(self.Apos[:, w] & x)
            if len(noms) == 0:
                return Proposal(None, reason="wave-one unit without initial nominator")
            B[j] = noms[rng.integers(len(noms))]
            log_fwd -= math.log(len(noms))
        if k > 1 and len(np.unique(B)) < k:
            return Proposal(None, reason="nominator collision")
        if k > 1:
            log_fwd += math.log(_permanent(self.Apos[np.ix_(B, W)].T))
        cand = x.copy()
        cand[B] = False
        cand[W] = True
        log_rev = math.log(gammas[k - 1] / cum[-1]) - math.log(math.comb(n1, k))
        for b in B:
            cnt = int(np.count_nonzero(self.Apos[:, b] & cand))
            if cnt == 0:
                return Proposal(None, reason="no reverse move")
            log_rev -= math.log(cnt)
        # the displaced units must be nominated by their replacements
        perm = _permanent(self.Apos[np.ix_(W, B)].T)
        if perm == 0:
            return Proposal(None, reason="no reverse move")
        log_rev += math.log(perm)
        return Proposal(cand, log_fwd, log_rev)

    def propose_swap(self, x: np.ndarray, rng: np.random.Generator) -> Proposal:
        """Swap a random wave-one unit with a random initial unit of its stratum.

        The move ignores nominations, so it can reach consistent reorderings
        that no nominator interchange leads to.  Its proposal probability is
        symmetric: ``1 / (n1 * n0k)`` both ways.
        """
        wave1 = np.flatnonzero(~x)
        if len(wave1) == 0:
            return Proposal(None, reason="empty wave one")
        w = wave1[rng.integers(len(wave1))]
        pool = np.flatnonzero(x & (self.group == self.group[w]))
        if len(pool) == 0:
            return Proposal(None, reason="no initial unit in the stratum")
        b = pool[rng.integers(len(pool))]
        cand = x.copy()
        cand[b] = False
        cand[w] = True
        lq = -math.log(len(wave1) * len(pool))
        return Proposal(cand, lq, lq)

    def step(self, current: Reordering, gammas, rng, swap_prob: float = 0.0) -> tuple[Reordering, bool]:
        if swap_prob > 0 and rng.random() < swap_prob:
            prop = self.propose_swap(current.initial, rng)
        else:
            prop = self.propose(current.initial, gammas, rng)
        if prop.rejected:
            return current, False
        cand = prop.candidate
        if not self.counts_match(cand):
            return current, False
        lp = self.log_prob(cand)
        if lp == -math.inf:
            return current, False
        log_a = lp - current.log_p + prop.log_reverse - prop.log_forward
        if log_a >= 0 or math.log(rng.random()) < log_a:
            return self.make(cand, lp), True
        return current, False

    # -- enumeration -----------------------------------------------------------

    def count_role_assignments(self) -> int:
        sizes = np.bincount(self.group, minlength=self.K)
        return math.prod(math.comb(int(sizes[k]), int(self.n0[k])) for k in range(self.K))

    def enumerate(self, cap: int = 10**6) -> list:
        total = self.count_role_assignments()
        if total > cap:
            raise ValueError(f"{total} role assignments exceed the enumeration cap {cap}")
        members = [np.flatnonzero(self.group == k) for k in range(self.K)]
        out = []
        for picks in itertools.product(
            *(itertools.combinations(members[k], int(self.n0[k])) for k in range(self.K))
        ):
            x = np.zeros(self.n, dtype=bool)
            for p in picks:
                x[list(p)] = True
            if not self.counts_match(x):
                continue
            lp = self.log_prob(x)
            if lp > -math.inf:
                r = self.make(x, lp)
                out.append((r, lp))
        return out


_SPACES: "weakref.WeakKeyDictionary[SampleData, ReorderingSpace]" = weakref.WeakKeyDictionary()


def space_for(data: SampleData) -> ReorderingSpace:
    """The (cached) :class:`ReorderingSpace` of `data`."""
    sp = _SPACES.get(data)
    if sp is None:
        sp = _SPACES[data] = ReorderingSpace(data)
    return sp


def _check_cover(v: Reordering, dR: SampleData):
    if len(v.initial) != dR.n or not np.array_equal(v.units, dR.units):
        raise ValueError("reordering does not match the sampled units")


def original_ordering(d0: ObservedSample) -> Reordering:
    """The order in which the sample was actually selected."""
    return space_for(d0).make(d0.initial)


def is_consistent(v: Reordering, dR: SampleData) -> bool:
    _check_cover(v, dR)
    return space_for(dR).is_consistent(v.initial)


def log_conditional_prob(v: Reordering, dR: SampleData) -> float:
    """Log probability of the reordering's wave one given its initial sample."""
    _check_cover(v, dR)
    sp = space_for(dR)
    if not sp.counts_match(v.initial):
        raise ValueError("reordering is inconsistent with the reduced data")
    lp = sp.log_prob(v.initial)
    if lp == -math.inf:
        raise ValueError("reordering has probability zero")
    return lp


def propose(v: Reordering, gammas, rng, dR: SampleData) -> Proposal:
    _check_cover(v, dR)
    sp = space_for(dR)
    prop = sp.propose(v.initial, gammas, rng)
    if not prop.rejected and not sp.is_consistent(prop.candidate):
        return Proposal(None, reason="inconsistent candidate")
    return prop


def mh_step(state: ChainState, dR: SampleData, gammas, rng, estimator=None, swap_prob: float = 0.0) -> ChainState:
    """Advance `state` by one Metropolis-Hastings step (in place) and return it.

    With probability `swap_prob` the step proposes a same-stratum role swap
    (see :meth:`ReorderingSpace.propose_swap`) instead of a nominator
    interchange.  Interchanges alone can leave some consistent reorderings
    unreachable; a positive `swap_prob` mixes over them as well.
    """
    sp = space_for(dR)
    nxt, ok = sp.step(state.current, gammas, rng, swap_prob)
    state.step += 1
    state.accepted.append(ok)
    state.log_p.append(nxt.log_p)
    if ok:
        state.n_accepted += 1
        state.current = nxt
        if estimator is not None:
            state.trace.append(estimator(dR, nxt.initial))
    elif estimator is not None:
        state.trace.append(state.trace[-1])
    return state


def run_chain(
    dR: SampleData,
    start: Reordering,
    n_states: int,
    gammas,
    rng,
    estimator=None,
    swap_prob: float = 0.0,
) -> ChainState:
    """Run a chain visiting `n_states` states, `start` being the first."""
    if n_states < 1:
        raise ValueError("chain length must be positive")
    if not 0.0 <= swap_prob < 1.0:
        raise ValueError("swap_prob must lie in [0, 1)")
    sp = space_for(dR)
    if not sp.is_consistent(start.initial):
        raise ValueError("chain seed is inconsistent with the reduced data")
    state = ChainState(current=start, accepted=[False], log_p=[start.log_p])
    if estimator is not None:
        state.trace.append(estimator(dR, start.initial))
    for _ in range(n_states - 1):
        mh_step(state, dR, gammas, rng, estimator, swap_prob)
    return state


def enumerate_reorderings(dR: SampleData, cap: int = 10**6) -> list:
    """Every consistent reordering with its log conditional probability."""
    return space_for(dR).enumerate(cap)
