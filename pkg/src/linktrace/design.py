"""Two-phase link-tracing design: a stratified Bernoulli initial sample
followed by one wave of independently traced nominations.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .population import Population, StratumMeta

__all__ = [
    "DesignParams",
    "SampleData",
    "ObservedSample",
    "ReducedData",
    "draw_sample",
    "observe",
    "reduce",
    "sample_to_dict",
    "sample_from_dict",
    "write_sample",
    "read_sample",
    "with_roles",
]

SCHEMA_OBSERVED = "linktrace.observed_sample/1"
SCHEMA_REDUCED = "linktrace.reduced_data/1"


@dataclass(frozen=True, eq=False)
class DesignParams:
    """Selection probabilities of the design.

    Parameters
    ----------
    alpha : (K,) array
        Initial-sample inclusion probability for each stratum.
    beta : (K, K) array
        ``beta[l, k]`` is the probability that a link from an initial unit in
        stratum ``l`` to a non-initial unit in stratum ``k`` is traced.
    certainty_units : frozenset of int
        Unit ids forced into the initial sample.
    """

    alpha: np.ndarray
    beta: np.ndarray
    certainty_units: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        beta = np.array(self.beta, dtype=float)
        K = len(alpha)
        if beta.ndim == 0:
            beta = np.full((K, K), float(beta))
        if beta.shape != (K, K):
            raise ValueError(f"beta must be {K}x{K}, got shape {beta.shape}")
        for name, a in (("alpha", alpha), ("beta", beta)):
            if np.any(~np.isfinite(a)) or np.any((a < 0) | (a > 1)):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "certainty_units", frozenset(int(u) for u in self.certainty_units))

    @classmethod
    def uniform(cls, K: int, alpha: float, beta: float, certainty_units=()) -> "DesignParams":
        return cls(np.full(K, alpha), np.full((K, K), beta), frozenset(certainty_units))

    @property
    def K(self) -> int:
        return len(self.alpha)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "certainty_units": sorted(self.certainty_units),
        }

    @classmethod
    def from_dict(cls, d: Mapping, K: int | None = None) -> "DesignParams":
        alpha = d["alpha"]
        if np.ndim(alpha) == 0:
            if K is None:
                raise ValueError("scalar alpha needs the number of strata")
            alpha = [alpha] * K
        return cls(alpha, d.get("beta", 0.0), frozenset(d.get("certainty_units", ())))


@dataclass(frozen=True, eq=False)
class SampleData:
    """Fields shared by observed and reduced data.

    Members are stored as aligned arrays; ``adj[a, b]`` is the within-sample
    link ``y[a, b]`` between members ``a`` and ``b`` (never the diagonal) and
    ``out_counts[a, k]`` is ``y_a^{k+}``, the member's nominations into
    stratum ``k`` counted against the full graph.
    """

    units: np.ndarray
    strata: np.ndarray
    out_counts: np.ndarray
    adj: np.ndarray
    responses: Mapping[str, np.ndarray]
    design: DesignParams
    stratum_meta: tuple

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def K(self) -> int:
        return self.design.K

    @cached_property
    def index(self) -> dict:
        return {int(u): i for i, u in enumerate(self.units)}

    @cached_property
    def group(self) -> np.ndarray:
        """0-based stratum index of each member."""
        return self.strata - 1

    @cached_property
    def onehot(self) -> np.ndarray:
        g = np.zeros((self.n, self.K))
        g[np.arange(self.n), self.group] = 1.0
        return g

    @cached_property
    def adj_f(self) -> np.ndarray:
        return self.adj.astype(float)

    @cached_property
    def certainty(self) -> np.ndarray:
        """Per-stratum flag: stratum is sampled with probability one."""
        flags = np.array([m.certainty for m in self.stratum_meta], dtype=bool)
        return flags | (self.design.alpha == 1.0)

    @cached_property
    def include(self) -> np.ndarray:
        return np.array([m.include_in_total for m in self.stratum_meta], dtype=bool)

    @cached_property
    def certainty_members(self) -> np.ndarray:
        forced = np.isin(self.units, list(self.design.certainty_units))
        return forced | self.certainty[self.group]

    @cached_property
    def sampled_per_stratum(self) -> np.ndarray:
        return np.bincount(self.group, minlength=self.K)

    def mask(self, ids: Iterable[int]) -> np.ndarray:
        """Boolean member mask from unit ids."""
        m = np.zeros(self.n, dtype=bool)
        try:
            m[[self.index[int(u)] for u in ids]] = True
        except KeyError as exc:
            raise ValueError(f"unit {exc.args[0]} is not in the sample") from None
        return m

    def as_mask(self, initial) -> np.ndarray:
        """Accept a boolean member mask or an iterable of unit ids."""
        a = np.asarray(initial) if not isinstance(initial, (set, frozenset)) else None
        if a is not None and a.dtype == bool:
            if a.shape != (self.n,):
                raise ValueError("role mask does not match sample size")
            return a
        return self.mask(initial)


@dataclass(frozen=True, eq=False)
class ObservedSample(SampleData):
    """Observed data ``d0``: the sample with wave labels (0 initial, 1 wave 1)."""

    waves: np.ndarray = None

    @property
    def initial(self) -> np.ndarray:
        return self.waves == 0

    @property
    def n0(self) -> np.ndarray:
        return np.bincount(self.group[self.initial], minlength=self.K)


@dataclass(frozen=True, eq=False)
class ReducedData(SampleData):
    """Reduced data ``dR``: wave labels dropped, per-stratum initial counts kept."""

    n0: np.ndarray = None


def _ro(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def observe(
    pop: Population,
    initial_ids: Sequence[int],
    wave1_ids: Sequence[int],
    params: DesignParams,
) -> ObservedSample:
    """Record what a design reveals about the units ``initial_ids | wave1_ids``."""
    if params.K != pop.K:
        raise ValueError(f"design has {params.K} strata, population has {pop.K}")
    init_idx = pop.indices_of(initial_ids)
    w1_idx = pop.indices_of(wave1_ids)
    idx = np.concatenate([init_idx, w1_idx])
    order = np.argsort(pop.units[idx], kind="stable")
    idx = idx[order]
    waves = np.concatenate([np.zeros(len(init_idx), int), np.ones(len(w1_idx), int)])[order]
    if len(np.unique(idx)) != len(idx):
        raise ValueError("a unit is listed in both phases")
    pos = np.full(pop.N, -1, dtype=np.int64)
    pos[idx] = np.arange(len(idx))
    ps, pd = pos[pop.edges[:, 0]], pos[pop.edges[:, 1]]
    keep = (ps >= 0) & (pd >= 0)
    adj = np.zeros((len(idx), len(idx)), dtype=bool)
    adj[ps[keep], pd[keep]] = True
    return ObservedSample(
        units=_ro(pop.units[idx]),
        strata=_ro(pop.strata[idx]),
        out_counts=_ro(pop.out_counts(idx)),
        adj=_ro(adj),
        responses={k: _ro(np.asarray(v)[idx]) for k, v in _all_responses(pop).items()},
        design=params,
        stratum_meta=pop.stratum_meta,
        waves=_ro(waves),
    )


def _all_responses(pop: Population) -> dict:
    out = dict(pop.responses)
    if "degree" not in out:
        out["degree"] = pop.degree().astype(float)
    return out


def draw_sample(pop: Population, params: DesignParams, rng: np.random.Generator) -> ObservedSample:
    """Select an initial sample and trace one wave of links.

    One uniform is consumed per unit and one per stored link on every call,
    so samples drawn with equal generator states under designs that differ
    only in their probabilities are coupled.
    """
    if params.K != pop.K:
        raise ValueError(f"design has {params.K} strata, population has {pop.K}")
    g = pop.strata - 1
    initial = rng.random(pop.N) < params.alpha[g]
    if params.certainty_units:
        initial[pop.indices_of(sorted(params.certainty_units))] = True
    u = rng.random(len(pop.edges))
    src, dst = pop.edges[:, 0], pop.edges[:, 1]
    traced = initial[src] & ~initial[dst] & (u < params.beta[g[src], g[dst]])
    wave1 = np.zeros(pop.N, dtype=bool)
    wave1[dst[traced]] = True
    return observe(pop, pop.units[initial], pop.units[wave1], params)


def reduce(d0: ObservedSample) -> ReducedData:
    """Drop wave labels, keeping per-stratum initial-sample counts."""
    return ReducedData(
        units=d0.units,
        strata=d0.strata,
        out_counts=d0.out_counts,
        adj=d0.adj,
        responses=d0.responses,
        design=d0.design,
        stratum_meta=d0.stratum_meta,
        n0=_ro(d0.n0),
    )


# -- JSON ----------------------------------------------------------------------


def sample_to_dict(data: SampleData) -> dict:
    """JSON-ready representation of observed or reduced data."""
    names = sorted(data.responses)
    members = []
    for a in range(data.n):
        m = {
            "unit": int(data.units[a]),
            "stratum": int(data.strata[a]),
            "out_counts": data.out_counts[a].tolist(),
            "responses": {k: float(data.responses[k][a]) for k in names},
        }
        if isinstance(data, ObservedSample):
            m["wave"] = int(data.waves[a])
        members.append(m)
    src, dst = np.nonzero(data.adj)
    doc = {
        "schema": SCHEMA_OBSERVED if isinstance(data, ObservedSample) else SCHEMA_REDUCED,
        "design": data.design.to_dict(),
        "stratum_meta": [m.to_dict() for m in data.stratum_meta],
        "members": members,
        "links": [[int(data.units[s]), int(data.units[d])] for s, d in zip(src, dst)],
    }
    if isinstance(data, ReducedData):
        doc["initial_counts"] = data.n0.tolist()
    return doc


def sample_from_dict(doc: Mapping) -> SampleData:
    schema = doc.get("schema")
    if schema not in (SCHEMA_OBSERVED, SCHEMA_REDUCED):
        raise ValueError(f"unrecognised sample schema {schema!r}")
    design = DesignParams.from_dict(doc["design"])
    K = design.K
    meta = tuple(StratumMeta(**m) for m in doc.get("stratum_meta", [{}] * K))
    members = doc["members"]
    units = np.array([m["unit"] for m in members], dtype=np.int64)
    strata = np.array([m["stratum"] for m in members], dtype=np.int64)
    if len(units) and (strata.min() < 1 or strata.max() > K):
        raise ValueError("member stratum outside 1..K")
    if len(np.unique(units)) != len(units):
        raise ValueError("duplicate member unit")
    out_counts = np.array([m["out_counts"] for m in members], dtype=np.int64).reshape(len(units), K)
    names = sorted({k for m in members for k in m.get("responses", {})})
    responses = {k: np.array([m["responses"].get(k, np.nan) for m in members], dtype=float) for k in names}
    index = {int(u): i for i, u in enumerate(units)}
    adj = np.zeros((len(units), len(units)), dtype=bool)
    for s, d in doc.get("links", []):
        if s not in index or d not in index:
            raise ValueError(f"link ({s}, {d}) mentions a non-member")
        if s == d:
            raise ValueError("self-loop in sample links")
        adj[index[s], index[d]] = True
    within = adj.astype(np.int64) @ np.eye(K, dtype=np.int64)[strata - 1] if len(units) else out_counts
    if np.any(out_counts < within):
        raise ValueError("out_counts smaller than observed within-sample nominations")
    common = dict(
        units=_ro(units),
        strata=_ro(strata),
        out_counts=_ro(out_counts),
        adj=_ro(adj),
        responses={k: _ro(v) for k, v in responses.items()},
        design=design,
        stratum_meta=meta,
    )
    if schema == SCHEMA_OBSERVED:
        return ObservedSample(**common, waves=_ro(np.array([m["wave"] for m in members], dtype=int)))
    return ReducedData(**common, n0=_ro(np.array(doc["initial_counts"], dtype=np.int64)))


def write_sample(data: SampleData, path) -> None:
    with open(os.fspath(path), "w") as fh:
        json.dump(sample_to_dict(data), fh, indent=1)
        fh.write("\n")


def read_sample(path) -> SampleData:
    with open(os.fspath(path)) as fh:
        return sample_from_dict(json.load(fh))


def with_roles(data: SampleData, initial) -> ObservedSample:
    """Observed data implied by assigning `initial` members to the initial sample."""
    mask = data.as_mask(initial)
    fields = {f: getattr(data, f) for f in SampleData.__dataclass_fields__}
    return ObservedSample(**fields, waves=_ro((~mask).astype(int)))

