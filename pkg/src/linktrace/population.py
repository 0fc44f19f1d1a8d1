"""Stratified directed nomination graphs.

A :class:`Population` is the ground truth a simulation samples from: units,
their strata, the directed nomination links between them and any numeric
responses attached to units.  Self-nominations (``y[i, i] = 1``) are a
convention of the estimating formulas and are never stored.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "PopulationError",
    "StratumMeta",
    "Population",
    "LinkCountMatrix",
    "SyntheticSpec",
    "load_population",
    "save_population",
    "link_counts",
    "generate_synthetic",
    "surrogate_spec",
    "top_degree_units",
]


class PopulationError(ValueError):
    """Raised for malformed population input."""


@dataclass(frozen=True)
class StratumMeta:
    certainty: bool = False
    include_in_total: bool = True

    def to_dict(self) -> dict:
        return {"certainty": self.certainty, "include_in_total": self.include_in_total}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Population:
    """Immutable stratified nomination graph.

    Parameters
    ----------
    units : array of int
        Unit identifiers, unique.
    strata : array of int
        Stratum id of each unit, contiguous ``1..K``.
    edges : (E, 2) int array
        Directed links as ``(src, dst)`` *indices* into `units`.  No
        self-loops, no duplicates.
    responses : mapping of str to float array
        Named numeric responses aligned with `units`.
    stratum_meta : tuple of StratumMeta
        Per-stratum flags; defaults to plain strata.
    info : dict
        Free-form metadata (e.g. the generator summary).

    Use :meth:`from_edges` rather than the constructor to get validation and
    canonical edge ordering.
    """

    units: np.ndarray
    strata: np.ndarray
    edges: np.ndarray
    responses: Mapping[str, np.ndarray] = field(default_factory=dict)
    stratum_meta: tuple = ()
    info: Mapping = field(default_factory=dict)

    @classmethod
    def from_edges(
        cls,
        units: Sequence[int],
        strata: Sequence[int],
        edges: Iterable[tuple[int, int]],
        responses: Mapping[str, Sequence[float]] | None = None,
        stratum_meta: Sequence[StratumMeta] | None = None,
        symmetrize: bool = False,
        info: Mapping | None = None,
    ) -> "Population":
        """Build a validated population from unit ids and ``(src, dst)`` id pairs."""
        units = np.asarray(units, dtype=np.int64).reshape(-1)
        strata = np.asarray(strata, dtype=np.int64).reshape(-1)
        if units.shape != strata.shape:
            raise PopulationError("units and strata differ in length")
        uniq, counts = np.unique(units, return_counts=True)
        if np.any(counts > 1):
            raise PopulationError(f"duplicate unit id {int(uniq[counts > 1][0])}")
        K = _check_strata(strata)

        index = {int(u): i for i, u in enumerate(units)}
        pairs = []
        for src, dst in edges:
            src, dst = int(src), int(dst)
            for u in (src, dst):
                if u not in index:
                    raise PopulationError(f"unknown unit {u} in edge list")
            if src == dst:
                raise PopulationError(f"self-loop on unit {src}")
            pairs.append((index[src], index[dst]))
        e = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if symmetrize and len(e):
            e = np.vstack([e, e[:, ::-1]])
        e = np.unique(e, axis=0) if len(e) else e

        resp = {}
        for name, values in (responses or {}).items():
            v = np.asarray(values, dtype=float).reshape(-1)
            if v.shape != units.shape:
                raise PopulationError(f"response {name!r} has wrong length")
            resp[name] = _readonly(v)
        if stratum_meta is None:
            stratum_meta = tuple(StratumMeta() for _ in range(K))
        if len(stratum_meta) != K:
            raise PopulationError("stratum_meta length does not match number of strata")
        return cls(
            units=_readonly(units),
            strata=_readonly(strata),
            edges=_readonly(e),
            responses=resp,
            stratum_meta=tuple(stratum_meta),
            info=dict(info or {}),
        )

    @property
    def N(self) -> int:
        return len(self.units)

    @property
    def K(self) -> int:
        return len(self.stratum_meta)

    @cached_property
    def stratum_sizes(self) -> np.ndarray:
        return _readonly(np.bincount(self.strata - 1, minlength=self.K))

    @cached_property
    def index(self) -> dict:
        """Map from unit id to row index."""
        return {int(u): i for i, u in enumerate(self.units)}

    def indices_of(self, ids: Iterable[int]) -> np.ndarray:
        try:
            return np.array([self.index[int(u)] for u in ids], dtype=np.int64)
        except KeyError as exc:
            raise PopulationError(f"unknown unit {exc.args[0]}") from None

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Sparse ``N x N`` 0/1 matrix of stored links (no diagonal)."""
        n = self.N
        data = np.ones(len(self.edges), dtype=np.int64)
        return sp.csr_matrix((data, (self.edges[:, 0], self.edges[:, 1])), shape=(n, n))

    @cached_property
    def onehot(self) -> sp.csr_matrix:
        n = self.N
        return sp.csr_matrix(
            (np.ones(n, dtype=np.int64), (np.arange(n), self.strata - 1)), shape=(n, self.K)
        )

    @cached_property
    def _degree(self) -> np.ndarray:
        a = self.adjacency
        und = ((a + a.T) > 0).astype(np.int64)
        return _readonly(np.asarray(und.sum(axis=1)).ravel())

    @cached_property
    def _out_counts(self) -> np.ndarray:
        return _readonly(np.asarray((self.adjacency @ self.onehot).todense(), dtype=np.int64))

    def degree(self) -> np.ndarray:
        """Number of distinct neighbours ignoring link direction."""
        return self._degree.copy()

    def response(self, name: str) -> np.ndarray:
        if name in self.responses:
            return self.responses[name]
        if name == "degree":
            return self.degree().astype(float)
        raise KeyError(f"no response named {name!r}")

    def out_counts(self, idx: np.ndarray) -> np.ndarray:
        """Per-stratum out-nomination counts ``y_i^{k+}`` for rows `idx`."""
        return self._out_counts[idx]

    def with_strata(
        self, strata: Sequence[int], stratum_meta: Sequence[StratumMeta] | None = None
    ) -> "Population":
        """Same graph and responses under a different stratification."""
        strata = np.asarray(strata, dtype=np.int64)
        if strata.shape != self.strata.shape:
            raise PopulationError("strata length does not match population")
        K = _check_strata(strata)
        if stratum_meta is None:
            stratum_meta = tuple(StratumMeta() for _ in range(K))
        if len(stratum_meta) != K:
            raise PopulationError("stratum_meta length does not match number of strata")
        return Population(
            units=self.units,
            strata=_readonly(strata),
            edges=self.edges,
            responses=self.responses,
            stratum_meta=tuple(stratum_meta),
            info=self.info,
        )

    def summary(self) -> dict:
        deg = self.degree()
        return {
            "N": self.N,
            "K": self.K,
            "stratum_sizes": self.stratum_sizes.tolist(),
            "stratum_proportions": (self.stratum_sizes / self.N).tolist() if self.N else [],
            "links": int(len(self.edges)),
            "mean_degree": float(deg.mean()) if self.N else 0.0,
            "reciprocated": self.is_reciprocated(),
        }

    def is_reciprocated(self) -> bool:
        a = self.adjacency
        return (a != a.T).nnz == 0

    def same_as(self, other: "Population") -> bool:
        if not (
            np.array_equal(self.units, other.units)
            and np.array_equal(self.strata, other.strata)
            and np.array_equal(self.edges, other.edges)
            and self.stratum_meta == other.stratum_meta
            and set(self.responses) == set(other.responses)
        ):
            return False
        return all(np.array_equal(v, other.responses[k]) for k, v in self.responses.items())


def _check_strata(strata: np.ndarray) -> int:
    if len(strata) == 0:
        raise PopulationError("population has no units")
    present = np.unique(strata)
    K = int(present.max())
    if present.min() < 1 or len(present) != K:
        raise PopulationError(f"strata must be contiguous 1..K, got {present.tolist()}")
    return K


@dataclass(frozen=True)
class LinkCountMatrix:
    """Link counts between strata, self-loops included on the diagonal."""

    w_lk: np.ndarray
    w: int


def link_counts(pop: Population) -> LinkCountMatrix:
    """Count links from stratum ``l`` to stratum ``k``.

    The diagonal includes the ``N_k`` implicit self-nominations so that
    ``w_kk - N_k`` is the number of genuine within-stratum links.
    """
    g = pop.strata - 1
    w = np.zeros((pop.K, pop.K), dtype=np.int64)
    if len(pop.edges):
        np.add.at(w, (g[pop.edges[:, 0]], g[pop.edges[:, 1]]), 1)
    w[np.diag_indices(pop.K)] += pop.stratum_sizes
    return LinkCountMatrix(w_lk=w, w=int(w.sum()))


# -- files -----------------------------------------------------------------


def _open_text(source):
    if hasattr(source, "read"):
        return source, False
    return open(os.fspath(source), newline=""), True


def load_population(
    nodes_source,
    edges_source,
    symmetrize: bool = False,
    stratum_meta: Sequence[StratumMeta] | None = None,
) -> Population:
    """Read a population from a nodes CSV and an edges CSV.

    The nodes file has header ``unit,stratum,<response columns...>``; the
    edges file has header ``src,dst``.  Sources may be paths or open text
    files.
    """
    fh, close = _open_text(nodes_source)
    try:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if cols[:2] != ["unit", "stratum"]:
            raise PopulationError("nodes file must start with columns unit,stratum")
        rcols = cols[2:]
        units, strata, resp = [], [], {c: [] for c in rcols}
        for row in reader:
            try:
                units.append(int(row["unit"]))
                strata.append(int(row["stratum"]))
                for c in rcols:
                    resp[c].append(float(row[c]))
            except (TypeError, ValueError) as exc:
                raise PopulationError(f"bad nodes row {row}: {exc}") from None
    finally:
        if close:
            fh.close()

    fh, close = _open_text(edges_source)
    try:
        reader = csv.DictReader(fh)
        if (reader.fieldnames or [])[:2] != ["src", "dst"]:
            raise PopulationError("edges file must have columns src,dst")
        try:
            edges = [(int(r["src"]), int(r["dst"])) for r in reader]
        except (TypeError, ValueError) as exc:
            raise PopulationError(f"bad edges row: {exc}") from None
    finally:
        if close:
            fh.close()

    return Population.from_edges(
        units, strata, edges, resp, stratum_meta=stratum_meta, symmetrize=symmetrize
    )


def save_population(pop: Population, nodes_target, edges_target) -> None:
    """Write `pop` in the format read by :func:`load_population`."""
    names = list(pop.responses)
    fh, close = _open_write(nodes_target)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "stratum", *names])
        for i, u in enumerate(pop.units):
            w.writerow([int(u), int(pop.strata[i]), *(repr(float(pop.responses[c][i])) for c in names)])
    finally:
        if close:
            fh.close()
    fh, close = _open_write(edges_target)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for s, d in pop.edges:
            w.writerow([int(pop.units[s]), int(pop.units[d])])
    finally:
        if close:
            fh.close()


def _open_write(target):
    if hasattr(target, "write"):
        return target, False
    return open(os.fspath(target), "w", newline=""), True


# -- synthetic graphs --------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic stratified population.

    Exactly one of `densities` (independent link probability for each pair of
    strata) or `mean_degree` (exact number of links, placed by weighted
    sampling without replacement) must be given.

    `mixing` scales pair weights between strata in `mean_degree` mode and
    `degree_dispersion` is the log-normal sigma of per-unit activity weights
    (0 gives a uniform random graph).  With `reciprocated`, every link is
    stored in both directions and `mean_degree` counts distinct neighbours;
    otherwise it is the mean out-degree.

    `responses` is a list of dicts, each with ``name`` and ``kind``:
    ``"stratum_indicator"`` (``strata``: list of ids), ``"degree"``,
    ``"normal"`` (``mean``/``sd`` per stratum) or ``"bernoulli"`` (``p`` per
    stratum).
    """

    sizes: tuple
    densities: tuple | None = None
    mean_degree: float | None = None
    mixing: tuple | None = None
    degree_dispersion: float = 0.0
    reciprocated: bool = True
    responses: tuple = ()

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known - {"seed"}
        if extra:
            raise PopulationError(f"unknown synthetic-spec fields {sorted(extra)}")

        def tup(x):
            return None if x is None else tuple(tuple(r) if isinstance(r, list) else r for r in x)

        return cls(
            sizes=tuple(int(s) for s in d["sizes"]),
            densities=tup(d.get("densities")),
            mean_degree=d.get("mean_degree"),
            mixing=tup(d.get("mixing")),
            degree_dispersion=float(d.get("degree_dispersion", 0.0)),
            reciprocated=bool(d.get("reciprocated", True)),
            responses=tuple(dict(r) for r in d.get("responses", ())),
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps({
            "sizes": list(self.sizes),
            "densities": self.densities,
            "mean_degree": self.mean_degree,
            "mixing": self.mixing,
            "degree_dispersion": self.degree_dispersion,
            "reciprocated": self.reciprocated,
            "responses": list(self.responses),
        }))


def surrogate_spec() -> SyntheticSpec:
    """A stand-in for a 595-person drug-sharing network.

    Stratum 2 (342 units, proportion 0.575) plays the injection drug users,
    links are reciprocated and there are 729 of them, for a mean degree of
    2.45.  Activity weights are log-normal so the degree distribution is
    right skewed.
    """
    return SyntheticSpec(
        sizes=(253, 342),
        mean_degree=2.45,
        mixing=((1.0, 0.6), (0.6, 1.0)),
        degree_dispersion=0.8,
        reciprocated=True,
        responses=(
            {"name": "idu", "kind": "stratum_indicator", "strata": [2]},
            {"name": "degree", "kind": "degree"},
        ),
    )


def generate_synthetic(spec: SyntheticSpec | Mapping, seed: int | None = None) -> Population:
    """Draw a synthetic population; the same `spec` and `seed` give the same graph."""
    if not isinstance(spec, SyntheticSpec):
        if seed is None:
            seed = spec.get("seed")
        spec = SyntheticSpec.from_dict(spec)
    rng = np.random.default_rng(seed)
    sizes = np.asarray(spec.sizes, dtype=np.int64)
    if sizes.ndim != 1 or len(sizes) == 0 or np.any(sizes < 1):
        raise PopulationError("stratum sizes must be >= 1")
    K = len(sizes)
    N = int(sizes.sum())
    strata = np.repeat(np.arange(1, K + 1), sizes)

    if (spec.densities is None) == (spec.mean_degree is None):
        raise PopulationError("give exactly one of densities or mean_degree")

    if spec.reciprocated:
        src, dst = np.triu_indices(N, k=1)
    else:
        src, dst = np.nonzero(~np.eye(N, dtype=bool))
    gs, gd = strata[src] - 1, strata[dst] - 1

    if spec.densities is not None:
        dens = np.asarray(spec.densities, dtype=float)
        if dens.shape != (K, K):
            raise PopulationError(f"densities must be {K}x{K}")
        if np.any((dens < 0) | (dens > 1)):
            raise PopulationError("densities must lie in [0, 1]")
        if spec.reciprocated and not np.allclose(dens, dens.T):
            raise PopulationError("reciprocated graphs need symmetric densities")
        keep = rng.random(len(src)) < dens[gs, gd]
    else:
        target = float(spec.mean_degree)
        if target < 0:
            raise PopulationError("mean_degree must be non-negative")
        m = int(round(target * N / 2)) if spec.reciprocated else int(round(target * N))
        mix = np.ones((K, K)) if spec.mixing is None else np.asarray(spec.mixing, dtype=float)
        if mix.shape != (K, K) or np.any(mix < 0):
            raise PopulationError(f"mixing must be a non-negative {K}x{K} matrix")
        theta = np.ones(N)
        if spec.degree_dispersion > 0:
            theta = rng.lognormal(0.0, spec.degree_dispersion, size=N)
        weight = theta[src] * theta[dst] * mix[gs, gd]
        available = int(np.count_nonzero(weight))
        if m > available:
            raise PopulationError(
                f"mean degree {target} needs {m} links but only {available} pairs are allowed"
            )
        keep = np.zeros(len(src), dtype=bool)
        if m:
            # Gumbel top-m: weighted sampling without replacement
            with np.errstate(divide="ignore"):
                keys = np.log(weight) + rng.gumbel(size=len(weight))
            keep[np.argpartition(-keys, m - 1)[:m]] = True

    e = np.column_stack([src[keep], dst[keep]])
    if spec.reciprocated:
        e = np.vstack([e, e[:, ::-1]])
    units = np.arange(1, N + 1)
    pop = Population.from_edges(units, strata, (units[e]).tolist(), info={"spec": spec.to_dict(), "seed": seed})

    responses = {}
    for r in spec.responses:
        name, kind = r["name"], r.get("kind")
        if kind == "stratum_indicator":
            responses[name] = np.isin(strata, r["strata"]).astype(float)
        elif kind == "degree":
            responses[name] = pop.degree().astype(float)
        elif kind == "normal":
            mu = np.asarray(r["mean"], dtype=float)[strata - 1]
            sd = np.asarray(r["sd"], dtype=float)[strata - 1]
            responses[name] = rng.normal(mu, sd)
        elif kind == "bernoulli":
            p = np.asarray(r["p"], dtype=float)[strata - 1]
            responses[name] = (rng.random(N) < p).astype(float)
        else:
            raise PopulationError(f"unknown response kind {kind!r}")
    info = {"spec": spec.to_dict(), "seed": seed}
    pop = Population(
        units=pop.units,
        strata=pop.strata,
        edges=pop.edges,
        responses={k: _readonly(v) for k, v in responses.items()},
        stratum_meta=pop.stratum_meta,
        info=info,
    )
    info["summary"] = pop.summary()
    return pop


def top_degree_units(pop: Population, d: int) -> np.ndarray:
    """Ids of the `d` highest-degree units; ties broken by smallest id."""
    deg = pop.degree()
    order = np.lexsort((pop.units, -deg))
    return np.sort(pop.units[order[:d]])

