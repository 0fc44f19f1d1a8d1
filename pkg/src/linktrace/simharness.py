"""Replicated simulation studies.

Each replication draws one sample from the generating design and analyses it
under every configured *setup* (a stratification assumed by the analyst,
optionally with a certainty stratum of top-degree units).  Preliminary
estimates come from the sample's actual ordering; Rao-Blackwellized ones
average over reorderings, by enumeration or by Metropolis-Hastings chains
started from two over-dispersed seeds.

Random streams are derived from ``(seed, replication, setup, phase)`` so a
study gives the same numbers whatever the number of worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import estimators as est
from .design import DesignParams, ObservedSample, draw_sample, observe
from .diagnostics import DegenerateChainError, SeedSearchConfig, gelman_rubin, search_overdispersed
from .population import (
    Population,
    StratumMeta,
    generate_synthetic,
    load_population,
    top_degree_units,
)
from .rao_blackwell import rb_from_weights
from .reorder import default_gammas, original_ordering, run_chain, space_for

__all__ = [
    "SetupConfig",
    "StudyConfig",
    "StudyReport",
    "Analysis",
    "coverage_score",
    "build_population",
    "prepare_setup",
    "run_replication",
    "run_study",
]

PHASE_DESIGN, PHASE_LOWER, PHASE_UPPER, PHASE_CHAIN = 0, 1, 2, 3
QUANTITIES = ("size", "proportion", "mean")


@dataclass(frozen=True)
class SetupConfig:
    """An analysis setup.

    `strata` is ``"population"`` (the population's own strata), ``"single"``
    (one stratum) or an explicit list of stratum ids aligned with the
    population's units.  `certainty_top_degree` moves that many top-degree
    units into an extra certainty stratum; the generating design then selects
    them with probability one.
    """

    name: str
    strata: object = "population"
    certainty_top_degree: int = 0
    stabilize: bool = True
    gammas: tuple | None = None
    beta: object = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "SetupConfig":
        d = dict(d)
        if d.get("gammas") is not None:
            d["gammas"] = tuple(d["gammas"])
        return cls(**d)


@dataclass(frozen=True)
class StudyConfig:
    population: Mapping
    design: Mapping
    setups: tuple
    replications: int = 100
    chain_length: int = 2000
    search_length: int = 2000
    rb: str = "mcmc"
    chains: int = 2
    swap_prob: float = 0.0
    enumeration_cap: int = 10**5
    proportion_response: str | None = None
    proportion_scale: str = "printed"
    mean_response: str | None = None
    seed: int = 0
    workers: int = 1
    keep_replications: bool = True

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.rb not in ("mcmc", "exact", "none"):
            raise ValueError("rb must be 'mcmc', 'exact' or 'none'")
        if self.chains not in (1, 2):
            raise ValueError("chains must be 1 (original start) or 2 (over-dispersed seeds)")
        if not 0.0 <= self.swap_prob < 1.0:
            raise ValueError("swap_prob must lie in [0, 1)")
        if self.proportion_scale not in ("printed", "fpc"):
            raise ValueError("proportion_scale must be 'printed' or 'fpc'")
        if not self.setups:
            raise ValueError("at least one analysis setup is required")
        names = [s.name for s in self.setups]
        if len(set(names)) != len(names):
            raise ValueError("setup names must be unique")

    @classmethod
    def from_dict(cls, d: Mapping) -> "StudyConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown study config fields {sorted(extra)}")
        d["setups"] = tuple(SetupConfig.from_dict(s) for s in d.get("setups", ()))
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setups"] = [asdict(s) for s in self.setups]
        return json.loads(json.dumps(d))

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def build_population(source: Mapping, base_dir: str | None = None) -> Population:
    """Population from ``{"synthetic": spec}`` or ``{"nodes": ..., "edges": ...}``."""
    if "synthetic" in source:
        spec = dict(source["synthetic"])
        return generate_synthetic(spec, seed=spec.pop("seed", source.get("seed")))
    if "nodes" in source:

        def path(p):
            return p if base_dir is None or os.path.isabs(p) else os.path.join(base_dir, p)

        return load_population(path(source["nodes"]), path(source["edges"]), source.get("symmetrize", False))
    raise ValueError("population source needs 'synthetic' or 'nodes'/'edges'")


def coverage_score(point: float, interval: tuple, truth: float) -> dict:
    """Whether `interval` covers `truth`, and its length."""
    lo, hi = interval
    if lo > hi:
        raise ValueError("interval lower bound exceeds upper bound")
    return {"covered": bool(lo <= truth <= hi), "length": float(hi - lo)}


# -- setups -------------------------------------------------------------------------


@dataclass
class Analysis:
    """Everything fixed about one setup across replications."""

    name: str
    population: Population
    gen_params: DesignParams
    params: DesignParams
    stabilize: bool
    gammas: tuple
    prop_weights: np.ndarray | None
    prop_ratio: bool
    prop_response: str | None
    prop_scale: str
    mean_response: str | None
    truth: dict


def _gen_params(pop: Population, design: Mapping) -> DesignParams:
    return DesignParams.from_dict(design, K=pop.K)


def prepare_setup(pop: Population, cfg: StudyConfig, setup: SetupConfig) -> Analysis:
    gen = _gen_params(pop, cfg.design)
    if isinstance(setup.strata, str):
        if setup.strata == "population":
            strata = pop.strata.copy()
        elif setup.strata == "single":
            strata = np.ones(pop.N, dtype=np.int64)
        else:
            raise ValueError(f"unknown strata option {setup.strata!r}")
    else:
        strata = np.asarray(setup.strata, dtype=np.int64)
        if strata.shape != (pop.N,):
            raise ValueError(f"setup {setup.name!r}: strata mapping must cover all units")
    K0 = int(strata.max())
    meta = [StratumMeta() for _ in range(K0)]
    certain = np.array([], dtype=np.int64)
    if setup.certainty_top_degree:
        certain = top_degree_units(pop, setup.certainty_top_degree)
        strata = strata.copy()
        strata[pop.indices_of(certain)] = K0 + 1
        meta.append(StratumMeta(certainty=True))
    # drop strata emptied by the certainty rule
    used = np.unique(strata)
    remap = np.zeros(used.max() + 1, dtype=np.int64)
    remap[used] = np.arange(1, len(used) + 1)
    meta = [meta[k - 1] for k in used]
    strata = remap[strata]
    apop = pop.with_strata(strata, meta)
    K = apop.K

    alpha = np.empty(K)
    for k in range(K):
        members = strata == k + 1
        alpha[k] = 1.0 if meta[k].certainty else float(gen.alpha[pop.strata[members] - 1].mean())
    params = DesignParams(alpha, _analysis_beta(pop, strata, gen, setup), frozenset())
    gen_setup = DesignParams(gen.alpha, gen.beta, gen.certainty_units | set(int(u) for u in certain))

    prop_weights, prop_ratio = None, False
    truth = {"size": float(pop.N)}
    if cfg.proportion_response:
        ind = pop.response(cfg.proportion_response)
        truth["proportion"] = float(ind.mean())
        prop_weights = np.array([ind[strata == k + 1].mean() for k in range(K)])
        pure = np.all(np.isin(prop_weights[~np.array([m.certainty for m in meta])], (0.0, 1.0)))
        prop_ratio = bool(pure and K > 1)
    if cfg.mean_response:
        truth["mean"] = float(pop.response(cfg.mean_response).mean())
    gammas = setup.gammas if setup.gammas is not None else default_gammas(K)
    return Analysis(
        name=setup.name,
        population=apop,
        gen_params=gen_setup,
        params=params,
        stabilize=setup.stabilize,
        gammas=tuple(gammas),
        prop_weights=prop_weights,
        prop_ratio=prop_ratio,
        prop_response=cfg.proportion_response,
        prop_scale=cfg.proportion_scale,
        mean_response=cfg.mean_response,
        truth=truth,
    )


def _analysis_beta(pop, strata, gen: DesignParams, setup: SetupConfig) -> np.ndarray:
    K = int(strata.max())
    if setup.beta is not None:
        b = np.asarray(setup.beta, dtype=float)
        return np.full((K, K), float(b)) if b.ndim == 0 else b
    if np.all(gen.beta == gen.beta.flat[0]):
        return np.full((K, K), gen.beta.flat[0])
    # map analysis strata onto generating strata when each is pure
    origin = np.empty(K, dtype=np.int64)
    for k in range(K):
        g = np.unique(pop.strata[strata == k + 1])
        if len(g) != 1:
            raise ValueError(
                f"setup {setup.name!r}: stratum {k + 1} mixes generating strata; give an explicit beta"
            )
        origin[k] = g[0] - 1
    return gen.beta[np.ix_(origin, origin)]


# -- per-sample estimation ---------------------------------------------------------


class SetupEstimator:
    """Size, proportion and mean estimates with variances for one role assignment.

    Calling it returns ``(points, variances)`` arrays ordered like
    :attr:`quantities`.
    """

    def __init__(self, analysis: Analysis):
        self.a = analysis
        self.quantities = ["size"]
        if analysis.prop_response:
            self.quantities.append("proportion")
        if analysis.mean_response:
            self.quantities.append("mean")

    def __call__(self, data: ObservedSample, x: np.ndarray):
        a = self.a
        stab = a.stabilize
        xf = x.astype(float)
        n0, r, s = est._raw_counts(data, xf)
        Nk = est._sizes(n0, r, s, data.certainty, stab)
        inc = data.include
        N = float(Nk[inc].sum())
        deletable = x & ~data.certainty_members
        est._check_jackknife(data, x)
        idx, loo_k = est._loo(data, xf, deletable, stab)
        points, variances = [N], [est._jk_size(data, idx, loo_k, N)]
        if a.prop_response:
            if a.prop_ratio:
                if N <= 0:
                    raise est.EstimationError("non-positive population size estimate")
                w = a.prop_weights
                nJ_pop = N - Nk[inc & data.certainty].sum()
                points.append(float(Nk[inc] @ w[inc] / N))
                variances.append(est._jk_proportion(data, idx, loo_k, w, nJ_pop, a.prop_scale))
            else:
                mode = "one-stratum" if data.K == 1 else "stratified"
                p, v = est._mean_parts(data, x, data.responses[a.prop_response], Nk, mode)
                points.append(p)
                variances.append(v)
        if a.mean_response:
            mode = "one-stratum" if data.K == 1 else "stratified"
            p, v = est._mean_parts(data, x, data.responses[a.mean_response], Nk, mode)
            points.append(p)
            variances.append(v)
        return np.array(points), np.array(variances)

    def intervals(self, data, points, variances):
        out = []
        n = est._final_n(data)
        for q, p, v in zip(self.quantities, points, variances):
            if q == "size":
                out.append(est.ci_log_transform(p, v, n))
            else:
                out.append(est.ci_normal(p, v))
        return out


def _rng(cfg: StudyConfig, rep: int, setup: int, phase: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, rep, setup, phase]))


def run_replication(pop: Population, cfg: StudyConfig, analyses: Sequence[Analysis], rep: int) -> list:
    """Analyse replication `rep` under every setup; one record per setup."""
    records = []
    for si, a in enumerate(analyses):
        rec = {"replication": rep, "setup": a.name}
        try:
            gen = draw_sample(pop, a.gen_params, _rng(cfg, rep, 0, PHASE_DESIGN))
            d0 = observe(a.population, gen.units[gen.initial], gen.units[~gen.initial], a.params)
            rec["n0"] = int(d0.initial.sum())
            rec["n"] = int(d0.n)
            f = SetupEstimator(a)
            pts, vrs = f(d0, d0.initial)
            ints = f.intervals(d0, pts, vrs)
            for q, p, v, ci in zip(f.quantities, pts, vrs, ints):
                rec[f"{q}_p"] = float(p)
                rec[f"{q}_p_var"] = float(v)
                rec[f"{q}_p_lo"], rec[f"{q}_p_hi"] = map(float, ci)
            if cfg.rb != "none":
                rec.update(_rao_blackwell(cfg, a, f, d0, rep, si))
            rec["status"] = "ok"
        except (est.EstimationError, ValueError) as exc:
            rec["status"] = f"failed: {type(exc).__name__}: {exc}"
        records.append(rec)
    return records


def _rao_blackwell(cfg, a: Analysis, f: SetupEstimator, d0, rep, si) -> dict:
    out = {}
    if cfg.rb == "exact":
        sp = space_for(d0)
        reorderings = sp.enumerate(cfg.enumeration_cap)
        pv = [f(d0, r.initial) for r, _ in reorderings]
        pts, vrs, cons = rb_from_weights(
            np.array([p for p, _ in pv]), np.array([v for _, v in pv]), np.array([lp for _, lp in reorderings])
        )
        out["n_reorderings"] = len(reorderings)
    else:
        start = original_ordering(d0)
        if cfg.chains == 2:
            seeds = [
                search_overdispersed(
                    d0, SeedSearchConfig(cfg.search_length, d, a.gammas), start, _rng(cfg, rep, si + 1, ph)
                )
                for d, ph in (("lower", PHASE_LOWER), ("upper", PHASE_UPPER))
            ]
        else:
            seeds = [start]
        chains = [
            run_chain(d0, s, cfg.chain_length, a.gammas, _rng(cfg, rep, si + 1, PHASE_CHAIN + c), f,
                      cfg.swap_prob)
            for c, s in enumerate(seeds)
        ]
        P = np.array([t[0] for c in chains for t in c.trace])
        V = np.array([t[1] for c in chains for t in c.trace])
        pts = P.mean(axis=0)
        within = V.mean(axis=0)
        vrs = within - P.var(axis=0)
        cons = vrs < 0
        vrs = np.where(cons, within, vrs)
        steps = sum(c.step for c in chains)
        out["acceptance"] = sum(c.n_accepted for c in chains) / steps if steps else 0.0
        if len(chains) == 2:
            try:
                out["gelman_rubin"] = gelman_rubin([[t[0][0] for t in c.trace] for c in chains])
            except DegenerateChainError:
                out["gelman_rubin"] = math.nan
            out["seed_size_lower"] = float(chains[0].trace[0][0][0])
            out["seed_size_upper"] = float(chains[1].trace[0][0][0])
    ints = f.intervals(d0, pts, vrs)
    for q, p, v, c, ci in zip(f.quantities, pts, vrs, cons, ints):
        out[f"{q}_rb"] = float(p)
        out[f"{q}_rb_var"] = float(v)
        out[f"{q}_rb_conservative"] = bool(c)
        out[f"{q}_rb_lo"], out[f"{q}_rb_hi"] = map(float, ci)
    return out


# -- aggregation -------------------------------------------------------------------------


@dataclass
class StudyReport:
    config: dict
    config_hash: str
    seed: int
    rows: list
    setups: list
    replications: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "config": self.config,
            "scores": self.rows,
            "setups": self.setups,
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True) + "\n"

    def row(self, quantity: str, setup: str) -> dict:
        for r in self.rows:
            if r["quantity"] == quantity and r["setup"] == setup:
                return r
        raise KeyError((quantity, setup))

    def scores_csv(self) -> str:
        cols = ["quantity", "setup", "truth", "expectation_p", "expectation_rb", "var_p", "var_rb"]
        return _csv(self, cols, self.rows)

    def coverage_csv(self) -> str:
        cols = ["quantity", "setup", "cr_p", "length_p", "cr_rb", "length_rb"]
        return _csv(self, cols, self.rows)

    def setups_csv(self) -> str:
        cols = list(self.setups[0]) if self.setups else []
        return _csv(self, cols, self.setups)

    def replications_csv(self) -> str:
        cols = sorted({k for r in self.replications for k in r} - {"replication", "setup", "status"})
        return _csv(self, ["replication", "setup", "status", *cols], self.replications)

    def write(self, out_dir, fmt: str = "both") -> list:
        """Write the report files into `out_dir`; returns the paths written."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []

        def put(name, text):
            p = os.path.join(out_dir, name)
            with open(p, "w", newline="") as fh:
                fh.write(text)
            paths.append(p)

        if fmt in ("json", "both"):
            put("report.json", self.to_json())
        if fmt in ("csv", "both"):
            put("scores.csv", self.scores_csv())
            put("coverage.csv", self.coverage_csv())
            put("setups.csv", self.setups_csv())
            if self.replications:
                put("replications.csv", self.replications_csv())
        return paths


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _csv(report: StudyReport, cols, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={report.config_hash} seed={report.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r.get(c), float) else r[c]) for c in cols])
    return buf.getvalue()


def _nan_stat(fn, values):
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], float)
    return float(fn(v)) if len(v) else None


def _aggregate(cfg: StudyConfig, analyses, records) -> tuple[list, list]:
    rows, setups = [], []
    for a in analyses:
        recs = [r for r in records if r["setup"] == a.name]
        ok = [r for r in recs if r["status"] == "ok"]
        quantities = [q for q in QUANTITIES if q in a.truth]
        for q in quantities:
            truth = a.truth[q]
            row = {"quantity": q, "setup": a.name, "truth": truth, "replications_used": len(ok)}
            for kind in ("p", "rb"):
                pts = [r[f"{q}_{kind}"] for r in ok if f"{q}_{kind}" in r]
                if not pts:
                    row.update({f"expectation_{kind}": None, f"var_{kind}": None, f"cr_{kind}": None,
                                f"length_{kind}": None})
                    continue
                cov = [coverage_score(r[f"{q}_{kind}"], (r[f"{q}_{kind}_lo"], r[f"{q}_{kind}_hi"]), truth)
                       for r in ok if f"{q}_{kind}" in r]
                row[f"expectation_{kind}"] = float(np.mean(pts))
                row[f"var_{kind}"] = float(np.var(pts, ddof=1)) if len(pts) > 1 else 0.0
                row[f"cr_{kind}"] = float(np.mean([c["covered"] for c in cov]))
                row[f"length_{kind}"] = float(np.mean([c["length"] for c in cov]))
                row[f"mean_variance_estimate_{kind}"] = float(np.mean([r[f"{q}_{kind}_var"] for r in ok]))
                if kind == "rb":
                    row["conservative_rb"] = int(sum(r[f"{q}_rb_conservative"] for r in ok))
            rows.append(row)
        setups.append({
            "setup": a.name,
            "strata": a.population.K,
            "replications": len(recs),
            "failures": len(recs) - len(ok),
            "mean_initial_size": _nan_stat(np.mean, [r.get("n0") for r in ok]),
            "mean_final_size": _nan_stat(np.mean, [r.get("n") for r in ok]),
            "acceptance_rate": _nan_stat(np.mean, [r.get("acceptance") for r in ok]),
            "gelman_rubin_mean": _nan_stat(np.mean, [r.get("gelman_rubin") for r in ok]),
            "gelman_rubin_median": _nan_stat(np.median, [r.get("gelman_rubin") for r in ok]),
        })
    return rows, setups


def _worker(args):
    pop, cfg, analyses, reps = args
    return [rec for rep in reps for rec in run_replication(pop, cfg, analyses, rep)]


def run_study(cfg: StudyConfig, population: Population | None = None, base_dir: str | None = None) -> StudyReport:
    """Run every replication of `cfg` and aggregate the scores."""
    pop = build_population(cfg.population, base_dir) if population is None else population
    analyses = [prepare_setup(pop, cfg, s) for s in cfg.setups]
    workers = int(os.environ.get("LINKTRACE_WORKERS", cfg.workers) or 1)
    reps = list(range(cfg.replications))
    if workers > 1:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_worker, [(pop, cfg, analyses, c) for c in chunks]))
        records = sorted((r for p in parts for r in p), key=lambda r: (r["replication"], _order(analyses, r)))
    else:
        records = _worker((pop, cfg, analyses, reps))
    rows, setups = _aggregate(cfg, analyses, records)
    return StudyReport(
        config=cfg.to_dict(),
        config_hash=cfg.digest(),
        seed=cfg.seed,
        rows=rows,
        setups=setups,
        replications=records if cfg.keep_replications else [],
    )


def _order(analyses, rec):
    return [a.name for a in analyses].index(rec["setup"])
