"""Command-line driver.

Subcommands::

    linktrace validate --nodes N.csv --edges E.csv
    linktrace synth    --config spec.json --seed 1 --out DIR
    linktrace sample   --nodes N.csv --edges E.csv --config design.json --seed 1 --out sample.json
    linktrace estimate --sample sample.json [--stabilized] [--proportion K] [--mean NAME]
    linktrace rb       --sample sample.json [--method exact|mcmc] [--trace-dir DIR]
    linktrace simulate --config study.json --out DIR

Exit status is 0 on success, 2 for a bad config or arguments, 3 for data
errors and 4 when an estimator is undefined for the data.  Failures print a
one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .design import DesignParams, ObservedSample, draw_sample, read_sample, reduce, sample_to_dict
from .diagnostics import SeedSearchConfig, search_overdispersed
from .estimators import (
    EstimateWithVariance,
    EstimationError,
    count_statistics,
    mean_estimate,
    population_size_estimate,
    proportion_estimate,
    size_estimate,
)
from .population import PopulationError, generate_synthetic, load_population, save_population, surrogate_spec
from .rao_blackwell import rb_exact, rb_mcmc
from .reorder import default_gammas, original_ordering
from .simharness import StudyConfig, run_study

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATOR = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config_error(msg):
    return CliError(EXIT_CONFIG, msg)


def _read_config(path):
    if path is None:
        return None, None
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise _config_error(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise _config_error(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise _config_error("config must be a JSON object")
    return cfg, _hash(cfg)


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _provenance(args, cfg_hash, seed):
    if cfg_hash is None:
        # no config file: hash the arguments that shaped the output
        keep = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "func", "format", "trace_dir")}
        cfg_hash = _hash(keep)
    return {"config_hash": cfg_hash, "seed": seed, "version": __version__}


def _emit(text: str, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        d = os.path.dirname(os.path.abspath(out))
        os.makedirs(d, exist_ok=True)
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _dumps(obj) -> str:
    return json.dumps(_finite(obj), indent=1, sort_keys=True) + "\n"


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _records_csv(records, prov) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={prov['config_hash']} seed={prov['seed']}\n")
    cols = list(records[0]) if records else []
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in records:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in cols)])
    return buf.getvalue()


def _load_pop(args, cfg):
    src = None
    if args.nodes or args.edges:
        if not (args.nodes and args.edges):
            raise _config_error("--nodes and --edges go together")
        src = {"nodes": args.nodes, "edges": args.edges}
    elif cfg and isinstance(cfg.get("population"), dict) and "nodes" in cfg["population"]:
        base = os.path.dirname(os.path.abspath(args.config))
        p = cfg["population"]
        src = {k: (v if os.path.isabs(v) else os.path.join(base, v)) for k, v in p.items() if k in ("nodes", "edges")}
        src["symmetrize"] = p.get("symmetrize", False)
    if src is None:
        raise _config_error("no population given (use --nodes/--edges)")
    try:
        return load_population(src["nodes"], src["edges"], symmetrize=args.symmetrize or src.get("symmetrize", False))
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read population: {exc}") from None
    except PopulationError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _load_sample(path):
    if not path:
        raise _config_error("--sample is required")
    try:
        return read_sample(path)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read sample: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_DATA, f"invalid sample file: {exc}") from None


# -- subcommands ---------------------------------------------------------------------


def cmd_validate(args):
    cfg, h = _read_config(args.config)
    pop = _load_pop(args, cfg)
    doc = {"valid": True, "summary": pop.summary(), "reciprocated": pop.is_reciprocated()}
    doc.update(_provenance(args, h, args.seed))
    _emit(_dumps(doc), args.out)


def cmd_synth(args):
    cfg, h = _read_config(args.config)
    spec = cfg if cfg is not None else surrogate_spec().to_dict()
    seed = args.seed if args.seed is not None else spec.get("seed", 0)
    spec = {k: v for k, v in spec.items() if k != "seed"}
    try:
        pop = generate_synthetic(spec, seed=seed)
    except (TypeError, KeyError, ValueError) as exc:
        raise _config_error(f"bad synthetic spec: {exc}") from None
    if not args.out:
        raise _config_error("synth needs --out DIR")
    os.makedirs(args.out, exist_ok=True)
    save_population(pop, os.path.join(args.out, "nodes.csv"), os.path.join(args.out, "edges.csv"))
    doc = {"summary": pop.summary(), "spec": spec}
    doc.update(_provenance(args, h, seed))
    _emit(_dumps(doc), os.path.join(args.out, "summary.json"))


def cmd_sample(args):
    cfg, h = _read_config(args.config)
    pop = _load_pop(args, cfg)
    design = (cfg or {}).get("design", cfg)
    if not design:
        raise _config_error("sample needs a design config with alpha and beta")
    try:
        params = DesignParams.from_dict(design, K=pop.K)
    except (KeyError, ValueError, TypeError) as exc:
        raise _config_error(f"bad design: {exc}") from None
    seed = args.seed if args.seed is not None else (cfg or {}).get("seed", 0)
    try:
        d0 = draw_sample(pop, params, np.random.default_rng(seed))
    except (ValueError, PopulationError) as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    doc = sample_to_dict(reduce(d0) if args.reduced else d0)
    doc["provenance"] = _provenance(args, h, seed)
    _emit(_dumps(doc), args.out)


def _size_or_point(data, initial, stabilized) -> EstimateWithVariance:
    """Size estimate, degrading to the bare point when the jackknife is undefined."""
    try:
        return size_estimate(data, initial, stabilized)
    except EstimationError:
        point = population_size_estimate(count_statistics(data, initial), stabilized)
        return EstimateWithVariance(point, math.nan, math.nan, math.nan, "point-only")


def _estimates(data, initial, args):
    records = [_size_or_point(data, initial, args.stabilized).to_record("size")]
    for k in args.proportion or ():
        rec = proportion_estimate(data, initial, k, args.stabilized).to_record(f"proportion[{k}]")
        records.append(rec)
    for name in args.mean or ():
        if name not in data.responses:
            raise _config_error(f"unknown response {name!r}")
        mode = "one-stratum" if data.K == 1 else "stratified"
        records.append(mean_estimate(data, initial, name, mode, args.stabilized).to_record(f"mean[{name}]"))
    return records


def cmd_estimate(args):
    data = _load_sample(args.sample)
    if not isinstance(data, ObservedSample):
        raise CliError(EXIT_DATA, "estimate needs an observed sample (with wave labels)")
    prov = _provenance(args, None, args.seed)
    records = _estimates(data, data.initial, args)
    for r in records:
        r["stabilized"] = args.stabilized
    if args.format == "csv":
        _emit(_records_csv(records, prov), args.out)
    else:
        _emit(_dumps({"estimates": records, **prov}), args.out)


def cmd_rb(args):
    data = _load_sample(args.sample)
    if not isinstance(data, ObservedSample):
        raise CliError(EXIT_DATA, "rb needs an observed sample; its ordering gives the preliminary estimate")
    stab = args.stabilized
    quantity = args.quantity

    def estimator(d, x):
        if quantity == "size":
            e = _size_or_point(d, x, stab)
        elif quantity.startswith("proportion:"):
            e = proportion_estimate(d, x, int(quantity.split(":", 1)[1]), stab)
        elif quantity.startswith("mean:"):
            e = mean_estimate(d, x, quantity.split(":", 1)[1], "one-stratum" if d.K == 1 else "stratified", stab)
        else:
            raise _config_error(f"unknown quantity {quantity!r}")
        return e.point, e.variance

    seed = 0 if args.seed is None else args.seed
    prov = _provenance(args, None, seed)
    gammas = tuple(args.gammas) if args.gammas else default_gammas(data.K)
    rng = np.random.default_rng(seed)
    seeds_info = {}
    if args.method == "exact":
        res = rb_exact(data, estimator, cap=args.cap)
    else:
        start = original_ordering(data)
        if args.chains == 2:
            traces = {}
            seeds = []
            for direction in ("lower", "upper"):
                tr = []
                seeds.append(search_overdispersed(data, SeedSearchConfig(args.search_length, direction, gammas),
                                                  start, rng, tr))
                traces[direction] = tr
            seeds_info = {"seed_log_p": {"lower": seeds[0].log_p, "upper": seeds[1].log_p}}
        else:
            seeds, traces = [start], {}
        res = rb_mcmc(data, estimator, args.chain_length, gammas, rng, seeds, keep_chains=True,
                      swap_prob=args.swap_prob)
        if args.trace_dir:
            _write_traces(args.trace_dir, res, traces, prov)
    doc = {"quantity": quantity, "stabilized": stab, **res.to_dict(), **seeds_info, **prov}
    if args.format == "csv":
        rec = {k: v for k, v in doc.items() if not isinstance(v, (dict, list))}
        _emit(_records_csv([rec], prov), args.out)
    else:
        _emit(_dumps(doc), args.out)


def _write_traces(out_dir, res, searches, prov):
    os.makedirs(out_dir, exist_ok=True)
    for name, rows in searches.items():
        recs = [{"step": s, "accepted": int(a), "log_p": float(lp)} for s, a, lp in rows]
        _emit(_records_csv(recs, prov), os.path.join(out_dir, f"search_{name}.csv"))
    for c, chain in enumerate(res.chains):
        recs = [
            {"step": i, "accepted": int(a), "log_p": float(lp), "estimate": float(np.ravel(t[0])[0])}
            for i, (a, lp, t) in enumerate(zip(chain.accepted, chain.log_p, chain.trace))
        ]
        _emit(_records_csv(recs, prov), os.path.join(out_dir, f"chain_{c + 1}.csv"))


def cmd_simulate(args):
    cfg, _ = _read_config(args.config)
    if cfg is None:
        raise _config_error("simulate needs --config")
    if args.seed is not None:
        cfg = {**cfg, "seed": args.seed}
    try:
        study = StudyConfig.from_dict(cfg)
    except (TypeError, ValueError, KeyError) as exc:
        raise _config_error(f"bad study config: {exc}") from None
    if not args.out:
        raise _config_error("simulate needs --out DIR")
    base = os.path.dirname(os.path.abspath(args.config))
    try:
        report = run_study(study, base_dir=base)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot read population: {exc}") from None
    except PopulationError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    except ValueError as exc:
        raise _config_error(f"study does not fit the population: {exc}") from None
    report.write(args.out, {"json": "json", "csv": "csv"}.get(args.format, "both"))


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linktrace", description="Stratified link-tracing estimation toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="random seed (overrides the config)")
        sp.add_argument("--out", help="output file or directory (default stdout)")
        if fmt:
            sp.add_argument("--format", choices=("csv", "json"), default="json")

    def pop_args(sp):
        sp.add_argument("--nodes", help="nodes CSV (unit,stratum,...)")
        sp.add_argument("--edges", help="edges CSV (src,dst)")
        sp.add_argument("--symmetrize", action="store_true", help="add the reverse of every link")

    sp = sub.add_parser("validate", help="check population files")
    common(sp, fmt=False)
    pop_args(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("synth", help="generate a synthetic population (default: the 595-unit surrogate)")
    common(sp, fmt=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("sample", help="draw a link-tracing sample")
    common(sp, fmt=False)
    pop_args(sp)
    sp.add_argument("--reduced", action="store_true", help="write reduced data (no wave labels)")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("estimate", help="preliminary estimates from an observed sample")
    common(sp)
    sp.add_argument("--sample", help="observed sample JSON")
    sp.add_argument("--stabilized", action="store_true")
    sp.add_argument("--proportion", type=int, action="append", metavar="K", help="stratum share to estimate")
    sp.add_argument("--mean", action="append", metavar="NAME", help="response whose mean to estimate")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("rb", help="Rao-Blackwellized estimate")
    common(sp)
    sp.add_argument("--sample", help="observed sample JSON")
    sp.add_argument("--stabilized", action="store_true")
    sp.add_argument("--quantity", default="size", help="size, proportion:K or mean:NAME")
    sp.add_argument("--method", choices=("mcmc", "exact"), default="mcmc")
    sp.add_argument("--chain-length", type=int, default=2000)
    sp.add_argument("--chains", type=int, choices=(1, 2), default=2)
    sp.add_argument("--search-length", type=int, default=2000)
    sp.add_argument("--gammas", type=float, nargs="+")
    sp.add_argument("--swap-prob", type=float, default=0.0,
                    help="probability of a same-stratum role swap instead of a nominator interchange")
    sp.add_argument("--cap", type=int, default=10**6, help="enumeration limit for --method exact")
    sp.add_argument("--trace-dir", help="write chain and seed-search traces as CSV here")
    sp.set_defaults(func=cmd_rb)

    sp = sub.add_parser("simulate", help="run a replication study")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.code, type(exc).__name__, str(exc))
    except EstimationError as exc:
        return _fail(EXIT_ESTIMATOR, type(exc).__name__, str(exc))
    except ValueError as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, str(exc))
    return EXIT_OK


def _fail(code, kind, message) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
