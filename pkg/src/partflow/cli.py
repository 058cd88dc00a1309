"""Command line entry point: ``partflow <subcommand> ...``.

Exit status is 0 on success, 2 for invalid configuration or input files and
3 for numeric failures (solver breakdowns, non-finite updates).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .demand import (DEFAULT_WINDOW, PREDICTORS, DemandSeries, case_study_scenarios,
                     generate_series, read_trace, write_trace)
from .exact import SolverError, build_mlu_flow_lp, build_flow_lp, solve_objective
from .harness import (BASE_METHODS, ConfigError, ExperimentConfig, evaluate_series,
                      normalize, repair, report, score, solve_method)
from .objectives import OBJECTIVES
from .paths import build_catalog, load_catalog, save_catalog
from .policy import PolicyParams, TrainConfig, train, write_curve
from .topology import case_study_topology, largest_scc, load_topology, save_topology

log = logging.getLogger("partflow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def resolve_topology(source: str):
    if source == "case-study":
        return case_study_topology()
    return load_topology(source)


def _catalog(args, t):
    if getattr(args, "catalog", None):
        return load_catalog(args.catalog, t)
    return build_catalog(t, k=args.k)


def _series(args) -> DemandSeries:
    if not args.trace:
        raise ConfigError("trace", "a demand trace is required")
    return read_trace(args.trace, window=args.window)


def _config(args, **over) -> ExperimentConfig:
    fields = {f: getattr(args, f) for f in (
        "topology", "trace", "objective", "method", "predictor", "seed", "k", "window",
        "top_fraction", "pop_k", "gd_iterations", "policy", "output") if hasattr(args, f)}
    if getattr(args, "split", None):
        fields["split"] = tuple(args.split)
    fields.update(over)
    return ExperimentConfig(**fields)


# ------------------------------------------------------------------ commands

def cmd_gen_demand(args) -> int:
    t = resolve_topology(args.topology)
    if args.model == "case-study":
        rng = np.random.default_rng(args.seed)
        sc = case_study_scenarios()
        pick = rng.choice(len(sc), size=args.count, p=[p for _, p in sc])
        series = DemandSeries(np.stack([sc[i][0] for i in pick]), args.window)
    else:
        params = {"gravity": {"scale": args.scale},
                  "poisson": {"lam": args.lam, "decay": args.decay, "scale": args.scale},
                  "bimodal": {"p_high": args.p_high}}[args.model]
        series = generate_series(t, args.model, args.count, seed=args.seed,
                                 window=args.window, **params)
    write_trace(series, args.out)
    log.info("wrote %d matrices to %s", len(series), args.out)
    return EXIT_OK


def cmd_build_paths(args) -> int:
    t = resolve_topology(args.topology)
    if args.largest_scc:
        t, _ = largest_scc(t)
    if args.topology_out:
        save_topology(t, args.topology_out)
    cat = build_catalog(t, k=args.k)
    save_catalog(cat, args.out)
    log.info("%d pairs, %d paths -> %s", cat.num_pairs, cat.num_paths, args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _config(args)
    t = resolve_topology(cfg.topology)
    cat = _catalog(args, t)
    mats = _series(args).matrices
    step = args.step if args.step >= 0 else mats.shape[0] + args.step
    if not 0 <= step < mats.shape[0]:
        raise ConfigError("step", f"{args.step} is outside a trace of {mats.shape[0]} steps")
    d = mats[step]
    hist = mats[max(0, step - cfg.window):step]
    policy = PolicyParams.load(cfg.policy) if cfg.policy else None
    traces = []
    alloc, secs = solve_method(cfg, t, cat, d, hist, policy, step, gd_trace=traces)
    alloc = repair(alloc, cat)
    raw = score(cfg.objective, alloc, d, cat, t)
    oracle = solve_objective(cfg.objective, t, cat, d)[1]
    if args.lp_dump:
        lp = (build_mlu_flow_lp(t, cat, d)[0] if cfg.objective == "mlu"
              else build_flow_lp(t, cat, d, cfg.objective)[0])
        Path(args.lp_dump).write_text(lp.to_text())
    if args.gd_trace and traces:
        traces[0].to_csv(args.gd_trace)
    out = {"version": __version__, "config": cfg.as_dict(), "config_digest": cfg.digest,
           "instance_digest": cfg.instance_digest, "method": cfg.method,
           "objective": cfg.objective, "step": step, "raw": raw, "oracle": oracle,
           "normalized": normalize(raw, oracle), "solve_time": secs,
           "allocation": {"mode": alloc.mode, "values": [float(v) for v in alloc.values]}}
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if cfg.output:
        Path(cfg.output).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    if args.objective not in OBJECTIVES:
        raise ConfigError("objective", f"must be one of {OBJECTIVES}")
    t = resolve_topology(args.topology)
    cat = _catalog(args, t)
    series = _series(args)
    train_part, val_part, _ = series.split(tuple(args.split))
    if len(train_part) < args.window + 1:
        raise ConfigError("trace", f"training share has {len(train_part)} steps, "
                          f"need at least window+1 = {args.window + 1}")
    try:
        tcfg = TrainConfig(lr=args.lr, lr_decay=args.lr_decay, epochs=args.epochs,
                           batch=args.batch, n_samples=args.n_samples, sigma=args.sigma,
                           patience=args.patience, hidden=tuple(args.hidden),
                           window=args.window, seed=args.seed, mode=args.mode,
                           max_updates=args.max_updates)
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None
    val = val_part.matrices if len(val_part) > args.window else None
    params, curve = train(t, cat, train_part, args.objective, tcfg, validation=val)
    params.save(args.out)
    if args.curve:
        write_curve(curve, args.curve, params.digest)
    log.info("trained %s policy (%d parameters) -> %s",
             args.mode, params.num_parameters(), args.out)
    return EXIT_OK


def cmd_evaluate(args, scenario: bool = False) -> int:
    over = {"failures": args.failures, "alpha": args.alpha} if scenario else {}
    cfg = _config(args, **over)
    if not cfg.output:
        raise ConfigError("output", "an output directory is required")
    t = resolve_topology(cfg.topology)
    cat = _catalog(args, t)
    series = _series(args)
    result = evaluate_series(cfg, t, cat, series)
    jpath, _ = result.write(cfg.output, args.name)
    s = result.summary()
    print(f"{cfg.method} {cfg.objective}: normalized mean {s['normalized_mean']:.6g} "
          f"over {s['steps']} steps -> {jpath}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = report(args.inputs, allow_mixed=args.allow_mixed)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _add_instance(p, trace=True):
    p.add_argument("--topology", default="case-study",
                   help="edge-list file, or 'case-study' for the built-in four-node example")
    p.add_argument("--catalog", help="precomputed catalog file (default: build with --k)")
    p.add_argument("--k", type=int, default=4, help="paths per pair")
    if trace:
        p.add_argument("--trace", help="demand trace CSV")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--seed", type=int, default=0)


def _add_method(p):
    p.add_argument("--method", default="lp-f",
                   help=f"one of {', '.join(BASE_METHODS)}, optionally with a -pred suffix")
    p.add_argument("--objective", default="mlu", choices=OBJECTIVES)
    p.add_argument("--predictor", default="moving-average", choices=PREDICTORS)
    p.add_argument("--top-fraction", dest="top_fraction", type=float, default=0.1)
    p.add_argument("--pop-k", dest="pop_k", type=int, default=2)
    p.add_argument("--gd-iterations", dest="gd_iterations", type=int, default=1000)
    p.add_argument("--policy", help="trained policy file for pram / drl-mono")
    p.add_argument("--split", type=int, nargs=3, default=[7, 1, 2], metavar=("TRAIN", "VAL", "TEST"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="partflow", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demand", help="write a synthetic demand trace")
    _add_instance(p, trace=False)
    p.add_argument("--model", choices=("gravity", "poisson", "bimodal", "case-study"),
                   default="gravity")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--p-high", dest="p_high", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_demand)

    p = sub.add_parser("build-paths", help="compute the k-shortest-path catalog")
    p.add_argument("--topology", default="case-study")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--largest-scc", action="store_true",
                   help="restrict to the largest strongly connected component first")
    p.add_argument("--topology-out", help="also write the (possibly restricted) topology")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_paths)

    p = sub.add_parser("solve", help="run one method on one trace step")
    _add_instance(p)
    _add_method(p)
    p.add_argument("--step", type=int, default=-1, help="trace row (negative counts from the end)")
    p.add_argument("--lp-dump", help="write the exact LP in text form")
    p.add_argument("--gd-trace", help="write the gd iteration trace CSV")
    p.add_argument("--out", dest="output", help="JSON result path (default: stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a partitioned (or monolithic) policy")
    _add_instance(p)
    p.add_argument("--objective", default="mlu", choices=OBJECTIVES)
    p.add_argument("--mode", choices=("pram", "mono"), default="pram")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lr-decay", dest="lr_decay", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=8)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--hidden", type=int, nargs=2, default=[32, 32])
    p.add_argument("--max-updates", dest="max_updates", type=int)
    p.add_argument("--split", type=int, nargs=3, default=[7, 1, 2])
    p.add_argument("--out", required=True, help="policy file")
    p.add_argument("--curve", help="learning-curve CSV")
    p.set_defaults(func=cmd_train)

    for name, scen in (("evaluate", False), ("scenario", True)):
        p = sub.add_parser(name, help="replay the test split" + (
            " under link failures or demand fluctuation" if scen else ""))
        _add_instance(p)
        _add_method(p)
        if scen:
            p.add_argument("--failures", type=int, default=0)
            p.add_argument("--alpha", type=float, default=0.0)
        p.add_argument("--out", dest="output", required=True, help="output directory")
        p.add_argument("--name", help="file stem for the JSON/CSV outputs")
        p.set_defaults(func=(lambda a, s=scen: cmd_evaluate(a, s)))

    p = sub.add_parser("report", help="aggregate JSON run summaries into a table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--allow-mixed", action="store_true",
                   help="aggregate runs from different instances")
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SolverError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
