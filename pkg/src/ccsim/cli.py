"""Command-line entry point: ``ccsim run|compare|replay|sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import SimConfig, apply_override, load_config, parse_value
from .harness import ExperimentPlan, relative_stability, run_experiment, summarize, write_outputs
from .ledger import Ledger, LedgerError


def _base_config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.nodes is not None:
        changes["node_count"] = args.nodes
    if args.blocks is not None:
        changes["duration_blocks"] = args.blocks
        if cfg.warmup_blocks >= args.blocks:
            changes["warmup_blocks"] = args.blocks * 3 // 5
    if args.literal_r:
        changes["literal_r_formula"] = True
    return cfg.replace(**changes).validate()


def _protocols(name: str) -> tuple:
    return ("contract", "bitswap") if name == "both" else (name,)


def _print_summary(results: dict) -> dict:
    summary = {}
    for p, res in results.items():
        s = summarize(res.tests)
        summary[p] = s
        if s["degenerate"]:
            print(f"{p}: no completed tests (degenerate run)")
        else:
            print(f"{p}: {s['complete']}/{s['tests']} tests complete, "
                  f"t100 mean {s['mean_t100']:.3f}s std {s['std_t100']:.3f}s "
                  f"[{s['min_t100']:.3f}, {s['max_t100']:.3f}]")
    return summary


def cmd_run(args) -> int:
    cfg = _base_config(args)
    plan = ExperimentPlan(cfg, _protocols(args.protocol))
    results = run_experiment(plan, parallel=args.parallel)
    write_outputs(args.out, plan, results)
    _print_summary(results)
    print(f"outputs written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _base_config(args)
    plan = ExperimentPlan(cfg, ("contract", "bitswap"))
    results = run_experiment(plan, parallel=args.parallel)
    write_outputs(args.out, plan, results)
    summary = _print_summary(results)
    gain = relative_stability(summary)
    c, b = summary["contract"], summary["bitswap"]
    if not c["degenerate"] and not b["degenerate"]:
        faster = c["mean_t100"] < b["mean_t100"]
        print(f"contract mean t100 lower: {faster}")
    if gain is not None:
        print(f"t100 stddev reduction vs baseline: {gain:.1%}")
    return 0


def cmd_replay(args) -> int:
    with open(args.trace, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        led = Ledger.replay(rows)
    except LedgerError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    active = led.active_contracts()
    print(f"replayed {len(rows)} contracts, {len(active)} active, "
          f"{len(led.triangles())} triangles")
    expected = {(int(r["a"]), int(r["b"])) for r in rows if not r.get("terminated_at")}
    got = {(c.a, c.b) for c in active}
    if expected != got:
        print("active set differs from the log", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    base = _base_config(args)
    out = Path(args.out)
    rows = []
    for raw in args.values:
        value = parse_value(raw)
        cfg = apply_override(base, args.param, value)
        plan = ExperimentPlan(cfg, _protocols(args.protocol))
        results = run_experiment(plan, parallel=args.parallel)
        sub = out / f"{args.param}={raw}"
        write_outputs(sub, plan, results)
        for p, res in results.items():
            s = summarize(res.tests)
            rows.append({"value": raw, "protocol": p, **s})
            print(f"{args.param}={raw} {p}: mean {s['mean_t100']} std {s['std_t100']}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(rows, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--nodes", type=int)
    common.add_argument("--blocks", type=int, help="run length in block intervals")
    common.add_argument("--protocol", choices=["contract", "bitswap", "both"], default="both")
    common.add_argument("--out", default="out")
    common.add_argument("--literal-r", action="store_true",
                        help="use r = (LT - now)/10 in the acceptance probability")
    common.add_argument("--parallel", action="store_true",
                        help="run the two networks in separate processes")

    p = argparse.ArgumentParser(prog="ccsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="full experiment").set_defaults(fn=cmd_run)
    sub.add_parser("compare", parents=[common],
                   help="mirrored contract vs baseline comparison").set_defaults(fn=cmd_compare)
    r = sub.add_parser("replay", help="rebuild the ledger from a contracts.csv log")
    r.add_argument("--trace", required=True)
    r.set_defaults(fn=cmd_replay)
    s = sub.add_parser("sweep", parents=[common], help="grid over one config key")
    s.add_argument("--param", required=True, help="config key, e.g. max_peers or rl.alpha")
    s.add_argument("values", nargs="+")
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
