"""Command-line entry point: ``degflow {run,sweep,verify,print-defaults}``."""

import argparse
import copy
import logging
import sys
from pathlib import Path

from . import parallel
from .config import DEFAULTS_TEXT, from_dict, load_config, shipped_scenarios
from .errors import ConfigError, DegflowError
from .io import write_wide_csv
from .runner import (
    EXIT_CONFIG,
    EXIT_HYPOTHESIS,
    EXIT_SOLVER,
    HYPOTHESIS_ERRORS,
    SOLVER_ERRORS,
    run_scenario,
    verify_scenario,
)

log = logging.getLogger("degflow")

SWEEP_PARAMS = ("eps0", "lambda", "A", "N", "K")


def _common(p):
    p.add_argument("--config", required=True, help="scenario file, or the name of a shipped scenario")
    p.add_argument("--out", default=None, help="output directory (default: out/<scenario>)")
    p.add_argument("--threads", type=int, default=None, help="worker count (fallback: DEGFLOW_THREADS)")
    p.add_argument("--seed", type=int, default=0, help="mollifier jitter seed (0: no jitter)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSVs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="degflow", description="Weak Kahler-Ricci flow simulator and estimate harness.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="build, flow and check one scenario")
    _common(p)
    p = sub.add_parser("sweep", help="rerun a scenario over parameter values; writes a wide CSV")
    _common(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p = sub.add_parser("verify", help="rerun checks on trajectories stored by an earlier run")
    _common(p)
    p = sub.add_parser("print-defaults", help="print every default setting")
    p.add_argument("--list", action="store_true", help="list shipped scenarios instead")
    return parser


def _out_dir(args, cfg):
    return Path(args.out) if args.out else Path("out") / cfg.name


def _report(summary):
    for c in summary["checks"]:
        print(f"{c['status']:<10} {c['name']:<24} constant={c['constant']:.6g}  {c['message']}")
    print(f"exit code {summary['exit_code']}")


def apply_param(data, param, value):
    d = copy.deepcopy(data)
    if param == "eps0":
        d["ladder"]["eps0"] = float(value)
    elif param == "N":
        d["grid"]["N"] = int(value)
    elif param == "K":
        d["flow"]["K"] = int(value)
    elif param == "lambda":
        for w in d.get("weights", {}).values():
            w["lambda"] = float(value)
    elif param == "A":
        for chk in d.get("checks", []):
            if chk["kind"] in ("deg_upper", "lower"):
                chk["A"] = float(value)
    return d


def cmd_run(args):
    cfg = load_config(args.config)
    code, summary, _ = run_scenario(cfg, threads=args.threads, seed=args.seed, out_dir=_out_dir(args, cfg),
                                    figures=args.figures)
    _report(summary)
    return code


def cmd_sweep(args):
    base = load_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    names, table, worst = [], [], 0
    for val in values:
        cfg = from_dict(apply_param(base.data, args.param, val), base.base_dir)
        cfg.text = base.text
        code, summary, results = run_scenario(cfg, threads=args.threads, seed=args.seed)
        worst = max(worst, code)
        row = {"value": float(val), "exit_code": code}
        for r in results:
            row[f"{r['name']}:constant"] = r["constant"]
            row[f"{r['name']}:passed"] = r["status"] == "passed"
            rep = r["report"]
            if rep is not None and "A" in rep.details:
                row[f"{r['name']}:A"] = rep.details["A"]
        for k in row:
            if k not in names:
                names.append(k)
        table.append(row)
        print(f"{args.param}={val}: exit {code}")
    out = _out_dir(args, base)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{args.param}.csv"
    write_wide_csv(path, [args.param if n == "value" else n for n in names],
                   [[row.get(n, "") for n in names] for row in table])
    print(f"wrote {path}")
    return worst


def cmd_verify(args):
    cfg = load_config(args.config)
    code, results = verify_scenario(cfg, _out_dir(args, cfg), threads=args.threads)
    for r in results:
        print(f"{r['status']:<10} {r['name']:<24} constant={r['constant']:.6g}")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "print-defaults":
        if args.list:
            print("\n".join(shipped_scenarios()))
        else:
            sys.stdout.write(DEFAULTS_TEXT)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    parallel.set_threads(args.threads)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_verify(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HYPOTHESIS_ERRORS as exc:
        print(f"hypothesis not satisfied: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except SOLVER_ERRORS as exc:
        rung = getattr(exc, "rung", None)
        print(f"solver failure{'' if rung is None else f' (rung {rung})'}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DegflowError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    finally:
        parallel.set_threads(None)


if __name__ == "__main__":
    sys.exit(main())
