#!/usr/bin/env python
"""main.py: command-line front end for the force-aware imitation pipeline.

Usage:
    uv run python main.py collect --task fragile_pick --n 30 --seed 7
    uv run python main.py train --variant farm --toy
    uv run python main.py rollout --n 20
    uv run python main.py eval --compare farm,force_aware,tactile_aware,vision_only

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import sys

from dotenv import load_dotenv

load_dotenv()

import core.commands  # noqa: E402,F401  registers the commands
from core.command_registry import EXIT_USAGE, add_subparsers, dispatch  # noqa: E402
from core.config import PROFILES, config_dict, load_run_config  # noqa: E402
from core.errors import UsageError  # noqa: E402

# ANSI color codes
RESET = "\033[0m"
BOLD = "\033[1m"
DIM = "\033[2m"
GREEN = "\033[32m"
YELLOW = "\033[33m"
CYAN = "\033[36m"
RED = "\033[31m"


def global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run options")
    g.add_argument("--config", default=None, help="dotenv run config file")
    g.add_argument("--seed", type=int, default=None, help="master seed")
    g.add_argument("--out", dest="out_dir", default=None, help="output directory")
    g.add_argument("--toy", action="store_true", help="shorthand for --profile toy")
    g.add_argument("--profile", choices=sorted(PROFILES), default=None)
    g.add_argument("--workers", type=int, default=None, help="rollout worker processes")
    g.add_argument("--task", default=None, help="heavy_transport | fragile_pick | tighten")
    g.add_argument("--variant", default=None, help="farm | force_aware | tactile_aware | vision_only")
    g.add_argument("--n", type=int, default=None, help="demos to collect / rollouts to run")
    g.add_argument("--json", action="store_true", help="print the raw result as JSON")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="farm",
        description="Force-aware imitation learning on a simulated parallel-jaw gripper.",
    )
    add_subparsers(parser, [global_flags()])
    return parser


def overrides_from_args(args) -> dict:
    if args.toy and args.profile not in (None, "toy"):
        raise UsageError("--toy conflicts with --profile " + args.profile)
    overrides = {
        "task": args.task,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "profile": "toy" if args.toy else args.profile,
        "workers": args.workers,
        "variant": args.variant,
    }
    if args.n is not None:
        if args.n < 1:
            raise UsageError("--n must be >= 1")
        key = "n_demos" if args.command == "collect" else "n_rollouts"
        overrides[key] = args.n
    return overrides


def format_result_summary(name: str, result: dict) -> str:
    """One-line summary of a command result."""
    if not result.get("ok", True):
        return f"{RED}ERROR: {result.get('error', 'unknown')}{RESET}"

    parts = []
    if name == "collect":
        parts.append(f"{result['n_demos']} demos")
        parts.append(f"{result['failures']} expert failure(s)")
        parts.append(result["dataset"])
    elif name == "train":
        parts.append(f"{result['iterations']} iters")
        parts.append(f"final loss={result['final_loss']:.4f}")
        parts.append(result["checkpoint"])
    elif name == "rollout":
        s = result["summary"]
        parts.append(f"{s['variant']} on {s['task']}")
        parts.append(f"success={s['successes']}/{s['n']}")
        parts.append(f"95% CI [{s['ci_low']:.2f}, {s['ci_high']:.2f}]")
    elif name == "eval":
        parts.append(f"{len(result['rows'])} row(s)")
        parts.append(result["table"])
    elif name == "plot":
        parts.append(f"{len(result['figures'])} figure(s)")
    return "  ".join(parts) if parts else "ok"


def print_details(name: str, result: dict) -> None:
    if name == "collect":
        for d in result["demos"]:
            mark = f"{GREEN}ok{RESET}" if d["success"] else f"{RED}{d['failure_reason']}{RESET}"
            print(f"  {DIM}seed {d['seed']:>7}{RESET}  {d['frames']:>4} frames  {mark}")
    elif name == "eval":
        for r in result["rows"]:
            w1 = "-" if r["w1_to_demos"] in (None, "") else f"{float(r['w1_to_demos']):.4f} N"
            print(f"  {CYAN}{r['task']:<16}{RESET} {r['variant']:<14} "
                  f"{100 * float(r['success_rate']):5.1f}%  W1={w1}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config, overrides_from_args(args))
    except UsageError as e:
        print(f"{RED}Error: {e}{RESET}", file=sys.stderr)
        return EXIT_USAGE

    print(f"{YELLOW}  > {args.command}(task={cfg.task.value}, variant={cfg.policy.variant.value}, "
          f"profile={cfg.profile}, seed={cfg.seed}, out={cfg.out}){RESET}")
    result = dispatch(args.command, cfg, args)

    if args.json:
        print(json.dumps({**result, "config": config_dict(cfg)}, indent=2, default=str))
    else:
        ok = result.get("ok", False)
        symbol = f"{GREEN}OK{RESET}" if ok else f"{RED}FAIL{RESET}"
        print(f"  {symbol} {BOLD}{args.command}{RESET}  {DIM}{format_result_summary(args.command, result)}{RESET}")
        if ok:
            print_details(args.command, result)
    return int(result["exit_code"])


if __name__ == "__main__":
    sys.exit(main())
