"""``amskv`` command-line harness.

Exit codes: 0 success, 1 configuration error, 2 runtime invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import __version__
from ..errors import ConfigError, InvariantViolation
from ..schedule import total_tokens
from ..toymodel import GenerationTrace
from .config import FORMATS, load_config
from .presets import PRESETS
from .report import write_report
from .runner import report_from_trace, run_analyze, run_compare, run_experiment, run_timeline, validate_trace

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _common(p, config=True):
    if config:
        p.add_argument("--config", required=True, type=Path, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the config's seed list with this seed")
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    p.add_argument("--format", choices=FORMATS, help="table format (default: first config format)")


def build_parser():
    parser = argparse.ArgumentParser(prog="amskv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"amskv {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="generate under every configured policy and seed"))

    p = sub.add_parser("compare", help="AMS-KV vs sliding/sink windows at a matched token budget")
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--budget", type=int, help="equal budget in tokens")
    g.add_argument("--budget-fraction", type=float, help="equal budget as a fraction of the full cache")

    p = sub.add_parser("analyze", help="attention density and inter-scale similarity tables")
    _common(p)
    p.add_argument("--target-scale", type=int, help="generating scale to analyse (default: last)")

    _common(sub.add_parser("timeline", help="per-step cached tokens and bytes per policy"))

    p = sub.add_parser("validate-trace", help="check a stored trace and optionally regenerate its report")
    p.add_argument("--trace", required=True, type=Path, nargs="+")
    _common(p, config=False)

    p = sub.add_parser("preset", help="write a preset experiment config")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--out", type=Path, help="file to write (default: stdout)")
    return parser


def _out(args, cfg):
    return args.out if args.out is not None else Path(cfg.output_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


def _dispatch(args) -> int:
    if args.command == "preset":
        text = json.dumps(PRESETS[args.name](), indent=2) + "\n"
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK

    if args.command == "validate-trace":
        status = EXIT_OK
        for path in args.trace:
            try:
                trace = GenerationTrace.from_jsonl(path.read_text())
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"{path}: unreadable trace ({exc})") from None
            problems = validate_trace(trace)
            for p in problems:
                print(f"{path}: {p}", file=sys.stderr)
            if problems:
                status = EXIT_INVARIANT
            else:
                print(f"{path}: ok ({len(trace.steps)} steps)")
            if args.out is not None:
                label = trace.meta.get("label", trace.policy.kind)
                write_report(args.out, label, [report_from_trace(trace)], args.format or "csv")
        return status

    cfg = load_config(args.config, args.seed)
    out = _out(args, cfg)
    if args.command == "run":
        reports = run_experiment(cfg, out, args.format)
        print(f"wrote {sum(len(r) for r in reports.values())} runs for {len(reports)} policies to {out}")
    elif args.command == "compare":
        budget = args.budget
        if budget is None:
            budget = int(args.budget_fraction * total_tokens(cfg.schedule))
        rows = run_compare(cfg, budget, out, args.format)
        for r in rows:
            print(f"{r['policy']:>16} seed {r['seed']}: realized {r['realized_budget']} / {budget} tokens, "
                  f"final rel. error {r['fidelity_final_rel_error']:.4g}")
    elif args.command == "analyze":
        density, sims = run_analyze(cfg, args.target_scale, out, args.format)
        print(f"wrote {len(density)} density rows and {len(sims)} similarity rows to {out}")
    elif args.command == "timeline":
        rows = run_timeline(cfg, out, args.format)
        print(f"wrote {len(rows)} timeline rows to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
