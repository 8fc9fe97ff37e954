"""Command-line surface: `gpmap run | validate | diagnose | dump-packets | presets`.

Exit codes: 0 success, 2 config error, 3 runtime error.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

import pandas as pd

from gpmap_mcp.architect.config import OPTIMIZERS, PREDICTORS
from gpmap_mcp.observer import runner

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _exit_code(result: Dict[str, Any]) -> int:
    if result.get("success"):
        return EXIT_OK
    return EXIT_CONFIG if result.get("error_kind") == "config" else EXIT_RUNTIME


def _report(result: Dict[str, Any]) -> int:
    """Print the result minus its captured logs (those already went to stderr)."""
    payload = {k: v for k, v in result.items() if k not in ("logs", "log_lines_dropped")}
    print(json.dumps(payload, indent=2, default=str))
    if not result.get("success"):
        for line in result.get("diagnostics") or [result.get("error", "")]:
            LOGGER.error("%s", line)
    return _exit_code(result)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpmap", description="Decentralized GP field-mapping simulator.")
    parser.add_argument("--verbose", "-v", action="store_true", help="DEBUG-level logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its output directory")
    run.add_argument("config", help="scenario TOML path or preset name")
    run.add_argument("--out", help="output directory (default: .gpmap_mcp_results/<name>_seed<seed>)")
    run.add_argument("--seed", type=int)
    run.add_argument("--steps", type=int)
    run.add_argument("--baseline", action=argparse.BooleanOptionalAction, default=None,
                     help="also run the self-only baseline")
    run.add_argument("--optimizer", choices=OPTIMIZERS)
    run.add_argument("--predictor", choices=PREDICTORS)

    validate = sub.add_parser("validate", help="parse and validate a scenario")
    validate.add_argument("config")

    diagnose = sub.add_parser("diagnose", help="static smell tests on a scenario")
    diagnose.add_argument("config")

    dump = sub.add_parser("dump-packets", help="print a run's packet log as CSV")
    dump.add_argument("run_dir")
    dump.add_argument("--limit", type=int)

    sub.add_parser("presets", help="list bundled scenario presets")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format=runner.LOG_FORMAT,
    )

    if args.command == "run":
        result = runner.run_scenario(
            args.config,
            out_dir=args.out,
            seed=args.seed,
            baseline=args.baseline,
            optimizer=args.optimizer,
            predictor=args.predictor,
            steps=args.steps,
            verbose=args.verbose,
        )
        return _report(result)

    if args.command == "validate":
        return _report(runner.validate_scenario(args.config, verbose=args.verbose))

    if args.command == "diagnose":
        return _report(runner.diagnose_scenario(args.config, verbose=args.verbose))

    if args.command == "dump-packets":
        result = runner.dump_packets(args.run_dir, limit=args.limit)
        if not result["success"]:
            return _report(result)
        pd.DataFrame(result["packets"]).to_csv(sys.stdout, index=False)
        return EXIT_OK

    for name in runner.list_presets()["presets"]:
        print(name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
