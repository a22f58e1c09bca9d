"""Command-line entry point: generate, localize, sweep, continuous, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io
from .bench import build_report, run_continuous, run_sweep
from .errors import GenerationFailed
from .scene import generate_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _run_flags(p):
    p.add_argument("--seed", type=int, default=None, help="run seed (overrides the config)")
    p.add_argument("--config", default=None, help="flat JSON config file")
    p.add_argument("--out", required=True, help="output file")


def build_parser():
    parser = _Parser(prog="adaptloc", description="Synthetic visual-localization benchmark.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic scene file")
    _run_flags(p)

    p = sub.add_parser("localize", help="localize every query of one scene")
    _run_flags(p)
    p.add_argument("--scene", default=None, help="scene file (generated from the config if omitted)")

    p = sub.add_parser("sweep", help="run methods over the sparsity grid")
    _run_flags(p)

    p = sub.add_parser("continuous", help="static vs continuous database updates")
    _run_flags(p)
    p.add_argument("--mode", choices=("Static", "Continuous", "both"), default=None)

    p = sub.add_parser("report", help="aggregate result files into a recall table")
    p.add_argument("results", nargs="+", help="per-query result CSV files")
    p.add_argument("--out", default=None, help="report CSV (stdout table only if omitted)")
    return parser


def _write(records, out, config):
    io.write_results(records, out)
    Path(str(out) + ".config.json").write_text(json.dumps(config, sort_keys=True, indent=1))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            records = []
            for path in args.results:
                records.extend(io.read_results(path))
            config = {}
            side = Path(args.results[0] + ".config.json")
            if side.exists():
                config = json.loads(side.read_text())
            report = build_report(records, config=config)
            print(io.format_report(report))
            if args.out:
                io.write_report(report, args.out)
            return EXIT_OK

        setup = io.BenchSetup(io.load_config(args.config), args.seed)
        if args.command == "generate":
            io.save_scene(generate_scene(setup.spec), args.out)
        elif args.command in ("localize", "sweep"):
            base = io.load_scene(args.scene) if getattr(args, "scene", None) else None
            cells = setup.cells() if args.command == "sweep" else setup.cells()[:1]
            report = run_sweep(
                setup.spec, cells, setup.methods, setup.estimator, setup.seed, setup.k,
                workers=setup.workers, record_timing=setup.record_timing,
                queries=setup.queries, base=base,
            )
            _write(report.records, args.out, report.config)
            print(io.format_report(report))
        elif args.command == "continuous":
            modes = ["Static", "Continuous"] if (args.mode or setup.mode) == "both" else [args.mode or setup.mode]
            records, config = [], {}
            for mode in modes:
                rep, _ = run_continuous(
                    setup.spec, setup.estimator, mode, setup.seed, setup.corruption, setup.sparsities[0],
                    setup.methods[0],
                    setup.k, record_timing=setup.record_timing, queries=setup.queries,
                )
                records.extend(rep.records)
                config[mode] = rep.config
            _write(records, args.out, config)
            print(io.format_report(build_report(records)))
        return EXIT_OK
    except (io.DataError, GenerationFailed, OSError) as exc:
        print(f"adaptloc: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
