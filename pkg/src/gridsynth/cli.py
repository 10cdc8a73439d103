"""Command-line entry point: ``gridsynth <command> [options]``.

Stage commands share one working directory (``--out``) so they can be run
one at a time::

    gridsynth --config run.ini ingest
    gridsynth --config run.ini fit-loads
    gridsynth --config run.ini sample-loads --year 2016 --replica 1
    gridsynth --config run.ini dispatch --year 2016 --replica 1
    gridsynth --config run.ini flows --year 2016 --replica 1
    gridsynth validate out/

``generate`` runs all of them and publishes the directory atomically.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .errors import GridSynthError, InputError

logger = logging.getLogger("gridsynth")


def _globals(suppress: bool) -> argparse.ArgumentParser:
    # accepted before or after the subcommand; the subcommand copy must not reset them
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI run configuration", **kw)
    p.add_argument("--seed", type=int, help="override the configured seed", **kw)
    p.add_argument("--out", type=Path, help="override the output/working directory", **kw)
    p.add_argument("-v", "--verbose", action="count", **(kw or {"default": 0}))
    return p


def _parser() -> argparse.ArgumentParser:
    common = _globals(suppress=True)
    ap = argparse.ArgumentParser(prog="gridsynth", description=__doc__.splitlines()[0], parents=[_globals(False)])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="clean histories, write network and canonical years")
    sub.add_parser("fit-loads", parents=[common], help="fit and tune one load ensemble per country")
    for name, text in (
        ("sample-loads", "draw a load table"),
        ("dispatch", "solve the dispatch for a load table"),
        ("flows", "compute the line table"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--year", type=int, required=True)
        p.add_argument("--replica", type=int, default=1)
    sub.add_parser("generate", parents=[common], help="run every stage, publish atomically")
    p = sub.add_parser("validate", parents=[common], help="check a generated directory, write summaries")
    p.add_argument("directory", type=Path, nargs="?")
    p.add_argument("--history", type=Path, help="directory with generation/<CC>_<type>.csv aggregates")
    p.add_argument("--rho", type=float, help="target mean Pearson coefficient")
    p = sub.add_parser("demo-inputs", parents=[common], help="write a small self-contained input set")
    p.add_argument("directory", type=Path)
    p.add_argument("--years", type=int, nargs="+", default=[2016])
    p.add_argument("--replicas", type=int, default=1)
    return ap


def _config(args) -> pipeline.PipelineConfig:
    if args.config is None:
        raise InputError(f"{args.command} needs --config")
    return pipeline.load_config(args.config, {"seed": args.seed, "output": args.out})


def _year(cfg: pipeline.PipelineConfig, year: int) -> None:
    if year not in cfg.years:
        raise InputError(f"year {year} is not among the configured years {list(cfg.years)}")


def run(args) -> int:
    cmd = args.command
    if cmd == "demo-inputs":
        from .fixtures import write_demo_inputs

        path = write_demo_inputs(args.directory, years=tuple(args.years), replicas=args.replicas, seed=args.seed or 1)
        print(path)
        return 0
    if cmd == "validate":
        directory = args.directory or (_config(args).output if args.config else None)
        if directory is None:
            raise InputError("validate needs a directory or --config")
        report = pipeline.run_validate(directory, args.history, args.rho)
        sys.stdout.write(report.as_text())
        pipeline.require_valid(report)
        return 0

    cfg = _config(args)
    if cmd == "generate":
        print(pipeline.run_generate(cfg))
        return 0

    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    with pipeline.output_lock(out):
        if cmd == "ingest":
            pipeline.stage_ingest(cfg, out)
        elif cmd == "fit-loads":
            pipeline.stage_fit(cfg, out)
        else:
            _year(cfg, args.year)
            if cmd == "sample-loads":
                pipeline.stage_sample(cfg, out, args.year, args.replica)
            elif cmd == "dispatch":
                pipeline.stage_dispatch(cfg, out, args.year, args.replica)
            else:
                pipeline.stage_flows(out, args.year, args.replica)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except GridSynthError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
