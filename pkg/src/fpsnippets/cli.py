"""Command line entry point: ``fpsnippets run <stage>|all`` and helpers."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .errors import FPSnippetsError
from .pipeline import DEFAULT_DISTANCE_THRESHOLDS, STAGES, Pipeline, PipelineConfig

logger = logging.getLogger("fpsnippets")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_config_args(p: argparse.ArgumentParser) -> None:
    d = PipelineConfig()
    p.add_argument("--config", help="JSON config file; command-line flags override its values")
    p.add_argument("--input", help="call log (JSONL or CSV)")
    p.add_argument("--format", choices=("jsonl", "csv"), help="input format (default: from extension)")
    p.add_argument("--keep-www", dest="strip_www", action="store_false", default=None,
                   help="do not strip a leading www. from script domains")
    p.add_argument("--inline", choices=("skip", "bucket"), help=f"records without script_url (default {d.inline})")
    p.add_argument("--metric", help=f"distance metric (default {d.metric})")
    p.add_argument("--distance-thresholds", type=_floats,
                   help="candidate distance thresholds (default " + ",".join(map(str, DEFAULT_DISTANCE_THRESHOLDS)) + ")")
    p.add_argument("--prune-threshold", type=float, help=f"label pruning share (default {d.prune_threshold})")
    p.add_argument("--min-rank", type=int, help=f"lowest rank used for threshold selection (default {d.min_rank})")
    p.add_argument("--labels", help="heuristic | keyword:<word> | file:<path> (default heuristic)")
    p.add_argument("--reference", help="heuristic | labels | file:<path> (default heuristic)")
    p.add_argument("--heuristic-config", help="JSON table of heuristic symbols and limits")
    p.add_argument("--score-thresholds", type=_ints,
                   help="score thresholds for the characterization table (default: score at best F1)")
    p.add_argument("--review-n", type=int, help=f"review sample size (default {d.review_n})")
    p.add_argument("--review-threshold", type=int, help="score threshold to sample reviews at")
    p.add_argument("--user-agent", help="crawl user agent used by the modernizr rule")
    p.add_argument("--script-corpus", help="directory with index.tsv and script texts")
    p.add_argument("--delta-metrics", type=lambda s: [m for m in s.split(",") if m],
                   help="metrics compared by metric_delta")
    p.add_argument("--delta-bins", type=int)
    p.add_argument("--block-rows", type=int)
    p.add_argument("--block-cols", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default {d.out})")


def build_config(args: argparse.Namespace) -> PipelineConfig:
    base = PipelineConfig.load(args.config).to_json() if args.config else {}
    names = PipelineConfig.__dataclass_fields__
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    return PipelineConfig.from_json(base)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpsnippets",
                                     description="Score scripts by similarity of their API-call snippets "
                                                 "to labeled fingerprinting snippets.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one stage, or all of them in order")
    run.add_argument("stage", choices=STAGES + ("all",))
    run.add_argument("--force", action="store_true", help="rerun even if outputs are up to date")
    _add_config_args(run)

    status = sub.add_parser("status", help="show which stages are up to date")
    _add_config_args(status)

    fixture = sub.add_parser("fixture", help="write the synthetic planted-motif fixture")
    fixture.add_argument("directory")
    fixture.add_argument("--seed", type=int, default=7)
    return parser


def _setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity < 0 else logging.INFO if verbosity == 0 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        if args.command == "fixture":
            from .synthetic import generate_corpus, write_fixture

            write_fixture(args.directory, generate_corpus(seed=args.seed))
            print(args.directory)
            return 0
        config = build_config(args)
        pipeline = Pipeline(config)
        if args.command == "status":
            for stage in STAGES:
                recorded = pipeline.recorded(stage)
                state = "missing" if recorded is None else "current" if pipeline.is_current(stage) else "stale"
                print(f"{stage}\t{state}")
            return 0
        stages = STAGES if args.stage == "all" else (args.stage,)
        started = time.perf_counter()
        for stage in stages:
            result = pipeline.run(stage, force=args.force)
            print(f"{stage}\t{result}")
        logger.info("finished in %.2fs", time.perf_counter() - started)
        return 0
    except FPSnippetsError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except Exception:  # noqa: BLE001
        logger.exception("internal error")
        return 3


if __name__ == "__main__":
    sys.exit(main())
