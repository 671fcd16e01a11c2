"""Command-line entry point.

`anonbt run --config run.yaml` executes the whole pipeline; the stage
subcommands re-run a single step against the intermediates already in the
output directory. Exit codes: 0 on success, 2 for configuration problems,
3 when a stage fails after configuration was accepted.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODE_SYNTHETIC, load_run_config
from .errors import ConfigError, StageError
from .pipeline import STAGES, SYNTH_STAGE, run_pipeline, run_stage

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        required=True,
        metavar="PATH",
        help="YAML run configuration file",
    )
    parser.add_argument(
        "--offline",
        action="store_true",
        default=None,
        help="score strictly from the prompt cache, never a live backend",
    )
    parser.add_argument(
        "--seed",
        type=int,
        metavar="N",
        help="override the synthetic world seed",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="log stage progress to stderr",
    )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anonbt",
        description=(
            "Paired original-vs-anonymized news-sentiment backtests with a"
            " statistical comparison suite."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser(
        "run", help="execute every pipeline stage in order"
    )
    _add_common(run)
    run.add_argument(
        "--stage",
        metavar="NAME",
        choices=(SYNTH_STAGE,) + STAGES,
        help="run only this stage against existing intermediates",
    )

    stage_help = {
        "anonymize": "replace company identifiers in every headline",
        "score": "score original and replaced headline variants",
        "backtest": "aggregate signals and compute daily portfolio returns",
        "stats": "run the statistical comparison suite",
        "report": "render tables, the chart, and the manifest",
        "synth": "generate a seeded synthetic world",
    }
    for name, text in stage_help.items():
        stage_parser = sub.add_parser(name, help=text)
        _add_common(stage_parser)
    return parser


# The backtest subcommand also refreshes the signal file so it stays
# runnable directly after scoring.
_SUBCOMMAND_STAGES = {
    "anonymize": ("anonymize",),
    "score": ("score",),
    "backtest": ("align", "backtest"),
    "stats": ("stats",),
    "report": ("report",),
    "synth": (SYNTH_STAGE,),
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_run_config(
            args.config, offline=args.offline, seed=args.seed
        )
        if args.command == "synth" and config.mode != MODE_SYNTHETIC:
            raise ConfigError("the synth subcommand requires mode: synthetic")
        if args.command == "run":
            if args.stage:
                run_stage(config, args.stage)
            else:
                run_pipeline(config)
        else:
            for stage in _SUBCOMMAND_STAGES[args.command]:
                run_stage(config, stage)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
