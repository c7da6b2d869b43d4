"""
Command-line entry point: one subcommand per experiment.

Exit codes: 0 success, 1 internal error, 2 invalid configuration,
3 a self-check threshold failed.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from config.settings import settings
from models.data_models import CONFIG_MODELS
from tasep.errors import ConfigurationError
from utils.file_handler import ArtifactHandler
from workflow.experiments import ExperimentWorkflow

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_SELF_CHECK = 3


def setup_logging(level: Optional[str] = None):
    fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    level = (level or settings.LOG_LEVEL).upper()
    try:
        settings.LOG_DIR.mkdir(parents=True, exist_ok=True)
        handlers = [logging.FileHandler(settings.LOG_DIR / "tasep_ldp.log"), logging.StreamHandler()]
    except (PermissionError, OSError):
        # Fallback to console-only logging if the log directory is not writable
        handlers = [logging.StreamHandler()]
    logging.basicConfig(level=level, format=fmt, handlers=handlers, force=True)
    logging.getLogger("numba").setLevel(logging.WARNING)


logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tasep-ldp", description="Speed-N^2 large deviation experiments for TASEP")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in CONFIG_MODELS:
        cmd = sub.add_parser(name, help=f"run the {name} experiment")
        cmd.add_argument("--config", type=Path, help="JSON config document")
        cmd.add_argument("--out", type=Path, help="output directory")
        cmd.add_argument("--seed", type=int, help="global seed")
        cmd.add_argument("--replicas", type=int, help="number of replicas")
        cmd.add_argument("--threads", type=int, help="worker processes (default TASEP_LDP_THREADS)")
    return parser


def load_defaults(name: str) -> Dict[str, Any]:
    path = settings.DEFAULTS_FILE
    if not path.is_file():
        return {}
    return dict(json.loads(path.read_text(encoding="utf-8")).get(name, {}))


def resolve_config(name: str, args: argparse.Namespace):
    """defaults < config file < command-line flags, validated against the subcommand schema."""
    doc = load_defaults(name)
    if args.config is not None:
        validation = ArtifactHandler().validate_config_file(args.config)
        if not validation["valid"]:
            raise ConfigurationError(validation["error"])
        doc.update(validation["document"])
    for flag, key in (("seed", "seed"), ("replicas", "replicas"), ("out", "out_dir")):
        value = getattr(args, flag)
        if value is not None:
            doc[key] = str(value) if key == "out_dir" else value
    return CONFIG_MODELS[name].model_validate(doc)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()

    try:
        settings.validate_config()
        config = resolve_config(args.command, args)
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be a positive integer")
    except (ValidationError, json.JSONDecodeError, ConfigurationError, ValueError) as e:
        logger.error(f"Invalid configuration for {args.command}: {e}")
        return EXIT_CONFIG

    workflow = ExperimentWorkflow(threads=args.threads)
    logger.info(f"Starting {args.command} ({workflow.run_id}, seed {config.seed}, {workflow.threads} worker(s))")
    try:
        code, summary = workflow.run(args.command, config)
    except (ValidationError, json.JSONDecodeError, ConfigurationError) as e:
        logger.error(f"Invalid configuration for {args.command}: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_INTERNAL
    if code == EXIT_SELF_CHECK:
        failed = [k for k, ok in summary.get("checks", {}).items() if not ok]
        logger.warning(f"{args.command} self-checks failed: {', '.join(failed)}")
    else:
        logger.info(f"{args.command} finished")
    return code


if __name__ == "__main__":
    sys.exit(main())
