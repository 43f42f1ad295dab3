"""
kgfuse command line
Entry point wiring data generation, training, evaluation, ablation and fusion
comparisons, knowledge-source sweeps and gradient verification
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv()

from pydantic import ValidationError

from kgfuse.core.experiment_service import ExperimentService
from kgfuse.models.config import RunConfig
from kgfuse.models.errors import ConfigurationError, KGFuseError, NumericError

logger = logging.getLogger("kgfuse")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

COMMANDS = ["generate", "train", "eval", "ablate", "compare", "sources", "gradcheck"]


def configure_logging() -> None:
    requested = os.getenv("KGFUSE_LOG", "info").strip().lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(requested, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if requested not in LOG_LEVELS:
        logger.warning("unknown KGFUSE_LOG=%r, using info", requested)


def apply_override(data: Dict[str, Any], assignment: str) -> None:
    """Apply one dotted-path KEY=VALUE override; VALUE is JSON, else a plain string"""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"--set expects KEY=VALUE, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw

    *parents, leaf = key.split(".")
    node = data
    for part in parents:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigurationError(f"--set {key}: {part!r} is not a section")
        node = child
    node[leaf] = value


def load_run_config(path: str, overrides: Optional[List[str]] = None) -> RunConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise FileNotFoundError(f"Config file not found: {config_path}")
    with open(config_path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config {config_path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {config_path} must be a JSON object")
    for assignment in overrides or []:
        apply_override(data, assignment)
    return RunConfig.model_validate(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgfuse",
        description="Knowledge-oriented graph fusion for multimodal claim verification",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument("--config", required=True, help="Run configuration (JSON)")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override a config field by dotted path, e.g. train.epochs=5",
        )
        sub.add_argument("--out", default=None, help="Output directory (default: runs/<run_name>)")
    return parser


def run_command(command: str, service: ExperimentService) -> int:
    renderer = service.renderer
    if command == "generate":
        counts = service.generate()
        for name, count in counts.items():
            print(f"{name}: {count} records -> {service.data_dir / (name + '.jsonl')}")
    elif command == "train":
        print(renderer.render_metrics_table(service.train()), end="")
    elif command == "eval":
        print(renderer.render_metrics_table(service.evaluate()), end="")
    elif command == "ablate":
        print(renderer.render_comparison_table(service.ablate()), end="")
    elif command == "compare":
        print(renderer.render_comparison_table(service.compare()), end="")
    elif command == "sources":
        print(renderer.render_comparison_table(service.sources()), end="")
    elif command == "gradcheck":
        reports = service.gradcheck()
        print(renderer.render_gradcheck_table(reports), end="")
        failed = [r for r in reports if not r.passed]
        if failed:
            details = "; ".join(f"{r.label}: {', '.join(r.failing_tensors)}" for r in failed)
            print(f"error: gradient check failed ({details})", file=sys.stderr)
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, args.overrides)
        out_dir = Path(args.out) if args.out else Path("runs") / config.run_name
        return run_command(args.command, ExperimentService(config, out_dir))
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KGFuseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
