"""Main entry point for the application."""

import argparse
import json
import signal
import sys
import traceback
from pathlib import Path

from loguru import logger

import switchpoint.utils.enums as enums
from switchpoint import __version__, configuration, read_config
from switchpoint.models.exceptions import ConfigValidationError, SwitchPointError
from switchpoint.pipeline.config import RunConfig


def build_parser() -> argparse.ArgumentParser:
    """Subcommands follow the Task enum; their help text documents the output columns."""

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration (default: assets/config.ini or SWITCHPOINT_CONFIG).")
    common.add_argument("--out", type=Path, help="Output directory (overrides [OUTPUT] directory).")
    common.add_argument("--seed", type=int, help="Master seed (overrides [SEEDS] master).")
    common.add_argument("--threads", type=int, help="Worker processes; SWITCHPOINT_THREADS takes precedence.")
    common.add_argument("--format", choices=[f.value for f in enums.OutputFormat], help="Table output format.")
    common.add_argument("--verbose", action="store_true", help="Log DEBUG messages to stderr.")

    parser = argparse.ArgumentParser(
        prog="switchpoint",
        description="Optimal charge and discharge thresholds for power storage.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="task", required=True, metavar="TASK")

    for task in enums.Task:
        sub = commands.add_parser(task.name.lower(), parents=[common], help=task.value, description=task.value)
        if task in (enums.Task.ESTIMATE, enums.Task.BACKTEST):
            sub.add_argument("--input", type=Path, help="Excess-demand CSV (timestamp, MW).")
        if task is enums.Task.BACKTEST:
            sub.add_argument("--schedule", type=Path, help="Schedule JSON written by the schedule task.")

    return parser


def emit_error(error: Exception, unexpected: bool = False) -> None:
    """Write the structured error object to stderr."""
    payload = {
        "status": enums.StatusMessage.ERROR.name,
        "error": type(error).__name__,
        "message": enums.ErrorMessage.UNEXPECTED.value if unexpected else str(error),
        "details": {"exception": str(error)} if unexpected else getattr(error, "details", {}),
    }
    print(json.dumps(payload, default=str), file=sys.stderr)


def load_config(path: Path = None) -> RunConfig:
    if path is None:
        path = configuration.config_file
    if not Path(path).exists():
        raise ConfigValidationError([f"config file {path} not found"])
    return RunConfig.from_parser(read_config(path))


def run(argv=None) -> int:
    """Main entry point for the application. Returns the process exit code."""

    args = build_parser().parse_args(argv)

    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if args.verbose else "WARNING")

    def signal_handler(sig, frame):
        logger.warning(f"Received shutdown signal: {sig}")
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, signal_handler)

    # import after the logger is configured.
    from switchpoint.workers.jobs import JobProcessor

    try:
        config = load_config(args.config).with_overrides(args.seed, args.out, args.format)
        config.output_dir.mkdir(parents=True, exist_ok=True)

        # Init file logger in the output directory
        logger.add(
            config.output_dir / config.log_file,
            format="{time}:{level}:{message}",
            level="INFO",
            enqueue=True,
        )
        logger.info(f"switchpoint {__version__}, config digest {config.digest()}")

        processor = JobProcessor(
            config,
            args.task.upper(),
            threads=args.threads,
            input_path=getattr(args, "input", None),
            schedule_path=getattr(args, "schedule", None),
        )
        status = processor.run()

    except SwitchPointError as e:
        logger.error(f"{type(e).__name__}: {e}")
        emit_error(e)
        return 1

    except KeyboardInterrupt:
        logger.warning("KeyboardInterrupt caught, exiting...")
        emit_error(RuntimeError(enums.StatusMessage.STOPPED.value))
        return 2

    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        logger.error(traceback.format_exc())
        emit_error(e, unexpected=True)
        return 2

    finally:
        logger.complete()

    logger.info(enums.StatusMessage[status].value)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
