import argparse
import logging
import os
import signal
import sys

from config.settings import load_config
from pipeline.stages import (
    cmd_extract,
    cmd_generate,
    cmd_inspect_bank,
    cmd_learn_filters,
    cmd_run_all,
    cmd_train,
)
from utils.errors import PipelineError
from utils.helpers import setup_logging, workspace_lock


def signal_handler(sig, frame):
    """
    Handles signals (e.g., SIGINT, SIGTERM) for graceful shutdown.
    """
    logging.info("Received shutdown signal. Exiting gracefully...")
    # SystemExit unwinds the workspace lock context
    sys.exit(130)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.yaml", help="Experiment YAML file")
    common.add_argument("--workspace", default=None, help="Overrides paths.workspace")
    common.add_argument("--seed-override", type=int, default=None, help="Derive every seed from N")

    parser = argparse.ArgumentParser(
        description="Unsupervised quanvolutional feature learning for bearing fault detection."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="Write the synthetic dataset and split")
    learn = sub.add_parser("learn-filters", parents=[common], help="Select one level's filter bank")
    learn.add_argument("--level", type=int, required=True)
    sub.add_parser("extract", parents=[common], help="Extract and cache quanvolutional features")
    sub.add_parser("train", parents=[common], help="Train the classifier on cached features")
    sub.add_parser("run-all", parents=[common], help="Run every stage in order")
    inspect = sub.add_parser("inspect-bank", parents=[common], help="Describe a stored filter bank")
    inspect.add_argument("--level", type=int, required=True)
    return parser


def run(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed_override=args.seed_override, workspace=args.workspace)
    workspace = config.paths.workspace
    setup_logging(os.path.join(workspace, "logs"), config.runtime.log_level)
    logging.info(f"Running '{args.command}' in workspace {workspace}")

    with workspace_lock(workspace):
        if args.command == "generate":
            counts = cmd_generate(config)
            print(" ".join(f"{name}={count}" for name, count in counts.items()))
        elif args.command == "learn-filters":
            cmd_learn_filters(config, args.level)
        elif args.command == "extract":
            cmd_extract(config)
        elif args.command == "train":
            metrics = cmd_train(config)
            print(f"test_acc={metrics['test_acc']:.4f}")
        elif args.command == "run-all":
            manifest = cmd_run_all(config)
            print(f"test_acc={manifest.stages['train']['metrics']['test_acc']:.4f}")
        elif args.command == "inspect-bank":
            cmd_inspect_bank(config, args.level)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except PipelineError as e:
        logging.error(str(e))
        return e.exit_code
    except Exception:
        logging.exception("Unexpected failure")
        return 1


if __name__ == "__main__":
    signal.signal(signal.SIGINT, signal_handler)
    signal.signal(signal.SIGTERM, signal_handler)
    sys.exit(main())
