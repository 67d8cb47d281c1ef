"""
Command-line entry point for the beta_c workflow.
"""
import argparse
import logging
import uuid
from typing import List, Optional

from .config import RunConfig
from .errors import ConfigError, exit_code_for
from .models.common import StageResult
from .ops import pipeline


logger = logging.getLogger(__name__)

COMMANDS = ("solve", "invert", "features", "train", "predict-correct", "sweep-sigma", "verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="betac",
        description="Field inversion and uncertainty-gated correction of a k-omega turbulence model",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--out", help="Output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    parser.add_argument("--threads", type=int, help="Worker threads (overrides the config)")
    parser.add_argument("--sigma-bar", type=float, help="Acceptance tolerance (overrides the config)")
    parser.add_argument("--sigma-bars", type=float, nargs="*", help="Tolerances for sweep-sigma")
    parser.add_argument("--env-file", help="Optional .env file with BETAC_* overrides")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def load_config(args: argparse.Namespace) -> Optional[RunConfig]:
    if not args.config:
        if args.command == "verify":
            return None
        raise ConfigError(f"{args.command} needs --config")
    config = RunConfig.from_file(args.config).apply_env(args.env_file)
    return config.with_overrides(
        output_dir=args.out,
        seed=args.seed,
        threads=args.threads,
        sigma_bar=args.sigma_bar,
        log_level=args.log_level,
    )


def run_command(args: argparse.Namespace, config: Optional[RunConfig], run_id: str) -> StageResult:
    if args.command == "verify":
        context = pipeline.open_run(config, run_id) if config is not None else None
        return pipeline.cmd_verify(config, context)

    context = pipeline.open_run(config, run_id)
    if args.command == "solve":
        return pipeline.cmd_solve(config, context)
    if args.command == "invert":
        return pipeline.cmd_invert(config, context)
    if args.command == "features":
        return pipeline.cmd_features(config, context)
    if args.command == "train":
        return pipeline.cmd_train(config, context)
    if args.command == "predict-correct":
        return pipeline.cmd_predict_correct(config, context, sigma_bar=args.sigma_bar)
    return pipeline.cmd_sweep_sigma(config, args.sigma_bars, context)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level or logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    run_id = str(uuid.uuid4())

    try:
        config = load_config(args)
        if config is not None:
            logging.getLogger().setLevel(config.log_level)
        result = run_command(args, config, run_id)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(
            f"[{run_id}] {args.command} failed with exit code {code}: {e}",
            extra={'run_id': run_id, 'command': args.command, 'exit_code': code},
            exc_info=code == 1
        )
        return code

    for warning in result.warnings:
        print(f"warning: {warning}")
    for name, path in result.artifacts.items():
        print(f"{name}: {path}")
    print(f"{result.stage}: {'ok' if result.ok else 'failed'}")
    return 0 if result.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
