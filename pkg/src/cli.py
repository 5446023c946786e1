import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from artifacts import ArtifactWriter
from config_loader import ExperimentConfig, LimitsConfig, config_hash, load_config, parse_config, read_yaml
from counterexamples import COUNTEREXAMPLES, VerifyContext, get_counterexamples, verify
from data_loaders import BinaryLoader
from exceptions import ClaimFailure, ConfigError, UserFacingError
from experiment_runner import ExperimentRunner
from utils import (
    check_git_repository_is_clean,
    flush_loggers,
    get_datetime_str,
    get_notification_logger,
    provenance,
    setup_logging,
    setup_mlflow,
)

EXIT_CONFIG_ERROR = 2
EXIT_CLAIM_FAILURE = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levels-sensing",
        description="Certify, stress-test and run sparsity-in-levels compressed sensing experiments.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Experiment config (YAML or JSON).")
    common.add_argument("--system-config", type=str, default="config/system.yaml", help="System config to merge under it.")
    common.add_argument("--out", type=str, help="Output directory (default: paths.out_dir/<config name>).")
    common.add_argument("--seed", type=int, help="Overrides base_params.master_seed.")
    common.add_argument("--threads", type=int, help="Worker threads for enumeration and sweeps.")
    common.add_argument("--verbose", action="store_true", help="Log INFO messages to the console.")

    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("certify", "fliptest", "recover", "skeps"):
        sub.add_parser(verb, parents=[common], help=f"Run the {verb} command from a config.")

    pattern = sub.add_parser("pattern", parents=[common], help="Describe a sparsity pattern.")
    pattern.add_argument("--s", type=int, nargs="+", help="Per-level budgets.")
    pattern.add_argument("--M", type=int, nargs="+", help="Level boundaries starting at 0.")
    pattern.add_argument("--n", type=int, help="Signal length to check coverage against.")

    ce = sub.add_parser("counterexample", parents=[common], help="Construct and verify a counterexample.")
    ce.add_argument("name", type=str, help=f"One of: {', '.join(COUNTEREXAMPLES)}.")
    ce.add_argument("--a", type=int, default=1)
    ce.add_argument("--C", type=int)
    ce.add_argument("--rho", type=float, default=0.5)
    ce.add_argument("--variant", choices=["eta", "levels"], default="eta")
    ce.add_argument("--trials", type=int, default=100_000, help="Nullspace property falsification trials.")
    return parser


def _overrides(args) -> dict:
    overrides = {"command": args.verb}
    if args.seed is not None:
        overrides["base_params.master_seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    return overrides


def init(argv=None) -> tuple[argparse.Namespace, dict]:
    """Parses the command line and loads the merged config; nothing is validated yet."""
    args = build_parser().parse_args(argv)
    if args.verb == "counterexample":
        merged = load_config(args.config, args.system_config) if args.config else _system_only(args.system_config)
        merged.setdefault("__parent_run_name__", args.name)
        return args, merged
    if args.config:
        return args, load_config(args.config, args.system_config, overrides=_overrides(args))
    if args.verb == "pattern" and args.s and args.M:
        merged = _system_only(args.system_config)
        merged.update({"command": "pattern", "pattern": {"s": args.s, "M": args.M},
                       "__parent_run_name__": "pattern"})
        if args.n is not None:
            merged["operator"] = {"sensing": "identity", "n": args.n}
        for key, value in _overrides(args).items():
            if key == "base_params.master_seed":
                merged["base_params"] = {**merged.get("base_params", {}), "master_seed": value}
            else:
                merged[key] = value
        return args, merged
    raise ConfigError(f"'{args.verb}' needs --config" + (" or --s and --M" if args.verb == "pattern" else ""))


def _system_only(system_config_path: str) -> dict:
    if system_config_path and Path(system_config_path).exists():
        return read_yaml(system_config_path)
    return {}


def _stage(writer: ArtifactWriter, files: dict):
    for name, content in files.items():
        if isinstance(content, bytes):
            writer.stage_bytes(name, content)
        elif isinstance(content, str):
            writer.stage_text(name, content)
        else:
            writer.stage_json(name, content)


def _numeric(metrics: dict) -> dict:
    return {k: float(v) for k, v in metrics.items() if isinstance(v, (int, float)) and np.isfinite(v)}


def _out_dir(args, config_paths_out: str, run_name: str) -> Path:
    return Path(args.out) if args.out else Path(config_paths_out) / run_name


def main(args, merged: dict) -> tuple[Path, str]:
    run_name = merged.get("__parent_run_name__", "run")
    if args.verb == "counterexample":
        return run_counterexample(args, merged)

    config: ExperimentConfig = parse_config(merged)
    log_path = setup_logging(
        log_dir=config.paths.log_dir,
        run_id=f"{run_name}_{get_datetime_str(config.timezone)}",
        console_level=logging.INFO if args.verbose else logging.WARN,
        tz_str=config.timezone,
    )
    notifier = get_notification_logger(config.timezone)
    if config.tracking.require_clean_git:
        check_git_repository_is_clean()

    seeds = {"master_seed": config.seed, "sampling": config.seed + config.sampling.seed,
             "signal": config.seed + config.signal.seed}
    runner = ExperimentRunner(config, run_name, provenance(config_hash(config), seeds, config.timezone))
    notifier.info(f"--- Starting {config.command}: {run_name} ---")
    metrics, files = runner.run()

    if config.tracking.enabled:
        mlflow = setup_mlflow(experiment_name=config.base_params.experiment_name,
                              tracking_uri=config.paths.mlflow_tracking_uri)
        with mlflow.start_run(run_name=f"{run_name} ({get_datetime_str(config.timezone)})"):
            mlflow.log_params({"command": config.command, "config_hash": runner.provenance["config_hash"],
                               "master_seed": config.seed})
            mlflow.log_metrics(_numeric(metrics))

    writer = ArtifactWriter(_out_dir(args, config.paths.out_dir, run_name))
    _stage(writer, files)
    written = writer.commit()
    notifier.info(f"{config.command} metrics: {metrics}")
    flush_loggers()
    if metrics.get("passed") is False:
        raise ClaimFailure(f"{config.command} check failed; see {written[0].parent}")
    return writer.out_dir, log_path


def run_counterexample(args, merged: dict) -> tuple[Path, str]:
    paths = merged.get("paths", {})
    log_path = setup_logging(log_dir=paths.get("log_dir", "logs"), run_id=f"{args.name}_{get_datetime_str()}",
                             console_level=logging.INFO if args.verbose else logging.WARN)
    seed = args.seed if args.seed is not None else merged.get("base_params", {}).get("master_seed", 0)
    try:
        limits = LimitsConfig.model_validate(merged.get("limits", {}))
    except ValidationError as e:
        raise ConfigError(f"Invalid limits block:\n{e}") from e
    ctx = VerifyContext(nsp_trials=args.trials, seed=seed, n_jobs=args.threads or 1,
                        cap=limits.enumeration_cap, oracle_max_n=limits.oracle_max_n)
    instances = get_counterexamples(args.name, a=args.a, C=args.C, rho=args.rho, variant=args.variant)
    writer = ArtifactWriter(_out_dir(args, paths.get("out_dir", "results"), args.name))
    reports = []
    for instance in instances:
        report = verify(instance, ctx)
        reports.append(report)
        writer.stage_bytes(f"{instance.name}_U.bin", BinaryLoader().encode(instance.U))
        writer.stage_json(f"{instance.name}.json", instance.manifest())
    writer.stage_json("verification.json", {
        "passed": all(r.passed for r in reports),
        "reports": [r.model_dump() for r in reports],
        "provenance": provenance(config_hash=args.name, seeds={"master_seed": seed}),
    })
    writer.commit()
    failed = [f"{r.instance}: {c.name}" for r in reports for c in r.failures]
    if failed:
        raise ClaimFailure("Claims failed: " + "; ".join(failed))
    get_notification_logger().info(f"All claims of '{args.name}' verified")
    return writer.out_dir, log_path


def done(out_dir, log_path):
    logging.info(f'PID {os.getpid()} DONE.')
    print("\n✅ Finished successfully.")
    print("\nOutputs in", out_dir)
    print("\nView log in", log_path)
    print()


def run(argv=None) -> int:
    """Entry point; returns the process exit code."""
    try:
        args, merged = init(argv)
        out_dir, log_path = main(args, merged)
        done(out_dir, log_path)
        return 0
    except ClaimFailure as e:
        print(f"\n❌ Claim failure: {e}", file=sys.stderr)
        return EXIT_CLAIM_FAILURE
    except UserFacingError as e:
        print(f"\n❌ Error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except KeyboardInterrupt:
        print("\n\n🛑 Cancelled by user. Shutting down gracefully.")
        return 130  # 130 is the standard exit code for Ctrl+C
    except Exception as e:
        logging.error(f"Command failed with a critical error: {e}", exc_info=True)
        raise


if __name__ == "__main__":
    sys.exit(run())
