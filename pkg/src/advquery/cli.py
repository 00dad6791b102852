"""Thin command-line client for the experiment service.

Every subcommand marshals its config file plus flag overrides into the same
request models the HTTP service accepts, then either POSTs them to a running
server (--server) or executes the handler in-process. No experiment logic
lives here.

Exit codes: 0 success, 2 config error, 3 missing artifact, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import pydantic

from . import __version__
from .configs import AttackConfig, BatchConfig, ReportConfig, TrainConfig
from .runner import (ConfigError, MissingArtifactError, run_attack,
                     run_batch_cmd, run_report, run_train)
from .service.app import RUN_ROOT_ENV, resolve_run_dir

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3

_RUNNERS = {
    "train": (TrainConfig, run_train),
    "attack": (AttackConfig, run_attack),
    "batch": (BatchConfig, run_batch_cmd),
    "report": (ReportConfig, run_report),
}


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advquery",
        description="Query-limited black-box adversarial example search.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("-c", "--config", help="JSON config file")
        p.add_argument("--run-root", default=None,
                       help=f"output root (default ${RUN_ROOT_ENV} or ./runs)")
        p.add_argument("--run-name", default=None,
                       help="run directory name (default: timestamped)")
        p.add_argument("--server", default=None,
                       help="base URL of a running service; default in-process")

    p_train = sub.add_parser("train", help="train target and surrogate models")
    add_common(p_train)
    p_train.add_argument("--seed", type=int, default=None,
                         help="override master_seed")

    p_attack = sub.add_parser("attack", help="baseline or hybrid attack run")
    add_common(p_attack)
    p_attack.add_argument("--models-dir", default=None,
                          help="train run directory with models/")
    p_attack.add_argument("--estimator", choices=["zoo", "autozoom", "nes"])
    p_attack.add_argument("--start", choices=["seed", "candidate"])
    p_attack.add_argument("--tune", choices=["on", "off"])
    p_attack.add_argument("--epsilon", type=float, default=None)
    p_attack.add_argument("--max-queries", type=int, default=None)
    p_attack.add_argument("--seed", type=int, default=None,
                          help="override master_seed")

    p_batch = sub.add_parser("batch", help="batch scheduling comparison run")
    add_common(p_batch)
    p_batch.add_argument("--models-dir", default=None)
    p_batch.add_argument("--estimator", choices=["zoo", "autozoom", "nes"])
    p_batch.add_argument("--start", choices=["seed", "candidate"])
    p_batch.add_argument("--epsilon", type=float, default=None)
    p_batch.add_argument("--max-queries", type=int, default=None)
    p_batch.add_argument("--strategies", nargs="+", default=None,
                         choices=["two_phase", "random", "retro_optimal",
                                  "loss_only"])
    p_batch.add_argument("--seed", type=int, default=None)

    p_report = sub.add_parser("report", help="merge runs into comparison tables")
    add_common(p_report)
    p_report.add_argument("run_dirs", nargs="*", help="completed run directories")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--run-root", default=None)
    return parser


def overrides_from_args(command: str, args: argparse.Namespace) -> dict:
    """Flag values that override config-file fields."""
    over = {}
    mapping = {
        "seed": "master_seed",
        "models_dir": "models_dir",
        "estimator": "estimator",
        "start": "start",
        "epsilon": "epsilon",
        "max_queries": "max_queries",
        "strategies": "strategies",
    }
    for attr, field in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            over[field] = value
    tune = getattr(args, "tune", None)
    if tune is not None:
        over["tune"] = tune == "on"
    if command == "report" and getattr(args, "run_dirs", None):
        over["run_dirs"] = args.run_dirs
    return over


def dispatch(command: str, config_doc: dict, args: argparse.Namespace) -> dict:
    model_cls, runner_fn = _RUNNERS[command]
    try:
        cfg = model_cls.model_validate(config_doc)
    except pydantic.ValidationError as exc:
        raise ConfigError(str(exc)) from exc

    if args.server:
        import httpx

        body = {"config": cfg.model_dump(), "run_name": args.run_name}
        response = httpx.post(f"{args.server.rstrip('/')}/runs/{command}",
                              json=body, timeout=None)
        if response.status_code == 400:
            raise ConfigError(response.json().get("detail", response.text))
        if response.status_code == 404:
            raise MissingArtifactError(
                response.json().get("detail", response.text))
        response.raise_for_status()
        return response.json()

    run_root = Path(args.run_root or os.environ.get(RUN_ROOT_ENV, "runs"))
    run_dir = resolve_run_dir(run_root, command, args.run_name)
    summary = runner_fn(cfg, run_dir)
    return {"run_dir": str(run_dir), "summary": summary}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(args.run_root), host=args.host, port=args.port)
        return EXIT_OK
    try:
        config_doc = load_config_file(args.config)
        config_doc.update(overrides_from_args(args.command, args))
        result = dispatch(args.command, config_doc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - map anything else to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
