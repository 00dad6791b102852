"""Experiment orchestration: configs in, run directories out.

Every command freezes its validated config and a manifest (command, config
hash, master seed, versions, timestamps) into its run directory. Result
artifacts never contain timestamps, so rerunning a command with the same
config and seed reproduces them byte for byte.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import statistics
from pathlib import Path

import numpy as np

from . import __version__
from .blackbox import BlackboxConfig
from .configs import (AdversarialTrainSpec, AttackConfig, BatchConfig,
                      DatasetSpec, ModelSpec, ReportConfig, TrainConfig)
from .core import LabeledExample, Seed, derive_rng
from .data_io import (ResultRow, build_seed_pool, downsample_2x2,
                      load_digits_dataset, load_idx, make_synthetic,
                      read_json, write_json, write_results)
from .estimators import QueryOracle
from .hybrid import HybridConfig, measure_transfer_rate, run_hybrid
from .losses import AttackGoal
from .nn import MlpModel, init_mlp, load_model, save_model, train_sgd
from .scheduler import run_batch, write_curves_csv, write_report_json
from .whitebox import PgdConfig, pgd_ensemble


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 2)."""


class MissingArtifactError(FileNotFoundError):
    """A referenced model, dataset, or run directory is absent (exit code 3)."""


# dataset splits and pools draw from streams distinct from attack randomness
_SALT_SPLIT = 101
_SALT_POOL = 102
_SALT_HELDOUT = 103
_SALT_ADV = 104


def make_dataset(spec: DatasetSpec) -> list[LabeledExample]:
    if spec.kind == "digits":
        data = load_digits_dataset()
    elif spec.kind == "synthetic":
        data = make_synthetic(spec.n, spec.classes, spec.dim, spec.separation,
                              spec.rng_seed)
    else:
        if not spec.images_path or not spec.labels_path:
            raise ConfigError("idx dataset needs images_path and labels_path")
        for path in (spec.images_path, spec.labels_path):
            if not Path(path).exists():
                raise MissingArtifactError(f"dataset file not found: {path}")
        data = load_idx(spec.images_path, spec.labels_path)
    if spec.downsample:
        data = [downsample_2x2(ex) for ex in data]
    return data


def split_dataset(data, fraction: float, master_seed: int):
    rng = derive_rng(master_seed, _SALT_SPLIT)
    order = rng.permutation(len(data))
    cut = int(len(data) * fraction)
    return [data[i] for i in order[:cut]], [data[i] for i in order[cut:]]


def adversarially_train(model: MlpModel, train_data, spec: AdversarialTrainSpec,
                        master_seed: int, lr: float, batch_size: int) -> MlpModel:
    """Rounds of single-model PGD examples folded back into SGD."""
    rng = derive_rng(master_seed, _SALT_ADV)
    pgd = PgdConfig(epsilon=spec.epsilon, max_steps=spec.pgd_steps)
    for _ in range(spec.rounds):
        take = min(spec.sample_size, len(train_data))
        idx = rng.choice(len(train_data), size=take, replace=False)
        adv_examples = []
        for i in idx:
            ex = train_data[i]
            seed = Seed(seed_id=int(i), image=ex.image, label=ex.label)
            trace = pgd_ensemble(seed, [model], AttackGoal.untargeted(ex.label),
                                 pgd)
            adv_examples.append(LabeledExample(image=trace.candidate,
                                               label=ex.label))
        model, _ = train_sgd(model, list(train_data) + adv_examples,
                             epochs=spec.epochs_per_round, lr=lr,
                             batch_size=batch_size, rng_seed=rng)
    return model


def _fit(spec: ModelSpec, train_data, input_dim, classes, rng_seed):
    model = init_mlp(input_dim, spec.hidden_sizes, classes, rng_seed=rng_seed)
    return train_sgd(model, train_data, epochs=spec.epochs, lr=spec.lr,
                     batch_size=spec.batch_size, rng_seed=rng_seed)


def write_manifest(run_dir: Path, command: str, config_doc: dict,
                   master_seed: int, outputs: list[str]) -> dict:
    canonical = json.dumps(config_doc, sort_keys=True)
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "master_seed": master_seed,
        "versions": {"advquery": __version__, "numpy": np.__version__},
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": sorted(outputs),
    }
    write_json(manifest, run_dir / "manifest.json")
    return manifest


def _prepare_run_dir(run_dir) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def run_train(cfg: TrainConfig, run_dir) -> dict:
    run_dir = _prepare_run_dir(run_dir)
    data = make_dataset(cfg.dataset)
    train_data, eval_data = split_dataset(data, cfg.train_fraction,
                                          cfg.master_seed)
    if not train_data or not eval_data:
        raise ConfigError("split left an empty train or eval partition")
    input_dim = train_data[0].image.dim
    classes = max(ex.label for ex in data) + 1

    target, target_acc = _fit(cfg.target, train_data, input_dim, classes,
                              derive_rng(cfg.master_seed, 0))
    if cfg.target_adversarial is not None:
        target = adversarially_train(target, train_data,
                                     cfg.target_adversarial, cfg.master_seed,
                                     lr=cfg.target.lr,
                                     batch_size=cfg.target.batch_size)
    models_dir = run_dir / "models"
    models_dir.mkdir(exist_ok=True)
    save_model(target, models_dir / "target.json")

    local_accs = []
    for i, spec in enumerate(cfg.local_models):
        model, acc = _fit(spec, train_data, input_dim, classes,
                          derive_rng(cfg.master_seed, 1 + i))
        save_model(model, models_dir / f"local_{i}.json")
        local_accs.append(acc)

    from .nn import accuracy
    summary = {
        "input_dim": input_dim,
        "num_classes": classes,
        "train_size": len(train_data),
        "eval_size": len(eval_data),
        "target_train_accuracy": target_acc,
        "target_eval_accuracy": accuracy(target, eval_data),
        "local_train_accuracies": local_accs,
        "n_local_models": len(cfg.local_models),
    }
    write_json(cfg.model_dump(), run_dir / "config.json")
    write_json(summary, run_dir / "report.json")
    outputs = ["config.json", "report.json", "models/target.json"] + [
        f"models/local_{i}.json" for i in range(len(cfg.local_models))
    ]
    write_manifest(run_dir, "train", cfg.model_dump(), cfg.master_seed, outputs)
    return summary


def load_trained(models_dir) -> tuple[MlpModel, list[MlpModel], TrainConfig]:
    """Target model, surrogate list, and the frozen train config of a run."""
    root = Path(models_dir)
    config_path = root / "config.json"
    target_path = root / "models" / "target.json"
    if not config_path.exists() or not target_path.exists():
        raise MissingArtifactError(
            f"{root} is not a completed train run (missing config.json "
            "or models/target.json)")
    train_cfg = TrainConfig.model_validate(read_json(config_path))
    target = load_model(target_path)
    local = []
    for i in range(len(train_cfg.local_models)):
        path = root / "models" / f"local_{i}.json"
        if not path.exists():
            raise MissingArtifactError(f"missing surrogate model {path}")
        local.append(load_model(path))
    return target, local, train_cfg


def _goal_fn(goal_kind: str):
    if goal_kind == "targeted":
        def fn(seed: Seed) -> AttackGoal:
            if seed.target_label is None:
                raise ConfigError("targeted attack needs target labels in the pool")
            return AttackGoal.target(seed.target_label)
        return fn
    return lambda seed: AttackGoal.untargeted(seed.label)


def _prepare_attack(cfg) -> dict:
    """Everything a single attack or batch run needs, built from config."""
    target, local, train_cfg = load_trained(cfg.models_dir)
    if cfg.start == "candidate" and not local:
        raise ConfigError("candidate starts need a train run with surrogates")
    dataset_spec = cfg.dataset if cfg.dataset is not None else train_cfg.dataset
    data = make_dataset(dataset_spec)
    _, eval_data = split_dataset(data, train_cfg.train_fraction,
                                 train_cfg.master_seed)
    pool = build_seed_pool(
        eval_data, target, per_class=cfg.per_class,
        rng_seed=derive_rng(cfg.master_seed, _SALT_POOL).integers(2**31),
        targeted=cfg.goal == "targeted", dataset_id=dataset_spec.kind,
        max_total=cfg.n_seeds,
    )
    if not pool.seeds:
        raise ConfigError("seed pool is empty: the target misclassifies "
                          "everything in the eval split")
    pgd_cfg = PgdConfig(epsilon=cfg.epsilon, step_size=cfg.pgd_step_size,
                        max_steps=cfg.pgd_steps, rng_seed=cfg.master_seed)
    bb_cfg = BlackboxConfig(
        estimator=cfg.estimator, delta=cfg.delta, samples=cfg.samples,
        epsilon=cfg.epsilon, step_size=cfg.step_size,
        max_queries=cfg.max_queries,
        record_byproducts=getattr(cfg, "tune", False),
    )
    return {
        "target": target, "local": local, "train_cfg": train_cfg,
        "eval_data": eval_data, "pool": pool, "pgd_cfg": pgd_cfg,
        "bb_cfg": bb_cfg, "goal_fn": _goal_fn(cfg.goal),
    }


def summarize_outcomes(outcomes, ledger_total: int) -> dict:
    n = len(outcomes)
    aes = sum(1 for o in outcomes if o.success)
    transfers = sum(1 for o in outcomes if o.found_by == "direct_transfer")
    search_queries = sum(o.queries_used for o in outcomes
                         if o.found_by != "direct_transfer")
    gradient_aes = aes - transfers
    return {
        "n_seeds": n,
        "aes_found": aes,
        "direct_transfers": transfers,
        "success_rate": aes / n if n else 0.0,
        "transfer_rate": transfers / n if n else 0.0,
        "queries_total": ledger_total,
        "queries_per_seed": ledger_total / n if n else 0.0,
        "queries_per_ae": ledger_total / aes if aes else None,
        "queries_per_search": (search_queries / gradient_aes
                               if gradient_aes else None),
    }


def run_attack(cfg: AttackConfig, run_dir) -> dict:
    run_dir = _prepare_run_dir(run_dir)
    parts = _prepare_attack(cfg)
    oracle = QueryOracle(parts["target"])
    hy_cfg = HybridConfig(
        start_from_candidate=cfg.start == "candidate",
        tune_enabled=cfg.tune, tune_period=cfg.tune_period,
        tune_threshold_c=cfg.tune_threshold_c, tune_epochs=cfg.tune_epochs,
        tune_lr=cfg.tune_lr, tune_batch_size=cfg.tune_batch_size,
        rng_seed=cfg.master_seed,
    )
    goal_fn = parts["goal_fn"]
    local = parts["local"]

    heldout_seeds = []
    transfer_before = transfer_after = None
    if cfg.measure_transfer and local:
        # unseen images only: exclude everything already in the attack pool
        attacked = {id(s.image) for s in parts["pool"].seeds}
        unseen = [ex for ex in parts["eval_data"] if id(ex.image) not in attacked]
        if unseen:
            heldout_pool = build_seed_pool(
                unseen, parts["target"], per_class=cfg.heldout,
                rng_seed=derive_rng(cfg.master_seed, _SALT_HELDOUT).integers(2**31),
                targeted=cfg.goal == "targeted", dataset_id="heldout",
                max_total=cfg.heldout,
            )
            heldout_seeds = heldout_pool.seeds
        if heldout_seeds:
            transfer_before = measure_transfer_rate(
                local, oracle, heldout_seeds, goal_fn, parts["pgd_cfg"])

    outcomes, final_local = run_hybrid(
        parts["pool"].seeds, local, oracle, goal_fn,
        parts["pgd_cfg"], parts["bb_cfg"], hy_cfg,
    )
    if cfg.measure_transfer and heldout_seeds:
        transfer_after = measure_transfer_rate(
            final_local, oracle, heldout_seeds, goal_fn, parts["pgd_cfg"])

    summary = summarize_outcomes(outcomes, oracle.ledger.total)
    summary.update({
        "estimator": cfg.estimator,
        "start": cfg.start,
        "tune": cfg.tune,
        "goal": cfg.goal,
        "epsilon": cfg.epsilon,
        "max_queries": cfg.max_queries,
        "master_seed": cfg.master_seed,
        "heldout_transfer_rate_before": transfer_before,
        "heldout_transfer_rate_after": transfer_after,
    })
    rows = [
        ResultRow(seed_id=o.seed_id, found_by=o.found_by, success=o.success,
                  queries_used=o.queries_used, strategy="hybrid" if cfg.start == "candidate" else "baseline",
                  estimator=cfg.estimator, epsilon=cfg.epsilon,
                  run_seed=cfg.master_seed)
        for o in outcomes
    ]
    write_results(rows, run_dir / "outcomes.csv")
    write_json(cfg.model_dump(), run_dir / "config.json")
    write_json(summary, run_dir / "summary.json")
    write_manifest(run_dir, "attack", cfg.model_dump(), cfg.master_seed,
                   ["config.json", "outcomes.csv", "summary.json"])
    return summary


def run_batch_cmd(cfg: BatchConfig, run_dir) -> dict:
    run_dir = _prepare_run_dir(run_dir)
    parts = _prepare_attack(cfg)
    seeds = parts["pool"].seeds
    reports = {}
    cost_table = None
    order = [s for s in cfg.strategies if s != "retro_optimal"]
    needs_retro = "retro_optimal" in cfg.strategies
    for strategy in order:
        oracle = QueryOracle(parts["target"])
        report = run_batch(
            seeds, parts["local"], oracle, parts["goal_fn"],
            parts["pgd_cfg"], parts["bb_cfg"], strategy,
            run_seed=cfg.master_seed,
            start_from_candidate=cfg.start == "candidate",
        )
        assert report.total_queries == oracle.ledger.total
        reports[strategy] = report
        if cost_table is None:
            cost_table = report.per_seed_cost
    if needs_retro:
        if cost_table is None:
            # no exhaustive strategy requested: run one silently for the table
            oracle = QueryOracle(parts["target"])
            probe = run_batch(seeds, parts["local"], oracle, parts["goal_fn"],
                              parts["pgd_cfg"], parts["bb_cfg"], "random",
                              run_seed=cfg.master_seed,
                              start_from_candidate=cfg.start == "candidate")
            cost_table = probe.per_seed_cost
        reports["retro_optimal"] = run_batch(
            seeds, parts["local"], QueryOracle(parts["target"]),
            parts["goal_fn"], parts["pgd_cfg"], parts["bb_cfg"],
            "retro_optimal", run_seed=cfg.master_seed,
            start_from_candidate=cfg.start == "candidate",
            cost_table=cost_table,
        )

    outputs = ["config.json", "summary.json", "curves.csv"]
    for strategy, report in reports.items():
        write_report_json(report, run_dir / f"batch_{strategy}.json")
        outputs.append(f"batch_{strategy}.json")
    write_curves_csv([reports[s] for s in cfg.strategies],
                     run_dir / "curves.csv")
    summary = {
        "n_seeds": len(seeds),
        "strategies": list(cfg.strategies),
        "estimator": cfg.estimator,
        "start": cfg.start,
        "master_seed": cfg.master_seed,
        "queries_to_top": {
            s: {str(k): v for k, v in reports[s].queries_to_top.items()}
            for s in cfg.strategies
        },
        "aes_found": {s: reports[s].aes_found for s in cfg.strategies},
        "total_queries": {s: reports[s].total_queries for s in cfg.strategies},
    }
    write_json(cfg.model_dump(), run_dir / "config.json")
    write_json(summary, run_dir / "summary.json")
    write_manifest(run_dir, "batch", cfg.model_dump(), cfg.master_seed,
                   sorted(outputs))
    return summary


_ATTACK_METRICS = ("success_rate", "queries_per_seed", "queries_per_ae",
                   "queries_per_search")


def run_report(cfg: ReportConfig, run_dir) -> dict:
    """Merge attack-run summaries into mean/std comparison tables."""
    run_dir = _prepare_run_dir(run_dir)
    groups: dict[tuple, list[dict]] = {}
    batch_groups: dict[tuple, list[dict]] = {}
    for rd in cfg.run_dirs:
        path = Path(rd) / "summary.json"
        if not path.exists():
            raise MissingArtifactError(f"no summary.json under {rd}")
        summary = read_json(path)
        if "queries_to_top" in summary:
            for strategy, tops in summary["queries_to_top"].items():
                key = (summary["estimator"], strategy)
                batch_groups.setdefault(key, []).append(tops)
        elif "success_rate" in summary:
            key = (summary["estimator"], summary["start"],
                   "tuned" if summary.get("tune") else "static")
            groups.setdefault(key, []).append(summary)
        else:
            raise ConfigError(f"{path} is not an attack or batch summary")

    def mean_std(values):
        vals = [v for v in values if v is not None]
        if not vals:
            return None, None
        if len(vals) == 1:
            return float(vals[0]), 0.0
        return float(statistics.mean(vals)), float(statistics.stdev(vals))

    table_rows = []
    for key in sorted(groups):
        runs = groups[key]
        row = {"estimator": key[0], "start": key[1], "tune": key[2],
               "runs": len(runs)}
        for metric in _ATTACK_METRICS:
            mean, std = mean_std([r.get(metric) for r in runs])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_std"] = std
        table_rows.append(row)

    batch_rows = []
    for key in sorted(batch_groups):
        runs = batch_groups[key]
        row = {"estimator": key[0], "strategy": key[1], "runs": len(runs)}
        for pct in ("1", "2", "5", "10"):
            mean, std = mean_std([r.get(pct) for r in runs])
            row[f"top{pct}_mean"] = mean
            row[f"top{pct}_std"] = std
        batch_rows.append(row)

    report = {"attack_table": table_rows, "batch_table": batch_rows}
    write_json(report, run_dir / "report.json")
    _write_report_markdown(report, run_dir / "report.md")
    write_manifest(run_dir, "report", cfg.model_dump(), 0,
                   ["report.json", "report.md"])
    return report


def _write_report_markdown(report: dict, path) -> None:
    lines = []
    if report["attack_table"]:
        lines.append("| estimator | start | tune | runs | success | q/seed | q/ae | q/search |")
        lines.append("|---|---|---|---|---|---|---|---|")
        for row in report["attack_table"]:
            cells = [row["estimator"], row["start"], row["tune"],
                     str(row["runs"])]
            for metric in _ATTACK_METRICS:
                mean, std = row[f"{metric}_mean"], row[f"{metric}_std"]
                cells.append("-" if mean is None else f"{mean:.1f}±{std:.1f}")
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    if report["batch_table"]:
        lines.append("| estimator | strategy | runs | top1% | top2% | top5% | top10% |")
        lines.append("|---|---|---|---|---|---|---|")
        for row in report["batch_table"]:
            cells = [row["estimator"], row["strategy"], str(row["runs"])]
            for pct in ("1", "2", "5", "10"):
                mean, std = row[f"top{pct}_mean"], row[f"top{pct}_std"]
                cells.append("-" if mean is None else f"{mean:.1f}±{std:.1f}")
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    Path(path).write_text("\n".join(lines))
