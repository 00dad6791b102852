"""End-to-end hybrid attack over an ordered seed list.

Per seed: generate a surrogate-ensemble candidate (or keep the raw seed),
spend one query checking direct transfer, fall back to the estimated-
gradient attack on failure, and pour the attack's labeled iterates into a
shared fine-tuning set. Every ``tune_period`` seeds the surrogates are
retrained on that set, capped at ``tune_threshold_c`` examples by uniform
subsampling.

Per-seed randomness is derived from (master seed, seed id), so with tuning
disabled the outcome of one seed does not depend on attack order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .blackbox import AttackOutcome, BlackboxConfig, check_transfer, optimize_attack
from .core import LabeledExample, Seed, as_generator, derive_rng
from .estimators import QueryOracle
from .losses import goal_met_probs
from .nn import MlpModel, train_sgd
from .whitebox import PgdConfig, pgd_ensemble

log = logging.getLogger(__name__)

# stream salts: attacks and tuning draw from distinct per-seed streams,
# and the scheduler reuses SALT_ATTACK so per-seed costs match run_hybrid's
SALT_ATTACK = 2
SALT_TUNE = 3


@dataclass(frozen=True)
class HybridConfig:
    start_from_candidate: bool = True
    tune_enabled: bool = False
    tune_period: int = 50
    tune_threshold_c: int = 60000
    tune_epochs: int = 5
    tune_lr: float = 0.05
    tune_batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if self.tune_period < 1:
            raise ValueError("tune_period must be >= 1")
        if self.tune_threshold_c < 1:
            raise ValueError("tune_threshold_c must be >= 1")


@dataclass
class TuningSet:
    """Fine-tuning pool; seeded with the attacker's own labeled seeds."""

    examples: list[LabeledExample] = field(default_factory=list)

    @staticmethod
    def from_seeds(seeds: list[Seed]) -> "TuningSet":
        return TuningSet(
            examples=[LabeledExample(image=s.image, label=s.label) for s in seeds]
        )

    def add(self, new_examples: list[LabeledExample]) -> None:
        self.examples.extend(new_examples)

    def sample(self, threshold_c: int, rng) -> list[LabeledExample]:
        """Down-sample to threshold_c examples (only applied at tuning time)."""
        if len(self.examples) <= threshold_c:
            return list(self.examples)
        idx = rng.choice(len(self.examples), size=threshold_c, replace=False)
        return [self.examples[i] for i in sorted(idx)]


def tune_local_models(
    local: list[MlpModel],
    tuning: TuningSet,
    epochs: int,
    threshold_c: int,
    rng_seed,
    lr: float = 0.05,
    batch_size: int = 32,
) -> list[MlpModel]:
    """Continue SGD on every surrogate from its current weights.

    If the pool exceeds threshold_c a uniform sample of exactly that size is
    drawn first. One generator drives sampling and all model updates, so the
    whole call is deterministic given rng_seed.
    """
    if not tuning.examples:
        raise ValueError("empty tuning set")
    gen = as_generator(rng_seed)
    data = tuning.sample(threshold_c, gen)
    tuned = []
    for model in local:
        new_model, _ = train_sgd(
            model, data, epochs=epochs, lr=lr, batch_size=batch_size,
            rng_seed=gen,
        )
        tuned.append(new_model)
    return tuned


def candidate_for_seed(
    seed: Seed, local: list[MlpModel], goal, pgd_cfg: PgdConfig,
    start_from_candidate: bool,
) -> tuple:
    """(start image, trace or None) for one seed."""
    if not start_from_candidate:
        return seed.image, None
    trace = pgd_ensemble(seed, local, goal, pgd_cfg)
    return trace.candidate, trace


def attack_seed(
    seed: Seed,
    start,
    oracle: QueryOracle,
    goal,
    bb_cfg: BlackboxConfig,
    master_seed: int,
) -> AttackOutcome:
    """Transfer check plus optimization fallback; one outcome per seed."""
    entry = oracle.ledger.seed_total(seed.seed_id)
    transferred = check_transfer(start, oracle, goal, seed_id=seed.seed_id)
    if transferred:
        return AttackOutcome(
            seed_id=seed.seed_id,
            success=True,
            adversarial=start,
            queries_used=oracle.ledger.seed_total(seed.seed_id) - entry,
            found_by="direct_transfer",
        )
    rng = derive_rng(master_seed, seed.seed_id, SALT_ATTACK)
    outcome = optimize_attack(seed, start, oracle, goal, bb_cfg, rng,
                              initial_check=False)
    outcome.queries_used = oracle.ledger.seed_total(seed.seed_id) - entry
    return outcome


def run_hybrid(
    seeds: list[Seed],
    local: list[MlpModel],
    oracle: QueryOracle,
    goal_fn,
    pgd_cfg: PgdConfig,
    bb_cfg: BlackboxConfig,
    hy_cfg: HybridConfig,
) -> tuple[list[AttackOutcome], list[MlpModel]]:
    """Attack the seeds in the given order; returns outcomes and the final
    (possibly tuned) surrogates.

    Seeds the target already misclassifies are excluded up front (checked on
    an evaluation ledger so attack-cost metrics stay clean) and logged.
    """
    if not seeds:
        raise ValueError("empty seed list")
    if hy_cfg.start_from_candidate and not local:
        raise ValueError("candidate starts need a nonempty ensemble")

    eval_oracle = oracle.evaluation_clone()
    kept = []
    for seed in seeds:
        pred = int(np.argmax(eval_oracle.query_probs(seed.image)))
        if pred != seed.label:
            log.warning("excluding seed %d: target predicts %d, label %d",
                        seed.seed_id, pred, seed.label)
            continue
        kept.append(seed)
    if not kept:
        raise ValueError("no seed is correctly classified by the target")

    models = list(local)
    tuning = TuningSet.from_seeds(kept)
    outcomes: list[AttackOutcome] = []

    for i, seed in enumerate(kept):
        goal = goal_fn(seed)
        start, _ = candidate_for_seed(seed, models, goal, pgd_cfg,
                                      hy_cfg.start_from_candidate)
        outcome = attack_seed(seed, start, oracle, goal, bb_cfg,
                              hy_cfg.rng_seed)
        outcomes.append(outcome)
        tuning.add(outcome.byproducts)
        if hy_cfg.tune_enabled and (i + 1) % hy_cfg.tune_period == 0:
            models = tune_local_models(
                models, tuning, epochs=hy_cfg.tune_epochs,
                threshold_c=hy_cfg.tune_threshold_c,
                rng_seed=derive_rng(hy_cfg.rng_seed, SALT_TUNE, i),
                lr=hy_cfg.tune_lr, batch_size=hy_cfg.tune_batch_size,
            )
    return outcomes, models


def measure_transfer_rate(
    local: list[MlpModel],
    target_oracle: QueryOracle,
    heldout: list[Seed],
    goal_fn,
    pgd_cfg: PgdConfig,
) -> float:
    """Fraction of held-out seeds whose ensemble candidate fools the target.

    Spends one query per seed on an evaluation-only ledger so it never
    contaminates attack-cost metrics.
    """
    if not heldout:
        raise ValueError("empty held-out set")
    eval_oracle = target_oracle.evaluation_clone()
    hits = 0
    for seed in heldout:
        goal = goal_fn(seed)
        trace = pgd_ensemble(seed, local, goal, pgd_cfg)
        response = eval_oracle.query_probs(trace.candidate, seed_id=seed.seed_id)
        if goal_met_probs(response, goal):
            hits += 1
    return hits / len(heldout)
