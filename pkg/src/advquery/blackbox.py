"""Estimated-gradient attack against the target oracle under a query budget.

The search space is always the L-inf ball around the ORIGINAL seed image,
never around the starting point, so candidates handed over from surrogate
attacks cannot silently double the perturbation budget. Every iteration
spends its estimator's query cost plus one dedicated success-check query;
the same check response labels the iterate for the fine-tuning byproducts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Image, LabeledExample, Seed
from .estimators import (ESTIMATORS, autozoom_grad, estimator_cost, nes_grad,
                         zoo_grad)
from .losses import AttackGoal, goal_met_probs
from .whitebox import clip_linf

FOUND_BY = ("direct_transfer", "gradient_attack", "failed")


@dataclass(frozen=True)
class BlackboxConfig:
    estimator: str = "nes"
    delta: float = 1e-3
    samples: int = 50  # direction count per iteration (unused by zoo)
    epsilon: float = 0.3
    step_size: float | None = None  # resolved to epsilon/10
    max_queries: int = 4000
    record_byproducts: bool = False
    objective_mode: str = "log"
    autozoom_direction: str = "sphere"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / 10.0)
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.estimator == "nes" and (self.samples < 2 or self.samples % 2):
            raise ValueError("nes needs an even samples count >= 2")


@dataclass
class AttackOutcome:
    seed_id: int
    success: bool
    adversarial: Image | None
    queries_used: int
    found_by: str
    byproducts: list[LabeledExample] = field(default_factory=list)


def estimate_gradient(oracle, x: np.ndarray, goal: AttackGoal,
                      cfg: BlackboxConfig, rng, seed_id=None) -> np.ndarray:
    if cfg.estimator == "zoo":
        return zoo_grad(oracle, x, goal, cfg.delta, seed_id=seed_id)
    if cfg.estimator == "autozoom":
        return autozoom_grad(oracle, x, goal, cfg.delta, cfg.samples, rng,
                             seed_id=seed_id, direction=cfg.autozoom_direction)
    return nes_grad(oracle, x, goal, cfg.delta, cfg.samples, rng, seed_id=seed_id)


def iteration_cost(cfg: BlackboxConfig, dim: int) -> int:
    """Estimator queries plus the per-iteration success check."""
    return estimator_cost(cfg.estimator, dim, cfg.samples) + 1


def check_transfer(candidate, oracle, goal: AttackGoal, seed_id=None) -> bool:
    """Single counted query: does the candidate already fool the target?"""
    return goal_met_probs(oracle.query_probs(candidate, seed_id=seed_id), goal)


def optimize_attack(
    seed: Seed,
    start: Image,
    oracle,
    goal: AttackGoal,
    cfg: BlackboxConfig,
    rng,
    initial_check: bool = True,
) -> AttackOutcome:
    """Sign-ascent on the estimated objective gradient until success or budget.

    ``initial_check=False`` skips the leading verification query; callers use
    it when a transfer check on the same point was just spent. A new
    iteration only starts if its full cost still fits in max_queries. Budget
    tracking reads this seed's own ledger bucket, so a shared oracle serving
    other seeds concurrently cannot distort it.
    """
    sid = seed.seed_id
    ledger_entry = oracle.ledger.seed_total(sid)
    center = seed.image.data
    x = clip_linf(start.data, center, cfg.epsilon)

    success = False
    byproducts: list[LabeledExample] = []

    if initial_check:
        response = oracle.query_probs(x, seed_id=sid)
        success = goal_met_probs(response, goal)

    step_cost = iteration_cost(cfg, center.size)
    while not success:
        spent = oracle.ledger.seed_total(sid) - ledger_entry
        if spent + step_cost > cfg.max_queries:
            break
        g = estimate_gradient(oracle, x, goal, cfg, rng, seed_id=sid)
        x = clip_linf(x + cfg.step_size * np.sign(g), center, cfg.epsilon)
        response = oracle.query_probs(x, seed_id=sid)
        if cfg.record_byproducts:
            byproducts.append(
                LabeledExample(image=seed.image.replace_data(x),
                               label=int(np.argmax(response)))
            )
        success = goal_met_probs(response, goal)

    queries_used = oracle.ledger.seed_total(sid) - ledger_entry
    return AttackOutcome(
        seed_id=sid,
        success=success,
        adversarial=seed.image.replace_data(x) if success else None,
        queries_used=queries_used,
        found_by="gradient_attack" if success else "failed",
        byproducts=byproducts,
    )
