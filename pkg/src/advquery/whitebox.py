"""Ensemble PGD that produces transfer candidates and scheduling statistics.

The attack walks the summed clamped-margin loss of the surrogate ensemble
down with signed steps, projected after every step into the L-inf ball
around the seed intersected with the pixel box. Alongside the candidate it
records, per step, how many surrogates are fooled simultaneously; those
counts drive the first-phase scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image, Seed, derive_rng
from .losses import AttackGoal, goal_met_logits
from .nn import MlpModel, grad_input, logits


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float
    step_size: float | None = None  # resolved to epsilon/10
    max_steps: int = 100
    rng_seed: int = 0
    loss: str = "margin"  # "margin" | "cross_entropy"
    sign_step: bool = True
    random_start: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / 10.0)
        if not 0 < self.step_size <= self.epsilon:
            raise ValueError("step_size must be in (0, epsilon]")
        if self.loss not in ("margin", "cross_entropy"):
            raise ValueError(f"unknown pgd loss {self.loss!r}")


@dataclass(frozen=True)
class PgdTrace:
    """Candidate plus the fooled-count history of the run.

    ``steps_to_k[k]`` is the first step index (0 = the start point itself)
    at which at least k surrogates were fooled simultaneously; ``final_k``
    is the largest count ever reached, and the candidate is the earliest
    iterate reaching it.
    """

    candidate: Image
    steps_to_k: dict[int, int]
    final_k: int


def clip_linf(x, center, epsilon: float):
    """Project x into ||x - center||_inf <= epsilon intersected with [0,1]."""
    x_arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    c_arr = center.data if isinstance(center, Image) else np.asarray(center, dtype=np.float64)
    if x_arr.shape != c_arr.shape:
        raise ValueError(f"shape mismatch {x_arr.shape} vs {c_arr.shape}")
    lo = np.maximum(c_arr - epsilon, 0.0)
    hi = np.minimum(c_arr + epsilon, 1.0)
    out = np.clip(x_arr, lo, hi)
    if isinstance(x, Image):
        return x.replace_data(out)
    return out


def _fooled_count(models, x_arr: np.ndarray, goal: AttackGoal) -> int:
    return sum(goal_met_logits(logits(m, x_arr), goal) for m in models)


def pgd_ensemble(
    seed: Seed, models: list[MlpModel], goal: AttackGoal, cfg: PgdConfig
) -> PgdTrace:
    """Run PGD on the ensemble loss, tracking per-step fooled counts.

    Stops as soon as every surrogate is fooled or max_steps is exhausted.
    The returned candidate is the earliest iterate that fools final_k
    surrogates, keeping the choice deterministic when the budget runs out.
    """
    if not models:
        raise ValueError("empty ensemble")
    center = seed.image.data
    loss_kind = "cw_margin" if cfg.loss == "margin" else "cross_entropy"
    spec = goal.loss_spec(loss_kind)
    # cross-entropy descends toward the target class but ascends away from
    # the original class, so the untargeted step flips sign
    direction = -1.0
    if cfg.loss == "cross_entropy" and not goal.targeted:
        direction = 1.0

    x = center.copy()
    if cfg.random_start:
        rng = derive_rng(cfg.rng_seed, seed.seed_id)
        x = clip_linf(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape),
                      center, cfg.epsilon)

    k = _fooled_count(models, x, goal)
    steps_to_k = {j: 0 for j in range(1, k + 1)}
    best_k, best_x = k, x.copy()
    n_models = len(models)

    step = 0
    while best_k < n_models and step < cfg.max_steps:
        step += 1
        g = np.zeros_like(x)
        for m in models:
            g += grad_input(m, x, spec)
        delta = np.sign(g) if cfg.sign_step else g
        x = clip_linf(x + direction * cfg.step_size * delta, center, cfg.epsilon)
        k = _fooled_count(models, x, goal)
        if k > best_k:
            for j in range(best_k + 1, k + 1):
                steps_to_k[j] = step
            best_k, best_x = k, x.copy()

    return PgdTrace(
        candidate=seed.image.replace_data(best_x),
        steps_to_k=steps_to_k,
        final_k=best_k,
    )
