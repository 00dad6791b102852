"""Scalar attack objectives and misclassification predicates.

Conventions used everywhere: argmax ties break to the lowest index, and all
margins are expressed through a single signed "gap toward the goal" so the
clamped attack loss, the success predicate, and the confidence-gap
prioritization stay mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import LossSpec, MlpModel, logits

PROB_FLOOR = 1e-30


@dataclass(frozen=True)
class AttackGoal:
    """Targeted(t): force class t. Untargeted(y): leave class y."""

    targeted: bool
    cls: int

    def __post_init__(self):
        if self.cls < 0:
            raise ValueError(f"negative class index {self.cls}")

    @staticmethod
    def target(t: int) -> "AttackGoal":
        return AttackGoal(targeted=True, cls=t)

    @staticmethod
    def untargeted(y: int) -> "AttackGoal":
        return AttackGoal(targeted=False, cls=y)

    def loss_spec(self, kind: str) -> LossSpec:
        return LossSpec(kind=kind, label=self.cls, targeted=self.targeted)


def _check_cls(n_classes: int, goal: AttackGoal) -> None:
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if goal.cls >= n_classes:
        raise ValueError(f"class {goal.cls} out of range for {n_classes} classes")


def goal_gap(logit_vec: np.ndarray, goal: AttackGoal) -> float:
    """Signed logit margin toward the goal (positive once the goal holds).

    Targeted: Z_t - max_{i!=t} Z_i. Untargeted: max_{i!=y} Z_i - Z_y.
    """
    z = np.asarray(logit_vec, dtype=np.float64)
    _check_cls(z.size, goal)
    rest = np.delete(z, goal.cls)
    if goal.targeted:
        return float(z[goal.cls] - rest.max())
    return float(rest.max() - z[goal.cls])


def cw_margin(logit_vec: np.ndarray, goal: AttackGoal) -> float:
    """Clamped logit margin: 0 iff the goal already holds with margin >= 0."""
    return max(0.0, -goal_gap(logit_vec, goal))


def target_loss(prob_vec: np.ndarray, goal: AttackGoal) -> float:
    """Positive part of the log-probability gap still to close.

    Targeted: (max_{i!=t} log f_i - log f_t)^+; untargeted is the mirror.
    Probabilities are floored before the log so degenerate vectors stay finite.
    """
    p = np.asarray(prob_vec, dtype=np.float64)
    _check_cls(p.size, goal)
    logp = np.log(np.maximum(p, PROB_FLOOR))
    rest = np.delete(logp, goal.cls)
    if goal.targeted:
        gap = rest.max() - logp[goal.cls]
    else:
        gap = logp[goal.cls] - rest.max()
    return max(0.0, float(gap))


def ensemble_loss(models: list[MlpModel], x, goal: AttackGoal) -> float:
    """Sum of the per-model clamped margins over the whole ensemble."""
    if not models:
        raise ValueError("empty ensemble")
    return sum(cw_margin(logits(m, x), goal) for m in models)


def goal_met_logits(logit_vec: np.ndarray, goal: AttackGoal) -> bool:
    z = np.asarray(logit_vec, dtype=np.float64)
    _check_cls(z.size, goal)
    top = int(np.argmax(z))
    return top == goal.cls if goal.targeted else top != goal.cls


def goal_met_probs(prob_vec: np.ndarray, goal: AttackGoal) -> bool:
    return goal_met_logits(np.asarray(prob_vec, dtype=np.float64), goal)


def goal_met(model: MlpModel, x, goal: AttackGoal) -> bool:
    """Success predicate on a model's own prediction (lowest-index argmax)."""
    return goal_met_logits(logits(model, x), goal)
