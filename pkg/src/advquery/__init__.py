"""Query-limited black-box adversarial example search.

Surrogate-ensemble transfer candidates, zeroth-order gradient attacks with
exact query accounting, and batch scheduling that spends a shared query
budget on the easiest seeds first.
"""

__version__ = "0.1.0"

from .blackbox import AttackOutcome, BlackboxConfig, check_transfer, optimize_attack
from .core import Image, LabeledExample, QueryLedger, Seed
from .estimators import QueryOracle, autozoom_grad, nes_grad, scalar_objective, zoo_grad
from .hybrid import HybridConfig, TuningSet, measure_transfer_rate, run_hybrid, tune_local_models
from .losses import AttackGoal, cw_margin, ensemble_loss, goal_met, target_loss
from .nn import LossSpec, MlpModel, grad_input, init_mlp, logits, probs, train_sgd
from .scheduler import (BatchReport, confidence_gap_order, phase1_order,
                        phase2_order, retroactive_optimal_order, run_batch)
from .whitebox import PgdConfig, PgdTrace, clip_linf, pgd_ensemble

__all__ = [
    "AttackGoal", "AttackOutcome", "BatchReport", "BlackboxConfig",
    "HybridConfig", "Image", "LabeledExample", "LossSpec", "MlpModel",
    "PgdConfig", "PgdTrace", "QueryLedger", "QueryOracle", "Seed",
    "TuningSet", "autozoom_grad", "check_transfer", "clip_linf",
    "confidence_gap_order", "cw_margin", "ensemble_loss", "goal_met",
    "grad_input", "init_mlp", "logits", "measure_transfer_rate", "nes_grad",
    "optimize_attack", "pgd_ensemble", "phase1_order", "phase2_order",
    "probs", "retroactive_optimal_order", "run_batch", "run_hybrid",
    "scalar_objective", "target_loss", "train_sgd", "tune_local_models",
    "zoo_grad",
]
