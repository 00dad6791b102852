"""Zeroth-order gradient estimators over a query-counted oracle.

Per-call query costs are fixed by construction: coordinate-wise differencing
spends 2D, random-direction two-point estimation spends N+1 (the base value
is evaluated once and reused), and the evolution-strategy estimator spends N
using antithetic pairs. Every scalar evaluation bumps the ledger by exactly
one, so reported costs can always be audited against ledger deltas.

Two printed-formula quirks are kept deliberately: the coordinate-wise
divisor is delta (not 2*delta), which scales the estimate by exactly 2x and
is harmless under sign-based updates; the ES estimator uses antithetic pairs
within its N samples so a constant objective estimates to exactly zero.
"""

from __future__ import annotations

import numpy as np

from .core import Image, QueryLedger, as_generator
from .losses import PROB_FLOOR, AttackGoal
from .nn import MlpModel, probs

ESTIMATORS = ("zoo", "autozoom", "nes")


def _as_points(x) -> np.ndarray:
    arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


class QueryOracle:
    """Black-box view of a model: full probability scores, every row counted.

    ``objective_mode`` selects the scalar the attack ascends: "log" gives
    log-confidence (log f_t targeted, -log f_y untargeted), "raw" the
    confidence itself.
    """

    def __init__(self, model: MlpModel, ledger: QueryLedger | None = None,
                 objective_mode: str = "log"):
        if objective_mode not in ("log", "raw"):
            raise ValueError(f"unknown objective_mode {objective_mode!r}")
        self.model = model
        self.ledger = ledger if ledger is not None else QueryLedger()
        self.objective_mode = objective_mode

    def query_probs(self, x, seed_id=None) -> np.ndarray:
        """Full prediction scores for one point or a batch; ledger +rows."""
        single = isinstance(x, Image) or np.asarray(x).ndim == 1
        pts = _as_points(x)
        out = probs(self.model, pts)
        self.ledger.record(pts.shape[0], seed_id)
        return out[0] if single else out

    def objective(self, points: np.ndarray, goal: AttackGoal, seed_id=None) -> np.ndarray:
        """Scalar objective per row (to be ascended); ledger +rows."""
        pts = _as_points(points)
        p = probs(self.model, pts)
        self.ledger.record(pts.shape[0], seed_id)
        conf = p[:, goal.cls]
        if self.objective_mode == "log":
            val = np.log(np.maximum(conf, PROB_FLOOR))
        else:
            val = conf
        return val if goal.targeted else -val

    def evaluation_clone(self) -> "QueryOracle":
        """Same model behind a fresh ledger, for metrics that must not
        count toward attack cost."""
        return QueryOracle(self.model, QueryLedger(), self.objective_mode)


class FunctionOracle:
    """Ledger-counted wrapper around an arbitrary scalar objective.

    Used by calibration tests that need analytically known objectives; the
    goal argument is accepted for interface compatibility and ignored.
    """

    def __init__(self, fn):
        self.fn = fn
        self.ledger = QueryLedger()

    def objective(self, points: np.ndarray, goal=None, seed_id=None) -> np.ndarray:
        pts = _as_points(points)
        self.ledger.record(pts.shape[0], seed_id)
        return np.array([float(self.fn(row)) for row in pts])


def scalar_objective(oracle, x, goal: AttackGoal, seed_id=None) -> float:
    """One counted evaluation of the ascended scalar objective."""
    arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    return float(oracle.objective(arr[None, :], goal, seed_id=seed_id)[0])


def zoo_grad(oracle, x, goal: AttackGoal, delta: float, seed_id=None) -> np.ndarray:
    """Coordinate-wise two-sided differences; 2D queries.

    g_i = (f(x + delta e_i) - f(x - delta e_i)) / delta, divisor as printed,
    so a linear objective estimates to exactly twice its true gradient.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    d = arr.size
    eye = np.eye(d) * delta
    pts = np.concatenate([arr[None, :] + eye, arr[None, :] - eye], axis=0)
    vals = oracle.objective(pts, goal, seed_id=seed_id)
    return (vals[:d] - vals[d:]) / delta


def autozoom_grad(oracle, x, goal: AttackGoal, delta: float, n_samples: int,
                  rng, seed_id=None, direction: str = "sphere") -> np.ndarray:
    """Averaged two-point estimates along random directions; N+1 queries.

    g = (1/N) sum_i (f(x + delta u_i) - f(x)) / delta * u_i, with u_i uniform
    on the unit sphere ("cube" draws uniform in [-1,1]^D instead).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if direction not in ("sphere", "cube"):
        raise ValueError(f"unknown direction scheme {direction!r}")
    gen = as_generator(rng)
    arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    d = arr.size
    base = float(oracle.objective(arr[None, :], goal, seed_id=seed_id)[0])
    if direction == "sphere":
        u = gen.standard_normal((n_samples, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
    else:
        u = gen.uniform(-1.0, 1.0, size=(n_samples, d))
    vals = oracle.objective(arr[None, :] + delta * u, goal, seed_id=seed_id)
    return ((vals - base) / delta) @ u / n_samples


def nes_grad(oracle, x, goal: AttackGoal, delta: float, n_samples: int,
             rng, seed_id=None) -> np.ndarray:
    """Gaussian-direction estimator with antithetic pairs; N queries.

    Draws N/2 standard-normal directions and probes both x + delta u and
    x - delta u, which cancels the objective's constant component exactly
    while keeping the advertised N queries per call.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if n_samples < 2 or n_samples % 2 != 0:
        raise ValueError("n_samples must be even and >= 2")
    gen = as_generator(rng)
    arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    d = arr.size
    half = n_samples // 2
    u = gen.standard_normal((half, d))
    pts = np.concatenate([arr[None, :] + delta * u, arr[None, :] - delta * u], axis=0)
    vals = oracle.objective(pts, goal, seed_id=seed_id)
    return ((vals[:half] - vals[half:]) / delta) @ u / n_samples


def estimator_cost(name: str, dim: int, n_samples: int) -> int:
    """Queries one estimator call spends."""
    if name == "zoo":
        return 2 * dim
    if name == "autozoom":
        return n_samples + 1
    if name == "nes":
        return n_samples
    raise ValueError(f"unknown estimator {name!r}")
