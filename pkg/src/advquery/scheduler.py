"""Batch attack scheduling: who to attack first when queries are scarce.

The two-phase strategy checks every seed's candidate for direct transfer in
an order driven purely by surrogate statistics (fooled-model count, then PGD
steps), then runs optimization attacks on the non-transfers ordered by the
target loss computed from the cached phase-1 responses - no extra queries.
Random and retroactive-optimal orderings bound it from below and above.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .blackbox import BlackboxConfig, optimize_attack
from .core import Image, Seed, derive_rng
from .estimators import QueryOracle
from .hybrid import SALT_ATTACK, candidate_for_seed
from .losses import AttackGoal, goal_gap, goal_met, goal_met_probs, target_loss
from .nn import MlpModel, logits
from .whitebox import PgdConfig, PgdTrace

STRATEGIES = ("two_phase", "random", "retro_optimal", "loss_only")
GAP_KINDS = ("max_gap", "min_gap", "ave_gap")
TOP_PERCENTS = (1, 2, 5, 10)


def priority_key(trace: PgdTrace, seed_id: int) -> tuple[int, int, int]:
    """Total order for phase 1: fooled-count desc, steps asc, id asc.

    The step count is the one recorded at the seed's own final_k; seeds that
    fooled nothing carry step 0 and sort purely by id at the back.
    """
    return (-trace.final_k, trace.steps_to_k.get(trace.final_k, 0), seed_id)


def phase1_order(traces: dict[int, PgdTrace]) -> list[int]:
    """Most-fooled surrogates first; fewest PGD steps within a group."""
    return sorted(traces, key=lambda sid: priority_key(traces[sid], sid))


def confidence_gap_order(
    local: list[MlpModel],
    candidates: dict[int, Image],
    goals: dict[int, AttackGoal],
    kind: str,
) -> list[int]:
    """Group by fooled-surrogate count, then larger gap toward the goal first.

    The per-model gap is the signed logit margin in favor of the goal; the
    kind picks max, min, or average across the ensemble.
    """
    if kind not in GAP_KINDS:
        raise ValueError(f"unknown gap kind {kind!r}")
    agg = {"max_gap": max, "min_gap": min, "ave_gap": lambda v: sum(v) / len(v)}[kind]

    keyed = {}
    for seed_id, candidate in candidates.items():
        goal = goals[seed_id]
        gaps = [goal_gap(logits(m, candidate), goal) for m in local]
        k = sum(goal_met(m, candidate, goal) for m in local)
        keyed[seed_id] = (-k, -agg(gaps), seed_id)
    return sorted(candidates, key=lambda s: keyed[s])


def phase2_order(
    oracle_probs: dict[int, np.ndarray], goals: dict[int, AttackGoal]
) -> list[int]:
    """Ascending target loss of each seed's cached phase-1 response."""
    return sorted(
        oracle_probs,
        key=lambda s: (target_loss(oracle_probs[s], goals[s]), s),
    )


def retroactive_optimal_order(costs: dict[int, tuple[bool, int]]) -> list[int]:
    """Cheapest true cost first, successes before failures, id tie-break."""
    return sorted(costs, key=lambda s: (not costs[s][0], costs[s][1], s))


@dataclass
class BatchReport:
    strategy: str
    run_seed: int
    n_seeds: int
    ordering: list[int]
    ae_events: list[int]  # cumulative queries at which each AE landed
    total_queries: int
    per_seed_cost: dict[int, tuple[bool, int]]
    phase1_end_queries: int | None = None
    queries_to_top: dict[int, int | None] = field(default_factory=dict)

    def __post_init__(self):
        if not self.queries_to_top:
            self.queries_to_top = {
                x: queries_to_top_fraction(self.ae_events, self.n_seeds, x)
                for x in TOP_PERCENTS
            }

    @property
    def aes_found(self) -> int:
        return len(self.ae_events)

    def curve(self) -> list[tuple[int, int]]:
        """Monotone (queries, AEs found) step points, ending at the total."""
        points = [(0, 0)]
        for i, q in enumerate(self.ae_events, start=1):
            points.append((q, i))
        if not self.ae_events or self.total_queries > self.ae_events[-1]:
            points.append((self.total_queries, len(self.ae_events)))
        return points

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "run_seed": self.run_seed,
            "n_seeds": self.n_seeds,
            "ordering": list(self.ordering),
            "ae_events": list(self.ae_events),
            "total_queries": self.total_queries,
            "aes_found": self.aes_found,
            "phase1_end_queries": self.phase1_end_queries,
            "queries_to_top": {str(k): v for k, v in self.queries_to_top.items()},
            "per_seed_cost": {
                str(sid): {"success": ok, "cost": cost}
                for sid, (ok, cost) in sorted(self.per_seed_cost.items())
            },
        }

    @staticmethod
    def from_dict(doc: dict) -> "BatchReport":
        return BatchReport(
            strategy=doc["strategy"],
            run_seed=doc["run_seed"],
            n_seeds=doc["n_seeds"],
            ordering=list(doc["ordering"]),
            ae_events=list(doc["ae_events"]),
            total_queries=doc["total_queries"],
            per_seed_cost={
                int(k): (v["success"], v["cost"])
                for k, v in doc["per_seed_cost"].items()
            },
            phase1_end_queries=doc.get("phase1_end_queries"),
            queries_to_top={int(k): v for k, v in doc["queries_to_top"].items()},
        )


def queries_to_top_fraction(ae_events: list[int], n_seeds: int, percent: float):
    """Cumulative queries when AEs for percent% of the pool are in hand."""
    want = max(1, math.ceil(n_seeds * percent / 100.0))
    if len(ae_events) < want:
        return None
    return ae_events[want - 1]


def curve_dominates(a_events: list[int], b_events: list[int]) -> bool:
    """True iff ordering `a` has found every k-th AE no later than `b`."""
    if len(a_events) < len(b_events):
        return False
    return all(a <= b for a, b in zip(a_events, b_events))


def replay_cost_table(
    costs: dict[int, tuple[bool, int]], ordering: list[int], strategy: str,
    run_seed: int,
) -> BatchReport:
    """Build the cumulative curve of attacking seeds in a fixed order with
    known per-seed costs."""
    spent = 0
    events = []
    for sid in ordering:
        ok, cost = costs[sid]
        spent += cost
        if ok:
            events.append(spent)
    return BatchReport(
        strategy=strategy, run_seed=run_seed, n_seeds=len(ordering),
        ordering=list(ordering), ae_events=events, total_queries=spent,
        per_seed_cost=dict(costs),
    )


def _exhaustive_pass(
    seeds: list[Seed], starts: dict[int, Image], oracle: QueryOracle,
    goals: dict[int, AttackGoal], bb_cfg: BlackboxConfig, master_seed: int,
    ordering: list[int], strategy: str,
) -> BatchReport:
    """Attack seeds one by one in the given order: transfer check first,
    optimization on failure."""
    by_id = {s.seed_id: s for s in seeds}
    spent = 0
    events = []
    costs = {}
    for sid in ordering:
        seed = by_id[sid]
        entry = oracle.ledger.seed_total(sid)
        response = oracle.query_probs(starts[sid], seed_id=sid)
        if goal_met_probs(response, goals[sid]):
            cost, ok = oracle.ledger.seed_total(sid) - entry, True
        else:
            rng = derive_rng(master_seed, sid, SALT_ATTACK)
            outcome = optimize_attack(seed, starts[sid], oracle, goals[sid],
                                      bb_cfg, rng, initial_check=False)
            cost = oracle.ledger.seed_total(sid) - entry
            ok = outcome.success
        spent += cost
        costs[sid] = (ok, cost)
        if ok:
            events.append(spent)
    return BatchReport(
        strategy=strategy, run_seed=master_seed, n_seeds=len(ordering),
        ordering=list(ordering), ae_events=events, total_queries=spent,
        per_seed_cost=costs,
    )


def _two_phase_pass(
    seeds: list[Seed], starts: dict[int, Image], oracle: QueryOracle,
    goals: dict[int, AttackGoal], bb_cfg: BlackboxConfig, master_seed: int,
    check_order: list[int], strategy: str,
) -> BatchReport:
    """Check every seed once in check_order, then attack the survivors in
    ascending cached target loss."""
    by_id = {s.seed_id: s for s in seeds}
    spent = 0
    events = []
    costs = {}
    cached = {}
    for sid in check_order:
        response = oracle.query_probs(starts[sid], seed_id=sid)
        spent += 1
        if goal_met_probs(response, goals[sid]):
            costs[sid] = (True, 1)
            events.append(spent)
        else:
            cached[sid] = response
    phase1_end = spent
    for sid in phase2_order(cached, goals):
        seed = by_id[sid]
        entry = oracle.ledger.seed_total(sid)
        rng = derive_rng(master_seed, sid, SALT_ATTACK)
        outcome = optimize_attack(seed, starts[sid], oracle, goals[sid],
                                  bb_cfg, rng, initial_check=False)
        cost = oracle.ledger.seed_total(sid) - entry
        spent += cost
        costs[sid] = (outcome.success, cost + 1)  # +1: this seed's phase-1 check
        if outcome.success:
            events.append(spent)
    ordering = check_order
    return BatchReport(
        strategy=strategy, run_seed=master_seed, n_seeds=len(check_order),
        ordering=ordering, ae_events=events, total_queries=spent,
        per_seed_cost=costs, phase1_end_queries=phase1_end,
    )


def run_batch(
    seeds: list[Seed],
    local: list[MlpModel],
    oracle: QueryOracle,
    goal_fn,
    pgd_cfg: PgdConfig,
    bb_cfg: BlackboxConfig,
    strategy: str,
    run_seed: int = 0,
    start_from_candidate: bool = True,
    cost_table: dict[int, tuple[bool, int]] | None = None,
) -> BatchReport:
    """One batch attack under the chosen scheduling strategy.

    All strategies use identical per-seed attack RNG streams, so a seed's
    true cost does not depend on when it is attacked; retro_optimal replays a
    completed cost table instead of spending queries.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not seeds:
        raise ValueError("empty seed list")

    goals = {s.seed_id: goal_fn(s) for s in seeds}

    if strategy == "retro_optimal":
        if cost_table is None:
            raise ValueError("retro_optimal needs the cost table of a "
                             "completed exhaustive run")
        missing = [s.seed_id for s in seeds if s.seed_id not in cost_table]
        if missing:
            raise ValueError(f"cost table incomplete, missing seeds {missing}")
        order = retroactive_optimal_order(cost_table)
        return replay_cost_table(cost_table, order, strategy, run_seed)

    if start_from_candidate and not local:
        raise ValueError("candidate starts need a nonempty ensemble")
    starts = {}
    traces = {}
    for seed in seeds:
        start, trace = candidate_for_seed(seed, local, goals[seed.seed_id],
                                          pgd_cfg, start_from_candidate)
        starts[seed.seed_id] = start
        if trace is not None:
            traces[seed.seed_id] = trace

    if strategy == "random":
        order = [s.seed_id for s in seeds]
        derive_rng(run_seed, 0).shuffle(order)
        return _exhaustive_pass(seeds, starts, oracle, goals, bb_cfg,
                                run_seed, order, strategy)

    if strategy == "two_phase":
        if not traces:
            raise ValueError("two_phase needs candidate traces; enable "
                             "start_from_candidate")
        check_order = phase1_order(traces)
    else:  # loss_only: no surrogate information, checks in id order
        check_order = sorted(s.seed_id for s in seeds)
    return _two_phase_pass(seeds, starts, oracle, goals, bb_cfg, run_seed,
                           check_order, strategy)


def write_curves_csv(reports: list[BatchReport], path) -> None:
    """Cumulative curves of several runs as one tidy CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["queries", "aes_found", "strategy", "run_seed"])
        for report in reports:
            for queries, aes in report.curve():
                writer.writerow([queries, aes, report.strategy, report.run_seed])


def write_report_json(report: BatchReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report_json(path) -> BatchReport:
    with open(path) as fh:
        return BatchReport.from_dict(json.load(fh))
