import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advquery.losses import (AttackGoal, cw_margin, ensemble_loss, goal_gap,
                             goal_met, goal_met_logits, target_loss)
from advquery.nn import Layer, MlpModel, init_mlp, logits, softmax


def test_cw_margin_targeted_goal_met_clamps():
    assert cw_margin(np.array([5.0, 1.0]), AttackGoal.target(0)) == 0.0


def test_cw_margin_targeted_arithmetic():
    assert cw_margin(np.array([1.0, 5.0]), AttackGoal.target(0)) == 4.0


def test_cw_margin_untargeted_arithmetic():
    assert cw_margin(np.array([2.0, 3.0, 7.0]), AttackGoal.untargeted(2)) == 4.0


def test_cw_margin_class_out_of_range():
    with pytest.raises(ValueError):
        cw_margin(np.array([1.0, 2.0]), AttackGoal.target(2))


def test_target_loss_dominant_target_is_zero():
    assert target_loss(np.array([0.9, 0.1]), AttackGoal.target(0)) == 0.0


def test_target_loss_log_gap():
    got = target_loss(np.array([0.1, 0.9]), AttackGoal.target(0))
    assert got == pytest.approx(math.log(0.9) - math.log(0.1))
    assert got == pytest.approx(2.1972, abs=1e-4)


def test_target_loss_tie_is_zero():
    p = np.full(3, 1.0 / 3.0)
    assert target_loss(p, AttackGoal.untargeted(0)) == 0.0


def test_target_loss_floors_zero_probability():
    val = target_loss(np.array([0.0, 1.0]), AttackGoal.target(0))
    assert np.isfinite(val)
    assert val == pytest.approx(math.log(1.0) - math.log(1e-30))


def test_target_loss_shift_invariance():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.normal(size=5)
        goal = AttackGoal.target(int(rng.integers(5)))
        a = target_loss(softmax(z), goal)
        b = target_loss(softmax(z + 13.7), goal)
        assert a == pytest.approx(b, abs=1e-9)


def single_layer(w):
    w = np.asarray(w, dtype=np.float64)
    return MlpModel(layers=(
        Layer(weight=w, bias=np.zeros(w.shape[0]), activation="identity"),
    ))


def test_ensemble_loss_singleton():
    model = single_layer(np.eye(2))
    x = np.array([0.1, 0.9])
    goal = AttackGoal.target(0)
    assert ensemble_loss([model], x, goal) == cw_margin(logits(model, x), goal)


def test_ensemble_loss_additivity():
    model = single_layer([[1.0, 2.0], [3.0, 0.5]])
    x = np.array([0.4, 0.6])
    goal = AttackGoal.untargeted(1)
    single = ensemble_loss([model], x, goal)
    assert ensemble_loss([model, model], x, goal) == pytest.approx(2 * single)


def test_ensemble_loss_matches_loop_oracle():
    rng = np.random.default_rng(1)
    models = [init_mlp(4, (6,), 3, rng_seed=i) for i in range(3)]
    x = rng.uniform(size=4)
    goal = AttackGoal.target(2)
    expected = 0.0
    for m in models:
        expected += cw_margin(logits(m, x), goal)
    assert ensemble_loss(models, x, goal) == pytest.approx(expected, abs=1e-12)


def test_ensemble_loss_permutation_invariant():
    models = [init_mlp(3, (4,), 2, rng_seed=i) for i in range(4)]
    x = np.array([0.2, 0.5, 0.9])
    goal = AttackGoal.untargeted(0)
    assert ensemble_loss(models, x, goal) == pytest.approx(
        ensemble_loss(models[::-1], x, goal), abs=1e-12)


def test_ensemble_loss_rejects_empty():
    with pytest.raises(ValueError):
        ensemble_loss([], np.array([0.1]), AttackGoal.target(0))


def test_goal_met_basic():
    model = single_layer(np.eye(2))
    x = np.array([1.0, 0.2])  # logits (1.0, 0.2)
    assert goal_met(model, x, AttackGoal.target(0))
    assert not goal_met(model, x, AttackGoal.untargeted(0))


def test_goal_met_tie_breaks_low_index():
    assert goal_met_logits(np.array([3.0, 3.0]), AttackGoal.target(0))
    assert not goal_met_logits(np.array([3.0, 3.0]), AttackGoal.target(1))


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(min_value=-20, max_value=20), min_size=2, max_size=6),
    st.booleans(),
)
def test_cw_margin_zero_iff_goal_met_modulo_ties(raw, targeted):
    z = np.array(raw)
    cls = 0
    goal = AttackGoal(targeted=targeted, cls=cls)
    margin = cw_margin(z, goal)
    met = goal_met_logits(z, goal)
    gap = goal_gap(z, goal)
    if gap > 0:
        assert margin == 0.0 and met
    elif gap < 0:
        assert margin > 0.0 and not met
