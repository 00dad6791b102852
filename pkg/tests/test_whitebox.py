import numpy as np
import pytest

from advquery.core import Image, Seed
from advquery.losses import AttackGoal, goal_met
from advquery.nn import Layer, MlpModel, init_mlp, train_sgd
from advquery.data_io import make_synthetic
from advquery.whitebox import PgdConfig, clip_linf, pgd_ensemble


def make_seed(data, label=0, seed_id=0):
    arr = np.asarray(data, dtype=np.float64)
    return Seed(seed_id=seed_id,
                image=Image(data=arr, shape=(1, arr.size, 1)), label=label)


def test_clip_linf_inside_ball_unchanged():
    x = np.array([0.45, 0.55])
    out = clip_linf(x, np.array([0.5, 0.5]), 0.1)
    assert np.array_equal(out, x)
    assert np.array_equal(clip_linf(out, np.array([0.5, 0.5]), 0.1), out)


def test_clip_linf_clamp_arithmetic():
    out = clip_linf(np.full(4, 0.9), np.full(4, 0.5), 0.1)
    assert np.allclose(out, 0.6)


def test_clip_linf_box_binds():
    out = clip_linf(np.full(3, -0.2), np.zeros(3), 0.3)
    assert np.allclose(out, 0.0)


def test_clip_linf_shape_mismatch():
    with pytest.raises(ValueError):
        clip_linf(np.zeros(2), np.zeros(3), 0.1)


def test_clip_linf_is_componentwise_projection():
    # nearest feasible point per component: distance to result never exceeds
    # distance to any other feasible point
    rng = np.random.default_rng(0)
    center = rng.uniform(size=8)
    x = rng.uniform(-0.5, 1.5, size=8)
    eps = 0.2
    out = clip_linf(x, center, eps)
    lo, hi = np.maximum(center - eps, 0.0), np.minimum(center + eps, 1.0)
    assert np.all(out >= lo) and np.all(out <= hi)
    for _ in range(50):
        other = rng.uniform(lo, hi)
        assert np.max(np.abs(out - x)) <= np.max(np.abs(other - x)) + 1e-12


def linear_model(w_row):
    # two-class linear model: logit_1 - logit_0 = w . x
    w = np.stack([np.zeros_like(w_row), np.asarray(w_row, dtype=np.float64)])
    return MlpModel(layers=(
        Layer(weight=w, bias=np.zeros(2), activation="identity"),
    ))


def test_pgd_zero_step_fixed_point():
    # seed already fools the whole ensemble: k recorded at step 0, unchanged
    model = linear_model([1.0, 1.0])  # predicts class 1 for positive inputs
    seed = make_seed([0.8, 0.9], label=0)
    goal = AttackGoal.untargeted(0)
    assert goal_met(model, seed.image, goal)
    trace = pgd_ensemble(seed, [model], goal, PgdConfig(epsilon=0.1))
    assert trace.final_k == 1
    assert trace.steps_to_k[1] == 0
    assert np.array_equal(trace.candidate.data, seed.image.data)


def test_pgd_linear_dynamics_step_count():
    # every sign step raises the margin w.x by step * sum|w_i| while the box
    # is slack, so the scalar recurrence predicts the exact fooling step
    w = np.array([2.0, -1.0])
    model = linear_model(w)
    x0 = np.array([0.3, 0.7])  # margin w.x = -0.1, strictly unfooled
    seed = make_seed(x0, label=0)
    goal = AttackGoal.untargeted(0)
    cfg = PgdConfig(epsilon=0.5, step_size=0.01, max_steps=100)
    margin0 = float(w @ x0)
    rate = cfg.step_size * np.abs(w).sum()
    expected = int(np.floor(-margin0 / rate)) + 1
    assert expected == 4
    trace = pgd_ensemble(seed, [model], goal, cfg)
    assert trace.final_k == 1
    assert trace.steps_to_k[1] == expected


def test_pgd_budget_exhaustion_stays_feasible():
    # one step on a hard instance: nothing fooled, iterate stays in the ball
    data = make_synthetic(120, classes=2, dim=4, separation=6.0, rng_seed=0)
    model, _ = train_sgd(init_mlp(4, (8,), 2, rng_seed=1), data, epochs=10,
                         lr=0.3, batch_size=16, rng_seed=2)
    ex = data[0]
    seed = Seed(seed_id=0, image=ex.image, label=ex.label)
    goal = AttackGoal.untargeted(ex.label)
    cfg = PgdConfig(epsilon=0.01, step_size=0.001, max_steps=1)
    trace = pgd_ensemble(seed, [model], goal, cfg)
    assert np.max(np.abs(trace.candidate.data - seed.image.data)) <= cfg.epsilon + 1e-12
    assert trace.final_k in (0, 1)


def test_pgd_iterates_feasible_and_steps_monotone():
    rng = np.random.default_rng(3)
    data = make_synthetic(150, classes=3, dim=6, separation=2.0, rng_seed=4)
    models = [
        train_sgd(init_mlp(6, (8,), 3, rng_seed=i), data, epochs=6, lr=0.2,
                  batch_size=16, rng_seed=10 + i)[0]
        for i in range(3)
    ]
    for trial in range(10):
        x0 = rng.uniform(size=6)
        seed = make_seed(x0, label=int(rng.integers(3)), seed_id=trial)
        goal = AttackGoal.untargeted(seed.label)
        cfg = PgdConfig(epsilon=0.3, max_steps=30)
        trace = pgd_ensemble(seed, models, goal, cfg)
        assert np.max(np.abs(trace.candidate.data - x0)) <= cfg.epsilon + 1e-12
        assert np.all(trace.candidate.data >= 0.0)
        assert np.all(trace.candidate.data <= 1.0)
        ks = sorted(trace.steps_to_k)
        assert ks == list(range(1, trace.final_k + 1))
        steps = [trace.steps_to_k[k] for k in ks]
        assert steps == sorted(steps)
        # candidate fools exactly final_k surrogates
        fooled = sum(goal_met(m, trace.candidate, goal) for m in models)
        assert fooled == trace.final_k


def test_pgd_deterministic():
    data = make_synthetic(100, classes=2, dim=5, separation=2.0, rng_seed=6)
    models = [
        train_sgd(init_mlp(5, (6,), 2, rng_seed=i), data, epochs=4, lr=0.2,
                  batch_size=16, rng_seed=i)[0]
        for i in range(2)
    ]
    ex = data[3]
    seed = Seed(seed_id=0, image=ex.image, label=ex.label)
    goal = AttackGoal.untargeted(ex.label)
    cfg = PgdConfig(epsilon=0.3, max_steps=20, rng_seed=5, random_start=True)
    a = pgd_ensemble(seed, models, goal, cfg)
    b = pgd_ensemble(seed, models, goal, cfg)
    assert np.array_equal(a.candidate.data, b.candidate.data)
    assert a.steps_to_k == b.steps_to_k


@pytest.mark.parametrize("targeted", [False, True])
def test_pgd_cross_entropy_loss_direction(targeted):
    # the cross-entropy variant must walk the same way as the margin loss:
    # toward the target class, or away from the original one
    w = np.array([1.5, -0.8])
    model = linear_model(w)
    x0 = np.array([0.3, 0.7])  # predicts class 0 (w.x < 0)
    seed = make_seed(x0, label=0)
    goal = AttackGoal.target(1) if targeted else AttackGoal.untargeted(0)
    cfg = PgdConfig(epsilon=0.5, step_size=0.02, max_steps=100,
                    loss="cross_entropy")
    trace = pgd_ensemble(seed, [model], goal, cfg)
    assert trace.final_k == 1
    assert goal_met(model, trace.candidate, goal)


def test_pgd_rejects_empty_ensemble():
    seed = make_seed([0.5, 0.5])
    with pytest.raises(ValueError):
        pgd_ensemble(seed, [], AttackGoal.untargeted(0), PgdConfig(epsilon=0.1))


def test_pgd_config_validation():
    with pytest.raises(ValueError):
        PgdConfig(epsilon=0.1, step_size=0.2)
    with pytest.raises(ValueError):
        PgdConfig(epsilon=0.1, max_steps=0)
    assert PgdConfig(epsilon=0.3).step_size == pytest.approx(0.03)
