"""Shared desk-scale fixture: a hardened digits target plus three surrogates.

Building the fixture costs ~30 s (adversarial training dominates), so it is
session-scoped and shared by the acceptance suite. All constants are frozen;
the attack phenomena the suite checks (transfer rates, scheduling gains)
were calibrated against exactly these values.
"""

from dataclasses import dataclass

import pytest

from advquery.configs import AdversarialTrainSpec, DatasetSpec, ModelSpec
from advquery.core import derive_rng
from advquery.data_io import build_seed_pool
from advquery.nn import MlpModel, accuracy
from advquery.runner import _fit, adversarially_train, make_dataset, split_dataset
from advquery.whitebox import PgdConfig

FIXTURE_EPSILON = 0.3
FIXTURE_MASTERS = (5, 6, 7, 8, 9)
FIXTURE_POOL_PER_CLASS = 20
FIXTURE_POOL_SIZE = 200
# candidate generation: random-start PGD, epsilon/6 steps
FIXTURE_PGD = dict(epsilon=FIXTURE_EPSILON, step_size=0.05, max_steps=100,
                   random_start=True, rng_seed=11)
# per-estimator attack settings under the 2000-query budget
FIXTURE_NES = dict(estimator="nes", samples=20, delta=1e-3, step_size=0.075,
                   epsilon=FIXTURE_EPSILON, max_queries=2000)
FIXTURE_AUTOZOOM = dict(estimator="autozoom", samples=14, delta=1e-3,
                        step_size=0.075, epsilon=FIXTURE_EPSILON,
                        max_queries=2000)


@dataclass
class DigitsFixture:
    target: MlpModel
    locals_: list
    train_data: list
    eval_data: list
    target_accuracy: float

    def pgd_config(self) -> PgdConfig:
        return PgdConfig(**FIXTURE_PGD)

    def pool(self, master_seed: int):
        return build_seed_pool(
            self.eval_data, self.target, per_class=FIXTURE_POOL_PER_CLASS,
            rng_seed=master_seed, targeted=False, dataset_id="digits",
            max_total=FIXTURE_POOL_SIZE,
        )


def build_digits_fixture() -> DigitsFixture:
    data = make_dataset(DatasetSpec(kind="digits"))
    train_data, eval_data = split_dataset(data, 0.7, 0)
    dim = train_data[0].image.dim

    target, _ = _fit(ModelSpec(hidden_sizes=[128], epochs=40, lr=0.1),
                     train_data, dim, 10, derive_rng(0, 0))
    adv = AdversarialTrainSpec(epsilon=FIXTURE_EPSILON, pgd_steps=30,
                               rounds=16, epochs_per_round=2,
                               sample_size=len(train_data))
    target = adversarially_train(target, train_data, adv, 0, lr=0.08,
                                 batch_size=32)

    locals_ = []
    for i, hidden in enumerate((96, 80, 64)):
        model, _ = _fit(ModelSpec(hidden_sizes=[hidden], epochs=60, lr=0.08),
                        train_data, dim, 10, derive_rng(0, 1 + i))
        locals_.append(model)

    return DigitsFixture(
        target=target, locals_=locals_, train_data=train_data,
        eval_data=eval_data, target_accuracy=accuracy(target, eval_data),
    )


@pytest.fixture(scope="session")
def digits_fixture() -> DigitsFixture:
    fixture = build_digits_fixture()
    assert fixture.target_accuracy > 0.9
    return fixture
