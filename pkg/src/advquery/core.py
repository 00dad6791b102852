"""Shared domain types and the seeded-RNG contract.

All randomness in the package flows through explicit integer master seeds.
Independent streams (per attacked seed, per purpose) are derived with
``derive_rng`` so results never depend on global RNG state or on the order
in which seeds are attacked.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


class DataFormatError(ValueError):
    """A file or record did not match its declared on-disk format."""


def as_generator(rng) -> np.random.Generator:
    """Accept an int seed or a Generator and return a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(np.random.SeedSequence(int(rng)))


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent stream keyed by (master_seed, *keys).

    Hashing through SeedSequence keeps streams for distinct keys
    statistically independent, so per-seed attack randomness does not
    depend on attack order.
    """
    entropy = [int(master_seed)] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True, eq=False)
class Image:
    """A flat point in [0,1]^D plus its display shape.

    ``data`` is a read-only float64 vector; ``shape`` is (height, width,
    channels) with h*w*c == len(data). Compared by identity: numpy payloads
    make field-wise equality ambiguous.
    """

    data: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        arr = arr.reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        h, w, c = self.shape
        if h * w * c != arr.size or arr.size == 0:
            raise ValueError(
                f"shape {self.shape} does not match data length {arr.size}"
            )
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"image components outside [0,1]: min={lo}, max={hi}")

    @property
    def dim(self) -> int:
        return self.data.size

    def replace_data(self, data: np.ndarray) -> "Image":
        return Image(data=data, shape=self.shape)


def flat_shape(dim: int) -> tuple[int, int, int]:
    """Shape metadata for data without a natural 2-D layout."""
    return (1, dim, 1)


@dataclass(frozen=True, eq=False)
class LabeledExample:
    image: Image
    label: int

    def __post_init__(self):
        if self.label < 0:
            raise ValueError(f"negative label {self.label}")


@dataclass(frozen=True, eq=False)
class Seed:
    """A correctly classified natural input: the unit of attack and scheduling.

    The seed image is the center of the feasible L-inf ball for every attack
    on this seed, no matter where the attack starts.
    """

    seed_id: int
    image: Image
    label: int
    target_label: int | None = None


@dataclass
class QueryLedger:
    """Monotone counter of target-model queries with per-seed attribution.

    Updates are lock-protected so one oracle can be shared by concurrent
    per-seed attacks without losing counts.
    """

    total: int = 0
    per_seed: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, n: int, seed_id=None) -> None:
        if n < 0:
            raise ValueError("cannot record a negative query count")
        with self._lock:
            self.total += n
            self.per_seed[seed_id] = self.per_seed.get(seed_id, 0) + n

    def seed_total(self, seed_id) -> int:
        return self.per_seed.get(seed_id, 0)

    def check(self) -> None:
        if self.total != sum(self.per_seed.values()):
            raise AssertionError("ledger total does not match per-seed sum")
