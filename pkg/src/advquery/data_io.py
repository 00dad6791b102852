"""Dataset ingestion, seed-pool construction, and result persistence.

IDX parsing is strict: bad magic numbers, truncated payloads, or count
mismatches all raise DataFormatError rather than yielding garbage. Result
CSV files round-trip losslessly (floats use shortest-repr decimals).
"""

from __future__ import annotations

import csv
import gzip
import json
import logging
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DataFormatError, Image, LabeledExample, Seed, derive_rng
from .nn import MlpModel, logits, probs

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataFormatError(f"{path}: truncated while reading {what} "
                              f"(wanted {n} bytes, got {len(data)})")
    return data


def load_idx(images_path, labels_path) -> list[LabeledExample]:
    """Parse a big-endian IDX image/label file pair into [0,1]-scaled examples."""
    with _open_maybe_gzip(images_path) as fh:
        magic, count, rows, cols = struct.unpack(
            ">IIII", _read_exact(fh, 16, images_path, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad image magic 0x{magic:08x}, "
                f"expected 0x{IDX_IMAGE_MAGIC:08x}")
        raw = _read_exact(fh, count * rows * cols, images_path, "pixel data")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with _open_maybe_gzip(labels_path) as fh:
        magic, label_count = struct.unpack(
            ">II", _read_exact(fh, 8, labels_path, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}, "
                f"expected 0x{IDX_LABEL_MAGIC:08x}")
        labels = np.frombuffer(
            _read_exact(fh, label_count, labels_path, "label data"),
            dtype=np.uint8)
    if label_count != count:
        raise DataFormatError(
            f"count mismatch: {count} images vs {label_count} labels")
    shape = (rows, cols, 1)
    return [
        LabeledExample(image=Image(data=pixels[i] / 255.0, shape=shape),
                       label=int(labels[i]))
        for i in range(count)
    ]


def downsample_2x2(example: LabeledExample) -> LabeledExample:
    """Halve height and width by 2x2 mean pooling."""
    h, w, c = example.image.shape
    if h % 2 or w % 2:
        raise ValueError(f"cannot 2x2-pool odd shape {(h, w)}")
    grid = example.image.data.reshape(h, w, c)
    pooled = grid.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))
    return LabeledExample(
        image=Image(data=pooled.reshape(-1), shape=(h // 2, w // 2, c)),
        label=example.label)


def make_synthetic(n: int, classes: int, dim: int, separation: float,
                   rng_seed) -> list[LabeledExample]:
    """Gaussian blobs in [0,1]^dim, one centroid per class.

    The blob standard deviation is the minimum centroid distance divided by
    2*separation, so `separation` directly controls how many sigmas apart
    neighboring classes sit regardless of dimension.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if n < classes:
        raise ValueError("need at least one example per class")
    if separation <= 0:
        raise ValueError("separation must be positive")
    if dim < 1:
        raise ValueError("dim must be positive")
    rng = derive_rng(rng_seed)
    while True:
        centroids = rng.uniform(0.2, 0.8, size=(classes, dim))
        dists = [
            np.linalg.norm(centroids[i] - centroids[j])
            for i in range(classes) for j in range(i + 1, classes)
        ]
        min_dist = min(dists)
        if min_dist > 1e-6:
            break
    sigma = min_dist / (2.0 * separation)
    labels = np.arange(n) % classes
    points = centroids[labels] + sigma * rng.standard_normal((n, dim))
    points = np.clip(points, 0.0, 1.0)
    shape = (1, dim, 1)
    return [
        LabeledExample(image=Image(data=points[i], shape=shape),
                       label=int(labels[i]))
        for i in range(n)
    ]


def load_digits_dataset() -> list[LabeledExample]:
    """The bundled 8x8 handwritten-digits set, scaled to [0,1]."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    data = digits.data / 16.0
    return [
        LabeledExample(image=Image(data=data[i], shape=(8, 8, 1)),
                       label=int(digits.target[i]))
        for i in range(data.shape[0])
    ]


def group_by_class(examples: list[LabeledExample]) -> dict[int, list[Image]]:
    grouped = defaultdict(list)
    for ex in examples:
        grouped[ex.label].append(ex.image)
    return dict(grouped)


def least_likely_targets(model: MlpModel,
                         by_class: dict[int, list[Image]]) -> dict[int, int]:
    """Per class: the mode over examples of the least-probable predicted class.

    Ties in the per-example argmin and in the mode both break to the lowest
    class index.
    """
    targets = {}
    for cls, images in sorted(by_class.items()):
        if not images:
            raise ValueError(f"class {cls} has no examples")
        votes = Counter()
        for image in images:
            p = probs(model, image)
            votes[int(np.argmin(p))] += 1
        best = max(votes.items(), key=lambda kv: (kv[1], -kv[0]))
        targets[cls] = best[0]
    return targets


@dataclass
class SeedPool:
    """Attack-ready seeds: correctly classified, optionally with target labels."""

    seeds: list[Seed]
    class_counts: dict[int, int]
    dataset_id: str
    sampling_seed: int
    targeted: bool


def build_seed_pool(
    examples: list[LabeledExample],
    model: MlpModel,
    per_class: int = 100,
    rng_seed: int = 0,
    targeted: bool = False,
    dataset_id: str = "unknown",
    max_total: int | None = None,
) -> SeedPool:
    """Sample up to per_class correctly classified examples from each class.

    Misclassified examples never enter the pool. Classes short on correct
    examples contribute what they have. For targeted pools each seed carries
    the least-likely class of its own class as the target label.
    """
    rng = derive_rng(rng_seed)
    xs = np.stack([ex.image.data for ex in examples])
    preds = np.argmax(logits(model, xs), axis=1)
    correct_by_class = defaultdict(list)
    for ex, pred in zip(examples, preds):
        if int(pred) == ex.label:
            correct_by_class[ex.label].append(ex)

    target_map = {}
    if targeted:
        target_map = least_likely_targets(
            model, {c: [e.image for e in v] for c, v in correct_by_class.items()})

    seeds = []
    class_counts = {}
    for cls in sorted(correct_by_class):
        pool = correct_by_class[cls]
        take = min(per_class, len(pool))
        if take < per_class:
            log.warning("class %d: only %d correctly classified examples "
                        "available (wanted %d)", cls, take, per_class)
        idx = rng.choice(len(pool), size=take, replace=False)
        class_counts[cls] = take
        for i in sorted(idx):
            ex = pool[i]
            seeds.append(Seed(
                seed_id=len(seeds), image=ex.image, label=ex.label,
                target_label=target_map.get(cls) if targeted else None,
            ))
    if max_total is not None and len(seeds) > max_total:
        keep = sorted(rng.choice(len(seeds), size=max_total, replace=False))
        seeds = [Seed(seed_id=new_id, image=seeds[i].image,
                      label=seeds[i].label, target_label=seeds[i].target_label)
                 for new_id, i in enumerate(keep)]
        class_counts = Counter(s.label for s in seeds)
        class_counts = dict(sorted(class_counts.items()))
    return SeedPool(seeds=seeds, class_counts=class_counts,
                    dataset_id=dataset_id, sampling_seed=rng_seed,
                    targeted=targeted)


RESULT_COLUMNS = ("seed_id", "found_by", "success", "queries_used",
                  "strategy", "estimator", "epsilon", "run_seed")


@dataclass(frozen=True)
class ResultRow:
    seed_id: int
    found_by: str
    success: bool
    queries_used: int
    strategy: str
    estimator: str
    epsilon: float
    run_seed: int


def write_results(rows: list[ResultRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([
                row.seed_id, row.found_by, "true" if row.success else "false",
                row.queries_used, row.strategy, row.estimator,
                repr(row.epsilon), row.run_seed,
            ])


def read_results(path) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(RESULT_COLUMNS):
            raise DataFormatError(f"{path}: unexpected header {header}")
        for line_no, record in enumerate(reader, start=2):
            if len(record) != len(RESULT_COLUMNS):
                raise DataFormatError(
                    f"{path}: line {line_no}: expected "
                    f"{len(RESULT_COLUMNS)} fields, got {len(record)}")
            try:
                rows.append(ResultRow(
                    seed_id=int(record[0]),
                    found_by=record[1],
                    success={"true": True, "false": False}[record[2]],
                    queries_used=int(record[3]),
                    strategy=record[4],
                    estimator=record[5],
                    epsilon=float(record[6]),
                    run_seed=int(record[7]),
                ))
            except (ValueError, KeyError) as exc:
                raise DataFormatError(
                    f"{path}: line {line_no}: {exc}") from exc
    return rows


def write_json(doc: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
