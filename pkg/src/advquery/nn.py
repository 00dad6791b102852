"""Dense feed-forward classifiers with exact input gradients.

Models are plain weight/bias stacks evaluated with numpy. They are immutable
after construction, so one instance can serve simultaneously as a white-box
surrogate (direct calls) and as the model behind a query-counting oracle.
The final layer is always identity: its output is the logit vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import Image, LabeledExample, as_generator

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ValueError(f"inconsistent layer shapes {w.shape} / {b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class MlpModel:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ValueError("layer dimensions do not chain")
        if self.layers[-1].activation != "identity":
            raise ValueError("final layer must be identity (logit output)")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[0]


@dataclass(frozen=True)
class LossSpec:
    """Scalar objective whose input gradient ``grad_input`` computes.

    kind:
      cross_entropy   -log softmax(z)_label, for training and sanity checks
      cw_margin       clamped logit margin against the goal (0 once met)
      log_confidence  the ascended black-box objective: log f_t if targeted,
                      -log f_y if untargeted
    ``label`` is the target class when targeted, the original class otherwise.
    """

    kind: str
    label: int
    targeted: bool = True

    def __post_init__(self):
        if self.kind not in ("cross_entropy", "cw_margin", "log_confidence"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


def _as_matrix(x) -> tuple[np.ndarray, bool]:
    arr = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim == 2:
        return arr, False
    raise ValueError(f"expected vector or matrix input, got ndim={arr.ndim}")


def _check_dim(model: MlpModel, xs: np.ndarray) -> None:
    if xs.shape[1] != model.input_dim:
        raise ValueError(
            f"input dim {xs.shape[1]} does not match model input_dim {model.input_dim}"
        )


def _forward(model: MlpModel, xs: np.ndarray, keep_trace: bool = False):
    """Batch forward pass; optionally keep activations for backprop."""
    pre_acts = []
    acts = [xs]
    a = xs
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        if keep_trace:
            pre_acts.append(z)
            acts.append(a)
    if keep_trace:
        return a, pre_acts, acts
    return a


def logits(model: MlpModel, x) -> np.ndarray:
    """Logit vector Z(x); accepts an Image, a vector, or a batch matrix."""
    xs, single = _as_matrix(x)
    _check_dim(model, xs)
    out = _forward(model, xs)
    return out[0] if single else out


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def probs(model: MlpModel, x) -> np.ndarray:
    """Softmax probabilities f(x)."""
    return softmax(logits(model, x))


def _dloss_dlogits(z: np.ndarray, loss: LossSpec) -> np.ndarray:
    """Gradient of the scalar loss w.r.t. a batch of logit rows.

    Argmax ties break to the lowest index; the clamped margin uses the zero
    subgradient once the goal is met, so met goals produce a zero row.
    """
    batch, n_classes = z.shape
    if not 0 <= loss.label < n_classes:
        raise ValueError(f"class {loss.label} out of range for {n_classes} classes")
    grad = np.zeros_like(z)
    if loss.kind == "cross_entropy":
        p = softmax(z)
        grad = p.copy()
        grad[np.arange(batch), loss.label] -= 1.0
        return grad
    if loss.kind == "log_confidence":
        p = softmax(z)
        if loss.targeted:
            grad = -p
            grad[np.arange(batch), loss.label] += 1.0
        else:
            grad = p.copy()
            grad[np.arange(batch), loss.label] -= 1.0
        return grad
    # cw_margin
    masked = z.copy()
    masked[:, loss.label] = -np.inf
    other = np.argmax(masked, axis=1)
    if loss.targeted:
        margin = masked[np.arange(batch), other] - z[:, loss.label]
    else:
        margin = z[:, loss.label] - masked[np.arange(batch), other]
    active = margin > 0.0
    rows = np.nonzero(active)[0]
    if loss.targeted:
        grad[rows, other[rows]] = 1.0
        grad[rows, loss.label] = -1.0
    else:
        grad[rows, loss.label] = 1.0
        grad[rows, other[rows]] = -1.0
    return grad


def grad_input(model: MlpModel, x, loss: LossSpec) -> np.ndarray:
    """Exact backpropagated gradient of the scalar loss w.r.t. the input."""
    xs, single = _as_matrix(x)
    _check_dim(model, xs)
    out, pre_acts, _ = _forward(model, xs, keep_trace=True)
    g = _dloss_dlogits(out, loss)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        if layer.activation == "relu":
            g = g * (pre_acts[idx] > 0.0)
        g = g @ layer.weight
    return g[0] if single else g


def init_mlp(input_dim: int, hidden_sizes, num_classes: int, rng_seed) -> MlpModel:
    """Glorot-uniform weights, zero biases, ReLU hidden layers."""
    rng = as_generator(rng_seed)
    dims = [input_dim] + list(hidden_sizes) + [num_classes]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_out, fan_in))
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(Layer(weight=w, bias=np.zeros(fan_out), activation=act))
    return MlpModel(layers=tuple(layers))


def _stack_dataset(data: list[LabeledExample]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([ex.image.data for ex in data])
    ys = np.array([ex.label for ex in data], dtype=np.int64)
    return xs, ys


def accuracy(model: MlpModel, data: list[LabeledExample]) -> float:
    xs, ys = _stack_dataset(data)
    pred = np.argmax(logits(model, xs), axis=1)
    return float(np.mean(pred == ys))


def train_sgd(
    model: MlpModel,
    data: list[LabeledExample],
    epochs: int,
    lr: float,
    batch_size: int,
    rng_seed,
) -> tuple[MlpModel, float]:
    """Mini-batch SGD on cross-entropy; returns (trained model, train accuracy).

    Deterministic given rng_seed. The input model is left untouched; a new
    model is returned (epochs=0 returns a copy with identical weights).
    """
    if not data:
        raise ValueError("empty training data")
    if lr <= 0:
        raise ValueError("lr must be positive")
    xs, ys = _stack_dataset(data)
    _check_dim(model, xs)
    if ys.max() >= model.num_classes:
        raise ValueError("label out of range for model classes")
    rng = as_generator(rng_seed)
    weights = [layer.weight.copy() for layer in model.layers]
    biases = [layer.bias.copy() for layer in model.layers]
    acts_tags = [layer.activation for layer in model.layers]
    n = xs.shape[0]
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = xs[idx], ys[idx]
            # forward
            pre, acts = [], [xb]
            a = xb
            for w, b, tag in zip(weights, biases, acts_tags):
                z = a @ w.T + b
                a = np.maximum(z, 0.0) if tag == "relu" else z
                pre.append(z)
                acts.append(a)
            p = softmax(a)
            g = p
            g[np.arange(len(yb)), yb] -= 1.0
            g /= len(yb)
            # backward
            for li in range(len(weights) - 1, -1, -1):
                if acts_tags[li] == "relu":
                    g = g * (pre[li] > 0.0)
                dw = g.T @ acts[li]
                db = g.sum(axis=0)
                g = g @ weights[li]
                weights[li] -= lr * dw
                biases[li] -= lr * db
    trained = MlpModel(
        layers=tuple(
            Layer(weight=w, bias=b, activation=tag)
            for w, b, tag in zip(weights, biases, acts_tags)
        )
    )
    return trained, accuracy(trained, data)


def model_to_dict(model: MlpModel) -> dict:
    return {
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "layers": [
            {
                "rows": layer.weight.shape[0],
                "cols": layer.weight.shape[1],
                "weights": [float(v) for v in layer.weight.reshape(-1)],
                "bias": [float(v) for v in layer.bias],
                "activation": layer.activation,
            }
            for layer in model.layers
        ],
    }


def model_from_dict(doc: dict) -> MlpModel:
    layers = []
    for spec in doc["layers"]:
        w = np.array(spec["weights"], dtype=np.float64).reshape(
            spec["rows"], spec["cols"]
        )
        layers.append(
            Layer(weight=w, bias=np.array(spec["bias"], dtype=np.float64),
                  activation=spec["activation"])
        )
    model = MlpModel(layers=tuple(layers))
    if model.input_dim != doc["input_dim"] or model.num_classes != doc["num_classes"]:
        raise ValueError("model document dims inconsistent with layer shapes")
    return model


def save_model(model: MlpModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
