"""Minimal dense neural-network engine: layers, losses, SGD training, gradient checks.

Everything runs on float64 numpy arrays with explicit forward/backward passes;
checkpoints store parameters as little-endian float32. Runs are fully
determined by their seeds (single-threaded reductions, seeded init and
batch order).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.01
CHECKPOINT_MAGIC = b"NNCK"
CHECKPOINT_VERSION = 1


class Activation(Enum):
    LEAKY_RELU = "leaky_relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


class DimensionMismatch(Exception):
    pass


class InvalidProbability(Exception):
    pass


class Divergence(Exception):
    """Training loss became non-finite."""


class LossKind(Enum):
    CROSS_ENTROPY = "cross_entropy"
    BINARY_CROSS_ENTROPY = "binary_cross_entropy"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.BINARY_CROSS_ENTROPY
    class_weights: np.ndarray | None = None  # strictly positive, one per class

    def weights_for(self, n_classes: int) -> np.ndarray:
        if self.class_weights is None:
            return np.ones(n_classes)
        w = np.asarray(self.class_weights, dtype=float)
        if w.shape != (n_classes,):
            raise DimensionMismatch(f"{w.shape[0]} class weights for {n_classes} classes")
        if np.any(w <= 0):
            raise ValueError("class weights must be strictly positive")
        return w


def balanced_class_weights(targets: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights w_c = N_total / (K * N_c) over one-hot targets.

    The multiclass balanced scheme, for cross-entropy training: samples of
    rare classes weigh more.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n, k = targets.shape
    positives = targets.sum(axis=0)
    positives = np.maximum(positives, 1.0)  # empty classes fall back to weight n/k
    return n / (k * positives)


def balanced_pos_weights(targets: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights for independent binary heads: w_c = N_neg_c / N_pos_c.

    Each class is its own two-class sub-problem; with the positive-term
    weighting of binary cross-entropy this equalizes the two polarities'
    total pull, so rare positives stop being drowned out.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    n = len(targets)
    positives = np.maximum(targets.sum(axis=0), 1.0)
    negatives = np.maximum(n - targets.sum(axis=0), 1.0)
    return negatives / positives


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10  # epochs without a dev improvement
    seed: int = 0
    repeats: int = 1
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 0 or self.early_stop_patience < 0:
            raise ValueError("batch_size/max_epochs/patience must be positive")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.LEAKY_RELU:
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if activation is Activation.SIGMOID:
        return _sigmoid(z)
    return z


def _activate_grad(z: np.ndarray, a: np.ndarray, activation: Activation) -> np.ndarray:
    """d activation / d z, using the already-computed activation a where cheaper."""
    if activation is Activation.LEAKY_RELU:
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if activation is Activation.SIGMOID:
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Layer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: Activation


class DenseNet:
    """A stack of affine layers with LeakyReLU/Sigmoid/Identity activations."""

    def __init__(self, layers: list[Layer], seed: int = 0):
        self.layers = layers
        self.seed = seed
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weights.shape[1] != nxt.weights.shape[0]:
                raise DimensionMismatch(
                    f"layer output {prev.weights.shape[1]} feeds input {nxt.weights.shape[0]}"
                )

    @classmethod
    def create(cls, dims: Sequence[int], activations: Sequence[Activation],
               seed: int = 0) -> DenseNet:
        """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
        if len(activations) != len(dims) - 1:
            raise DimensionMismatch("need one activation per layer")
        rng = np.random.default_rng(seed)
        layers = []
        for d_in, d_out, act in zip(dims, dims[1:], activations):
            bound = 1.0 / np.sqrt(d_in)
            layers.append(Layer(rng.uniform(-bound, bound, size=(d_in, d_out)),
                                np.zeros(d_out), act))
        return cls(layers, seed)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Layer-by-layer affine + activation; accepts one vector or a batch."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        out = self.forward_cached(np.atleast_2d(x))[0]
        return out[0] if single else out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[tuple]]:
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input dim {x.shape[1]}, net expects {self.input_dim}")
        caches = []
        a = x
        with np.errstate(over="ignore", invalid="ignore"):  # caught as Divergence below
            for layer in self.layers:
                z = a @ layer.weights + layer.bias
                a_next = _activate(z, layer.activation)
                caches.append((a, z, a_next))
                a = a_next
        if not np.all(np.isfinite(a)):
            raise Divergence("non-finite activations in forward pass")
        return a, caches

    def backward(self, caches: list[tuple], d_out: np.ndarray,
                 last_is_preactivation: bool = False
                 ) -> tuple[list[np.ndarray], np.ndarray]:
        """Backprop d_out (dL/d activations of last layer) to parameter grads and dL/dx.

        With last_is_preactivation, d_out is already dL/dz of the final layer
        (the fused sigmoid+BCE training path), so its activation derivative
        is skipped.
        """
        grads: list[np.ndarray] = []
        delta = d_out
        for i, (layer, (a_in, z, a_out)) in enumerate(
                zip(reversed(self.layers), reversed(caches))):
            if i == 0 and last_is_preactivation:
                dz = delta
            else:
                dz = delta * _activate_grad(z, a_out, layer.activation)
            grads.append(dz.sum(axis=0))  # bias grad
            grads.append(a_in.T @ dz)  # weight grad
            delta = dz @ layer.weights.T
        grads.reverse()
        return grads, delta


def loss(spec: LossSpec, scores: np.ndarray, targets: np.ndarray) -> float:
    """Mean over batch and classes of the weighted negative log-likelihood."""
    value, _ = loss_and_grad(spec, scores, targets)
    return value


def loss_and_grad(spec: LossSpec, scores: np.ndarray,
                  targets: np.ndarray) -> tuple[float, np.ndarray]:
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if scores.shape != targets.shape:
        raise DimensionMismatch(f"scores {scores.shape} vs targets {targets.shape}")
    n, k = scores.shape
    w = spec.weights_for(k)

    if spec.kind is LossKind.BINARY_CROSS_ENTROPY:
        if np.any(scores <= 0.0) or np.any(scores >= 1.0):
            raise InvalidProbability("scores must lie strictly inside (0, 1)")
        p = scores
        # class weight multiplies the positive-target term only, so
        # inverse-frequency weights rebalance each class's own positives
        per_term = -(w * targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p))
        value = float(np.mean(per_term))
        grad = (-w * targets / p + (1.0 - targets) / (1.0 - p)) / (n * k)
        return value, grad

    # softmax cross-entropy over raw scores; targets one-hot
    shifted = scores - scores.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    p = expz / expz.sum(axis=1, keepdims=True)
    value = float(np.mean(-(targets * w) * np.log(np.maximum(p, 1e-300))))
    sample_w = (targets * w).sum(axis=1, keepdims=True)  # weight of the true class
    grad = sample_w * (p - targets) / (n * k)
    return value, grad


def training_loss_and_grad(spec: LossSpec, out: np.ndarray, targets: np.ndarray,
                           final_activation: Activation
                           ) -> tuple[float, np.ndarray, bool]:
    """Loss value plus the gradient to feed backward, saturation-safe.

    Sigmoid outputs under binary cross-entropy use the fused formulation:
    the returned gradient is dL/dz of the final layer (exact and bounded even
    when the sigmoid saturates to 0 or 1), flagged by the returned bool.
    """
    if (spec.kind is LossKind.BINARY_CROSS_ENTROPY
            and final_activation is Activation.SIGMOID):
        out = np.atleast_2d(out)
        targets = np.atleast_2d(targets)
        n, k = out.shape
        w = spec.weights_for(k)
        p = np.clip(out, 1e-12, 1.0 - 1e-12)
        value = float(np.mean(-(w * targets * np.log(p)
                                + (1.0 - targets) * np.log(1.0 - p))))
        # dL/dz through the sigmoid: -w*y*(1-p) + (1-y)*p, bounded by max(w, 1)
        dz = (-w * targets * (1.0 - out) + (1.0 - targets) * out) / (n * k)
        return value, dz, True
    value, grad = loss_and_grad(spec, out, targets)
    return value, grad, False


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_metric: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -np.inf


class BatchSource:
    """Rows served batch-by-batch so sparse featurizers never densify everything."""

    def __len__(self) -> int:  # pragma: no cover - interface
        raise NotImplementedError

    def batch(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class ArraySource(BatchSource):
    def __init__(self, x: np.ndarray, y: np.ndarray):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.y = np.atleast_2d(np.asarray(y, dtype=float))
        if len(self.x) != len(self.y):
            raise DimensionMismatch("x and y row counts differ")

    def __len__(self) -> int:
        return len(self.x)

    def batch(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.x[indices], self.y[indices]


def _as_source(data) -> BatchSource:
    if isinstance(data, BatchSource):
        return data
    x, y = data
    return ArraySource(x, y)


def train(
    net: DenseNet,
    train_data,
    dev_data,
    loss_spec: LossSpec,
    config: TrainConfig,
    dev_metric: Callable[[DenseNet], float] | None = None,
) -> TrainHistory:
    """Mini-batch SGD with momentum; early stop restores the best-dev parameters.

    train_data/dev_data are (X, Y) pairs or BatchSources. The dev metric is
    maximized (default: negative dev loss). The run is fully determined by
    config.seed.
    """
    train_src, dev_src = _as_source(train_data), _as_source(dev_data)
    if len(train_src) == 0 or len(dev_src) == 0:
        raise ValueError("train and dev sets must be non-empty")

    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(p) for p in net.parameters()]
    history = TrainHistory()
    best_params = [p.copy() for p in net.parameters()]
    stall = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_src))
        batch_losses = []
        for lo in range(0, len(order), config.batch_size):
            xb, yb = train_src.batch(order[lo:lo + config.batch_size])
            out, caches = net.forward_cached(xb)
            value, d_out, fused = training_loss_and_grad(
                loss_spec, out, yb, net.layers[-1].activation)
            if not np.isfinite(value):
                raise Divergence(f"non-finite loss {value} at epoch {epoch}")
            batch_losses.append(value)
            grads, _ = net.backward(caches, d_out, last_is_preactivation=fused)
            for p, g, v in zip(net.parameters(), grads, velocity):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v

        dev_loss = evaluate_loss(net, dev_src, loss_spec)
        metric = dev_metric(net) if dev_metric is not None else -dev_loss
        history.epochs.append(EpochRecord(epoch, float(np.mean(batch_losses)),
                                          dev_loss, metric))
        if metric > history.best_metric:
            history.best_metric = metric
            history.best_epoch = epoch
            best_params = [p.copy() for p in net.parameters()]
            stall = 0
        else:
            stall += 1
            if stall > config.early_stop_patience:
                break

    for p, best in zip(net.parameters(), best_params):
        p[...] = best
    return history


def evaluate_loss(net: DenseNet, data, loss_spec: LossSpec,
                  batch_size: int = 1024) -> float:
    src = _as_source(data)
    total, count = 0.0, 0
    for lo in range(0, len(src), batch_size):
        xb, yb = src.batch(np.arange(lo, min(lo + batch_size, len(src))))
        out, _ = net.forward_cached(xb)
        value, _, _ = training_loss_and_grad(loss_spec, out, yb,
                                             net.layers[-1].activation)
        total += value * len(xb)
        count += len(xb)
    return total / count


def finite_difference_error(
    loss_fn: Callable[[], float],
    params: Iterable[np.ndarray],
    analytic: Iterable[np.ndarray],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic grads and central finite differences.

    loss_fn must recompute the loss from the live parameter arrays; every
    entry of every array is perturbed in place.
    """
    worst = 0.0
    for p, g in zip(params, analytic):
        flat_p, flat_g = p.reshape(-1), np.asarray(g).reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + epsilon
            up = loss_fn()
            flat_p[i] = orig - epsilon
            down = loss_fn()
            flat_p[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(flat_g[i]), abs(numeric), 1e-6)
            worst = max(worst, abs(flat_g[i] - numeric) / denom)
    return worst


def gradient_check(net: DenseNet, loss_spec: LossSpec,
                   sample: tuple[np.ndarray, np.ndarray],
                   epsilon: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences for one sample."""
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon outside [1e-7, 1e-3]")
    x, y = sample
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))

    out, caches = net.forward_cached(x)
    _, d_out = loss_and_grad(loss_spec, out, y)
    grads, _ = net.backward(caches, d_out)

    def loss_fn() -> float:
        scores, _ = net.forward_cached(x)
        return loss(loss_spec, scores, y)

    return finite_difference_error(loss_fn, net.parameters(), grads, epsilon)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------


def _loss_spec_to_json(spec: LossSpec | None) -> dict | None:
    if spec is None:
        return None
    return {
        "kind": spec.kind.value,
        "class_weights": None if spec.class_weights is None
        else [float(v) for v in np.asarray(spec.class_weights)],
    }


def _loss_spec_from_json(data: dict | None) -> LossSpec | None:
    if data is None:
        return None
    weights = data.get("class_weights")
    return LossSpec(LossKind(data["kind"]),
                    None if weights is None else np.asarray(weights, dtype=float))


def save_checkpoint(
    path: Path,
    net: DenseNet,
    loss_spec: LossSpec | None = None,
    meta: dict | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
    vocabulary: dict[str, int] | None = None,
) -> None:
    """Versioned container: header JSON, float32 little-endian parameter blobs,
    and an optional UTF-8 vocabulary table."""
    arrays: list[tuple[str, np.ndarray]] = []
    for i, layer in enumerate(net.layers):
        arrays.append((f"layer{i}.weights", layer.weights))
        arrays.append((f"layer{i}.bias", layer.bias))
    for name in sorted(extra_arrays or {}):
        arrays.append((name, extra_arrays[name]))

    header = {
        "dims": [net.input_dim] + [l.weights.shape[1] for l in net.layers],
        "activations": [l.activation.value for l in net.layers],
        "seed": net.seed,
        "loss": _loss_spec_to_json(loss_spec),
        "meta": meta or {},
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "has_vocabulary": vocabulary is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
        if vocabulary is not None:
            vblob = json.dumps(vocabulary, sort_keys=True, ensure_ascii=False).encode("utf-8")
            fh.write(struct.pack("<I", len(vblob)))
            fh.write(vblob)


@dataclass
class Checkpoint:
    net: DenseNet
    loss_spec: LossSpec | None
    meta: dict
    extra_arrays: dict[str, np.ndarray]
    vocabulary: dict[str, int] | None


def load_checkpoint(path: Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))

        named: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            named[spec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(float)

        vocabulary = None
        if header.get("has_vocabulary"):
            (vlen,) = struct.unpack("<I", fh.read(4))
            vocabulary = {k: int(v) for k, v in
                          json.loads(fh.read(vlen).decode("utf-8")).items()}

    layers = []
    for i, act in enumerate(header["activations"]):
        layers.append(Layer(named.pop(f"layer{i}.weights"), named.pop(f"layer{i}.bias"),
                            Activation(act)))
    net = DenseNet(layers, seed=header.get("seed", 0))
    return Checkpoint(net, _loss_spec_from_json(header.get("loss")),
                      header.get("meta", {}), named, vocabulary)
