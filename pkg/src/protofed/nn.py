"""Minimal differentiable network over flat parameter vectors.

Supports the fixed detection architecture (two 1-D conv blocks with max
pooling and dropout, a dense embedding layer, and a log-softmax head), plain
SGD, gradients of a three-term training objective with respect to all
parameters, and gradients with respect to the input (used by the
reconstruction attack). Tabular inputs are treated as 1-channel 1-D signals.

Everything is float64 numpy; there is no autodiff graph, just a fixed
sequential stack with handwritten forward/backward per layer kind.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .prototypes import PrototypeSet, alignment_loss, compute_local_prototypes

# ---------------------------------------------------------------------------
# Layer descriptors


@dataclass(frozen=True)
class Conv1d:
    in_channels: int
    out_channels: int
    kernel: int = 3  # odd, stride 1, zero 'same' padding

    kind = "conv1d"

    def param_shapes(self):
        return [(self.out_channels, self.in_channels, self.kernel), (self.out_channels,)]

    def fan_in(self) -> int:
        return self.in_channels * self.kernel


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int

    kind = "dense"

    def param_shapes(self):
        return [(self.in_dim, self.out_dim), (self.out_dim,)]

    def fan_in(self) -> int:
        return self.in_dim


@dataclass(frozen=True)
class Relu:
    kind = "relu"

    def param_shapes(self):
        return []


@dataclass(frozen=True)
class MaxPool1d:
    width: int = 2

    kind = "maxpool1d"

    def param_shapes(self):
        return []


@dataclass(frozen=True)
class Dropout:
    rate: float

    kind = "dropout"

    def param_shapes(self):
        return []


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"

    def param_shapes(self):
        return []


@dataclass(frozen=True)
class LogSoftmax:
    kind = "logsoftmax"

    def param_shapes(self):
        return []


_LAYER_KINDS = {
    "conv1d": Conv1d,
    "dense": Dense,
    "relu": Relu,
    "maxpool1d": MaxPool1d,
    "dropout": Dropout,
    "flatten": Flatten,
    "logsoftmax": LogSoftmax,
}


# ---------------------------------------------------------------------------
# Model parameters


@dataclass
class ModelParams:
    """Network parameters as one flat vector plus the layer layout needed to
    rebuild the computation.

    The flat vector is split at `embedding_param_count` into the embedding
    section (everything through the dense embedding layer and its ReLU) and
    the head section (the final dense layer feeding log-softmax).
    """

    values: np.ndarray
    layers: tuple
    embedding_layers: int  # layers[:embedding_layers] form the embedding function
    input_dim: int
    num_classes: int
    embedding_dim: int
    _offsets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        offsets, total = [], 0
        for layer in self.layers:
            spans = []
            for shape in layer.param_shapes():
                size = int(np.prod(shape))
                spans.append((total, shape))
                total += size
            offsets.append(tuple(spans))
        self._offsets = tuple(offsets)
        if self.values.shape != (total,):
            raise ValueError(f"expected {total} parameters, got {self.values.shape}")
        self.embedding_param_count = sum(
            int(np.prod(shape))
            for layer in self.layers[: self.embedding_layers]
            for shape in layer.param_shapes()
        )

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def embedding_section(self) -> np.ndarray:
        return self.values[: self.embedding_param_count]

    @property
    def head_section(self) -> np.ndarray:
        return self.values[self.embedding_param_count :]

    def layer_arrays(self, index: int) -> list[np.ndarray]:
        """Views into the flat vector, reshaped for layer `index`."""
        return [
            self.values[start : start + int(np.prod(shape))].reshape(shape)
            for start, shape in self._offsets[index]
        ]

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(
            values=np.asarray(values, dtype=np.float64),
            layers=self.layers,
            embedding_layers=self.embedding_layers,
            input_dim=self.input_dim,
            num_classes=self.num_classes,
            embedding_dim=self.embedding_dim,
        )

    def copy(self) -> "ModelParams":
        return self.with_values(self.values.copy())

    def layout_dict(self) -> dict:
        """JSON-serializable architecture description (no parameter values)."""
        layers = []
        for layer in self.layers:
            entry = {"kind": layer.kind}
            for name in getattr(layer, "__dataclass_fields__", {}):
                entry[name] = getattr(layer, name)
            layers.append(entry)
        return {
            "layers": layers,
            "embedding_layers": self.embedding_layers,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_layout_dict(cls, layout: dict, values: np.ndarray) -> "ModelParams":
        layers = []
        for entry in layout["layers"]:
            entry = dict(entry)
            layer_cls = _LAYER_KINDS[entry.pop("kind")]
            layers.append(layer_cls(**entry))
        return cls(
            values=values,
            layers=tuple(layers),
            embedding_layers=layout["embedding_layers"],
            input_dim=layout["input_dim"],
            num_classes=layout["num_classes"],
            embedding_dim=layout["embedding_dim"],
        )


def _init_values(layers: Sequence, rng: np.random.Generator) -> np.ndarray:
    """Fan-in-scaled uniform init, drawn layer by layer (weights then bias)."""
    chunks = []
    for layer in layers:
        shapes = layer.param_shapes()
        if not shapes:
            continue
        bound = 1.0 / np.sqrt(layer.fan_in())
        for shape in shapes:
            chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    if not chunks:
        return np.zeros(0)
    return np.concatenate(chunks)


def build_model(
    input_dim: int,
    num_classes: int,
    seed: int,
    conv_channels: tuple[int, int] = (64, 128),
    dense_width: int = 128,
    kernel: int = 3,
    pool: int = 2,
    dropout_rates: tuple[float, float] = (0.2, 0.5),
) -> ModelParams:
    """Build the detection CNN; defaults give the standard architecture.

    Narrow `conv_channels`/`dense_width` are intended for tests where full
    finite-difference sweeps must stay cheap.
    """
    if input_dim < 4:
        raise ValueError("input_dim must be >= 4 (two pooling stages)")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if kernel % 2 != 1:
        raise ValueError("kernel must be odd (same padding)")
    c1, c2 = conv_channels
    l1 = input_dim // pool
    l2 = l1 // pool
    layers = (
        Conv1d(1, c1, kernel),
        Relu(),
        MaxPool1d(pool),
        Dropout(dropout_rates[0]),
        Conv1d(c1, c2, kernel),
        Relu(),
        MaxPool1d(pool),
        Dropout(dropout_rates[1]),
        Flatten(),
        Dense(c2 * l2, dense_width),
        Relu(),
        Dense(dense_width, num_classes),
        LogSoftmax(),
    )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)])))
    return ModelParams(
        values=_init_values(layers, rng),
        layers=layers,
        embedding_layers=11,
        input_dim=input_dim,
        num_classes=num_classes,
        embedding_dim=dense_width,
    )


def build_mlp(
    input_dim: int,
    hidden: Sequence[int],
    num_classes: int,
    seed: int,
) -> ModelParams:
    """Small dense network for fast tests; the last hidden layer (after its
    ReLU) is the embedding."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if not hidden:
        raise ValueError("need at least one hidden layer for an embedding")
    layers: list = []
    prev = input_dim
    for width in hidden:
        layers.extend([Dense(prev, width), Relu()])
        prev = width
    embedding_layers = len(layers)
    layers.extend([Dense(prev, num_classes), LogSoftmax()])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed)])))
    return ModelParams(
        values=_init_values(layers, rng),
        layers=tuple(layers),
        embedding_layers=embedding_layers,
        input_dim=input_dim,
        num_classes=num_classes,
        embedding_dim=hidden[-1],
    )


# ---------------------------------------------------------------------------
# Forward


@dataclass
class ForwardResult:
    embeddings: np.ndarray  # (N, d)
    log_probs: np.ndarray  # (N, K)
    caches: list
    train_mode: bool


def _layer_forward(layer, arrays, x, train_mode, rng):
    # Conv activations run channels-last, (N, L, C): contiguous cols -> one GEMM.
    if isinstance(layer, Conv1d):
        if x.ndim == 2:
            x = x[:, :, None]
        w, b = arrays
        n, length, _ = x.shape
        pad = (layer.kernel - 1) // 2
        xp = np.zeros((n, length + 2 * pad, layer.in_channels))
        xp[:, pad : pad + length, :] = x
        cols = np.concatenate(
            [xp[:, j : j + length, :] for j in range(layer.kernel)], axis=2
        ).reshape(n * length, layer.kernel * layer.in_channels)
        # weight rows ordered (kernel tap, in channel) to match the cols layout
        wmat = w.transpose(2, 1, 0).reshape(layer.kernel * layer.in_channels, layer.out_channels)
        y = (cols @ wmat).reshape(n, length, layer.out_channels) + b
        return y, (x.shape, cols)
    if isinstance(layer, Dense):
        w, b = arrays
        return x @ w + b, x
    if isinstance(layer, Relu):
        mask = x > 0
        return x * mask, mask
    if isinstance(layer, MaxPool1d):
        n, length, c = x.shape
        out_len = length // layer.width
        xt = x[:, : out_len * layer.width, :].reshape(n, out_len, layer.width, c)
        if layer.width == 2:
            a, bb = xt[:, :, 0, :], xt[:, :, 1, :]
            first = a >= bb  # ties to the earlier position
            return np.where(first, a, bb), (length, first)
        idx = np.argmax(xt, axis=2)
        y = np.take_along_axis(xt, idx[:, :, None, :], axis=2)[:, :, 0, :]
        return y, (length, idx)
    if isinstance(layer, Dropout):
        if not train_mode or layer.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode forward through dropout needs an rng")
        keep = rng.random(x.shape) >= layer.rate
        scaled = keep / (1.0 - layer.rate)
        return x * scaled, scaled
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1), x.shape
    if isinstance(layer, LogSoftmax):
        shift = x - np.max(x, axis=1, keepdims=True)
        y = shift - np.log(np.sum(np.exp(shift), axis=1, keepdims=True))
        return y, y
    raise TypeError(f"unknown layer {layer!r}")


def forward(
    model: ModelParams,
    batch: np.ndarray,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ForwardResult:
    """Run the network; dropout fires only in train mode (inverted scaling,
    so eval needs no rescaling)."""
    x = np.asarray(batch, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ValueError(f"batch width {x.shape[1]} != input_dim {model.input_dim}")
    caches = []
    embeddings = None
    for i, layer in enumerate(model.layers):
        x, cache = _layer_forward(layer, model.layer_arrays(i), x, train_mode, rng)
        caches.append(cache)
        if i == model.embedding_layers - 1:
            embeddings = x
    return ForwardResult(embeddings=embeddings, log_probs=x, caches=caches, train_mode=train_mode)


def _layer_backward(layer, arrays, cache, dy, need_params):
    """Return (dx, [param grads] or None)."""
    if isinstance(layer, Conv1d):
        x_shape, cols = cache
        w, _ = arrays
        n, length, c_in = x_shape
        k, c_out = layer.kernel, layer.out_channels
        pad = (k - 1) // 2
        dyt = dy.reshape(n * length, c_out)
        wmat = w.transpose(2, 1, 0).reshape(k * c_in, c_out)
        grads = None
        if need_params:
            dwmat = cols.T @ dyt  # (k*C, out)
            dw = dwmat.reshape(k, c_in, c_out).transpose(2, 1, 0)
            grads = [dw, np.sum(dy, axis=(0, 1))]
        dcols = (dyt @ wmat.T).reshape(n, length, k * c_in)
        dxp = np.zeros((n, length + 2 * pad, c_in))
        for j in range(k):
            dxp[:, j : j + length, :] += dcols[:, :, j * c_in : (j + 1) * c_in]
        return dxp[:, pad : pad + length, :], grads
    if isinstance(layer, Dense):
        x = cache
        w, _ = arrays
        grads = [x.T @ dy, np.sum(dy, axis=0)] if need_params else None
        return dy @ w.T, grads
    if isinstance(layer, Relu):
        return dy * cache, None
    if isinstance(layer, MaxPool1d):
        length, sel = cache
        n, out_len, c = dy.shape
        dxt = np.zeros((n, out_len, layer.width, c))
        if layer.width == 2:
            dxt[:, :, 0, :] = dy * sel
            dxt[:, :, 1, :] = dy * ~sel
        else:
            np.put_along_axis(dxt, sel[:, :, None, :], dy[:, :, None, :], axis=2)
        dx = np.zeros((n, length, c))
        dx[:, : out_len * layer.width, :] = dxt.reshape(n, out_len * layer.width, c)
        return dx, None
    if isinstance(layer, Dropout):
        return (dy if cache is None else dy * cache), None
    if isinstance(layer, Flatten):
        return dy.reshape(cache), None
    if isinstance(layer, LogSoftmax):
        y = cache
        return dy - np.exp(y) * np.sum(dy, axis=1, keepdims=True), None
    raise TypeError(f"unknown layer {layer!r}")


def _backprop(
    model: ModelParams,
    result: ForwardResult,
    d_logprobs: Optional[np.ndarray],
    d_embeddings: Optional[np.ndarray],
    need_params: bool = True,
    need_input: bool = False,
):
    """Walk the stack top-down, injecting the embedding-space gradient at the
    embedding boundary. Returns (flat param grads or None, input grads or None)."""
    grad = np.zeros(model.m) if need_params else None
    if d_logprobs is None:
        start = model.embedding_layers - 1
        dy = np.zeros_like(result.embeddings)
    else:
        start = len(model.layers) - 1
        dy = d_logprobs
    # Conv input may have been promoted to (N, 1, F); track to unpromote at the end.
    for i in range(start, -1, -1):
        if i == model.embedding_layers - 1 and d_embeddings is not None:
            dy = dy + d_embeddings
        dx, grads = _layer_backward(
            model.layers[i], model.layer_arrays(i), result.caches[i], dy, need_params
        )
        if need_params and grads is not None:
            for (startpos, shape), g in zip(model._offsets[i], grads):
                grad[startpos : startpos + int(np.prod(shape))] = g.ravel()
        dy = dx
    d_input = None
    if need_input:
        d_input = dy
        if d_input.ndim == 3:  # conv stack promoted (N, F) -> (N, F, 1)
            d_input = d_input[:, :, 0]
    return grad, d_input


# ---------------------------------------------------------------------------
# The training objective: cross-entropy + prototype alignment + proximal pull


@dataclass
class LossSpec:
    """Weighted selection of the three local-objective terms.

    cross-entropy (mean over the batch), alignment of the batch's class
    prototypes to previous-round global prototypes (weight `align_weight`,
    classes missing from either side are skipped), and the proximal pull
    0.5 * prox_weight * ||w - w_ref||^2.
    """

    ce_weight: float = 1.0
    align_weight: float = 0.0
    prox_weight: float = 0.0
    global_prototypes: Optional[PrototypeSet] = None
    prox_reference: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.align_weight > 0 and self.global_prototypes is None:
            raise ValueError("align_weight > 0 requires global_prototypes")
        if self.prox_weight > 0 and self.prox_reference is None:
            raise ValueError("prox_weight > 0 requires prox_reference")


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


def _loss_terms(model, result, labels, spec):
    """Per-term weighted loss values plus upstream gradients (d_logprobs,
    d_embeddings). Terms with zero weight are skipped entirely."""
    n = result.log_probs.shape[0]
    parts = {"cross_entropy": 0.0, "alignment": 0.0, "proximal": 0.0}
    d_logprobs = None
    d_embeddings = None

    if spec.ce_weight != 0.0:
        picked = result.log_probs[np.arange(n), labels]
        parts["cross_entropy"] = spec.ce_weight * float(-np.mean(picked))
        d_logprobs = np.zeros_like(result.log_probs)
        d_logprobs[np.arange(n), labels] = -spec.ce_weight / n

    if spec.align_weight != 0.0:
        batch_protos = compute_local_prototypes(
            result.embeddings, labels, model.num_classes
        )
        raw, proto_grads = alignment_loss(batch_protos, spec.global_prototypes)
        parts["alignment"] = spec.align_weight * raw
        shared = batch_protos.present & spec.global_prototypes.present
        if shared.any():
            counts = batch_protos.support
            d_embeddings = np.zeros_like(result.embeddings)
            for j in np.flatnonzero(shared):
                d_embeddings[labels == j] = spec.align_weight * proto_grads[j] / counts[j]

    if spec.prox_weight != 0.0:
        diff = model.values - spec.prox_reference
        parts["proximal"] = 0.5 * spec.prox_weight * float(diff @ diff)

    return parts, d_logprobs, d_embeddings


def loss_and_gradient(
    model: ModelParams,
    batch: np.ndarray,
    labels: np.ndarray,
    spec: LossSpec,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[float, dict, np.ndarray]:
    """Objective value, per-term breakdown, and the flat gradient over all
    parameters (aligned index-by-index with ModelParams.values)."""
    labels = _check_labels(labels, model.num_classes)
    result = forward(model, batch, train_mode=train_mode, rng=rng)
    parts, d_logprobs, d_embeddings = _loss_terms(model, result, labels, spec)
    if d_logprobs is None and d_embeddings is None:
        grad = np.zeros(model.m)
    else:
        grad, _ = _backprop(model, result, d_logprobs, d_embeddings, need_params=True)
    if spec.prox_weight != 0.0:
        grad += spec.prox_weight * (model.values - spec.prox_reference)
    return sum(parts.values()), parts, grad


def backward(
    model: ModelParams,
    batch: np.ndarray,
    labels: np.ndarray,
    spec: LossSpec,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Gradient of the configured objective with respect to all parameters."""
    return loss_and_gradient(model, batch, labels, spec, train_mode, rng)[2]


def loss_value(
    model: ModelParams,
    batch: np.ndarray,
    labels: np.ndarray,
    spec: LossSpec,
) -> tuple[float, dict]:
    """Objective value and per-term breakdown (eval mode, no gradients)."""
    labels = _check_labels(labels, model.num_classes)
    result = forward(model, batch, train_mode=False)
    parts, _, _ = _loss_terms(model, result, labels, spec)
    return sum(parts.values()), parts


def input_gradient(
    model: ModelParams, x: np.ndarray, target_prototype: np.ndarray
) -> np.ndarray:
    """Gradient with respect to x of ||embed(x) - target||^2, eval mode.

    Accepts a single feature vector or an (N, F) batch of independent
    instances (each row gets the gradient of its own objective).
    """
    target = np.asarray(target_prototype, dtype=np.float64)
    if target.shape[-1] != model.embedding_dim:
        raise ValueError(
            f"target width {target.shape[-1]} != embedding_dim {model.embedding_dim}"
        )
    result = forward(model, x, train_mode=False)
    d_embeddings = 2.0 * (result.embeddings - np.atleast_2d(target))
    _, d_input = _backprop(
        model, result, None, d_embeddings, need_params=False, need_input=True
    )
    if np.asarray(x).ndim == 1:
        return d_input[0]
    return d_input


def embedding_objective(model: ModelParams, x: np.ndarray, target: np.ndarray) -> np.ndarray:
    """||embed(x) - target||^2 per instance, eval mode."""
    result = forward(model, x, train_mode=False)
    diff = result.embeddings - np.atleast_2d(np.asarray(target, dtype=np.float64))
    out = np.sum(diff * diff, axis=1)
    return float(out[0]) if np.asarray(x).ndim == 1 else out


def sgd_step(model: ModelParams, gradient: np.ndarray, eta: float) -> ModelParams:
    """One plain gradient step: w' = w - eta * g (eta=0 is a no-op)."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != (model.m,):
        raise ValueError(f"gradient length {gradient.shape} != ({model.m},)")
    if eta < 0:
        raise ValueError("eta must be >= 0")
    return model.with_values(model.values - eta * gradient)


def predict(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Head predictions: argmax of eval-mode log-probabilities."""
    return np.argmax(forward(model, batch).log_probs, axis=1)


def embed(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Eval-mode embeddings for a batch."""
    return forward(model, batch).embeddings
