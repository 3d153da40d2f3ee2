"""Minimal numpy neural-network core.

A :class:`Model` is an ordered list of :class:`Layer` objects. Images are
``float32`` arrays in NCHW layout; every public function takes a leading
batch dimension. Backpropagation is hand-written per layer kind, which keeps
mutation operators free to edit any weight array in place on a copy.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

NUM_CLASSES = 10
MNIST_SHAPE = (1, 28, 28)

PARAM_KINDS = ("dense", "conv2d")
ACTIVATION_KINDS = ("relu", "softmax", "identity")
LAYER_KINDS = PARAM_KINDS + ("maxpool2d", "flatten") + ACTIVATION_KINDS


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Layer:
    kind: str
    input_shape: tuple
    output_shape: tuple
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))
    pool: int = 0

    @property
    def is_activation(self) -> bool:
        return self.kind in ACTIVATION_KINDS

    @property
    def has_params(self) -> bool:
        return self.kind in PARAM_KINDS

    @property
    def shape_preserving(self) -> bool:
        return tuple(self.input_shape) == tuple(self.output_shape)


@dataclass
class Model:
    layers: list
    input_shape: tuple = MNIST_SHAPE
    metadata: dict = field(default_factory=dict)

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    @property
    def output_shape(self) -> tuple:
        return tuple(self.layers[-1].output_shape) if self.layers else tuple(self.input_shape)

    def param_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.has_params]

    def trace_layers(self) -> list[int]:
        """Indices whose output is recorded in an activation trace.

        For each dense/conv layer this is the activation directly following
        it, or the layer itself when no activation follows.
        """
        out = []
        for i, layer in enumerate(self.layers):
            if not layer.has_params:
                continue
            nxt = i + 1
            if nxt < len(self.layers) and self.layers[nxt].is_activation:
                out.append(nxt)
            else:
                out.append(i)
        return out

    def check_chain(self) -> None:
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            if tuple(layer.input_shape) != shape:
                raise ShapeError(
                    f"layer {i} ({layer.kind}) expects input {tuple(layer.input_shape)}, "
                    f"previous layer produces {shape}")
            shape = tuple(layer.output_shape)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    architecture: str = "baseline"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class Evaluation:
    accuracy: float
    error: float
    correct: int
    total: int
    per_class_correct: np.ndarray
    per_class_total: np.ndarray


# ---------------------------------------------------------------------------
# construction

ARCHITECTURES = {
    # conv-pool x2 then two hidden dense layers; the second 128->128 dense
    # layer gives layer-level mutation operators a shape-preserving target.
    "baseline": [("conv2d", 32, 3), ("relu",), ("maxpool2d", 2),
                 ("conv2d", 64, 3), ("relu",), ("maxpool2d", 2),
                 ("flatten",),
                 ("dense", 128), ("relu",),
                 ("dense", 128), ("relu",),
                 ("dense", 10), ("softmax",)],
    "small_cnn": [("conv2d", 8, 3), ("relu",), ("maxpool2d", 2),
                  ("flatten",),
                  ("dense", 32), ("relu",),
                  ("dense", 32), ("relu",),
                  ("dense", 10), ("softmax",)],
    "mlp": [("flatten",), ("dense", 64), ("relu",), ("dense", 64), ("relu",),
            ("dense", 10), ("softmax",)],
    "linear": [("flatten",), ("dense", 10), ("softmax",)],
}


def _output_shape(kind, input_shape, arg=None, kernel=None):
    if kind == "dense":
        if len(input_shape) != 1:
            raise ShapeError(f"dense needs a flat input, got {input_shape}")
        return (arg,)
    if kind == "conv2d":
        c, h, w = input_shape
        return (arg, h - kernel + 1, w - kernel + 1)
    if kind == "maxpool2d":
        c, h, w = input_shape
        return (c, h // arg, w // arg)
    if kind == "flatten":
        return (int(np.prod(input_shape)),)
    if kind in ACTIVATION_KINDS:
        return tuple(input_shape)
    raise ValueError(f"unknown layer kind {kind!r}")


def build_model(spec, input_shape=MNIST_SHAPE, seed=0, name="custom", zero=False) -> Model:
    """Build a model from ``(kind, *args)`` tuples.

    Weights use He-style uniform initialisation ``U(-sqrt(6/fan_in), +sqrt(6/fan_in))``
    drawn from ``np.random.default_rng(seed)``; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    layers = []
    shape = tuple(input_shape)
    for item in spec:
        kind, *args = item
        if kind == "dense":
            out = _output_shape(kind, shape, args[0])
            fan_in = shape[0]
            w_shape = (args[0], fan_in)
        elif kind == "conv2d":
            out = _output_shape(kind, shape, args[0], args[1])
            fan_in = shape[0] * args[1] * args[1]
            w_shape = (args[0], shape[0], args[1], args[1])
        elif kind == "maxpool2d":
            out = _output_shape(kind, shape, args[0])
            layers.append(Layer(kind, shape, out, pool=args[0]))
            shape = out
            continue
        else:
            out = _output_shape(kind, shape)
            layers.append(Layer(kind, shape, out))
            shape = out
            continue
        if min(out) < 1:
            raise ShapeError(f"{kind} layer reduces {shape} to an empty output {out}")
        if zero:
            weights = np.zeros(w_shape, np.float32)
        else:
            limit = math.sqrt(6.0 / fan_in)
            weights = rng.uniform(-limit, limit, size=w_shape).astype(np.float32)
        layers.append(Layer(kind, shape, out, weights, np.zeros(w_shape[0], np.float32)))
        shape = out
    return Model(layers, tuple(input_shape), {"architecture": name, "seed": int(seed), "epochs": 0})


def astype(model: Model, dtype) -> Model:
    """Copy of ``model`` with parameters cast to ``dtype`` (float64 for gradient checks)."""
    out = model.copy()
    for layer in out.layers:
        layer.weights = layer.weights.astype(dtype)
        layer.bias = layer.bias.astype(dtype)
    return out


def build_architecture(name: str, seed: int = 0, input_shape=MNIST_SHAPE) -> Model:
    try:
        spec = ARCHITECTURES[name]
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; known: {sorted(ARCHITECTURES)}") from None
    return build_model(spec, input_shape, seed, name)


# ---------------------------------------------------------------------------
# per-layer forward / backward

def _im2col(x, k):
    # (n, h, w, c) -> (n*ho*wo, k*k*c), column order (kh, kw, c)
    n, h, w, c = x.shape
    cols = sliding_window_view(x, (k, k), axis=(1, 2))
    ho, wo = cols.shape[1], cols.shape[2]
    return cols.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c), ho, wo


def _conv_matrix(layer):
    # (out, in, kh, kw) -> (out, kh*kw*in) matching _im2col's column order
    return layer.weights.transpose(0, 2, 3, 1).reshape(layer.weights.shape[0], -1)


def _conv_forward(layer, x):
    out_ch = layer.weights.shape[0]
    cols, ho, wo = _im2col(x, layer.weights.shape[2])
    out = cols @ _conv_matrix(layer).T + layer.bias
    return out.reshape(x.shape[0], ho, wo, out_ch), (x.shape, cols)


def _conv_backward(layer, cache, g, need_dx=True):
    x_shape, cols = cache
    out_ch, in_ch, k, _ = layer.weights.shape
    n, ho, wo, _ = g.shape
    g2 = g.reshape(-1, out_ch)
    dw = (g2.T @ cols).reshape(out_ch, k, k, in_ch).transpose(0, 3, 1, 2)
    db = g2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (g2 @ _conv_matrix(layer)).reshape(n, ho, wo, k, k, in_ch)
    dx = np.zeros(x_shape, dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, dw, db


def _pool_forward(layer, x):
    p = layer.pool
    n, h, w, c = x.shape
    ho, wo = h // p, w // p
    win = x[:, :ho * p, :wo * p, :].reshape(n, ho, p, wo, p, c)
    out = win.max(axis=(2, 4))
    return out, (x.shape, win, out)


def _pool_backward(layer, cache, g):
    x_shape, win, out = cache
    p = layer.pool
    n, ho, _, wo, _, c = win.shape
    # ties share the gradient; after a ReLU they only occur at zeros, which
    # the ReLU gate discards
    mask = win == out[:, :, None, :, None, :]
    dx = np.zeros(x_shape, dtype=g.dtype)
    dx[:, :ho * p, :wo * p, :] = (mask * g[:, :, None, :, None, :]).reshape(n, ho * p, wo * p, c)
    return dx


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _layer_forward(layer, x):
    kind = layer.kind
    if kind == "dense":
        return x @ layer.weights.T + layer.bias, x
    if kind == "conv2d":
        return _conv_forward(layer, x)
    if kind == "maxpool2d":
        return _pool_forward(layer, x)
    if kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if kind == "relu":
        return np.maximum(x, 0), x
    if kind == "softmax":
        p = _softmax(x)
        return p, p
    if kind == "identity":
        return x, None
    raise ValueError(f"unknown layer kind {kind!r}")


def _layer_backward(layer, cache, g, need_dx=True):
    """Return ``(dx, dw, db)``; ``dw``/``db`` are None for parameterless kinds."""
    kind = layer.kind
    if kind == "dense":
        x = cache
        return (g @ layer.weights if need_dx else None), g.T @ x, g.sum(axis=0)
    if kind == "conv2d":
        return _conv_backward(layer, cache, g, need_dx)
    if kind == "maxpool2d":
        return _pool_backward(layer, cache, g), None, None
    if kind == "flatten":
        return g.reshape(cache), None, None
    if kind == "relu":
        return g * (cache > 0), None, None
    if kind == "softmax":
        p = cache
        return p * (g - (g * p).sum(axis=1, keepdims=True)), None, None
    if kind == "identity":
        return g, None, None
    raise ValueError(f"unknown layer kind {kind!r}")


# ---------------------------------------------------------------------------
# forward / backward over a model

def _as_batch(model, x):
    x = np.asarray(x)
    if x.dtype != np.float64:
        x = x.astype(np.float32, copy=False)
    if x.shape[1:] != tuple(model.input_shape):
        raise ShapeError(
            f"layer 0 ({model.layers[0].kind if model.layers else 'input'}) expects input "
            f"(batch, {', '.join(map(str, model.input_shape))}), got {x.shape}")
    return x


# Feature maps travel through the network as (n, h, w, c); the public API
# and every stored shape use (n, c, h, w).

def _internal(x):
    return x.transpose(0, 2, 3, 1) if x.ndim == 4 else x


def _public(x):
    return x.transpose(0, 3, 1, 2) if x.ndim == 4 else x


def _public_shape(x):
    return (x.shape[3], x.shape[1], x.shape[2]) if x.ndim == 4 else x.shape[1:]


def _run(model, x, stop=None, keep_cache=False, trace=False):
    x = _internal(_as_batch(model, x))
    caches = []
    traces = []
    trace_idx = set(model.trace_layers()) if trace else ()
    layers = model.layers if stop is None else model.layers[:stop]
    for i, layer in enumerate(layers):
        if _public_shape(x) != tuple(layer.input_shape):
            raise ShapeError(
                f"layer {i} ({layer.kind}) expects input {tuple(layer.input_shape)}, "
                f"got {_public_shape(x)}")
        x, cache = _layer_forward(layer, x)
        if keep_cache:
            caches.append(cache)
        if i in trace_idx:
            traces.append(_public(x))
    return _public(x), caches, traces


def forward(model: Model, batch, trace: bool = False, checked: bool = False):
    """Run ``batch`` through ``model``.

    Returns ``(outputs, traces)``. ``traces`` holds one array per trace layer
    (see :meth:`Model.trace_layers`) with the batch as leading axis, or is an
    empty list when ``trace`` is false.
    """
    out, _, traces = _run(model, batch, trace=trace)
    if checked and not np.all(np.isfinite(out)):
        raise NonFiniteError("forward produced non-finite values")
    return out, traces


def _logit_stop(model):
    if model.layers and model.layers[-1].kind == "softmax":
        return len(model.layers) - 1
    return len(model.layers)


def logits(model: Model, batch) -> np.ndarray:
    """Pre-softmax scores (the output of the last layer before a final softmax)."""
    return _run(model, batch, stop=_logit_stop(model))[0]


def predict_proba(model: Model, x, batch_size: int = 500) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if len(x) == 0:
        return np.zeros((0,) + model.output_shape, np.float32)
    return np.concatenate([forward(model, x[i:i + batch_size])[0]
                           for i in range(0, len(x), batch_size)])


def predict(model: Model, x, batch_size: int = 500) -> np.ndarray:
    return predict_proba(model, x, batch_size).argmax(axis=1)


def collect_traces(model: Model, x, batch_size: int = 500) -> list:
    """Activation traces for many inputs, concatenated per trace layer."""
    x = np.asarray(x, dtype=np.float32)
    chunks = [forward(model, x[i:i + batch_size], trace=True)[1]
              for i in range(0, len(x), batch_size)]
    return [np.concatenate([c[j] for c in chunks]) for j in range(len(chunks[0]))]


def _backward(model, caches, grad, start, need_dx=True):
    """Backpropagate ``grad`` from the output of layer ``start - 1``."""
    grads = {}
    g = _internal(grad)
    for i in range(start - 1, -1, -1):
        layer = model.layers[i]
        g, dw, db = _layer_backward(layer, caches[i], g, need_dx or i > 0)
        if dw is not None:
            grads[i] = (dw, db)
    return (_public(g) if g is not None else None), grads


def loss_and_gradients(model: Model, x, y):
    """Mean cross-entropy and its gradients.

    Returns ``(loss, dx, grads)`` where ``grads`` maps layer index to
    ``(dweights, dbias)``. A trailing softmax is fused with the loss.
    """
    loss, dx, grads, _ = _loss_and_gradients(model, x, y)
    return loss, dx, grads


def _loss_and_gradients(model, x, y, need_dx=True):
    y = np.asarray(y, dtype=np.int64)
    stop = _logit_stop(model)
    fused = stop < len(model.layers)
    out, caches, _ = _run(model, x, stop=stop if fused else None, keep_cache=True)
    n = len(y)
    onehot = np.zeros((n, out.shape[1]), out.dtype)
    onehot[np.arange(n), y] = 1
    if fused:
        z = out.astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = float(-logp[np.arange(n), y].mean())
        grad = ((np.exp(logp) - onehot) / n).astype(out.dtype)
        start = stop
    else:
        p = out.astype(np.float64)
        loss = float(-np.log(np.clip(p[np.arange(n), y], 1e-30, None)).mean())
        grad = (-onehot / np.clip(p, 1e-30, None) / n).astype(out.dtype)
        start = len(model.layers)
    dx, grads = _backward(model, caches, grad, start, need_dx)
    return loss, dx, grads, int((out.argmax(axis=1) == y).sum())


def input_gradient(model: Model, x, label, target=None) -> np.ndarray:
    """Gradient of the cross-entropy loss with respect to the input.

    ``x`` may be a single image or a batch. With ``target`` set, the gradient
    of the loss towards ``target`` is returned negated, so ascending it moves
    towards the target class.
    """
    x = np.asarray(x)
    single = x.shape == tuple(model.input_shape)
    xb = x[None] if single else x
    n = len(xb)
    if target is None:
        y = np.broadcast_to(np.asarray(label), (n,))
        sign = 1.0
    else:
        y = np.broadcast_to(np.asarray(target), (n,))
        sign = -1.0
    # per-sample gradients: undo the batch mean
    _, dx, _ = loss_and_gradients(model, xb, y)
    dx = dx * (sign * n)
    return dx[0] if single else dx


def logit_gradients(model: Model, x) -> tuple[np.ndarray, np.ndarray]:
    """Pre-softmax scores of one input and the gradient of every score.

    Returns ``(scores, grads)`` with shapes ``(classes,)`` and
    ``(classes,) + x.shape``.
    """
    x = np.asarray(x)
    stop = _logit_stop(model)
    z, _, _ = _run(model, x[None], stop=stop)
    k = z.shape[1]
    rep = np.repeat(x[None], k, axis=0)
    _, caches, _ = _run(model, rep, stop=stop, keep_cache=True)
    dx, _ = _backward(model, caches, np.eye(k, dtype=z.dtype), stop)
    return z[0], dx


# ---------------------------------------------------------------------------
# training and evaluation

def train(model: Model, train_set, config: TrainConfig, augment=None, progress=None):
    """Mini-batch SGD with momentum on cross-entropy.

    ``augment(images, rng)``, when given, maps every batch before the update;
    it receives the training RNG so augmentation draws stay reproducible.
    Returns a trained copy and a per-epoch history of ``{"epoch", "loss", "accuracy"}``.
    """
    images, labels = np.asarray(train_set.images, np.float32), np.asarray(train_set.labels)
    if len(images) == 0:
        raise ValueError("training set is empty")
    if labels.min() < 0 or labels.max() >= model.output_shape[0]:
        raise ValueError("labels out of range")
    model = model.copy()
    model.check_chain()
    rng = np.random.default_rng(config.seed)
    velocity = {i: (np.zeros_like(model.layers[i].weights), np.zeros_like(model.layers[i].bias))
                for i in model.param_layers()}
    lr, mom = np.float32(config.learning_rate), np.float32(config.momentum)
    history = []
    n = len(images)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = images[idx]
            if augment is not None:
                xb = augment(xb, rng)
            yb = labels[idx]
            loss, _, grads, hits = _loss_and_gradients(model, xb, yb, need_dx=False)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // config.batch_size}; "
                    f"learning rate {config.learning_rate} is probably too high")
            for i, (dw, db) in grads.items():
                layer = model.layers[i]
                vw, vb = velocity[i]
                vw *= mom
                vw -= lr * dw
                vb *= mom
                vb -= lr * db
                layer.weights += vw
                layer.bias += vb
            total_loss += loss * len(idx)
            correct += hits
        # accuracy of each batch is measured before its own update
        record = {"epoch": epoch + 1, "loss": total_loss / n, "accuracy": 100.0 * correct / n}
        if progress:
            progress(record)
        history.append(record)
        log.debug("epoch %d loss %.4f", epoch + 1, record["loss"])
    model.metadata = dict(model.metadata, seed=int(config.seed),
                          epochs=int(model.metadata.get("epochs", 0)) + config.epochs)
    return model, history


def train_new(config: TrainConfig, train_set, augment=None, progress=None):
    model = build_architecture(config.architecture, seed=config.seed,
                               input_shape=tuple(train_set.images.shape[1:]))
    return train(model, train_set, config, augment=augment, progress=progress)


def evaluate(model: Model, test_set, batch_size: int = 500) -> Evaluation:
    labels = np.asarray(test_set.labels)
    if len(labels) == 0:
        raise ValueError("test set is empty")
    pred = predict(model, test_set.images, batch_size)
    return evaluation_from_predictions(pred, labels, model.output_shape[0])


def evaluation_from_predictions(pred, labels, num_classes=NUM_CLASSES) -> Evaluation:
    labels = np.asarray(labels)
    hit = pred == labels
    correct = int(hit.sum())
    acc = 100.0 * correct / len(labels)
    return Evaluation(
        accuracy=acc,
        error=100.0 - acc,
        correct=correct,
        total=len(labels),
        per_class_correct=np.bincount(labels[hit], minlength=num_classes),
        per_class_total=np.bincount(labels, minlength=num_classes),
    )


# ---------------------------------------------------------------------------
# weights file

MAGIC = b"NNPB"
FILE_VERSION = 1
_KIND_TAGS = {"dense": 0, "conv2d": 1, "maxpool2d": 2, "flatten": 3,
              "relu": 4, "softmax": 5, "identity": 6}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


def model_to_bytes(model: Model) -> bytes:
    parts = [MAGIC, struct.pack("<II", FILE_VERSION, len(model.layers))]
    for layer in model.layers:
        parts.append(struct.pack("<B", _KIND_TAGS[layer.kind]))
        if layer.has_params:
            dims = layer.weights.shape
        elif layer.kind == "maxpool2d":
            dims = (layer.pool, layer.pool)
        else:
            dims = ()
        parts.append(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
        if layer.has_params:
            parts.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    trailer = json.dumps({"input_shape": list(model.input_shape), "metadata": model.metadata},
                         sort_keys=True).encode()
    parts.append(struct.pack("<I", len(trailer)))
    parts.append(trailer)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"truncated model file: needed {n} bytes at offset {self.pos}, "
                f"{len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, count):
        return struct.unpack(f"<{count}I", self.take(4 * count))


def model_from_bytes(buf: bytes) -> Model:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    r.take(4)
    version = r.u32()
    if version != FILE_VERSION:
        raise VersionMismatchError(f"model file version {version}, this reader supports {FILE_VERSION}")
    count = r.u32()
    raw = []
    for _ in range(count):
        tag = r.take(1)[0]
        if tag not in _TAG_KINDS:
            raise ModelFileError(f"unknown layer tag {tag}")
        kind = _TAG_KINDS[tag]
        dims = r.u32s(r.u32())
        w = b = None
        if kind in PARAM_KINDS:
            size = int(np.prod(dims))
            w = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
            b = np.frombuffer(r.take(4 * dims[0]), dtype="<f4").astype(np.float32)
        raw.append((kind, dims, w, b))
    trailer = json.loads(r.take(r.u32()).decode())
    shape = tuple(trailer["input_shape"])
    layers = []
    for kind, dims, w, b in raw:
        if kind == "dense":
            out = (dims[0],)
        elif kind == "conv2d":
            out = _output_shape(kind, shape, dims[0], dims[2])
        elif kind == "maxpool2d":
            out = _output_shape(kind, shape, dims[0])
        else:
            out = _output_shape(kind, shape)
        layer = Layer(kind, shape, out, pool=dims[0] if kind == "maxpool2d" else 0)
        if w is not None:
            layer.weights, layer.bias = w, b
        layers.append(layer)
        shape = out
    model = Model(layers, tuple(trailer["input_shape"]), trailer["metadata"])
    model.check_chain()
    return model


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
