"""Adversarial perturbation testing: FGSM, iterative FGSM, DeepFool, robustness curves.

All attacks work on batches ``(n, c, h, w)``; a single image is accepted and
returned without the batch axis.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensornet as tn

log = logging.getLogger(__name__)

CLIP = (0.0, 1.0)


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str                     # fgsm | ifgsm | deepfool
    epsilon: float = 0.0
    steps: int = 1
    step_size: float | None = None
    max_iter: int = 50
    overshoot: float = 0.02
    clip: tuple | None = CLIP

    def __post_init__(self):
        if self.kind not in ("fgsm", "ifgsm", "deepfool"):
            raise AttackError(f"unknown attack {self.kind!r}")
        if self.epsilon < 0:
            raise AttackError("epsilon must be >= 0")
        if self.steps < 1:
            raise AttackError("steps must be >= 1")
        if self.max_iter < 1:
            raise AttackError("max_iter must be >= 1")
        if self.overshoot < 0:
            raise AttackError("overshoot must be >= 0")


@dataclass
class AdversarialResult:
    x_adv: np.ndarray
    success: np.ndarray          # label changed
    linf: np.ndarray
    l2: np.ndarray
    iterations: np.ndarray
    original_labels: np.ndarray
    adversarial_labels: np.ndarray
    perturbation: np.ndarray | None = None   # DeepFool: accumulated step before overshoot


def _batch(model, x):
    x = np.asarray(x, np.float32)
    single = x.shape == tuple(model.input_shape)
    return (x[None] if single else x), single


def _result(model, x, x_adv, iterations, perturbation=None):
    before = tn.predict(model, x)
    after = tn.predict(model, x_adv)
    d = (x_adv.astype(np.float64) - x).reshape(len(x), -1)
    return AdversarialResult(x_adv, before != after, np.abs(d).max(axis=1) if d.size else np.zeros(len(x)),
                             np.linalg.norm(d, axis=1), np.asarray(iterations), before, after, perturbation)


def _clip(x, clip):
    return x if clip is None else np.clip(x, clip[0], clip[1])


def _labels(y, n):
    return np.broadcast_to(np.asarray(y), (n,))


def fgsm(model: tn.Model, x, y_true, epsilon: float, target=None, clip=CLIP) -> AdversarialResult:
    """One signed-gradient step of size ``epsilon`` on the cross-entropy loss."""
    if epsilon < 0:
        raise AttackError("epsilon must be >= 0")
    xb, _ = _batch(model, x)
    g = tn.input_gradient(model, xb, _labels(y_true, len(xb)),
                          None if target is None else _labels(target, len(xb)))
    x_adv = _clip(xb + np.float32(epsilon) * np.sign(g).astype(np.float32), clip).astype(np.float32)
    return _result(model, xb, x_adv, np.ones(len(xb), int))


def ifgsm(model: tn.Model, x, y_true, epsilon: float, steps: int = 10, step_size: float | None = None,
          target=None, clip=CLIP) -> AdversarialResult:
    """Iterated FGSM, projected back into the ``epsilon`` L-inf ball after each step."""
    if steps < 1:
        raise AttackError("steps must be >= 1")
    step = epsilon / steps if step_size is None else step_size
    if step * steps < epsilon:
        log.warning("step_size * steps < epsilon: the ball cannot be fully explored")
    xb, _ = _batch(model, x)
    y = _labels(y_true, len(xb))
    t = None if target is None else _labels(target, len(xb))
    lo, hi = xb - np.float32(epsilon), xb + np.float32(epsilon)
    x_adv = xb.copy()
    for _ in range(steps):
        g = tn.input_gradient(model, x_adv, y, t)
        x_adv = np.clip(x_adv + np.float32(step) * np.sign(g).astype(np.float32), lo, hi)
        x_adv = _clip(x_adv, clip).astype(np.float32)
    return _result(model, xb, x_adv, np.full(len(xb), steps))


def deepfool(model: tn.Model, x, max_iter: int = 50, overshoot: float = 0.02, clip=CLIP) -> AdversarialResult:
    """Iteratively linearise the classifier and step to the nearest boundary.

    The accumulated step ``r`` is kept in ``result.perturbation``; the
    returned input is ``x + (1 + overshoot) * r`` (then clipped).
    """
    if max_iter < 1:
        raise AttackError("max_iter must be >= 1")
    if overshoot < 0:
        raise AttackError("overshoot must be >= 0")
    xb, _ = _batch(model, x)
    work = np.float64 if xb.dtype == np.float64 else np.float32
    adv, perts, iters = [], [], []
    for xi in xb:
        x0 = xi.astype(np.float64)
        z, _ = tn.logit_gradients(model, xi)
        k0 = int(np.argmax(z))
        r_tot = np.zeros_like(x0)
        cur = xi
        used = 0
        for it in range(max_iter):
            z, grads = tn.logit_gradients(model, cur)
            if it > 0 and int(np.argmax(z)) != k0:
                break
            z = z.astype(np.float64)
            grads = grads.astype(np.float64)
            w = grads - grads[k0]
            f = z - z[k0]
            norms = np.linalg.norm(w.reshape(len(z), -1), axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.abs(f) / norms
            dist[k0] = np.inf
            dist[norms == 0] = np.inf
            k = int(np.argmin(dist))
            if not np.isfinite(dist[k]):
                break
            r_tot = r_tot + dist[k] / norms[k] * w[k]
            used = it + 1
            cur = _clip(x0 + (1 + overshoot) * r_tot, clip).astype(work)
        adv.append(cur)
        perts.append(r_tot)
        iters.append(used)
    x_adv = np.stack(adv).astype(work)
    return _result(model, xb, x_adv, iters, np.stack(perts))


def attack(model: tn.Model, x, y_true, spec: AttackSpec) -> AdversarialResult:
    if spec.kind == "fgsm":
        return fgsm(model, x, y_true, spec.epsilon, clip=spec.clip)
    if spec.kind == "ifgsm":
        return ifgsm(model, x, y_true, spec.epsilon, spec.steps, spec.step_size, clip=spec.clip)
    return deepfool(model, x, spec.max_iter, spec.overshoot, spec.clip)


def accuracy_under_attack(model, images, labels, epsilon, kind="fgsm", batch: int = 500, **kw) -> float:
    labels = np.asarray(labels)
    fn = fgsm if kind == "fgsm" else ifgsm
    hits = 0
    for i in range(0, len(labels), batch):
        res = fn(model, images[i:i + batch], labels[i:i + batch], epsilon, **kw)
        hits += int(np.sum(res.adversarial_labels == labels[i:i + batch]))
    return 100.0 * hits / len(labels)


def robustness_curve(model: tn.Model, test_set, epsilons=(0.0, 0.05, 0.1, 0.2, 0.3), kind: str = "fgsm",
                     **kw) -> list[tuple[float, float]]:
    """``(epsilon, accuracy under attack)`` pairs; the first point is the clean accuracy."""
    epsilons = list(epsilons)
    if not epsilons or epsilons[0] != 0 or epsilons != sorted(epsilons):
        raise AttackError("epsilon grid must be ascending and start at 0")
    return [(float(e), accuracy_under_attack(model, test_set.images, test_set.labels, e, kind, **kw))
            for e in epsilons]


# ---------------------------------------------------------------------------
# corpus file: records of (u32 id, f32 epsilon, u8 success, pixels as f32)

_HEADER = struct.Struct("<IfB")


def write_corpus(path, ids, epsilons, success, images) -> None:
    images = np.asarray(images, np.float32)
    n = len(images)
    ids = np.broadcast_to(np.asarray(ids), (n,))
    epsilons = np.broadcast_to(np.asarray(epsilons, np.float32), (n,))
    success = np.broadcast_to(np.asarray(success, bool), (n,))
    with open(path, "wb") as f:
        for i in range(n):
            f.write(_HEADER.pack(int(ids[i]), float(epsilons[i]), int(success[i])))
            f.write(images[i].astype("<f4").tobytes())


def read_corpus(path, image_shape=tn.MNIST_SHAPE):
    """Returns ``(ids, epsilons, success, images)``."""
    buf = Path(path).read_bytes()
    pixels = int(np.prod(image_shape))
    size = _HEADER.size + 4 * pixels
    if len(buf) % size:
        raise AttackError(f"{path}: {len(buf)} bytes is not a whole number of {size}-byte records")
    n = len(buf) // size
    ids, eps, ok = np.empty(n, np.int64), np.empty(n, np.float32), np.empty(n, bool)
    images = np.empty((n,) + tuple(image_shape), np.float32)
    for i in range(n):
        off = i * size
        ids[i], eps[i], ok[i] = _HEADER.unpack_from(buf, off)
        images[i] = np.frombuffer(buf, "<f4", pixels, off + _HEADER.size).reshape(image_shape)
    return ids, eps, ok, images
