"""Test-adequacy metrics over activation traces.

A trace set is what :func:`tensornet.collect_traces` returns: one array per
trace layer with the inputs on the leading axis. A conv layer contributes one
neuron per channel, valued by the channel's spatial mean. The final (output)
layer is not counted.

Neuron coverage scales each input's layer activations to [0, 1] by that
input's own min and max over the layer, so adding inputs can only add covered
neurons.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensornet as tn

DEFAULT_THRESHOLD = 0.75


class CoverageError(ValueError):
    pass


@dataclass
class CoverageReport:
    metric: str
    value: float
    per_layer: list = field(default_factory=list)   # {"layer", "covered", "total", "value"}
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"metric": self.metric, "params": self.params, "value": self.value,
                           "per_layer": self.per_layer}, sort_keys=True)


def neuron_values(traces, include_output: bool = False) -> list[np.ndarray]:
    """Per-layer ``(n, width)`` neuron values (conv channels averaged spatially)."""
    traces = list(traces)
    if not include_output:
        traces = traces[:-1]
    out = []
    for t in traces:
        t = np.asarray(t, np.float64)
        out.append(t.reshape(t.shape[0], t.shape[1], -1).mean(axis=2) if t.ndim > 2 else t)
    return out


def _check(traces):
    traces = list(traces)
    if not traces or len(traces[0]) == 0:
        raise CoverageError("empty trace set")
    return traces


def scale_per_input(values: np.ndarray) -> np.ndarray:
    """Min-max scale every row of ``(n, width)`` to [0, 1]; constant rows become 0."""
    lo = values.min(axis=1, keepdims=True)
    span = values.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (values - lo) / safe, 0.0)


def _report(metric, masks, params):
    per_layer = [{"layer": n, "covered": int(m.sum()), "total": int(m.size),
                  "value": float(m.mean())} for n, m in enumerate(masks)]
    total = sum(m.size for m in masks)
    value = sum(int(m.sum()) for m in masks) / total if total else 0.0
    return CoverageReport(metric, float(value), per_layer, params)


def neuron_coverage(traces, t: float = DEFAULT_THRESHOLD, include_output: bool = False) -> CoverageReport:
    """Fraction of neurons whose scaled value exceeds ``t`` for at least one input."""
    if not 0 <= t <= 1:
        raise CoverageError(f"threshold must be in [0, 1], got {t}")
    values = neuron_values(_check(traces), include_output)
    masks = [np.any(scale_per_input(v) > t, axis=0) for v in values]
    return _report("neuron_coverage", masks, {"threshold": t})


def top_k_coverage(traces, k: int, include_output: bool = False) -> CoverageReport:
    """Fraction of neurons ranking in their layer's top ``k`` for some input.

    Ties go to the lower neuron index.
    """
    values = neuron_values(_check(traces), include_output)
    widths = [v.shape[1] for v in values]
    if not widths or not 1 <= k <= min(widths):
        raise CoverageError(f"k must be in [1, {min(widths) if widths else 0}], got {k}")
    masks = []
    for v in values:
        order = np.argsort(-v, axis=1, kind="stable")[:, :k]
        mask = np.zeros(v.shape[1], bool)
        mask[np.unique(order)] = True
        masks.append(mask)
    return _report("top_k_coverage", masks, {"k": k})


def union(a, b) -> list:
    """Trace set holding the inputs of both ``a`` and ``b``."""
    return [np.concatenate([x, y]) for x, y in zip(a, b)]


# ---------------------------------------------------------------------------
# distance-based surprise adequacy

@dataclass
class ReferenceTraces:
    """Penultimate-layer traces of the training set, grouped by class."""
    activations: np.ndarray   # (n, d)
    classes: np.ndarray       # (n,)


def penultimate(model: tn.Model, images, batch_size: int = 500) -> np.ndarray:
    """Trace of the last hidden dense layer (flattened per input)."""
    trace = tn.collect_traces(model, images, batch_size)[-2]
    return trace.reshape(len(trace), -1).astype(np.float64)


def build_reference(model: tn.Model, images, classes=None) -> ReferenceTraces:
    """Reference traces; ``classes`` defaults to the model's own predictions."""
    images = np.asarray(images, np.float32)
    acts = penultimate(model, images)
    classes = tn.predict(model, images) if classes is None else np.asarray(classes)
    if len(np.unique(classes)) < 2:
        raise CoverageError("reference traces must cover at least two classes")
    return ReferenceTraces(acts, classes)


def _pairwise(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
    return np.sqrt(np.maximum(d, 0))


def dsa_values(activations, classes, ref: ReferenceTraces, chunk: int = 512) -> np.ndarray:
    """DSA of every trace row in ``activations`` given its class.

    ``dist(a, nearest same-class ref) / dist(that ref, its nearest other-class ref)``;
    a zero denominator yields ``inf``.
    """
    acts = np.asarray(activations, np.float64)
    classes = np.asarray(classes)
    out = np.empty(len(acts))
    for c in np.unique(classes):
        rows = np.flatnonzero(classes == c)
        same = ref.activations[ref.classes == c]
        other = ref.activations[ref.classes != c]
        if len(same) == 0 or len(other) == 0:
            out[rows] = np.inf
            continue
        for s in range(0, len(rows), chunk):
            r = rows[s:s + chunk]
            d = _pairwise(acts[r], same)
            near = d.argmin(axis=1)
            # exact distance for the chosen neighbour (avoids cancellation at 0)
            dist_a = np.linalg.norm(acts[r] - same[near], axis=1)
            dist_b = np.array([np.linalg.norm(other - same[j], axis=1).min() for j in near])
            with np.errstate(divide="ignore", invalid="ignore"):
                out[r] = np.where(dist_b > 0, dist_a / np.where(dist_b > 0, dist_b, 1), np.inf)
    return out


def dsa_batch(model: tn.Model, images, ref: ReferenceTraces) -> np.ndarray:
    images = np.asarray(images, np.float32)
    return dsa_values(penultimate(model, images), tn.predict(model, images), ref)


def dsa(x, model: tn.Model, ref: ReferenceTraces) -> float:
    """Surprise of one input relative to the reference set (class = predicted label)."""
    return float(dsa_batch(model, np.asarray(x)[None], ref)[0])


def select_surprising(candidates, model: tn.Model, ref: ReferenceTraces, band=(0.0, np.inf), n: int = 100):
    """Indices of up to ``n`` candidates with DSA in ``band``, most surprising first.

    Returns ``(indices, dsa values of those indices)``.
    """
    lo, hi = band
    if not lo < hi:
        raise CoverageError(f"band needs lo < hi, got {band}")
    values = dsa_batch(model, candidates, ref)
    inside = np.flatnonzero((values >= lo) & (values <= hi))
    order = inside[np.lexsort((inside, -values[inside]))][:n]
    return order, values[order]
