"""Model-level mutation operators, mutant sweeps, mutation score and LCR detection.

Neuron-level operators act on *eligible neurons*: every output channel of a
hidden conv layer and every unit of a hidden dense layer (the output layer is
excluded). A neuron's incoming weights are its kernel / weight row; its
outgoing weights are the slices of the next weighted layer that read it. For
a conv channel feeding a dense layer through flatten, that is every column
belonging to the channel (flatten order is height, width, channel).

Layer-level operators pick among weighted layers whose input and output
shapes agree (LD, LA) or among hidden activation layers (AFR).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import tensornet as tn


class MutationError(ValueError):
    pass


class Kind(str, Enum):
    GF = "GF"    # Gaussian fuzzing
    WS = "WS"    # weight shuffling
    NEB = "NEB"  # neuron effect block
    NAI = "NAI"  # neuron activation inverse
    NS = "NS"    # neuron switch
    LD = "LD"    # layer deactivation
    LA = "LA"    # layer addition
    AFR = "AFR"  # activation function removal

    @property
    def neuron_level(self) -> bool:
        return self in NEURON_KINDS


NEURON_KINDS = (Kind.GF, Kind.WS, Kind.NEB, Kind.NAI, Kind.NS)
LAYER_KINDS = (Kind.LD, Kind.LA, Kind.AFR)
SWEEP_RATIOS = (0.01, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class MutationOperator:
    kind: Kind
    ratio: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind.neuron_level:
            if self.ratio is None or not 0 <= self.ratio <= 1:
                raise MutationError(f"{self.kind.value} needs a ratio in [0, 1], got {self.ratio}")
        elif self.ratio is not None:
            raise MutationError(f"layer-level operator {self.kind.value} takes no ratio")


@dataclass
class Mutant:
    model: tn.Model
    operator: MutationOperator
    weights_changed: int
    layers_touched: tuple


# ---------------------------------------------------------------------------
# neuron bookkeeping

def eligible_neurons(model: tn.Model) -> list[tuple[int, int]]:
    """``(layer index, neuron index)`` of every hidden dense unit / conv channel."""
    params = model.param_layers()
    return [(i, j) for i in params[:-1] for j in range(model.layers[i].weights.shape[0])]


def _next_param(model, i):
    for k in range(i + 1, len(model.layers)):
        if model.layers[k].has_params:
            return k
    raise MutationError(f"layer {i} has no downstream weighted layer")


def outgoing_slice(model: tn.Model, i: int, j: int):
    """``(layer index, index)`` addressing the weights that read neuron ``j`` of layer ``i``."""
    k = _next_param(model, i)
    src, dst = model.layers[i], model.layers[k]
    if dst.kind == "conv2d":
        return k, (slice(None), j)
    channels = src.weights.shape[0]
    if src.kind == "conv2d":
        return k, (slice(None), slice(j, None, channels))
    return k, (slice(None), j)


def _select(model, ratio, rng):
    neurons = eligible_neurons(model)
    if not neurons:
        raise MutationError("model has no eligible neurons")
    count = math.ceil(ratio * len(neurons) - 1e-9)
    pick = rng.choice(len(neurons), size=count, replace=False) if count else []
    return sorted(neurons[p] for p in pick)


def _count_changes(before: tn.Model, after: tn.Model):
    changed, touched = 0, []
    for i, (a, b) in enumerate(zip(before.layers, after.layers)):
        if not a.has_params:
            continue
        n = int(np.sum(a.weights != b.weights) + np.sum(a.bias != b.bias))
        if n:
            changed += n
            touched.append(i)
    return changed, tuple(touched)


# ---------------------------------------------------------------------------
# operators

def _neuron_mutation(model, op, rng):
    selected = _select(model, op.ratio, rng)
    layers = model.layers
    if op.kind is Kind.GF:
        # sigma from the unmutated layer, not from rows already fuzzed
        sigma = {i: float(np.std(layers[i].weights)) for i, _ in selected}
        for i, j in selected:
            w = layers[i].weights
            w[j] += rng.normal(0.0, sigma[i], size=w[j].shape).astype(w.dtype)
    elif op.kind is Kind.WS:
        for i, j in selected:
            w = layers[i].weights
            w[j] = rng.permutation(w[j].ravel()).reshape(w[j].shape)
    elif op.kind is Kind.NEB:
        for i, j in selected:
            k, idx = outgoing_slice(model, i, j)
            layers[k].weights[idx] = 0
    elif op.kind is Kind.NAI:
        for i, j in selected:
            layers[i].weights[j] *= -1
            layers[i].bias[j] *= -1
    elif op.kind is Kind.NS:
        by_layer = {}
        for i, j in selected:
            by_layer.setdefault(i, []).append(j)
        for i, units in by_layer.items():
            units = list(rng.permutation(units))
            if len(units) % 2:
                rest = sorted(set(range(layers[i].weights.shape[0])) - set(units))
                if rest:
                    units.append(int(rng.choice(rest)))
                else:
                    units.pop()
            for a, b in zip(units[::2], units[1::2]):
                k, ia = outgoing_slice(model, i, a)
                _, ib = outgoing_slice(model, i, b)
                w = layers[k].weights
                w[ia], w[ib] = w[ib].copy(), w[ia].copy()
    return model


def shape_preserving_layers(model: tn.Model) -> list[int]:
    return [i for i in model.param_layers() if model.layers[i].shape_preserving]


def hidden_activation_layers(model: tn.Model) -> list[int]:
    return [i for i, layer in enumerate(model.layers) if layer.kind == "relu"]


def _layer_mutation(model, op, rng):
    if op.kind is Kind.AFR:
        choices = hidden_activation_layers(model)
    else:
        choices = shape_preserving_layers(model)
    if not choices:
        raise MutationError(f"{op.kind.value}: model has no eligible layer")
    i = int(rng.choice(choices))
    layer = model.layers[i]
    if op.kind is Kind.LA:
        model.layers.insert(i + 1, tn.Layer(layer.kind, layer.output_shape, layer.output_shape,
                                            layer.weights.copy(), layer.bias.copy(), layer.pool))
        return model, (i + 1,)
    model.layers[i] = tn.Layer("identity", layer.input_shape, layer.input_shape)
    return model, (i,)


def mutate(model: tn.Model, op: MutationOperator) -> Mutant:
    """Apply ``op`` to a copy of ``model``; the original is never modified."""
    rng = np.random.default_rng(op.seed)
    out = model.copy()
    out.metadata = dict(out.metadata, mutation={"kind": op.kind.value, "ratio": op.ratio, "seed": op.seed})
    if op.kind.neuron_level:
        _neuron_mutation(out, op, rng)
        changed, touched = _count_changes(model, out)
        return Mutant(out, op, changed, touched)
    out, touched = _layer_mutation(out, op, rng)
    return Mutant(out, op, 0, touched)


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class MutRow:
    kind: str
    ratio: float | None
    seed: int
    accuracy: float
    error: float


def run_mut_sweep(model, test_set, kinds=NEURON_KINDS, ratios=SWEEP_RATIOS, seeds=(0,)) -> list[MutRow]:
    """One mutant per (kind, ratio, seed) cell, evaluated on ``test_set``."""
    ratios = list(ratios)
    if ratios != sorted(ratios):
        raise MutationError("ratios must be sorted ascending")
    rows = []
    for kind in kinds:
        for ratio in ratios:
            for seed in seeds:
                ev = tn.evaluate(mutate(model, MutationOperator(kind, ratio, seed)).model, test_set)
                rows.append(MutRow(Kind(kind).value, ratio, seed, ev.accuracy, ev.error))
    return rows


def run_layer_mutants(model, test_set, kinds=LAYER_KINDS, seeds=(0,)) -> list[MutRow]:
    rows = []
    for kind in kinds:
        for seed in seeds:
            ev = tn.evaluate(mutate(model, MutationOperator(kind, None, seed)).model, test_set)
            rows.append(MutRow(Kind(kind).value, None, seed, ev.accuracy, ev.error))
    return rows


def median_accuracy(rows, kind, ratio=None) -> float:
    vals = [r.accuracy for r in rows if r.kind == Kind(kind).value and r.ratio == ratio]
    return float(np.median(vals))


CSV_FIELDS = ("kind", "ratio", "seed", "accuracy", "error")


def to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in rows:
        writer.writerow([r.kind, "" if r.ratio is None else r.ratio, r.seed,
                         f"{r.accuracy:.2f}", f"{r.error:.2f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# mutation score

@dataclass
class MutationScore:
    killed: int
    total: int
    score: float
    details: list        # per mutant: {"index", "accuracy", "killed", "excluded"}
    excluded: int


def mutation_score(original: tn.Model, mutants, test_set, threshold: float = 0.8) -> MutationScore:
    """Fraction of mutants killed by ``test_set``.

    A mutant is killed when at least one input receives a different label
    than from the original. Mutants below ``threshold`` times the original
    accuracy are trivially broken; they are listed but excluded from the score.
    """
    mutants = list(mutants)
    if not mutants:
        raise MutationError("no mutants to score")
    if len(test_set.labels) == 0:
        details = [{"index": n, "accuracy": None, "killed": False, "excluded": False}
                   for n in range(len(mutants))]
        return MutationScore(0, len(mutants), 0.0, details, 0)
    base_pred = tn.predict(original, test_set.images)
    labels = np.asarray(test_set.labels)
    base_acc = 100.0 * np.mean(base_pred == labels)
    details, killed, scored = [], 0, 0
    for n, m in enumerate(mutants):
        pred = tn.predict(getattr(m, "model", m), test_set.images)
        acc = 100.0 * np.mean(pred == labels)
        excluded = acc < threshold * base_acc
        kill = bool(np.any(pred != base_pred))
        details.append({"index": n, "accuracy": acc, "killed": kill, "excluded": bool(excluded)})
        if not excluded:
            scored += 1
            killed += kill
    return MutationScore(killed, scored, killed / scored if scored else 0.0, details,
                         len(mutants) - scored)


# ---------------------------------------------------------------------------
# label-change-rate detection

DEFAULT_LCR_OPERATOR = MutationOperator(Kind.GF, 0.005, 0)


def lcr_mutants(model: tn.Model, count: int, op: MutationOperator = DEFAULT_LCR_OPERATOR) -> list[tn.Model]:
    """``count`` mutants with seeds derived from ``op.seed``."""
    if count < 1:
        raise MutationError("need at least one mutant")
    seeds = np.random.SeedSequence(op.seed).generate_state(count)
    return [mutate(model, replace(op, seed=int(s))).model for s in seeds]


def label_change_rates(model: tn.Model, mutants, images) -> np.ndarray:
    """Per-image fraction of ``mutants`` whose label differs from ``model``'s."""
    images = np.asarray(images, np.float32)
    base = tn.predict(model, images)
    changes = np.zeros(len(images))
    for m in mutants:
        changes += tn.predict(m, images) != base
    return changes / len(mutants)


def calibrate_tau(clean_lcr, quantile: float = 95.0) -> float:
    """Detection threshold: the given percentile of LCR over clean inputs."""
    return float(np.percentile(clean_lcr, quantile))


def lcr_detect(model: tn.Model, x, count: int = 50, op: MutationOperator = DEFAULT_LCR_OPERATOR,
               tau: float = 0.0, mutants=None):
    """``(lcr, flagged)`` for a single input; flagged means ``lcr > tau``."""
    mutants = lcr_mutants(model, count, op) if mutants is None else mutants
    lcr = float(label_change_rates(model, mutants, np.asarray(x)[None])[0])
    return lcr, lcr > tau


def detection_csv(lcr, tau, ids=None) -> str:
    lcr = np.asarray(lcr)
    ids = np.arange(len(lcr)) if ids is None else ids
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("input_id", "lcr", "flag"))
    for i, v in zip(ids, lcr):
        writer.writerow((int(i), f"{v:.4f}", int(v > tau)))
    return buf.getvalue()
