"""Combinatorial testing: covering arrays, neuron-interaction coverage and smoke tests."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensornet as tn
from .coverage import DEFAULT_THRESHOLD, neuron_values, scale_per_input

NEURON_TUPLE_WIDTH_CAP = 24
MAX_NEURON_T = 4


class CombinatorialError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterDomain:
    name: str
    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 2:
            raise CombinatorialError(f"domain {self.name!r} needs at least two levels")
        if len(set(map(repr, self.levels))) != len(self.levels):
            raise CombinatorialError(f"domain {self.name!r} has repeated levels")


@dataclass
class CoveringArray:
    domains: tuple
    t: int
    rows: list = field(default_factory=list)   # level-index tuples

    def values(self) -> list[tuple]:
        return [tuple(d.levels[i] for d, i in zip(self.domains, row)) for row in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([d.name for d in self.domains])
        writer.writerows(self.values())
        return buf.getvalue()


def _check_t(domains, t):
    if not 2 <= t <= len(domains):
        raise CombinatorialError(f"strength t must be in [2, {len(domains)}], got {t}")


def all_tuples(domains, t) -> set:
    """Every ``(column subset, level indices)`` pair an array of strength ``t`` must cover."""
    sizes = [len(d.levels) for d in domains]
    return {(cols, lv)
            for cols in itertools.combinations(range(len(domains)), t)
            for lv in itertools.product(*(range(sizes[c]) for c in cols))}


def row_tuples(row, t) -> set:
    return {(cols, tuple(row[c] for c in cols)) for cols in itertools.combinations(range(len(row)), t)}


def verify_covering_array(ca: CoveringArray) -> list:
    """Sorted list of the t-way tuples no row covers (empty iff valid)."""
    missing = all_tuples(ca.domains, ca.t)
    for row in ca.rows:
        missing -= row_tuples(tuple(row), ca.t)
    return sorted(missing)


def generate_covering_array(domains, t: int = 2, seed: int = 0, candidates: int = 50) -> CoveringArray:
    """Greedy AETG-style construction.

    Each new row is the best of ``candidates`` seeded attempts. An attempt
    starts from a random uncovered tuple and fills the remaining columns in
    random order, each time choosing the level that completes the most
    uncovered tuples among the columns fixed so far.
    """
    domains = tuple(domains)
    _check_t(domains, t)
    rng = np.random.default_rng(seed)
    k = len(domains)
    sizes = [len(d.levels) for d in domains]
    uncovered = all_tuples(domains, t)
    rows = []
    while uncovered:
        pool = sorted(uncovered)
        best, best_gain = None, -1
        for _ in range(candidates):
            cols, lv = pool[rng.integers(len(pool))]
            row = [None] * k
            for c, v in zip(cols, lv):
                row[c] = v
            for c in rng.permutation([c for c in range(k) if row[c] is None]):
                fixed = [f for f in range(k) if row[f] is not None]
                gains = []
                for v in range(sizes[c]):
                    row[c] = v
                    gain = 0
                    for sub in itertools.combinations(fixed, t - 1):
                        cs = tuple(sorted(sub + (int(c),)))
                        gain += (cs, tuple(row[x] for x in cs)) in uncovered
                    gains.append(gain)
                row[c] = int(np.argmax(gains))
            gain = len(row_tuples(tuple(row), t) & uncovered)
            if gain > best_gain:
                best, best_gain = tuple(int(v) for v in row), gain
        rows.append(best)
        uncovered -= row_tuples(best, t)
    return CoveringArray(domains, t, rows)


def minimum_rows_brute_force(domains, t: int = 2) -> int:
    """Smallest covering-array size by exhaustive search (tiny problems only)."""
    _check_t(domains, t)
    need = all_tuples(domains, t)
    full = list(itertools.product(*(range(len(d.levels)) for d in domains)))
    cover = [row_tuples(r, t) for r in full]
    for size in range(1, len(full) + 1):
        for combo in itertools.combinations(range(len(full)), size):
            if set().union(*(cover[i] for i in combo)) >= need:
                return size
    return len(full)


# ---------------------------------------------------------------------------
# neuron-interaction coverage

def binarize(traces, layer: int, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """On/off states ``(n, width)`` of one hidden layer, scaled as for neuron coverage."""
    values = neuron_values(traces)[layer]
    return scale_per_input(values) > threshold


def neuron_tuple_coverage(traces, layer: int, t: int, threshold: float = DEFAULT_THRESHOLD,
                          seed: int = 0, cap: int = NEURON_TUPLE_WIDTH_CAP) -> float:
    """Fraction of (neuron subset, on/off pattern) pairs of size ``t`` observed.

    Layers wider than ``cap`` are represented by a seeded sample of ``cap`` neurons.
    """
    if not 1 <= t <= MAX_NEURON_T:
        raise CombinatorialError(f"t must be in [1, {MAX_NEURON_T}], got {t}")
    traces = list(traces)
    if not traces or len(traces[0]) == 0:
        return 0.0
    states = binarize(traces, layer, threshold)
    width = states.shape[1]
    if width > cap:
        keep = np.sort(np.random.default_rng(seed).choice(width, cap, replace=False))
        states, width = states[:, keep], cap
    if t > width:
        raise CombinatorialError(f"t={t} exceeds layer width {width}")
    combos = np.array(list(itertools.combinations(range(width), t)))
    codes = (states[:, combos].astype(np.int64) << np.arange(t)).sum(axis=2)   # (n, m)
    seen = np.zeros((len(combos), 2 ** t), bool)
    seen[np.arange(len(combos))[None, :], codes] = True
    return float(seen.mean())


def variable_strength_coverage(traces, strengths: dict, threshold: float = DEFAULT_THRESHOLD,
                               seed: int = 0) -> dict:
    """Per-layer neuron-tuple coverage with a layer-specific strength ``{layer: t}``."""
    return {layer: neuron_tuple_coverage(traces, layer, t, threshold, seed)
            for layer, t in sorted(strengths.items())}


# ---------------------------------------------------------------------------
# smoke testing

@dataclass
class SmokeCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SmokeReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def _softmax_check(model, x):
    out, _ = tn.forward(model, x)
    if not np.all(np.isfinite(out)):
        return False, "non-finite output"
    total = out.sum(axis=1)
    if not np.allclose(total, 1.0, atol=1e-5):
        return False, f"outputs sum to {total.tolist()}"
    return True, ""


def smoke_test(model: tn.Model) -> SmokeReport:
    """Cheap sanity checks on boundary inputs; failures are recorded, never raised."""
    shape = (1,) + tuple(model.input_shape)
    spike = np.zeros(shape, np.float32)
    spike.flat[spike.size // 2] = 1.0
    probe = np.random.default_rng(0).random((4,) + tuple(model.input_shape)).astype(np.float32)

    def training_step():
        x = np.concatenate([np.zeros(shape, np.float32), np.ones(shape, np.float32)])
        loss, _, grads = tn.loss_and_gradients(model, x, np.array([0, 1 % model.output_shape[0]]))
        finite = math.isfinite(loss) and all(np.all(np.isfinite(g)) for pair in grads.values() for g in pair)
        return finite, "" if finite else f"loss {loss}"

    def deterministic():
        runs = [tn.forward(model, probe)[0] for _ in range(3)]
        same = all(np.array_equal(runs[0], r) for r in runs[1:])
        return same, "" if same else "outputs differ between repeats"

    checks = [
        ("zeros_input_softmax", lambda: _softmax_check(model, np.zeros(shape, np.float32))),
        ("ones_input_softmax", lambda: _softmax_check(model, np.ones(shape, np.float32))),
        ("single_pixel_softmax", lambda: _softmax_check(model, spike)),
        ("one_training_step_finite", training_step),
        ("prediction_deterministic", deterministic),
    ]
    results = []
    for name, fn in checks:
        try:
            with np.errstate(all="ignore"):
                ok, detail = fn()
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(SmokeCheck(name, bool(ok), detail))
    return SmokeReport(results)
