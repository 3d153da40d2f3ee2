"""Metamorphic testing under four train/test augmentation regimes.

A metamorphic relation here is "the label is invariant under transform T".
Each regime decides which side of the experiment sees T:

* ``WithoutAug``       clean train, clean test
* ``TrainAugOnly``     fresh random draws for every training batch, clean test
* ``TestAugOnly``      clean train, a fixed augmented copy of the test set
* ``TrainAndTestAug``  both

Several relations passed together are composed in list order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import cache
from . import tensornet as tn
from . import transforms as T
from .dataset import Dataset


class Regime(str, Enum):
    WITHOUT_AUG = "WithoutAug"
    TRAIN_AUG_ONLY = "TrainAugOnly"
    TEST_AUG_ONLY = "TestAugOnly"
    TRAIN_AND_TEST_AUG = "TrainAndTestAug"

    @property
    def augments_train(self) -> bool:
        return self in (Regime.TRAIN_AUG_ONLY, Regime.TRAIN_AND_TEST_AUG)

    @property
    def augments_test(self) -> bool:
        return self in (Regime.TEST_AUG_ONLY, Regime.TRAIN_AND_TEST_AUG)


REGIMES = tuple(Regime)


@dataclass(frozen=True)
class MtResult:
    regime: Regime
    mr_config: str
    accuracy: float
    error: float
    seed: int


@dataclass(frozen=True)
class MrCheck:
    violation: bool
    label_orig: int
    label_transformed: int


# The single-relation grid and the stacked combinations used for the
# rotation / shift / shear / zoom experiments.
TABLE1_CONFIGS = (
    [T.rotation(a) for a in (30, 60, 90)]
    + [T.shift(f) for f in (0.1, 0.2, 0.25, 0.5)]
    + [T.shear(s) for s in (25, 45, 65, 85)]
    + [T.zoom(0.5, 1.5), T.zoom(2.5, 3.5)]
)

_MILD = [T.rotation(30), T.shift(0.1), T.shear(25), T.zoom(0.5, 1.5)]
_STRONG = [T.rotation(60), T.shift(0.2), T.shear(45), T.zoom(2.5, 3.5)]
COMBINED_CONFIGS = {
    2: [T.compose(_MILD[:2]), T.compose(_STRONG[:2])],
    3: [T.compose(_MILD[:3]), T.compose(_STRONG[:3])],
    4: [T.compose(_MILD), T.compose(_STRONG)],
}


def combine(mrs) -> T.TransformSpec:
    mrs = list(mrs)
    return mrs[0] if len(mrs) == 1 else T.compose(mrs)


def evaluation_draw_seeds(n: int, seed: int) -> np.ndarray:
    """One draw seed per test image; fixed for a given run seed."""
    return np.random.default_rng([seed, 0x7E57]).integers(0, 2**62, size=n)


def augment_test_set(test_set: Dataset, spec: T.TransformSpec, seed: int,
                     interpolation: str = "bilinear", batch: int = 2000) -> Dataset:
    """A fixed augmented copy of ``test_set``: every image transformed exactly once."""
    seeds = evaluation_draw_seeds(len(test_set), seed)
    images = np.concatenate([
        T.apply_batch(spec, test_set.images[i:i + batch], seeds[i:i + batch], interpolation)
        for i in range(0, len(test_set), batch)]) if len(test_set) else test_set.images
    return Dataset(images, test_set.labels, dict(test_set.provenance, augmented=spec.label()))


def train_for_regime(config: tn.TrainConfig, train_set: Dataset, spec: T.TransformSpec | None,
                     regime: Regime) -> tn.Model:
    """Train (or load from cache) the model a regime needs."""
    if regime.augments_train:
        return cache.cached_train(config, train_set, augment=T.augmenter(spec),
                                  extra={"augment": spec.to_dict()})
    return cache.cached_train(config, train_set)


def _validate(mrs, regime):
    regime = Regime(regime)
    mrs = list(mrs or [])
    if not mrs and regime is not Regime.WITHOUT_AUG:
        raise ValueError(f"regime {regime.value} needs at least one metamorphic relation")
    return regime, mrs


def run_mt(config: tn.TrainConfig, train_set: Dataset, test_set: Dataset, mrs, regime,
           model: tn.Model | None = None) -> MtResult:
    """Accuracy of one regime for the relations ``mrs``.

    ``model`` skips training; it must be the model the regime calls for
    (trained on augmented data for the train-augmenting regimes).
    """
    regime, mrs = _validate(mrs, regime)
    spec = combine(mrs) if mrs else None
    label = spec.label() if spec is not None and regime is not Regime.WITHOUT_AUG else "none"
    if model is None:
        model = train_for_regime(config, train_set, spec, regime)
    evaluated = augment_test_set(test_set, spec, config.seed) if regime.augments_test else test_set
    ev = tn.evaluate(model, evaluated)
    return MtResult(regime, label, ev.accuracy, ev.error, config.seed)


def run_campaign(config: tn.TrainConfig, train_set: Dataset, test_set: Dataset, configs,
                 regimes=REGIMES, progress=None) -> list[MtResult]:
    """All ``regimes`` for every relation in ``configs``, sharing trained models.

    ``configs`` holds TransformSpecs (use :func:`combine` for stacks). The
    clean model is trained once; each train-augmenting relation once.
    """
    regimes = [Regime(r) for r in regimes]
    results = []
    clean = None
    if Regime.WITHOUT_AUG in regimes or Regime.TEST_AUG_ONLY in regimes:
        clean = train_for_regime(config, train_set, None, Regime.WITHOUT_AUG)
    if Regime.WITHOUT_AUG in regimes:
        results.append(run_mt(config, train_set, test_set, [], Regime.WITHOUT_AUG, model=clean))
    for spec in configs:
        aug_model = None
        if any(r.augments_train for r in regimes):
            aug_model = train_for_regime(config, train_set, spec, Regime.TRAIN_AUG_ONLY)
        aug_test = augment_test_set(test_set, spec, config.seed)
        for regime in regimes:
            if regime is Regime.WITHOUT_AUG:
                continue
            model = aug_model if regime.augments_train else clean
            ev = tn.evaluate(model, aug_test if regime.augments_test else test_set)
            results.append(MtResult(regime, spec.label(), ev.accuracy, ev.error, config.seed))
            if progress:
                progress(results[-1])
    return results


def check_mr(model: tn.Model, x, spec: T.TransformSpec, draw_seed: int = 0) -> MrCheck:
    """Label-invariance check on one image; needs no ground truth."""
    x = np.asarray(x, np.float32)
    pair = np.stack([x, T.apply(spec, x, draw_seed)])
    a, b = tn.predict(model, pair)
    return MrCheck(bool(a != b), int(a), int(b))


def mr_violations(model: tn.Model, images, spec: T.TransformSpec, seed: int = 0) -> np.ndarray:
    """Boolean mask of images whose predicted label changes under ``spec``."""
    images = np.asarray(images, np.float32)
    if len(images) == 0:
        return np.zeros(0, bool)
    moved = T.apply_batch(spec, images, evaluation_draw_seeds(len(images), seed))
    return tn.predict(model, images) != tn.predict(model, moved)


def mr_violation_rate(model: tn.Model, test_set, spec: T.TransformSpec, seed: int = 0) -> float:
    images = getattr(test_set, "images", test_set)
    mask = mr_violations(model, images, spec, seed)
    return 100.0 * mask.mean() if len(mask) else 0.0


CSV_FIELDS = ("regime", "mr_config", "accuracy", "error", "seed")


def to_rows(results) -> list[dict]:
    return [{"regime": r.regime.value, "mr_config": r.mr_config, "accuracy": f"{r.accuracy:.2f}",
             "error": f"{r.error:.2f}", "seed": r.seed} for r in results]


def to_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(to_rows(results))
    return buf.getvalue()
