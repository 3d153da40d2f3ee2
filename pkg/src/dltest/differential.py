"""Differential testing: ensembles, disagreement mining and retraining."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import cache
from . import tensornet as tn
from .dataset import Dataset

log = logging.getLogger(__name__)


class DifferentialError(ValueError):
    pass


@dataclass
class Ensemble:
    models: list
    provenance: list = field(default_factory=list)   # one dict per member

    def __post_init__(self):
        if len(self.models) < 2:
            raise DifferentialError("an ensemble needs at least two models")
        shapes = {(tuple(m.input_shape), m.output_shape) for m in self.models}
        if len(shapes) != 1:
            raise DifferentialError(f"ensemble members disagree on shapes: {sorted(shapes)}")


@dataclass(frozen=True)
class Disagreement:
    input_id: int
    labels: tuple
    majority: int | None
    confidences: tuple


def train_ensemble(base: tn.TrainConfig, variants, train_set, use_cache: bool = True) -> Ensemble:
    """One member per variant; a variant overrides fields of ``base`` (e.g. ``{"seed": 1}``)."""
    variants = [dict(v) for v in variants]
    if len(variants) < 2:
        raise DifferentialError("need at least two variants")
    keys = [json.dumps(v, sort_keys=True) for v in variants]
    if len(set(keys)) < len(keys):
        log.warning("duplicate ensemble variants produce identical members")
    models = []
    for v in variants:
        cfg = dataclasses.replace(base, **v)
        if use_cache:
            models.append(cache.cached_train(cfg, train_set))
        else:
            models.append(tn.train_new(cfg, train_set)[0])
    return Ensemble(models, [dataclasses.asdict(dataclasses.replace(base, **v)) for v in variants])


def ensemble_outputs(ens: Ensemble, images):
    """``(labels, confidences)``, both ``(members, n)``."""
    probs = [tn.predict_proba(m, images) for m in ens.models]
    return np.stack([p.argmax(1) for p in probs]), np.stack([p.max(1) for p in probs])


def _majority(column):
    values, counts = np.unique(column, return_counts=True)
    top = counts.argmax()
    return int(values[top]) if counts[top] * 2 > len(column) else None


def find_disagreements(ens: Ensemble, images, ids=None) -> list[Disagreement]:
    """Inputs on which members predict at least two distinct labels.

    Ranked by number of distinct labels (descending), then mean max-softmax
    confidence (ascending), then input id.
    """
    if not isinstance(ens, Ensemble):
        ens = Ensemble(list(ens))
    images = np.asarray(images, np.float32)
    ids = np.arange(len(images)) if ids is None else np.asarray(ids)
    labels, conf = ensemble_outputs(ens, images)
    out = []
    for n in np.flatnonzero((labels != labels[0]).any(axis=0)):
        col = labels[:, n]
        out.append(Disagreement(int(ids[n]), tuple(int(v) for v in col), _majority(col),
                                tuple(float(c) for c in conf[:, n])))
    out.sort(key=lambda d: (-len(set(d.labels)), float(np.mean(d.confidences)), d.input_id))
    return out


def disagreement_mask(ens: Ensemble, images) -> np.ndarray:
    labels, _ = ensemble_outputs(ens, images)
    return (labels != labels[0]).any(axis=0)


@dataclass
class RetrainReport:
    model: tn.Model
    used: int
    skipped: int
    clean_before: float | None
    clean_after: float | None
    pool_before: float | None
    pool_after: float | None

    def to_json(self) -> str:
        data = {k: v for k, v in dataclasses.asdict(self).items() if k != "model"}
        return json.dumps(data, sort_keys=True)


DEFAULT_FINETUNE = tn.TrainConfig(epochs=2, batch_size=64, learning_rate=0.002, momentum=0.9, seed=0)


def retrain_with_disagreements(target: tn.Model, disagreements, pool_images, config: tn.TrainConfig = DEFAULT_FINETUNE,
                               replay: Dataset | None = None, replay_size: int = 2000,
                               test_set: Dataset | None = None) -> RetrainReport:
    """Fine-tune ``target`` on majority-labelled disagreement inputs.

    ``pool_images[d.input_id]`` must be the image of disagreement ``d``; inputs
    without a majority label are skipped. A seeded sample of ``replay`` (the
    original training data) is mixed in so the model keeps its clean skill.
    Ground-truth labels are only used for the clean before/after numbers.
    """
    usable = [d for d in disagreements if d.majority is not None]
    skipped = len(list(disagreements)) - len(usable)
    clean_before = tn.evaluate(target, test_set).accuracy if test_set is not None else None
    if not usable:
        log.warning("no disagreement with a majority label; model returned unchanged")
        return RetrainReport(target, 0, skipped, clean_before, clean_before, None, None)
    pool_images = np.asarray(pool_images, np.float32)
    x = pool_images[[d.input_id for d in usable]]
    y = np.array([d.majority for d in usable], np.int64)
    pool = Dataset(x, y)
    pool_before = tn.evaluate(target, pool).accuracy
    if replay is not None and replay_size > 0:
        rng = np.random.default_rng(config.seed)
        pick = rng.choice(len(replay), size=min(replay_size, len(replay)), replace=False)
        mix = Dataset(np.concatenate([x, replay.images[pick]]), np.concatenate([y, replay.labels[pick]]))
    else:
        mix = pool
    model, _ = tn.train(target, mix, config)
    return RetrainReport(model, len(usable), skipped, clean_before,
                         tn.evaluate(model, test_set).accuracy if test_set is not None else None,
                         pool_before, tn.evaluate(model, pool).accuracy)


def to_csv(disagreements, members: int | None = None) -> str:
    disagreements = list(disagreements)
    m = members if members is not None else (len(disagreements[0].labels) if disagreements else 0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["input_id"] + [f"label_{i}" for i in range(m)] + ["majority"]
                    + [f"confidence_{i}" for i in range(m)])
    for d in disagreements:
        writer.writerow([d.input_id, *d.labels, "" if d.majority is None else d.majority,
                         *(f"{c:.6f}" for c in d.confidences)])
    return buf.getvalue()
