"""On-disk cache of trained models keyed by everything that determines them."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from pathlib import Path

from . import tensornet as tn

log = logging.getLogger(__name__)


def cache_dir() -> Path | None:
    """``$DLTEST_CACHE``, or None when caching is disabled (empty value)."""
    value = os.environ.get("DLTEST_CACHE", str(Path.home() / ".cache" / "dltest"))
    return Path(value) if value else None


def dataset_key(ds) -> dict | None:
    prov = getattr(ds, "provenance", None) or {}
    if "images_sha256" not in prov:
        return None
    return {k: prov[k] for k in ("images_sha256", "labels_sha256", "subsample", "limit") if k in prov}


def model_key(config: tn.TrainConfig, ds, extra=None) -> str | None:
    data = dataset_key(ds)
    if data is None:
        return None
    blob = json.dumps({"config": dataclasses.asdict(config), "data": data, "extra": extra},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def cached_train(config: tn.TrainConfig, train_set, augment=None, extra=None):
    """``tn.train_new`` with a file cache.

    ``extra`` must describe ``augment`` (or any other influence on training);
    it is hashed into the key. Datasets without file provenance bypass the cache.
    A JSON sidecar next to each cached model records the training wall time.
    """
    root = cache_dir()
    key = model_key(config, train_set, extra) if root is not None else None
    path = root / f"model-{key}.nnpb" if key else None
    if path is not None and path.exists():
        log.info("loading cached model %s", path.name)
        return tn.load_model(path)
    start = time.perf_counter()
    model, history = tn.train_new(config, train_set, augment=augment)
    seconds = time.perf_counter() - start
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tn.save_model(model, tmp)
        tmp.replace(path)
        path.with_suffix(".json").write_text(json.dumps(
            {"train_seconds": round(seconds, 1), "config": dataclasses.asdict(config), "extra": extra},
            sort_keys=True))
    return model


def training_record(config: tn.TrainConfig, train_set, extra=None) -> dict | None:
    """The sidecar written when the cached model was trained, if any."""
    root = cache_dir()
    key = model_key(config, train_set, extra) if root is not None else None
    path = root / f"model-{key}.json" if key else None
    if path is None or not path.exists():
        return None
    return json.loads(path.read_text())
