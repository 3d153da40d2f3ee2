"""Experiment orchestration: train the base model, then run each configured technique.

Techniques run in the fixed order coverage → mt → mut → ct → dt → apt and only
share the (read-only) base model, so they can run on a thread pool. A failing
technique is recorded in the report and the others still run. Every CSV name
carries the run seed; CSV content depends only on config + seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import adversarial as adv
from . import cache
from . import combinatorial as ct
from . import coverage as cov
from . import differential as dt
from . import metamorphic as mt
from . import mutation as mut
from . import report as R
from . import tensornet as tn
from . import transforms as T
from .config import TECHNIQUES, ExperimentConfig, serialize
from .dataset import Dataset, load_mnist, subsample, subsample_indices

log = logging.getLogger(__name__)


@dataclass
class Context:
    cfg: ExperimentConfig
    seed: int
    train: Dataset
    holdout: Dataset | None      # training images left out of the subsample
    test: Dataset
    model: tn.Model | None
    out: Path

    @property
    def train_config(self) -> tn.TrainConfig:
        return self.cfg.train.train_config(self.seed)

    def name(self, technique, suffix=""):
        return f"{technique}{'-' + suffix if suffix else ''}-seed{self.seed}"


def _fmt(v, digits=2):
    return f"{v:.{digits}f}"


def _stratified(ds: Dataset, n: int, seed: int) -> Dataset:
    return ds if n >= len(ds) else subsample(ds, n, seed)


# ---------------------------------------------------------------------------
# data and base model

def load_data(cfg: ExperimentConfig, limit: int | None = None):
    """``(train, holdout, test)`` per the data section; ``limit`` overrides ``test_limit``."""
    directory = cfg.data.directory()
    full = load_mnist("train", directory)
    holdout = None
    if cfg.data.train_subsample and cfg.data.train_subsample < len(full):
        idx = subsample_indices(full.labels, cfg.data.train_subsample, 0)
        train = subsample(full, cfg.data.train_subsample, 0)
        rest = np.setdiff1d(np.arange(len(full)), idx)
        holdout = full.take(rest)
    else:
        train = full
    test = load_mnist("test", directory)
    limit = limit if limit is not None else cfg.data.test_limit
    if limit is not None:
        test = _stratified(test, limit, 0)
    return train, holdout, test


def base_model(cfg: ExperimentConfig, seed: int, train: Dataset) -> tn.Model:
    return cache.cached_train(cfg.train.train_config(seed), train)


# ---------------------------------------------------------------------------
# techniques; each returns the tables it produced and may write extra artifacts

def run_coverage(ctx: Context) -> list:
    sec = ctx.cfg.coverage
    inputs = _stratified(ctx.test, sec.inputs, ctx.seed)
    traces = tn.collect_traces(ctx.model, inputs.images)
    rows = []

    def add(report, param):
        rows.append({"metric": report.metric, "param": param, "layer": "all", "value": _fmt(report.value, 4)})
        for pl in report.per_layer:
            rows.append({"metric": report.metric, "param": param, "layer": pl["layer"],
                         "value": _fmt(pl["value"], 4)})

    for t in sec.thresholds:
        add(cov.neuron_coverage(traces, t), t)
    for k in sec.top_k:
        add(cov.top_k_coverage(traces, k), k)
    ref = cov.build_reference(ctx.model, _stratified(ctx.train, sec.dsa_reference, ctx.seed).images)
    values = cov.dsa_batch(ctx.model, inputs.images, ref)
    finite = values[np.isfinite(values)]
    for stat, fn in (("mean", np.mean), ("median", np.median), ("max", np.max)):
        rows.append({"metric": "dsa", "param": stat, "layer": "penultimate",
                     "value": _fmt(float(fn(finite)) if len(finite) else float("nan"), 4)})
    return [R.Table(ctx.name("coverage"), "coverage", ["metric", "param", "layer", "value"], rows)]


def run_mt(ctx: Context) -> list:
    sec = ctx.cfg.mt
    specs = [c.to_spec() for c in sec.configs]
    results = mt.run_campaign(ctx.train_config, ctx.train, ctx.test, specs, regimes=sec.regimes)
    return [R.Table(ctx.name("mt"), "mt", list(mt.CSV_FIELDS), mt.to_rows(results))]


def run_mut(ctx: Context) -> list:
    sec = ctx.cfg.mut
    rows = mut.run_mut_sweep(ctx.model, ctx.test, sec.kinds, sec.ratios, sec.seeds)
    if sec.layer_kinds:
        rows += mut.run_layer_mutants(ctx.model, ctx.test, sec.layer_kinds, sec.layer_seeds)
    return [R.table_from_csv(mut.to_csv(rows), ctx.name("mut"), "mut")]


def _domain_spec(name, level):
    """A transform for one covering-array cell; ``None``/``False`` switches the factor off."""
    if level is None or level is False:
        return None
    if name in ("rotation", "shear"):
        return getattr(T, name)(float(level))
    if name == "shift":
        return T.shift(*map(float, level)) if isinstance(level, list) else T.shift(float(level))
    if name == "zoom":
        return T.zoom(*map(float, level)) if isinstance(level, list) else T.zoom(float(level))
    if name == "hflip":
        return T.hflip_spec()
    raise ct.CombinatorialError(f"domain {name!r} is not a transform kind; cannot evaluate rows")


def run_ct(ctx: Context) -> list:
    sec = ctx.cfg.ct
    tables = []
    rows = []
    if sec.smoke:
        for check in ct.smoke_test(ctx.model).checks:
            rows.append({"kind": "smoke", "name": check.name, "value": "pass" if check.passed else "fail"})
    if sec.neuron_strengths:
        inputs = _stratified(ctx.test, sec.neuron_inputs, ctx.seed)
        traces = tn.collect_traces(ctx.model, inputs.images)
        for layer, t in sorted(sec.neuron_strengths.items()):
            value = ct.neuron_tuple_coverage(traces, layer, t, seed=ctx.seed)
            rows.append({"kind": "neuron_tuple", "name": f"layer{layer}_t{t}", "value": _fmt(value, 4)})
    if rows:
        tables.append(R.Table(ctx.name("ct"), "ct", ["kind", "name", "value"], rows))
    if sec.domains:
        domains = [ct.ParameterDomain(d.name, d.levels) for d in sec.domains]
        array = ct.generate_covering_array(domains, sec.strength, seed=ctx.seed)
        missing = ct.verify_covering_array(array)
        if missing:
            raise ct.CombinatorialError(f"covering array misses {len(missing)} tuples")
        names = [d.name for d in domains]
        arows = []
        for r, values in enumerate(array.values()):
            row = {"row": r, **{n: json.dumps(v) for n, v in zip(names, values)}}
            if sec.evaluate_rows:
                parts = [s for s in (_domain_spec(n, v) for n, v in zip(names, values)) if s is not None]
                spec = T.compose(parts)
                ev = tn.evaluate(ctx.model, mt.augment_test_set(ctx.test, spec, ctx.seed))
                row.update(accuracy=_fmt(ev.accuracy), error=_fmt(ev.error))
            arows.append(row)
        fields = ["row"] + names + (["accuracy", "error"] if sec.evaluate_rows else [])
        tables.append(R.Table(ctx.name("ct", "array"), "ct", fields, arows))
    return tables


def _dt_pool(ctx: Context) -> Dataset:
    pool = ctx.cfg.dt.pool
    if pool.source == "train_holdout" and ctx.holdout is not None:
        source = ctx.holdout
    elif pool.source == "train_holdout":
        log.warning("no training images outside the subsample; using the test set as pool")
        source = ctx.test
    elif pool.source == "mr":
        source = mt.augment_test_set(ctx.test, pool.mr.to_spec(), ctx.seed)
    else:
        source = ctx.test
    return _stratified(source, pool.size, ctx.seed)


def run_dt(ctx: Context) -> list:
    sec = ctx.cfg.dt
    ens = dt.train_ensemble(ctx.train_config, [{}] + list(sec.variants), ctx.train)
    pool = _dt_pool(ctx)
    found = dt.find_disagreements(ens, pool.images)
    tables = [R.table_from_csv(dt.to_csv(found, len(ens.models)), ctx.name("dt"), "dt")]
    if sec.retrain:
        finetune = tn.TrainConfig(sec.retrain_epochs, ctx.cfg.train.batch_size, sec.retrain_learning_rate,
                                  ctx.cfg.train.momentum, ctx.seed, ctx.cfg.train.architecture)
        rep = dt.retrain_with_disagreements(ens.models[0], found, pool.images, finetune,
                                            replay=ctx.train, replay_size=sec.replay_size, test_set=ctx.test)
        row = {k: ("" if v is None else (_fmt(v) if isinstance(v, float) else v))
               for k, v in json.loads(rep.to_json()).items()}
        row["disagreements"] = len(found)
        row["pool"] = len(pool)
        tables.append(R.Table(ctx.name("dt", "retrain"), "dt", sorted(row), [row]))
    return tables


def run_apt(ctx: Context) -> list:
    sec = ctx.cfg.apt
    subset = _stratified(ctx.test, sec.subset, ctx.seed)
    kw = {"steps": sec.steps} if sec.attack == "ifgsm" else {}
    rows, corpus = [], []
    for eps in sec.epsilons:
        spec = adv.AttackSpec(sec.attack, epsilon=eps, **kw)
        res = adv.attack(ctx.model, subset.images, subset.labels, spec)
        acc = 100.0 * float(np.mean(res.adversarial_labels == subset.labels))
        rows.append({"epsilon": _fmt(eps, 3), "accuracy": _fmt(acc), "error": _fmt(100.0 - acc),
                     "success_rate": _fmt(100.0 * float(res.success.mean()))})
        if eps > 0:
            corpus.append((np.arange(len(subset)), eps, res.success, res.x_adv))
    tables = [R.Table(ctx.name("apt"), "apt", ["epsilon", "accuracy", "error", "success_rate"], rows)]
    if sec.corpus and corpus:
        ctx.out.mkdir(parents=True, exist_ok=True)
        adv.write_corpus(ctx.out / f"{ctx.name('apt', 'corpus')}.bin",
                         np.concatenate([c[0] for c in corpus]),
                         np.concatenate([np.full(len(c[0]), c[1], np.float32) for c in corpus]),
                         np.concatenate([c[2] for c in corpus]),
                         np.concatenate([c[3] for c in corpus]))
    if sec.deepfool:
        x = subset.images[:sec.deepfool]
        res = adv.deepfool(ctx.model, x)
        drows = [{"input_id": i, "success": int(res.success[i]), "iterations": int(res.iterations[i]),
                  "l2": _fmt(float(res.l2[i]), 4), "linf": _fmt(float(res.linf[i]), 4)} for i in range(len(x))]
        tables.append(R.Table(ctx.name("apt", "deepfool"), "apt",
                              ["input_id", "success", "iterations", "l2", "linf"], drows))
    if sec.lcr is not None:
        tables.append(_lcr_table(ctx, subset))
    return tables


def _lcr_table(ctx: Context, subset: Dataset) -> R.Table:
    lcr = ctx.cfg.apt.lcr
    op = mut.MutationOperator(mut.Kind.GF, lcr.ratio, ctx.seed)
    mutants = mut.lcr_mutants(ctx.model, lcr.mutants, op)
    pred = tn.predict(ctx.model, subset.images)
    clean_ids = np.flatnonzero(pred == subset.labels)
    clean = mut.label_change_rates(ctx.model, mutants, subset.images[clean_ids])
    tau = mut.calibrate_tau(clean, lcr.quantile)
    res = adv.fgsm(ctx.model, subset.images[clean_ids], subset.labels[clean_ids], lcr.epsilon)
    adv_ids = clean_ids[res.success]
    attacked = mut.label_change_rates(ctx.model, mutants, res.x_adv[res.success])
    rows = [{"input_id": int(i), "kind": "clean", "lcr": _fmt(v, 4), "flag": int(v > tau)}
            for i, v in zip(clean_ids, clean)]
    rows += [{"input_id": int(i), "kind": "adversarial", "lcr": _fmt(v, 4), "flag": int(v > tau)}
             for i, v in zip(adv_ids, attacked)]
    return R.Table(ctx.name("apt", "detect"), "apt", ["input_id", "kind", "lcr", "flag"], rows)


RUNNERS = {"coverage": run_coverage, "mt": run_mt, "mut": run_mut, "ct": run_ct, "dt": run_dt, "apt": run_apt}


def _needs_model(technique):
    return technique != "mt"


def _guarded(fn, ctx):
    try:
        return fn(ctx), None
    except Exception as exc:  # isolate per technique
        log.error("technique failed:\n%s", traceback.format_exc())
        return [], f"{type(exc).__name__}: {exc}"


def environment(cfg: ExperimentConfig, seed: int) -> dict:
    blob = json.dumps(serialize(cfg), sort_keys=True)
    return {"version": __version__, "seed": seed, "python": platform.python_version(),
            "numpy": np.__version__, "config_sha256": hashlib.sha256(blob.encode()).hexdigest()[:16]}


def run(cfg: ExperimentConfig, seed: int | None = None, out=None, limit: int | None = None,
        jobs: int = 1, techniques=None) -> R.ExperimentReport:
    """Run ``techniques`` (default: every configured section) and write their CSVs under ``out``."""
    seed = cfg.seed if seed is None else seed
    out = Path(out if out is not None else cfg.output_dir)
    selected = [t for t in TECHNIQUES if t in (techniques or cfg.techniques())]
    missing = [t for t in selected if getattr(cfg, t) is None]
    if missing:
        raise ValueError(f"config has no section for: {', '.join(missing)}")
    env = environment(cfg, seed)
    env["started"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    report = R.ExperimentReport(environment=env, executed=list(selected))
    train, holdout, test = load_data(cfg, limit)
    model = None
    if any(_needs_model(t) for t in selected):
        try:
            model = base_model(cfg, seed, train)
        except Exception as exc:
            log.error("base model training failed:\n%s", traceback.format_exc())
            for t in selected:
                if _needs_model(t):
                    report.errors[t] = f"base model: {type(exc).__name__}: {exc}"
            selected = [t for t in selected if not _needs_model(t)]
    ctx = Context(cfg, seed, train, holdout, test, model, out)
    if jobs > 1 and len(selected) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            futures = [pool.submit(_guarded, RUNNERS[t], ctx) for t in selected]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_guarded(RUNNERS[t], ctx) for t in selected]
    for t, (tables, error) in zip(selected, outcomes):
        report.tables += tables
        if error is not None:
            report.errors[t] = error
    report.environment["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    R.write_tables(report, out)
    (out / f"environment-seed{seed}.json").write_text(json.dumps(report.environment, indent=2, sort_keys=True))
    if report.errors:
        (out / f"errors-seed{seed}.json").write_text(json.dumps(report.errors, indent=2, sort_keys=True))
    return report
