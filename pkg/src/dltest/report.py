"""Result persistence and rendering (CSV is the source of truth; JSON and markdown derive from it)."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHALLENGES = ("model quality", "training-data quality", "oracle", "input selection",
              "adversarial detection")

# which testing challenges each technique addresses
TECHNIQUE_CHALLENGES = {
    "dt": {"oracle"},
    "mt": {"model quality", "oracle", "input selection"},
    "mut": {"model quality", "training-data quality", "input selection"},
    "apt": {"model quality", "training-data quality", "adversarial detection"},
    "ct": {"model quality", "input selection"},
}
TECHNIQUE_NAMES = {"dt": "DT", "mt": "MT", "mut": "MuT", "apt": "APT", "ct": "CT", "coverage": "Coverage"}


@dataclass
class Table:
    name: str            # file stem, e.g. "mt-seed0"
    technique: str
    fields: list
    rows: list           # list of dicts, values already formatted as strings

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, self.fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()


@dataclass
class ExperimentReport:
    tables: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)       # technique -> message
    executed: list = field(default_factory=list)

    def check_nonempty(self):
        if not self.tables and not self.errors:
            raise ValueError("an experiment report needs at least one table")


def table_from_csv(text: str, name: str, technique: str) -> Table:
    reader = csv.DictReader(io.StringIO(text))
    return Table(name, technique, list(reader.fieldnames or []), list(reader))


def write_tables(report: ExperimentReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in report.tables:
        p = out / f"{t.name}.csv"
        p.write_text(t.to_csv())
        paths.append(p)
    return paths


def load_tables(run_dir) -> list[Table]:
    tables = []
    for p in sorted(Path(run_dir).glob("*.csv")):
        technique = p.stem.split("-")[0]
        tables.append(table_from_csv(p.read_text(), p.stem, technique))
    return tables


def challenge_matrix(techniques) -> dict:
    """``{challenge: {technique: bool}}`` for the executed techniques that appear in the matrix."""
    cols = [t for t in ("dt", "mt", "mut", "apt", "ct") if t in set(techniques)]
    return {c: {t: c in TECHNIQUE_CHALLENGES[t] for t in cols} for c in CHALLENGES}


def render_matrix_md(techniques) -> str:
    matrix = challenge_matrix(techniques)
    cols = list(next(iter(matrix.values())).keys())
    if not cols:
        return ""
    lines = ["| Challenge | " + " | ".join(TECHNIQUE_NAMES[c] for c in cols) + " |",
             "|---|" + "---|" * len(cols)]
    for ch, row in matrix.items():
        lines.append(f"| {ch} | " + " | ".join("✓" if row[c] else "" for c in cols) + " |")
    return "\n".join(lines)


def _md_table(fields, rows) -> str:
    lines = ["| " + " | ".join(fields) + " |", "|" + "---|" * len(fields)]
    lines += ["| " + " | ".join(str(r.get(f, "")) for f in fields) + " |" for r in rows]
    return "\n".join(lines)


REGIME_ORDER = ("WithoutAug", "TrainAugOnly", "TestAugOnly", "TrainAndTestAug")
REGIME_LABELS = {"WithoutAug": "Without Aug", "TrainAugOnly": "Only Train Aug",
                 "TestAugOnly": "Only Test Aug", "TrainAndTestAug": "Train and Test Aug"}


def render_mt_md(table: Table) -> str:
    """Regimes as rows, relation configurations as columns — one table per seed."""
    by_seed = defaultdict(list)
    for r in table.rows:
        by_seed[r["seed"]].append(r)
    parts = []
    for seed, rows in sorted(by_seed.items(), key=lambda kv: int(kv[0])):
        configs = list(dict.fromkeys(r["mr_config"] for r in rows if r["mr_config"] != "none"))
        cell = {(r["regime"], r["mr_config"]): r["accuracy"] for r in rows}
        lines = [f"Seed {seed}", "", "| Regime | " + " | ".join(configs) + " |",
                 "|---|" + "---|" * len(configs)]
        for regime in REGIME_ORDER:
            if regime == "WithoutAug":
                if (regime, "none") in cell:
                    lines.append(f"| {REGIME_LABELS[regime]} | " + " | ".join(
                        [cell[(regime, "none")]] * len(configs)) + " |")
                continue
            if any((regime, c) in cell for c in configs):
                lines.append(f"| {REGIME_LABELS[regime]} | " + " | ".join(
                    cell.get((regime, c), "") for c in configs) + " |")
        parts.append("\n".join(lines))
    return "\n\n".join(parts)


def render_markdown(report: ExperimentReport) -> str:
    out = ["# Experiment report", ""]
    env = report.environment
    if env:
        out += [f"- {k}: {v}" for k, v in sorted(env.items())] + [""]
    for t in report.tables:
        out += [f"## {TECHNIQUE_NAMES.get(t.technique, t.technique)} — {t.name}", ""]
        out.append(render_mt_md(t) if t.technique == "mt" and "regime" in t.fields else _md_table(t.fields, t.rows))
        out.append("")
    matrix = render_matrix_md(report.executed)
    if matrix:
        out += ["## Techniques vs. challenges", "", matrix, ""]
    if report.errors:
        out += ["## Failures", ""] + [f"- {k}: {v}" for k, v in sorted(report.errors.items())] + [""]
    return "\n".join(out)


def render_json(report: ExperimentReport) -> str:
    return json.dumps({
        "environment": report.environment,
        "executed": report.executed,
        "errors": report.errors,
        "tables": {t.name: t.rows for t in report.tables},
        "challenges": challenge_matrix(report.executed),
    }, indent=2, sort_keys=True)


def render_report(report: ExperimentReport, fmt: str, out_dir) -> Path | None:
    """Write ``report.md`` / ``report.json``; ``csv`` needs nothing beyond the tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "md":
        p = out / "report.md"
        p.write_text(render_markdown(report))
        return p
    if fmt == "json":
        p = out / "report.json"
        p.write_text(render_json(report))
        return p
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    return None


# ---------------------------------------------------------------------------
# consistency checks over a finished run

def check_tables(tables) -> list[str]:
    """Sanity and trend checks on result tables; returns failure descriptions."""
    failures = []
    mt = defaultdict(list)
    for t in tables:
        for r in t.rows:
            if "accuracy" in r and "error" in r:
                acc, err = float(r["accuracy"]), float(r["error"])
                if not 0 <= acc <= 100 or abs(acc + err - 100) > 0.011:
                    failures.append(f"{t.name}: accuracy {acc} / error {err} inconsistent")
            if t.technique == "mt" and "regime" in r:
                mt[(r["regime"], r["mr_config"])].append(float(r["accuracy"]))
        if t.technique == "apt" and "epsilon" in t.fields:
            accs = [float(r["accuracy"]) for r in t.rows]
            if any(b > a + 0.5 for a, b in zip(accs, accs[1:])):
                failures.append(f"{t.name}: robustness curve increases")
    for (regime, cfg), vals in mt.items():
        if regime != "TrainAndTestAug":
            continue
        only = mt.get(("TestAugOnly", cfg))
        if only and np.median(vals) < np.median(only):
            failures.append(f"mt {cfg}: Train and Test Aug below Only Test Aug")
    return failures
