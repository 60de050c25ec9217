"""Batch experiment runner: repeated pipeline runs, aggregation, significance.

Results stream to an append-only CSV (paper-scale corpora do not fit in
memory); aggregation is a second pass over the file.
"""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .encoding import one_hot, prune
from .matching import read_nscr
from .ml import mann_whitney_u
from .ml.seeds import STREAM_EXPERIMENT, child_seed
from .prioritize import (
    Algorithm,
    PipelineConfig,
    baseline_selection_report,
    prioritize,
)
from .triage import debugging_cost, run_selection

logger = logging.getLogger(__name__)

RESULT_FIELDS = ["dataset", "kind", "algo", "k", "sc", "prune", "rep",
                 "precision", "recall", "f1", "dc", "ms"]

SIGNIFICANCE_LEVEL = 0.05


@dataclass(frozen=True)
class CorpusItem:
    path: str
    kind: str = "unknown"


@dataclass
class ExperimentSpec:
    corpus: list[CorpusItem]
    configs: list[PipelineConfig]
    repetitions: int
    master_seed: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentSpec":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        corpus = []
        for item in data["corpus"]:
            if isinstance(item, str):
                corpus.append(CorpusItem(path=item, kind=_kind_from_name(item)))
            else:
                corpus.append(CorpusItem(path=item["path"],
                                         kind=item.get("kind", _kind_from_name(item["path"]))))
        configs = [PipelineConfig.from_dict(c) for c in data["configs"]]
        return cls(corpus=corpus, configs=configs,
                   repetitions=int(data.get("repetitions", 1)),
                   master_seed=int(data.get("master_seed", 0)))


def _kind_from_name(path: str) -> str:
    name = Path(path).name.lower()
    for kind in ("synthetic", "realistic", "real"):
        if name.startswith(kind):
            return kind
    return "unknown"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _run_once(features, total_vulnerable: int, cfg: PipelineConfig) -> dict:
    start = time.perf_counter()
    ranking = prioritize(features, cfg)
    elapsed_ms = (time.perf_counter() - start) * 1000.0

    precision = recall = f1 = None
    if cfg.sc is not None:
        report = run_selection(ranking, cfg.sc, lambda h: bool(h.vulnerable),
                               total_vulnerable=total_vulnerable)
        precision, recall, f1 = report.precision, report.recall, report.f1
    elif cfg.algorithm in (Algorithm.LOF, Algorithm.IF):
        report = baseline_selection_report(ranking, total_vulnerable=total_vulnerable)
        precision, recall, f1 = report.precision, report.recall, report.f1

    dc = None
    if total_vulnerable > 0:
        dc = debugging_cost(ranking, lambda h: bool(h.vulnerable))
    return {"precision": precision, "recall": recall, "f1": f1, "dc": dc,
            "ms": elapsed_ms}


def iter_experiment(spec: ExperimentSpec, workers: int = 1
                    ) -> Iterator[tuple[dict | None, str | None]]:
    """Yield (result row, error) tuples in deterministic task order.

    Rows are independent of ``workers``: per-repetition seeds derive from the
    master seed and the task's corpus/config/repetition indices alone.
    """
    tasks = []
    for d_idx, item in enumerate(spec.corpus):
        entries = None
        error = None
        try:
            entries = read_nscr(item.path)
            if not entries:
                raise ValueError("dataset has no entries")
            if any(e.vulnerable is None for e in entries):
                raise ValueError("dataset lacks ground-truth labels")
        except (OSError, ValueError) as exc:
            error = f"{item.path}: {exc}"
        if error is not None:
            tasks.append((None, None, None, None, error))
            continue
        total_vulnerable = sum(bool(e.vulnerable) for e in entries)
        cache: dict[bool, object] = {}
        for pruning in {cfg.pruning for cfg in spec.configs}:
            rows = prune(entries).kept if pruning else entries
            cache[pruning] = one_hot(rows) if rows else None
        for c_idx, cfg in enumerate(spec.configs):
            for rep in range(spec.repetitions):
                seed = child_seed(spec.master_seed, STREAM_EXPERIMENT, d_idx, c_idx, rep)
                run_cfg = PipelineConfig(algorithm=cfg.algorithm, k=cfg.k, sc=cfg.sc,
                                         pruning=cfg.pruning, seed=seed)
                tasks.append((item, cache[cfg.pruning], total_vulnerable, (run_cfg, rep), None))

    def execute(task):
        item, features, total_vulnerable, cfg_rep, error = task
        if error is not None:
            return None, error
        run_cfg, rep = cfg_rep
        if features is None:
            return None, f"{item.path}: no rows after pruning"
        try:
            result = _run_once(features, total_vulnerable, run_cfg)
        except Exception as exc:  # record per-item errors, keep the run alive
            return None, f"{item.path}: {run_cfg.algorithm.value}: {exc}"
        row = {
            "dataset": Path(item.path).name,
            "kind": item.kind,
            "algo": run_cfg.algorithm.value,
            "k": run_cfg.k,
            "sc": run_cfg.sc,
            "prune": "true" if run_cfg.pruning else "false",
            "rep": rep,
            **result,
        }
        return row, None

    if workers <= 1:
        for task in tasks:
            yield execute(task)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(execute, tasks)


def run_experiment(spec: ExperimentSpec, out_path: str | Path,
                   workers: int = 1) -> tuple[int, list[str]]:
    """Stream all runs to ``out_path``; returns (row count, errors)."""
    errors = []
    count = 0
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for row, error in iter_experiment(spec, workers=workers):
            if error is not None:
                errors.append(error)
                logger.warning("experiment item failed: %s", error)
                continue
            writer.writerow([_fmt(row[field]) for field in RESULT_FIELDS])
            count += 1
    return count, errors


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


_CONFIG_KEYS = ("kind", "algo", "k", "sc", "prune")
_METRICS = ("precision", "recall", "f1", "dc", "ms")


def aggregate(rows: Iterable[dict]) -> list[dict]:
    """Mean/median of every metric per (kind, algo, k, sc, prune)."""
    groups: dict[tuple, dict[str, list[float]]] = {}
    for row in rows:
        key = tuple(row[k] for k in _CONFIG_KEYS)
        bucket = groups.setdefault(key, {metric: [] for metric in _METRICS})
        for metric in _METRICS:
            if row[metric] not in ("", None):
                bucket[metric].append(float(row[metric]))
    out = []
    for key in sorted(groups):
        entry = dict(zip(_CONFIG_KEYS, key))
        entry["runs"] = max(len(v) for v in groups[key].values())
        for metric in _METRICS:
            values = groups[key][metric]
            entry[f"{metric}_mean"] = f"{statistics.fmean(values):.6f}" if values else ""
            entry[f"{metric}_median"] = f"{statistics.median(values):.6f}" if values else ""
        out.append(entry)
    return out


def write_aggregate(rows: Iterable[dict], out_path: str | Path) -> list[dict]:
    aggregated = aggregate(rows)
    fields = list(aggregated[0].keys()) if aggregated else _CONFIG_KEYS
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(aggregated)
    return aggregated


def _matches(row: dict, selector: dict) -> bool:
    return all(str(row.get(key, "")) == str(value) for key, value in selector.items())


def compare_pipelines(rows: Iterable[dict], metric: str,
                      group_a: dict, group_b: dict) -> tuple[float, float, bool]:
    """Two-sided rank test of ``metric`` between two row selections."""
    rows = list(rows)
    a = [float(r[metric]) for r in rows if _matches(r, group_a) and r[metric] != ""]
    b = [float(r[metric]) for r in rows if _matches(r, group_b) and r[metric] != ""]
    if not a or not b:
        raise ValueError("both groups must select at least one result")
    u, p = mann_whitney_u(a, b)
    return u, p, p < SIGNIFICANCE_LEVEL


def pruning_table(rows: Iterable[dict], metric: str = "f1") -> list[dict]:
    """Median metric with pruning on vs off per (kind, algo, k, sc)."""
    values: dict[tuple, dict[str, list[float]]] = {}
    for row in rows:
        if row[metric] in ("", None):
            continue
        key = (row["kind"], row["algo"], row["k"], row["sc"])
        values.setdefault(key, {"true": [], "false": []})[row["prune"]].append(float(row[metric]))
    table = []
    for key in sorted(values):
        on = values[key]["true"]
        off = values[key]["false"]
        table.append({
            "kind": key[0], "algo": key[1], "k": key[2], "sc": key[3],
            f"{metric}_median_pruned": statistics.median(on) if on else None,
            f"{metric}_median_unpruned": statistics.median(off) if off else None,
        })
    return table


@dataclass(frozen=True)
class StageTiming:
    stage: str
    seconds: float


@dataclass
class TimingReport:
    stages: dict[str, list[float]]

    def to_rows(self) -> list[dict]:
        rows = []
        for stage in sorted(self.stages):
            values = self.stages[stage]
            rows.append({
                "stage": stage,
                "count": len(values),
                "median_s": f"{statistics.median(values):.6f}",
                "min_s": f"{min(values):.6f}",
                "max_s": f"{max(values):.6f}",
            })
        return rows

    def to_csv_text(self) -> str:
        rows = self.to_rows()
        fields = ["stage", "count", "median_s", "min_s", "max_s"]
        out = [",".join(fields)]
        out += [",".join(str(row[f]) for f in fields) for row in rows]
        return "\n".join(out) + "\n"

    def to_text(self) -> str:
        lines = []
        for row in self.to_rows():
            lines.append(
                f"{row['stage']}: n={row['count']} median={row['median_s']}s "
                f"min={row['min_s']}s max={row['max_s']}s"
            )
        return "\n".join(lines) + ("\n" if lines else "")


def timing_report(timings: Iterable[StageTiming]) -> TimingReport:
    stages: dict[str, list[float]] = {}
    for timing in timings:
        stages.setdefault(timing.stage, []).append(timing.seconds)
    return TimingReport(stages=stages)
