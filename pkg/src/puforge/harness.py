"""Seeded multi-run experiments, parameter sweeps, component ablations and report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import SplitSpec, gen_two_gaussians, gen_two_moons, load_dataset, make_pu, split
from .errors import ConfigError, PUForgeError, RunFailure
from .trainers import METHOD_LABELS, METHODS, TrainerConfig, train

log = logging.getLogger(__name__)

TABLE1_METHODS = ["full_pn", "standard_pn", "small_pn", "naive_pu", "nnpu", "self_pu"]
PAPER_ALPHA_GRID = [10.0, 20.0, 30.0, 40.0]
PAPER_BETA_GRID = [0.3, 0.4, 0.5]

# Table 2 rows: (label, method, trainer overrides)
COMPONENT_ROWS = [
    ("nnPU", "self_pu", {"use_selection": False, "use_student": False, "use_teacher": False}),
    ("L_hybrid (fixed size)", "self_pu", {"strategy": "fixed_size", "use_student": False, "use_teacher": False}),
    ("L_hybrid (w.o. replacement)", "self_pu",
     {"strategy": "without_replacement", "use_student": False, "use_teacher": False}),
    ("L_hybrid", "self_pu", {"strategy": "dynamic_linear", "use_student": False, "use_teacher": False}),
    ("L_hybrid+L_student", "self_pu", {"strategy": "dynamic_linear", "use_teacher": False}),
    ("Self-PU", "self_pu", {"strategy": "dynamic_linear"}),
]


@dataclass(frozen=True)
class DatasetSpec:
    generator: str = "two_gaussians"
    n: int = 4000
    d: int = 10
    mu_sep: float = 2.8
    prior: float = 0.3
    noise_sd: float = 0.2
    data_file: str | None = None

    def __post_init__(self):
        if self.data_file is None and self.generator not in ("two_gaussians", "two_moons"):
            raise ConfigError(f"unknown generator {self.generator!r}")

    @property
    def name(self):
        return Path(self.data_file).stem if self.data_file else self.generator

    def build(self, seed):
        if self.data_file:
            return load_dataset(self.data_file)
        if self.generator == "two_gaussians":
            return gen_two_gaussians(self.n, self.prior, self.mu_sep, self.d, seed)
        return gen_two_moons(self.n, self.prior, self.noise_sd, seed)


@dataclass
class ExperimentSpec:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    methods: list = field(default_factory=lambda: list(TABLE1_METHODS))
    r_values: list = field(default_factory=lambda: [0.1, 0.2, 0.3])
    alpha_grid: list | None = None
    beta_grid: list | None = None
    n_runs: int = 5
    out: str | None = None
    base_seed: int = 0
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    workers: int = 1

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if not self.methods:
            raise ConfigError("methods list is empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if not self.r_values:
            raise ConfigError("r_values list is empty")
        for grid in (self.alpha_grid, self.beta_grid):
            if grid is not None and len(grid) == 0:
                raise ConfigError("sweep grids must be nonempty")


def run_seed(base_seed, method, r, run_index):
    """Seed for one cell run; identical across methods and ratios so runs are paired on the same data."""
    return int(base_seed) + int(run_index)


def _pct(r):
    p = r * 100
    return str(int(round(p))) if abs(p - round(p)) < 1e-9 else format(p, "g")


@dataclass
class ReportTable:
    """Mean accuracy +- sample std per (row, column), backed by per-run records."""

    title: str
    row_header: list
    rows: list
    columns: list
    cells: dict = field(default_factory=dict)
    kind: str = "table1"

    def add(self, row, col, record):
        self.cells.setdefault((tuple(row), col), []).append(record)

    def values(self, row, col, metric="accuracy"):
        return [rec["metrics"][metric] for rec in self.cells.get((tuple(row), col), [])]

    def mean(self, row, col):
        vals = self.values(row, col)
        return float(np.mean(vals)) if vals else float("nan")

    def std(self, row, col):
        vals = self.values(row, col)
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    def is_empty(self):
        return not any(self.cells.values())

    def to_dict(self):
        return {"title": self.title, "kind": self.kind, "row_header": list(self.row_header),
                "rows": [list(r) for r in self.rows], "columns": list(self.columns),
                "cells": [{"row": list(r), "column": c, "mean": self.mean(r, c), "std": self.std(r, c),
                           "runs": recs} for (r, c), recs in self.cells.items()]}

    @classmethod
    def from_dict(cls, data):
        table = cls(data["title"], data["row_header"], [tuple(r) for r in data["rows"]], data["columns"],
                    kind=data.get("kind", "table1"))
        for cell in data["cells"]:
            for rec in cell["runs"]:
                table.add(cell["row"], cell["column"], rec)
        return table


def _run_record(result, run_file, dataset_spec):
    return {"seed": result.seed, "method": result.method, "metrics": result.metrics,
            "best_epoch": result.best_epoch, "run_file": run_file, "config": result.config,
            "dataset": asdict(dataset_spec)}


def _execute(job):
    """Train and evaluate one (config, r, seed) cell; top level so process pools can pickle it."""
    dataset_spec, cfg, r, seed = job
    ds = dataset_spec.build(seed)
    train_set, val, test = split(ds, SplitSpec(), seed)
    pu = make_pu(train_set, r, seed)
    _, result = train(replace(cfg, r=r, seed=seed), pu, val, test)
    return result


def _run_jobs(spec, jobs, out_dir):
    """Run jobs (tag, cfg, r, seed); persist each result as it completes, return them in job order."""
    runs_dir = out_dir / "runs" if out_dir else None
    if runs_dir:
        runs_dir.mkdir(parents=True, exist_ok=True)
    payload = [(spec.dataset, cfg, r, seed) for _, cfg, r, seed in jobs]
    results = []

    def persist(job, result):
        tag, _, r, seed = job
        name = f"{tag}_{_pct(r)}_{seed}.json"
        if runs_dir:
            data = result.to_dict()
            data["dataset"] = asdict(spec.dataset)
            (runs_dir / name).write_text(json.dumps(data, indent=1))
        return name

    def fail(job, exc):
        tag, _, r, seed = job
        raise RunFailure(f"run failed for method={tag} r={r} seed={seed}: {exc}") from exc

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = [pool.submit(_execute, p) for p in payload]
            for job, fut in zip(jobs, futures):
                try:
                    result = fut.result()
                except PUForgeError as exc:
                    fail(job, exc)
                results.append((result, persist(job, result)))
    else:
        for job, p in zip(jobs, payload):
            log.info("run %s r=%s seed=%s", job[0], job[2], job[3])
            try:
                result = _execute(p)
            except PUForgeError as exc:
                fail(job, exc)
            results.append((result, persist(job, result)))
    return results


def _finish_table(spec, table):
    if spec.out:
        out = Path(spec.out)
        for fmt in ("csv", "json", "md"):
            emit_report(table, fmt, out / f"report.{fmt}")
    return table


def run_experiment(spec):
    """Table-1 style sweep over methods x r values x runs. Returns (results, table)."""
    out_dir = Path(spec.out) if spec.out else None
    jobs = []
    for r in spec.r_values:
        for m in spec.methods:
            for i in range(spec.n_runs):
                seed = run_seed(spec.base_seed, m, r, i)
                jobs.append((m, replace(spec.trainer, method=m), r, seed))
    done = _run_jobs(spec, jobs, out_dir)
    table = ReportTable("Classification accuracy averaged over runs", ["Dataset", "Ratio (%)"],
                        [(spec.dataset.name, _pct(r)) for r in spec.r_values],
                        [METHOD_LABELS[m] for m in spec.methods], kind="table1")
    for (tag, _, r, _), (result, name) in zip(jobs, done):
        table.add((spec.dataset.name, _pct(r)), METHOD_LABELS[tag], _run_record(result, name, spec.dataset))
    return [res for res, _ in done], _finish_table(spec, table)


def _single_r(spec):
    if len(spec.r_values) != 1:
        raise ConfigError("sweeps and ablations run at a single labeling ratio")
    return spec.r_values[0]


def ablation_sweep(spec, param=None):
    """Self-PU accuracy per value of alpha or beta; the other parameter stays fixed."""
    alpha, beta = spec.alpha_grid, spec.beta_grid
    if param is None:
        varying = [p for p, g in (("alpha", alpha), ("beta", beta)) if g is not None and len(g) > 1]
        if len(varying) > 1:
            raise ConfigError("alpha and beta grids cannot vary in the same sweep")
        param = varying[0] if varying else ("alpha" if alpha else "beta")
    other = beta if param == "alpha" else alpha
    if other is not None and len(other) > 1:
        raise ConfigError("alpha and beta grids cannot vary in the same sweep")
    grid = alpha if param == "alpha" else beta
    if not grid:
        grid = PAPER_ALPHA_GRID if param == "alpha" else PAPER_BETA_GRID
    base = spec.trainer
    if other:
        base = replace(base, **{("beta" if param == "alpha" else "alpha"): other[0]})
    r = _single_r(spec)
    jobs = []
    for v in grid:
        cfg = replace(base, method="self_pu", **{param: float(v)})
        for i in range(spec.n_runs):
            jobs.append((f"self_pu-{param}{format(v, 'g')}", cfg, r, run_seed(spec.base_seed, "self_pu", r, i)))
    done = _run_jobs(spec, jobs, Path(spec.out) if spec.out else None)
    symbol = "α" if param == "alpha" else "β"
    table = ReportTable(f"Sensitivity of Self-PU to {param}", [symbol], [(format(v, "g"),) for v in grid],
                        ["Accuracy"], kind=f"sweep-{param}")
    for (tag, cfg, _, _), (result, name) in zip(jobs, done):
        table.add((format(getattr(cfg, param), "g"),), "Accuracy", _run_record(result, name, spec.dataset))
    return _finish_table(spec, table)


def component_ablation(spec):
    """Rows from plain nnPU up to the full pipeline, obtained by switching components off."""
    r = _single_r(spec)
    jobs = []
    labels = []
    for k, (label, method, overrides) in enumerate(COMPONENT_ROWS):
        sel_over = {key: v for key, v in overrides.items() if key == "strategy"}
        flags = {key: v for key, v in overrides.items() if key != "strategy"}
        sel = replace(spec.trainer.selection, **sel_over)
        cfg = replace(spec.trainer, method=method, selection=sel, use_selection=True, use_student=True,
                      use_teacher=True)
        cfg = replace(cfg, **flags)
        labels.append(label)
        for i in range(spec.n_runs):
            jobs.append((f"component{k}", cfg, r, run_seed(spec.base_seed, method, r, i)))
    done = _run_jobs(spec, jobs, Path(spec.out) if spec.out else None)
    table = ReportTable("Accuracy with different components", ["Methods"], [(lab,) for lab in labels],
                        ["Accuracy"], kind="components")
    for (tag, _, _, _), (result, name) in zip(jobs, done):
        table.add((labels[int(tag[len("component"):])],), "Accuracy", _run_record(result, name, spec.dataset))
    return _finish_table(spec, table)


# --- report emission ----------------------------------------------------------------

def _md(table):
    header = list(table.row_header) + list(table.columns)
    lines = [f"**{table.title}**", "", "| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    for row in table.rows:
        cells = []
        for col in table.columns:
            if table.values(row, col):
                cells.append(f"{table.mean(row, col):.2f} ± {table.std(row, col):.2f}")
            else:
                cells.append("")
        lines.append("| " + " | ".join(list(row) + cells) + " |")
    return "\n".join(lines) + "\n"


def _csv(table):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(table.row_header) + ["column", "mean", "std", "n_runs"])
    for row in table.rows:
        for col in table.columns:
            vals = table.values(row, col)
            if vals:
                w.writerow(list(row) + [col, repr(table.mean(row, col)), repr(table.std(row, col)), len(vals)])
    return buf.getvalue()


def render_report(table, fmt):
    if table.is_empty():
        raise ConfigError("refusing to emit an empty report")
    if fmt == "md":
        return _md(table)
    if fmt == "csv":
        return _csv(table)
    if fmt == "json":
        return json.dumps(table.to_dict(), indent=1)
    raise ConfigError(f"unknown report format {fmt!r}")


def emit_report(table, fmt, path):
    text = render_report(table, fmt)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path):
    return ReportTable.from_dict(json.loads(Path(path).read_text()))


def read_csv_means(path):
    """{(row..., column): mean} parsed back from a csv report."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_keys = len(header) - 4
        return {(*rec[:n_keys], rec[n_keys]): float(rec[n_keys + 1]) for rec in reader}
