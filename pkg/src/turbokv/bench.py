"""Experiment matrix runner: cells, per-cell files, merged CSV tables."""

from __future__ import annotations

import csv
import json
import shutil
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .controller import Decision
from .sim import CoordinationMode, RunMetrics, SimError, Simulation, TopologySpec, mean, percentile
from .switch import StatsReport
from .workload import OP_KINDS, OpStream, WorkloadSpec

log = logging.getLogger(__name__)

CDF_POINTS = tuple(range(1, 101))


class CellFailure(RuntimeError):
    """An invariant audit failed inside one experiment cell."""


@dataclass(frozen=True)
class Cell:
    index: int
    mode: CoordinationMode
    workload: WorkloadSpec
    rep: int
    topology: TopologySpec
    ops: int

    @property
    def name(self) -> str:
        return f"cell{self.index:03d}"

    @property
    def label(self) -> str:
        return self.workload.label


def derived_seed(base: int, rep: int) -> int:
    return int(np.random.SeedSequence([base, rep]).generate_state(1)[0])


def cells_for(config: ExperimentConfig) -> list[Cell]:
    out = []
    for wl in config.workloads:
        for rep in range(config.repetitions):
            seeded = replace(wl, seed=derived_seed(wl.seed, rep))
            for mode in config.modes:
                out.append(Cell(len(out), mode, seeded, rep,
                                replace(config.topology, mode=mode), config.ops))
    return out


def run_cell(cell: Cell, out_dir: Path | None = None) -> dict:
    """Run one isolated simulation and audit it; optionally write its files."""
    sim = Simulation(cell.topology)
    stream = OpStream(cell.workload)
    sim.preload(stream.load_phase())
    sim.attach(stream)
    try:
        metrics = sim.run(cell.ops)
    except SimError as exc:
        raise CellFailure(f"{cell.name} ({cell.mode.value}, {cell.label}): {exc}") from exc
    problems = []
    if metrics.drops and cell.mode is CoordinationMode.IN_SWITCH:
        problems.append(f"{metrics.drops} drops")
    problems += sim.controller.coherence_violations()
    if metrics.retries == 0:
        problems += sim.oracle_mismatches()[:5]
    if metrics.pending:
        problems.append(f"{metrics.pending} ops still pending")
    if problems:
        raise CellFailure(f"{cell.name} ({cell.mode.value}, {cell.label}): " + "; ".join(problems))
    meta = {
        "cell": cell.name, "mode": cell.mode.value, "workload": cell.label,
        "distribution": cell.workload.distribution,
        "theta": cell.workload.theta if cell.workload.distribution == "zipf" else 0.0,
        "write_ratio": cell.workload.mix[1] + cell.workload.mix[2],
        "rep": cell.rep, "seed": cell.workload.seed, "completed": metrics.completed,
        "duration_s": metrics.duration, "throughput": metrics.throughput,
        "lookups": metrics.lookups, "drops": metrics.drops, "trace": metrics.trace_digest,
    }
    if out_dir is not None:
        write_cell(out_dir / "cells" / cell.name, metrics, meta,
                   sim.controller.decisions, sim.controller.reports)
    return meta


def write_cell(path: Path, metrics: RunMetrics, meta: dict, decisions: list[Decision],
               reports: list[StatsReport]) -> None:
    path.mkdir(parents=True, exist_ok=True)
    (path / "ops.csv").write_text(
        "\n".join([RunMetrics.OP_CSV_HEADER, *metrics.op_csv_lines()]) + "\n")
    (path / "summary.csv").write_text(RunMetrics.SUMMARY_CSV_HEADER + "\n" + metrics.summary_line() + "\n")
    (path / "decisions.csv").write_text(
        "\n".join([Decision.CSV_HEADER, *(d.csv_line() for d in decisions)]) + "\n")
    (path / "stats.csv").write_text(
        "\n".join([StatsReport.CSV_HEADER, *(line for r in reports for line in r.csv_lines())]) + "\n")
    (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_ops(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class ResultRow:
    mode: str
    workload: str
    distribution: str
    theta: float
    write_ratio: float
    rep: int
    throughput: float
    per_op: dict  # op -> (count, mean, p50, p99)
    mean_hops: float
    mean_messages: float
    summary: tuple[float, float, float]  # mean, p50, p99 over all ops


class ResultTable:
    HEADER = ("workload,distribution,theta,write_ratio,rep,mode,throughput_ops_per_s,mean,p50,p99,"
              "mean_delivery_hops,mean_messages," +
              ",".join(f"{op}_count,{op}_mean,{op}_p50,{op}_p99" for op in OP_KINDS))

    def __init__(self, rows: list[ResultRow]):
        self.rows = rows

    @classmethod
    def from_dir(cls, out: Path) -> "ResultTable":
        rows = []
        for cell_dir in sorted((out / "cells").iterdir()):
            meta = json.loads((cell_dir / "meta.json").read_text())
            ops = read_ops(cell_dir / "ops.csv")
            lat = [float(r["latency_us"]) for r in ops]
            per_op = {}
            for op in OP_KINDS:
                vals = [float(r["latency_us"]) for r in ops if r["op"] == op]
                per_op[op] = (len(vals), mean(vals), percentile(vals, 50), percentile(vals, 99))
            rows.append(ResultRow(
                meta["mode"], meta["workload"], meta["distribution"], meta["theta"],
                meta["write_ratio"], meta["rep"], meta["throughput"], per_op,
                mean(int(r["delivery_hops"]) for r in ops), mean(int(r["messages"]) for r in ops),
                (mean(lat), percentile(lat, 50), percentile(lat, 99))))
        return cls(rows)

    def csv(self) -> str:
        lines = [self.HEADER]
        for r in self.rows:
            cols = [r.workload, r.distribution, f"{r.theta:g}", f"{r.write_ratio:g}", str(r.rep),
                    r.mode, f"{r.throughput:.3f}", *(f"{x:.3f}" for x in r.summary),
                    f"{r.mean_hops:.4f}", f"{r.mean_messages:.4f}"]
            for op in OP_KINDS:
                n, m, p50, p99 = r.per_op[op]
                cols += [str(n), f"{m:.3f}", f"{p50:.3f}", f"{p99:.3f}"]
            lines.append(",".join(cols))
        return "\n".join(lines) + "\n"


def cdf_csv(out: Path) -> str:
    """Latency percentile curve per (workload, mode, op), pooled over repetitions."""
    pooled: dict[tuple[str, str, str], list[float]] = {}
    for cell_dir in sorted((out / "cells").iterdir()):
        meta = json.loads((cell_dir / "meta.json").read_text())
        for r in read_ops(cell_dir / "ops.csv"):
            pooled.setdefault((meta["workload"], meta["mode"], r["op"]), []).append(
                float(r["latency_us"]))
    lines = ["workload,mode,op,percentile,latency_us"]
    for (wl, mode, op), vals in sorted(pooled.items()):
        vals.sort()
        for p in CDF_POINTS:
            lines.append(f"{wl},{mode},{op},{p},{percentile(vals, p):.3f}")
    return "\n".join(lines) + "\n"


def _run_cell_job(args) -> dict:
    cell, out = args
    return run_cell(cell, out)


def run_experiment(config: ExperimentConfig, out: Path | None = None, parallel: int = 1) -> ResultTable:
    """Run every cell, then merge per-cell files into the top-level tables."""
    out = Path(out or config.output)
    out.mkdir(parents=True, exist_ok=True)
    shutil.rmtree(out / "cells", ignore_errors=True)  # stale cells would leak into the merge
    cells = cells_for(config)
    jobs = [(c, out) for c in cells]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            metas = list(pool.map(_run_cell_job, jobs))
    else:
        metas = [_run_cell_job(j) for j in jobs]
    for meta in metas:
        log.info("%s %s %s: %.1f ops/s", meta["cell"], meta["mode"], meta["workload"], meta["throughput"])
    table = ResultTable.from_dir(out)
    (out / "results.csv").write_text(table.csv())
    merge_files(out)
    (out / "cdf.csv").write_text(cdf_csv(out))
    return table


def merge_files(out: Path) -> None:
    """Concatenate per-cell CSVs, prefixing each row with its cell's workload and repetition."""
    cell_dirs = sorted((out / "cells").iterdir())
    for name, header in (("ops.csv", RunMetrics.OP_CSV_HEADER),
                         ("summary.csv", RunMetrics.SUMMARY_CSV_HEADER),
                         ("decisions.csv", Decision.CSV_HEADER),
                         ("stats.csv", StatsReport.CSV_HEADER)):
        extra = "cell,workload,distribution,theta,write_ratio,rep,"
        lines = [extra + header]
        for d in cell_dirs:
            meta = json.loads((d / "meta.json").read_text())
            prefix = (f"{meta['cell']},{meta['workload']},{meta['distribution']},{meta['theta']:g},"
                      f"{meta['write_ratio']:g},{meta['rep']},")
            body = (d / name).read_text().splitlines()[1:]
            lines += [prefix + line for line in body]
        (out / name).write_text("\n".join(lines) + "\n")
