"""Experiment configuration files (INI, via :mod:`configparser`).

Every latency constant, the controller knobs, the client window and the seed
are plain keys, so a run is fully described by one small text file::

    [topology]
    nodes_per_rack = 16
    link_latency_us = 100

    [workload]
    distributions = uniform, zipf-0.99
    mixes = 1/0/0/0, 0.5/0.5/0/0

    [experiment]
    modes = InSwitch, ServerDriven
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .keys import PartitionMode
from .sim import CoordinationMode, TopologySpec
from .workload import WorkloadError, WorkloadSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    topology: TopologySpec
    workloads: tuple[WorkloadSpec, ...]
    modes: tuple[CoordinationMode, ...]
    repetitions: int = 1
    ops: int = 100_000
    output: Path = Path("results")

    def __post_init__(self):
        if not self.modes:
            raise ConfigError("at least one coordination mode is required")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.ops < 1:
            raise ConfigError("ops must be >= 1")
        if not self.workloads:
            raise ConfigError("no workload cells")


DEFAULT_TEXT = """\
[topology]
racks = 1
nodes_per_rack = 16
clients = 4
agg_switches = 0
core_switches = 0
num_records = 128
replication = 3
partition = range
link_latency_us = 100
switch_proc_us = 5
node_proc_us = 50
lookup_cost_us = 20
window = 1
timeout_us = 0
capacity =
alpha = 1.5
epoch_ops = 10000
rebalance = true
wire_check = true

[workload]
record_count = 10000
value_bytes = 128
range_span = 64
seed = 1
distributions = uniform, zipf-0.9, zipf-0.95, zipf-0.99, zipf-1.2
mixes = 1/0/0/0

[experiment]
modes = InSwitch, ServerDriven, ClientDrivenIdeal
repetitions = 1
ops = 100000
output = results
"""

_US = {"link_latency_us": "link_latency", "switch_proc_us": "switch_proc",
       "node_proc_us": "node_proc", "lookup_cost_us": "lookup_cost", "timeout_us": "timeout"}
_INTS = ("racks", "nodes_per_rack", "clients", "agg_switches", "core_switches", "num_records",
         "replication", "window", "epoch_ops")


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def parse_distribution(text: str) -> tuple[str, float]:
    text = text.strip().lower()
    if text == "uniform":
        return "uniform", 0.99
    if text.startswith("zipf-"):
        try:
            return "zipf", float(text[5:])
        except ValueError:
            pass
    raise ConfigError(f"bad distribution {text!r}; use uniform or zipf-<theta>")


def parse_mix(text: str) -> tuple[float, float, float, float]:
    parts = text.strip().split("/")
    if len(parts) != 4:
        raise ConfigError(f"mix {text!r} must be get/put/del/range")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"mix {text!r} has a non-numeric fraction") from None


def _topology(sec: configparser.SectionProxy) -> TopologySpec:
    kw = {}
    try:
        for key in _INTS:
            if key in sec:
                kw[key] = sec.getint(key)
        for key, name in _US.items():
            if key in sec:
                kw[name] = sec.getfloat(key) * 1e-6
        if "alpha" in sec:
            kw["alpha"] = sec.getfloat("alpha")
        for key in ("rebalance", "wire_check"):
            if key in sec:
                kw[key] = sec.getboolean(key)
        cap = sec.get("capacity", "").strip()
        kw["capacity"] = int(cap) if cap else None
        kw["partition"] = PartitionMode(sec.get("partition", "range").strip().lower())
    except ValueError as exc:
        raise ConfigError(f"[topology]: {exc}") from None
    unknown = set(sec) - set(_INTS) - set(_US) - {"alpha", "rebalance", "wire_check", "capacity",
                                                   "partition"}
    if unknown:
        raise ConfigError(f"[topology]: unknown keys {sorted(unknown)}")
    try:
        return TopologySpec(**kw)
    except ValueError as exc:
        raise ConfigError(f"[topology]: {exc}") from None


def _workloads(sec: configparser.SectionProxy, partition: PartitionMode) -> tuple[WorkloadSpec, ...]:
    try:
        base = dict(record_count=sec.getint("record_count", 10_000),
                    value_bytes=sec.getint("value_bytes", 128),
                    range_span=sec.getint("range_span", 64),
                    seed=sec.getint("seed", 1))
    except ValueError as exc:
        raise ConfigError(f"[workload]: {exc}") from None
    out = []
    for dist_text in _split(sec.get("distributions", "uniform")):
        dist, theta = parse_distribution(dist_text)
        for mix_text in _split(sec.get("mixes", "1/0/0/0")):
            try:
                out.append(WorkloadSpec(distribution=dist, theta=theta, mix=parse_mix(mix_text),
                                        mode=partition, **base))
            except WorkloadError as exc:
                raise ConfigError(f"[workload]: {exc}") from None
    return tuple(out)


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(DEFAULT_TEXT)
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    topo = _topology(cp["topology"])
    workloads = _workloads(cp["workload"], topo.partition)
    exp = cp["experiment"]
    try:
        modes = tuple(CoordinationMode.parse(m) for m in _split(exp.get("modes", "")))
        reps = exp.getint("repetitions", 1)
        ops = exp.getint("ops", 100_000)
    except ValueError as exc:
        raise ConfigError(f"[experiment]: {exc}") from None
    output = Path(exp.get("output", "results"))
    if base_dir is not None and not output.is_absolute():
        output = base_dir / output
    return ExperimentConfig(topo, workloads, modes, reps, ops, output)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)


def with_output(config: ExperimentConfig, output: str | Path) -> ExperimentConfig:
    return replace(config, output=Path(output))
