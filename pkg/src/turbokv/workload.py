"""YCSB-style workloads: key population, Zipf/uniform sampling and op mixes."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .keys import KEY_BYTES, PartitionMode, key_hex
from .switch import hash_key

OP_KINDS = ("get", "put", "del", "range")


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class Op:
    kind: str
    key: int
    value: bytes = b""
    span: int = 0
    end: int = 0  # last key of a range op

    def line(self) -> str:
        if self.kind == "range":
            return f"range,{key_hex(self.key)},{self.span}"
        return f"{self.kind},{key_hex(self.key)},{self.value.hex()}"


@dataclass(frozen=True)
class WorkloadSpec:
    record_count: int = 10_000
    value_bytes: int = 128
    distribution: str = "uniform"
    theta: float = 0.99
    mix: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    range_span: int = 64
    seed: int = 1
    mode: PartitionMode = PartitionMode.RANGE
    key_bytes: int = field(default=KEY_BYTES, init=False)

    def __post_init__(self):
        object.__setattr__(self, "mix", tuple(float(x) for x in self.mix))
        if self.record_count < 1:
            raise WorkloadError("record_count must be positive")
        if len(self.mix) != 4 or any(x < 0 for x in self.mix) or not math.isclose(sum(self.mix), 1.0,
                                                                                 abs_tol=1e-9):
            raise WorkloadError(f"mix must be four non-negative fractions summing to 1, got {self.mix}")
        if self.distribution not in ("uniform", "zipf"):
            raise WorkloadError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "zipf" and self.theta <= 0:
            raise WorkloadError("zipf theta must be > 0")
        if self.mix[3] > 0 and self.mode is PartitionMode.HASH:
            raise WorkloadError("range queries are not supported under hash partitioning")
        if self.range_span < 1:
            raise WorkloadError("range_span must be >= 1")

    @property
    def label(self) -> str:
        dist = "uniform" if self.distribution == "uniform" else f"zipf-{self.theta:g}"
        g, p, d, r = self.mix
        return f"{dist}/g{g:g}-p{p:g}-d{d:g}-r{r:g}"


def _zipf_tables(n: int, theta: float):
    def h_integral(x):
        lx = np.log(x)
        t = (1.0 - theta) * lx
        return np.where(np.abs(t) > 1e-8, np.expm1(t) / np.where(t == 0, 1, t), 1.0 + t / 2) * lx

    def h(x):
        return np.exp(-theta * np.log(x))

    def h_integral_inverse(x):
        t = np.maximum(x * (1.0 - theta), -1.0)
        f = np.where(np.abs(t) > 1e-8, np.log1p(t) / np.where(t == 0, 1, t), 1.0 - t / 2)
        return np.exp(f * x)

    x1 = float(h_integral(1.5)) - 1.0
    xn = float(h_integral(n + 0.5))
    s = 2.0 - float(h_integral_inverse(h_integral(2.5) - h(2.0)))
    return h, h_integral, h_integral_inverse, x1, xn, s


def zipf_sample(n: int, theta: float, rng: np.random.Generator, size: int | None = None):
    """Rank in ``[0, n)`` with P(k) proportional to 1/(k+1)^theta, by rejection-inversion.

    Returns an int when ``size`` is None, otherwise an int64 array.
    """
    if n < 1:
        raise WorkloadError("n must be >= 1")
    if theta < 0:
        raise WorkloadError("theta must be >= 0")
    count = 1 if size is None else size
    if theta == 0 or n == 1:
        out = rng.integers(0, n, size=count)
        return int(out[0]) if size is None else out
    h, h_int, h_inv, x1, xn, s = _zipf_tables(n, theta)
    out = np.empty(count, dtype=np.int64)
    todo = np.arange(count)
    while todo.size:
        u = xn + rng.random(todo.size) * (x1 - xn)
        x = h_inv(u)
        k = np.clip(np.floor(x + 0.5), 1, n)
        ok = (k - x <= s) | (u >= h_int(k + 0.5) - h(k))
        out[todo[ok]] = k[ok].astype(np.int64) - 1
        todo = todo[~ok]
    return int(out[0]) if size is None else out


def record_key(index: int) -> int:
    return hash_key(index)


class OpStream:
    """Load phase plus per-client run-phase generators, reproducible from its WorkloadSpec."""

    def __init__(self, spec: WorkloadSpec):
        self.spec = spec
        self.keys = [record_key(i) for i in range(spec.record_count)]
        if len(set(self.keys)) != len(self.keys):
            raise WorkloadError("key spreading collided")
        self.sorted_keys = sorted(self.keys)

    def load_phase(self) -> list[tuple[int, bytes]]:
        rng = np.random.default_rng([self.spec.seed, 0xC0FFEE])
        blob = rng.bytes(self.spec.value_bytes * self.spec.record_count)
        vb = self.spec.value_bytes
        return [(k, blob[i * vb:(i + 1) * vb]) for i, k in enumerate(self.keys)]

    def range_end(self, start: int, span: int) -> int:
        i = bisect.bisect_left(self.sorted_keys, start)
        return self.sorted_keys[min(i + span - 1, len(self.sorted_keys) - 1)]

    def client_ops(self, client_id: int, batch: int = 4096) -> Iterator[Op]:
        spec = self.spec
        rng = np.random.default_rng([spec.seed, client_id])
        cum = np.cumsum(spec.mix)
        n = spec.record_count
        while True:
            if spec.distribution == "zipf":
                ranks = zipf_sample(n, spec.theta, rng, batch)
            else:
                ranks = rng.integers(0, n, size=batch)
            kinds = np.minimum(np.searchsorted(cum, rng.random(batch), side="right"), 3)
            for rank, kind in zip(ranks.tolist(), kinds.tolist()):
                key = self.keys[rank]
                name = OP_KINDS[kind]
                if name == "put":
                    yield Op("put", key, rng.bytes(spec.value_bytes))
                elif name == "range":
                    yield Op("range", key, span=spec.range_span,
                             end=self.range_end(key, spec.range_span))
                else:
                    yield Op(name, key)

    def take(self, client_id: int, count: int) -> list[Op]:
        it = self.client_ops(client_id)
        return [next(it) for _ in range(count)]


def dump_ops(ops: Sequence[Op]) -> str:
    return "".join(op.line() + "\n" for op in ops)


def load_ops(text: str, stream: OpStream | None = None) -> list[Op]:
    """Parse ``op,key_hex,value_hex|span`` lines; range ends need the key population."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3 or parts[0] not in OP_KINDS:
            raise WorkloadError(f"line {lineno}: bad op line {line!r}")
        kind, key = parts[0], int(parts[1], 16)
        if kind == "range":
            span = int(parts[2])
            if stream is None:
                raise WorkloadError("range ops need the key population to resolve their end")
            out.append(Op(kind, key, span=span, end=stream.range_end(key, span)))
        else:
            out.append(Op(kind, key, bytes.fromhex(parts[2])))
    return out
