from collections import Counter

import numpy as np
import pytest

from turbokv.keys import PartitionMode
from turbokv.sim import Simulation, TopologySpec
from turbokv.wire import OP_GET, TOS_RANGE, request_packet
from turbokv.workload import (Op, OpStream, WorkloadError, WorkloadSpec, dump_ops, load_ops,
                              record_key, zipf_sample)


def test_zipf_theta_zero_is_uniform():
    draws = zipf_sample(10, 0.0, np.random.default_rng(1), 1_000_000)
    freq = np.bincount(draws, minlength=10) / draws.size
    assert np.all(np.abs(freq - 0.1) <= 0.01)


def test_zipf_rank_zero_frequency():
    n, theta = 1000, 0.99
    harmonic = sum(k ** -theta for k in range(1, n + 1))
    draws = zipf_sample(n, theta, np.random.default_rng(2), 1_000_000)
    assert draws.min() >= 0 and draws.max() < n
    assert abs(np.mean(draws == 0) - 1 / harmonic) <= 0.02 / harmonic


@pytest.mark.parametrize("theta", [0.5, 0.9, 1.2, 2.0])
def test_zipf_matches_pmf(theta):
    n = 50
    pmf = np.arange(1, n + 1, dtype=float) ** -theta
    pmf /= pmf.sum()
    draws = zipf_sample(n, theta, np.random.default_rng(5), 400_000)
    freq = np.bincount(draws, minlength=n) / draws.size
    assert np.max(np.abs(freq - pmf)) < 0.005


def test_zipf_determinism_and_scalar():
    a = zipf_sample(10_000, 0.99, np.random.default_rng(7), 100)
    b = zipf_sample(10_000, 0.99, np.random.default_rng(7), 100)
    assert np.array_equal(a, b)
    assert isinstance(zipf_sample(10, 1.1, np.random.default_rng(0)), int)
    with pytest.raises(WorkloadError):
        zipf_sample(0, 1.0, np.random.default_rng(0))


def test_get_only_mix():
    ops = OpStream(WorkloadSpec(record_count=100)).take(0, 2000)
    assert {op.kind for op in ops} == {"get"}


def test_write_ratio():
    ops = OpStream(WorkloadSpec(record_count=1000, mix=(0.7, 0.3, 0, 0), seed=3)).take(0, 100_000)
    assert abs(sum(op.kind == "put" for op in ops) / len(ops) - 0.30) <= 0.01
    assert all(len(op.value) == 128 for op in ops if op.kind == "put")


def test_hot_record_counter_dominates_median():
    spec = WorkloadSpec(record_count=10_000, distribution="zipf", theta=1.2, seed=4)
    stream = OpStream(spec)
    sim = Simulation(TopologySpec(wire_check=False))
    tor = sim.tors[0]
    ops = stream.take(0, 100_000)
    for i, op in enumerate(ops):
        tor.route(request_packet(OP_GET, op.key, sim.client_ips[0], 0, request_id=i, tos=TOS_RANGE))
    reads = [r.reads for r in tor.read_and_reset_counters().rows]
    # independent histogram of the sampler's own keys, bucketed by record
    hist = Counter(sim.directory.locate(op.key)[0] for op in ops)
    assert reads == [hist.get(i, 0) for i in range(len(sim.directory))]
    assert max(reads) >= 10 * float(np.median(reads))


def test_load_phase_distinct_and_reproducible():
    spec = WorkloadSpec(record_count=3000, seed=9)
    a, b = OpStream(spec).load_phase(), OpStream(spec).load_phase()
    assert a == b
    assert len({k for k, _ in a}) == 3000
    assert len({record_key(i) for i in range(3000)}) == 3000


def test_streams_reproducible_per_client():
    spec = WorkloadSpec(record_count=500, mix=(0.4, 0.3, 0.1, 0.2), seed=5)
    one, two = OpStream(spec), OpStream(spec)
    assert dump_ops(one.take(1, 500)) == dump_ops(two.take(1, 500))
    assert one.take(0, 50) != one.take(1, 50)


def test_range_ops_span_consecutive_keys():
    stream = OpStream(WorkloadSpec(record_count=1000, mix=(0, 0, 0, 1), range_span=8))
    for op in stream.take(0, 200):
        covered = [k for k in stream.sorted_keys if op.key <= k <= op.end]
        assert covered[0] == op.key and len(covered) == min(8, len(covered))
        assert len(covered) == 8 or covered[-1] == stream.sorted_keys[-1]


def test_dump_load_round_trip():
    stream = OpStream(WorkloadSpec(record_count=200, mix=(0.25, 0.25, 0.25, 0.25)))
    ops = stream.take(0, 300)
    assert load_ops(dump_ops(ops), stream) == ops
    with pytest.raises(WorkloadError):
        load_ops("get,zz\n")
    with pytest.raises(WorkloadError):
        load_ops(Op("range", 1, span=3, end=5).line())


@pytest.mark.parametrize("kwargs", [
    dict(mix=(0.5, 0.2, 0, 0)),
    dict(distribution="zipf", theta=0),
    dict(distribution="pareto"),
    dict(mix=(0.5, 0, 0, 0.5), mode=PartitionMode.HASH),
    dict(record_count=0),
])
def test_spec_validation(kwargs):
    with pytest.raises(WorkloadError):
        WorkloadSpec(**kwargs)


def test_label():
    spec = WorkloadSpec(distribution="zipf", theta=0.9, mix=(0.5, 0.5, 0, 0))
    assert spec.label.startswith("zipf-0.9")
