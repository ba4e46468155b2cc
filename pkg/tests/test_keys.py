import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from turbokv.keys import (KEY_MAX, KEY_SPACE, ChainSpec, Directory, DirectoryError, PartitionMode,
                          Record, SubRange, build_initial_directory, equal_ranges, key_from_bytes,
                          key_to_bytes, locate_linear, make_nodes)


def covers(directory):
    recs = directory.records
    return (recs[0].subrange.start == 0 and recs[-1].subrange.end == KEY_MAX
            and all(a.subrange.end + 1 == b.subrange.start for a, b in zip(recs, recs[1:])))


def test_key_byte_order_matches_numeric_order():
    rng = random.Random(1)
    vals = [rng.getrandbits(128) for _ in range(500)] + [0, KEY_MAX]
    assert sorted(vals) == sorted(vals, key=key_to_bytes)
    assert all(key_from_bytes(key_to_bytes(v)) == v for v in vals)


def test_balanced_layout_role_counts():
    d = build_initial_directory(make_nodes(16), 128, 3)
    counts = d.role_counts()
    assert len(counts) == 16
    assert set(counts.values()) == {(8, 8, 8)}


def test_single_node_directory():
    n = make_nodes(1)
    d = build_initial_directory(n, 1, 1)
    assert len(d) == 1
    assert d[0].subrange == SubRange(0, KEY_MAX) and d[0].chain.nodes == (n[0],)


def test_four_nodes_eight_ranges():
    nodes = make_nodes(4)
    d = build_initial_directory(nodes, 8, 3)
    appearances = Counter(n for rec in d for n in rec.chain)
    # brute-force expectation: 8 records * 3 slots spread over 4 nodes
    assert all(appearances[n] == 8 * 3 // 4 for n in nodes)
    assert all(len(set(rec.chain)) == 3 for rec in d)


def test_rejects_chain_longer_than_node_count():
    with pytest.raises(DirectoryError):
        build_initial_directory(make_nodes(2), 4, 3)


def test_last_range_absorbs_remainder():
    ranges = equal_ranges(3)
    assert ranges[-1].end == KEY_MAX
    assert ranges[0].width == KEY_SPACE // 3
    assert ranges[-1].width == KEY_SPACE // 3 + KEY_SPACE % 3


def test_locate_examples():
    d = build_initial_directory(make_nodes(16), 128, 3)
    width = KEY_SPACE // 128
    assert d.locate(0)[0] == 0
    assert d.locate(KEY_MAX)[0] == 127
    assert d.locate(5 * width)[0] == 5 == locate_linear(d, 5 * width)
    assert d.locate(5 * width - 1)[0] == 4


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, KEY_MAX), min_size=0, max_size=63, unique=True), st.randoms())
def test_locate_matches_linear_scan(bounds, rnd):
    nodes = make_nodes(3)
    starts = [0] + sorted(bounds)
    ends = [s - 1 for s in starts[1:]] + [KEY_MAX]
    recs = [Record(SubRange(a, b), ChainSpec((nodes[i % 3],))) for i, (a, b) in enumerate(zip(starts, ends))]
    d = Directory(PartitionMode.RANGE, recs, 1)
    probes = starts + ends + [rnd.getrandbits(128) for _ in range(50)]
    for mv in probes:
        assert d.locate(mv)[0] == locate_linear(d, mv)


def test_split_examples():
    assert SubRange(0, 15).halves() == (SubRange(0, 7), SubRange(8, 15))
    assert SubRange(0, KEY_MAX).halves() == (SubRange(0, 2 ** 127 - 1), SubRange(2 ** 127, KEY_MAX))
    nodes = make_nodes(3)
    chain = ChainSpec(tuple(nodes))
    d = Directory(PartitionMode.RANGE, [Record(SubRange(0, 9), chain), Record(SubRange(10, 13), chain),
                                        Record(SubRange(14, KEY_MAX), chain)], 3)
    s = d.split(1)
    assert [r.subrange for r in s.records[1:3]] == [SubRange(10, 11), SubRange(12, 13)]
    assert s[1].chain == s[2].chain == chain
    assert covers(s)


def test_width_one_range_cannot_split():
    with pytest.raises(DirectoryError):
        SubRange(4, 4).halves()


def test_coverage_survives_random_operations():
    rng = random.Random(9)
    nodes = make_nodes(6)
    d = build_initial_directory(nodes, 12, 3)
    for _ in range(200):
        i = rng.randrange(len(d))
        if rng.random() < 0.5 and d[i].subrange.width > 1:
            d = d.split(i)
        else:
            chain = d[i].chain
            spare = [n for n in nodes if n not in chain]
            d = d.with_chain(i, chain.replaced(rng.choice(chain.nodes), rng.choice(spare)))
        assert covers(d)
        assert all(len(set(r.chain)) == r.chain.length for r in d)


def test_chain_roles():
    a, b, c = make_nodes(3)
    chain = ChainSpec((a, b, c))
    assert chain.head == a and chain.tail == c
    assert chain.without(b).nodes == (a, c)
    assert chain.without(a).head == b
    assert chain.successors(a) == (b, c)
    with pytest.raises(DirectoryError):
        ChainSpec((a, a))


def test_dumps_loads_round_trip():
    nodes = make_nodes(16)
    d = build_initial_directory(nodes, 128, 3)
    text = d.dumps()
    assert text.splitlines()[0].count(",") == 4
    assert Directory.loads(text, nodes) == d


def test_directory_rejects_gaps():
    nodes = make_nodes(1)
    chain = ChainSpec((nodes[0],))
    with pytest.raises(DirectoryError):
        Directory(PartitionMode.RANGE, [Record(SubRange(0, 5), chain), Record(SubRange(7, KEY_MAX), chain)], 1)
