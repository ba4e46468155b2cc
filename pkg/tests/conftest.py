from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import strategies as st

from turbokv.keys import KEY_MAX
from turbokv.wire import (ETH_IPV4, ETH_TURBOKV, OP_CODES, OP_RANGE, TOS_HASH, TOS_PROCESSED,
                          TOS_RANGE, ChainHeader, EthHeader, IpHeader, Packet, TurboKvHeader,
                          mac_for)

FIXTURES = Path(__file__).parent / "fixtures"


def load_hex(name: str) -> bytes:
    return bytes.fromhex((FIXTURES / f"{name}.hex").read_text())


@pytest.fixture
def fixture_bytes():
    return load_hex


keys = st.integers(0, KEY_MAX)
ips = st.integers(1, 0xFFFFFFFF)


@st.composite
def turbokv_packets(draw):
    tos = draw(st.sampled_from([0x00, TOS_RANGE, TOS_HASH, TOS_PROCESSED]))
    op = draw(st.sampled_from(OP_CODES))
    key, end = draw(keys), draw(keys)
    if op == OP_RANGE and tos != TOS_HASH and key > end:
        key, end = end, key
    chain = None
    if tos == TOS_PROCESSED:
        chain = ChainHeader(tuple(draw(st.lists(ips, min_size=1, max_size=8))))
    src, dst = draw(ips), draw(ips)
    return Packet(EthHeader(ETH_TURBOKV, mac_for(dst), mac_for(src)),
                  IpHeader(tos, src, dst, draw(st.integers(0, 255))),
                  TurboKvHeader(op, key, end, draw(st.integers(0, 2 ** 64 - 1))),
                  chain, draw(st.binary(max_size=300)))


@st.composite
def ip_packets(draw):
    src, dst = draw(ips), draw(ips)
    return Packet(EthHeader(ETH_IPV4, mac_for(dst), mac_for(src)),
                  IpHeader(0, src, dst, draw(st.integers(0, 255))),
                  payload=draw(st.binary(max_size=300)))


any_packet = st.one_of(turbokv_packets(), ip_packets())


def scripted(sim, ops, client=0):
    """Run exactly ``ops`` (a list of workload Ops) from one client, window 1."""
    from turbokv.sim import ClientState

    sim.clients = [ClientState(client, sim.client_ips[client], iter(ops), 1)]
    return sim.run(len(ops))


def handled(sim):
    return {nid: st.handled for nid, st in sim.nodes.items()}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
