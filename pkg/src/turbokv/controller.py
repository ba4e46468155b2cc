"""Application controller: statistics, load balancing, failures, table sync.

Every change to the directory goes through :meth:`Controller.publish`, which
re-projects the directory onto each switch: a ToR holds full chain entries
for the records whose chains touch its racks, and AGG/Core switches hold
uplink entries with the ports toward each record's head and tail.

Migrations run in three phases (copy, publish, cleanup). When a scheduler
is attached the phases are separated by simulated delays, otherwise they run
back to back.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .keys import ChainSpec, Directory, DirectoryError, NodeId, SubRange, key_hex
from .storage import MigrationJob, NodeState, Phase, Redirect, chunked_messages
from .switch import TOR, StatsReport, Switch, TableEntry, UplinkEntry

log = logging.getLogger(__name__)


@dataclass
class SwitchView:
    """How the controller sees one switch: which racks it indexes and its ports."""

    switch: Switch
    racks: frozenset[int]
    port_toward: Callable[[NodeId], int]


@dataclass(frozen=True)
class Decision:
    epoch: int
    action: str
    record_start: int
    src_node: str
    dst_node: str
    reason: str

    CSV_HEADER = "epoch,action,record_start_hex,src_node,dst_node,reason"

    def csv_line(self) -> str:
        reason = self.reason.replace(",", ";")
        return f"{self.epoch},{self.action},{key_hex(self.record_start)},{self.src_node},{self.dst_node},{reason}"


@dataclass
class StatsEpoch:
    epoch_id: int
    reports: list[StatsReport]
    duration: float = 0.0

    def record_counts(self, directory: Directory) -> dict[int, tuple[int, int]]:
        """Per directory record index: summed (reads, writes) over all reports."""
        out: dict[int, list[int]] = {}
        for report in self.reports:
            for row in report.rows:
                if row.reads == 0 and row.writes == 0:
                    continue
                try:
                    idx = directory.index_of(row.match)
                except DirectoryError:
                    idx = directory.locate(row.match.start)[0]
                c = out.setdefault(idx, [0, 0])
                c[0] += row.reads
                c[1] += row.writes
        return {i: (c[0], c[1]) for i, c in out.items()}


def node_loads(counts: dict[int, tuple[int, int]], directory: Directory,
               nodes: Iterable[NodeId]) -> dict[NodeId, int]:
    """Reads are charged to a record's tail, writes to every chain member."""
    loads = {n: 0 for n in nodes}
    for idx, (reads, writes) in counts.items():
        chain = directory[idx].chain
        loads[chain.tail] = loads.get(chain.tail, 0) + reads
        for n in chain:
            loads[n] = loads.get(n, 0) + writes
    return loads


@dataclass
class RebalancePlan:
    jobs: list[MigrationJob]
    directory: Directory
    diagnostics: list[str] = field(default_factory=list)
    loads_before: dict = field(default_factory=dict)
    loads_after: dict = field(default_factory=dict)

    def __bool__(self):
        return bool(self.jobs)


def plan_rebalance(epoch: StatsEpoch, directory: Directory, alpha: float = 1.5,
                   nodes: Iterable[NodeId] | None = None) -> RebalancePlan:
    """Greedy plan: move one hot replica off each node above ``alpha`` x mean load.

    For every overloaded node (heaviest first) the hottest record it serves
    whose replica can move is re-homed onto the least-loaded node outside that
    chain. A move is only taken when it leaves the destination strictly below
    the source's current load, and the whole plan is dropped unless it lowers
    the maximum node load.
    """
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    candidates = sorted(set(nodes) if nodes is not None else directory.nodes())
    counts = epoch.record_counts(directory)
    loads = node_loads(counts, directory, candidates)
    before = dict(loads)
    plan = RebalancePlan([], directory, loads_before=before, loads_after=dict(loads))
    if not candidates or sum(loads.values()) == 0:
        return plan
    mean = sum(loads[n] for n in candidates) / len(candidates)
    work = directory
    touched: set[SubRange] = set()
    for node in sorted(candidates, key=lambda n: (-loads[n], n.id)):
        if loads[node] <= alpha * mean:
            break
        hot = sorted((i for i, rec in enumerate(work) if node in rec.chain),
                     key=lambda i: (-sum(counts.get(i, (0, 0))), i))
        moved = False
        for i in hot:
            rec = work[i]
            if rec.subrange in touched:
                continue
            reads, writes = counts.get(i, (0, 0))
            share = writes + (reads if rec.chain.tail == node else 0)
            if share == 0:
                break
            free = [n for n in candidates if n not in rec.chain]
            if not free:
                plan.diagnostics.append(f"no destination outside chain {rec.chain} for {node}")
                continue
            dest = min(free, key=lambda n: (loads[n], n.id))
            if loads[dest] + share >= loads[node]:
                continue
            work = work.with_chain(i, rec.chain.replaced(node, dest))
            touched.add(rec.subrange)
            loads[node] -= share
            loads[dest] += share
            plan.jobs.append(MigrationJob(rec.subrange, node, dest, "replace",
                                          reason=f"load {before[node]} > {alpha}*mean {mean:.1f}"))
            moved = True
            break
        if not moved:
            plan.diagnostics.append(f"{node} overloaded but no beneficial move")
    if plan.jobs and max(loads.values()) >= max(before.values()):
        plan.diagnostics.append("plan does not lower the maximum load; dropped")
        return RebalancePlan([], directory, plan.diagnostics, before, dict(before))
    plan.directory = work
    plan.loads_after = loads
    return plan


class Controller:
    def __init__(self, directory: Directory, nodes: dict[int, NodeState],
                 views: Iterable[SwitchView] = (), *, alpha: float = 1.5,
                 scheduler: Callable[[float, Callable[[], None]], None] | None = None,
                 copy_delay: float = 0.0, drain_delay: float = 0.0):
        self.directory = directory
        self.nodes = nodes
        self.views = list(views)
        self.alpha = alpha
        self.scheduler = scheduler
        self.copy_delay = copy_delay
        self.drain_delay = drain_delay
        self.epoch = 0
        self.decisions: list[Decision] = []
        self.reports: list[StatsReport] = []
        self.jobs_done: list[MigrationJob] = []
        self.jobs_aborted: list[MigrationJob] = []
        self.active_jobs = 0
        # (job, global pair multiset for its range unchanged by the move)
        self.migration_checks: list[tuple[MigrationJob, bool]] = []
        self._multisets: dict[int, Counter] = {}
        self._restoring: dict[SubRange, set[NodeId]] = {}  # in-flight restore destinations
        self._restore_retries: Counter = Counter()
        self.last_loads: dict[NodeId, int] = {}

    # -- plumbing --------------------------------------------------------------
    def _later(self, delay: float, fn: Callable[[], None]) -> None:
        if self.scheduler is None:
            fn()
        else:
            self.scheduler(delay, fn)

    def _log(self, action: str, rng: SubRange | None, src="-", dst="-", reason="") -> None:
        d = Decision(self.epoch, action, rng.start if rng else 0, str(src), str(dst), reason)
        self.decisions.append(d)
        log.debug("controller %s", d)

    def live(self, node: NodeId) -> bool:
        st = self.nodes.get(node.id)
        return st is not None and st.alive

    def live_nodes(self) -> list[NodeId]:
        return sorted(st.node for st in self.nodes.values() if st.alive)

    def _live_states(self) -> list[NodeState]:
        return [st for st in self.nodes.values() if st.alive]

    def state(self, node: NodeId) -> NodeState:
        return self.nodes[node.id]

    # -- table projection --------------------------------------------------------
    def projection(self, view: SwitchView, directory: Directory | None = None) -> list:
        directory = directory or self.directory
        out = []
        for rec in directory:
            if not any(n.rack in view.racks for n in rec.chain):
                continue
            if view.switch.role == TOR:
                out.append(TableEntry(rec.subrange, tuple(n.id for n in rec.chain)))
            else:
                out.append(UplinkEntry(rec.subrange, view.port_toward(rec.chain.head),
                                       view.port_toward(rec.chain.tail)))
        return out

    def install(self) -> None:
        """Load registers and tables on every switch from the current directory."""
        for view in self.views:
            if view.switch.role == TOR:
                for st in self.nodes.values():
                    view.switch.set_register(st.node.id, st.node.ip, view.port_toward(st.node))
        self.publish(self.directory)

    def publish(self, directory: Directory) -> None:
        self.directory = directory
        for view in self.views:
            if not view.switch.failed:
                self._sync_switch(view, directory)

    def _sync_switch(self, view: SwitchView, directory: Directory) -> None:
        sw = view.switch
        kind = "hash" if directory.mode.value == "hash" else "range"
        table = sw.table(kind)
        want = {e.match: e for e in self.projection(view, directory)}
        for i in range(len(table) - 1, -1, -1):
            if table.entries[i].match not in want:
                sw.remove_entry(kind, i)
        for i, entry in enumerate(list(table.entries)):
            if want[entry.match] != entry:
                sw.update_entry(kind, i, want[entry.match])
        have = {e.match for e in table.entries}
        for match, entry in want.items():
            if match not in have:
                sw.insert_entry(kind, entry)

    def coherence_violations(self) -> list[str]:
        problems = []
        kind = "hash" if self.directory.mode.value == "hash" else "range"
        for view in self.views:
            if view.switch.failed:
                continue
            got = list(view.switch.table(kind).entries)
            want = self.projection(view)
            if got != want:
                problems.append(f"{view.switch!r}: {len(got)} entries, expected {len(want)}")
        return problems

    # -- statistics and load balancing ---------------------------------------------
    def collect_stats(self, duration: float = 0.0) -> StatsEpoch:
        reports = [v.switch.read_and_reset_counters() for v in self.views
                   if v.switch.role == TOR and not v.switch.failed]
        self.reports.extend(reports)
        ep = StatsEpoch(self.epoch, reports, duration)
        self.last_loads = node_loads(ep.record_counts(self.directory), self.directory,
                                     self.live_nodes())
        return ep

    def on_epoch(self, duration: float = 0.0, rebalance: bool = True) -> RebalancePlan | None:
        self.epoch += 1
        stats = self.collect_stats(duration)
        if not rebalance or self.active_jobs:
            return None
        plan = plan_rebalance(stats, self.directory, self.alpha, self.live_nodes())
        for msg in plan.diagnostics:
            self._log("skip", None, reason=msg)
        if plan:
            self.apply_plan(plan)
        return plan

    def apply_plan(self, plan: RebalancePlan) -> None:
        for job in plan.jobs:
            self.run_job(job)

    # -- migration jobs -----------------------------------------------------------
    def run_job(self, job: MigrationJob) -> None:
        self.active_jobs += 1
        self._log("migrate" if job.kind == "replace" else job.kind, job.range, job.source,
                  job.destination, job.reason or job.kind)
        self._copy(job)

    def _copy_source(self, job: MigrationJob) -> NodeState | None:
        if job.kind == "append":
            try:
                tail = self.directory[self.directory.index_of(job.range)].chain.tail
            except DirectoryError:
                return None
            return self.state(tail) if self.live(tail) else None
        return self.state(job.source) if self.live(job.source) else None

    def _copy(self, job: MigrationJob) -> None:
        src = self._copy_source(job)
        if src is None or not self.live(job.destination):
            return self._abort(job, "copy source or destination down")
        if job.kind != "append":
            self._multisets[job.job_id] = pair_multiset(self._live_states(), job.range)
        dst = self.state(job.destination)
        for msg in chunked_messages(job.job_id, Phase.COPY, job.range, src.extract_range(job.range)):
            dst.receive_migration(msg)
        job.advance()
        self._later(self.copy_delay, lambda: self._publish(job))

    def _publish(self, job: MigrationJob) -> None:
        src = self._copy_source(job)
        if src is None or not self.live(job.destination):
            return self._abort(job, "node failed before publish")
        directory = self.directory
        try:
            if job.kind == "split":
                idx = directory.index_of(job.parent)
                directory = directory.split(idx)
                idx += 1
            else:
                idx = directory.index_of(job.range)
        except DirectoryError:
            return self._abort(job, "record changed before publish")
        chain = directory[idx].chain
        if job.destination in chain or (job.kind != "append" and job.source not in chain):
            return self._abort(job, "chain changed before publish")
        new_chain = chain.appended(job.destination) if job.kind == "append" else \
            chain.replaced(job.source, job.destination)
        dst = self.state(job.destination)
        dst.sync_range(job.range, src.extract_range(job.range))
        self.publish(directory.with_chain(idx, new_chain))
        src.redirects.append(Redirect(job.range, job.destination,
                                      "append" if job.kind == "append" else "replace"))
        job.advance()
        self._later(self.drain_delay, lambda: self._cleanup(job))

    def _cleanup(self, job: MigrationJob) -> None:
        for st in self.nodes.values():
            st.redirects = [r for r in st.redirects
                            if not (r.range == job.range and r.target == job.destination)]
        if job.kind != "append" and self.live(job.source):
            src = self.state(job.source)
            for msg in chunked_messages(job.job_id, Phase.CLEANUP, job.range, []):
                src.receive_migration(msg)
        before = self._multisets.pop(job.job_id, None)
        if before is not None:
            after = pair_multiset(self._live_states(), job.range)
            self.migration_checks.append((job, before == after))
        self.active_jobs -= 1
        self.jobs_done.append(job)
        self._restore_finished(job, retry=False)

    def _abort(self, job: MigrationJob, why: str) -> None:
        self._multisets.pop(job.job_id, None)
        self._restore_finished(job, retry=True)
        self.active_jobs -= 1
        self.jobs_aborted.append(job)
        self._log("abort", job.range, job.source, job.destination, why)
        if self.live(job.destination) and job.destination not in self._chain_for(job.range):
            self.state(job.destination).drop_range(job.range)

    def _chain_for(self, rng: SubRange) -> ChainSpec:
        return self.directory.locate(rng.start)[1].chain

    # -- failures -------------------------------------------------------------------
    def _restore_candidate(self, chain: ChainSpec, extra_load: dict) -> NodeId | None:
        free = [n for n in self.live_nodes() if n not in chain]
        if not free:
            return None
        membership = Counter(n for rec in self.directory for n in rec.chain)
        return min(free, key=lambda n: (self.last_loads.get(n, 0) + extra_load.get(n, 0),
                                        membership[n], n.id))

    def handle_node_failure(self, failed: NodeId) -> Directory:
        """Splice ``failed`` out of every chain, then re-grow each chain to r."""
        st = self.nodes.get(failed.id)
        if st is not None:
            st.alive = False
        directory = self.directory
        shortened = []
        for i, rec in enumerate(directory):
            if failed not in rec.chain:
                continue
            if rec.chain.length == 1:
                self._log("unavailable", rec.subrange, failed, "-", "last replica failed")
                continue
            directory = directory.with_chain(i, rec.chain.without(failed))
            shortened.append(rec.subrange)
            self._log("splice", rec.subrange, failed, "-", "node failure")
        self.publish(directory)
        self._later(0.0, lambda: self._restore(shortened))
        return self.directory

    def _restore(self, ranges: list[SubRange]) -> None:
        planned: Counter = Counter()
        for rng in ranges:
            try:
                rec = self.directory[self.directory.index_of(rng)]
            except DirectoryError:
                continue
            if not self.live(rec.chain.tail):
                self._log("unavailable", rng, rec.chain.tail, "-", "no live replica to copy from")
                continue
            busy = self._restoring.get(rng, set())
            missing = self.directory.replication_factor - rec.chain.length - len(busy)
            for _ in range(missing):
                dest = self._restore_candidate(ChainSpec(rec.chain.nodes + tuple(busy)), planned)
                if dest is None:
                    self._log("partial", rng, "-", "-", "not enough live nodes to restore chain length")
                    break
                planned[dest] += 1
                busy = busy | {dest}
                self._restoring[rng] = busy
                self.run_job(MigrationJob(rng, rec.chain.tail, dest, "append", reason="restore"))

    def _restore_finished(self, job: MigrationJob, retry: bool) -> None:
        if job.kind != "append":
            return
        busy = self._restoring.get(job.range, set()) - {job.destination}
        if busy:
            self._restoring[job.range] = busy
        else:
            self._restoring.pop(job.range, None)
        self._restore_retries[job.range] += retry
        if retry and self._restore_retries[job.range] <= 3:
            self._later(0.0, lambda: self._restore([job.range]))

    def handle_switch_failure(self, switch: Switch, rack_nodes: Iterable[NodeId]) -> Directory:
        view = next(v for v in self.views if v.switch is switch)
        if switch.authoritative or len({n.rack for n in self.directory.nodes()}) <= 1:
            self._log("outage", None, f"switch{switch.id}", "-", "single-rack switch failure")
            return self.directory
        switch.failed = True
        for node in sorted(rack_nodes):
            if node.rack in view.racks and self.live(node):
                self.handle_node_failure(node)
        return self.directory

    def replace_switch(self, switch: Switch) -> None:
        view = next(v for v in self.views if v.switch is switch)
        switch.range_table.clear()
        switch.hash_table.clear()
        switch.failed = False
        if switch.role == TOR:
            for st in self.nodes.values():
                switch.set_register(st.node.id, st.node.ip, view.port_toward(st.node))
        self._sync_switch(view, self.directory)

    # -- capacity ---------------------------------------------------------------------
    def handle_capacity_overflow(self, node: NodeId, index: int | None = None) -> Directory:
        st = self.state(node)
        if index is None:
            owned = [(st.count_in(rec.subrange), i) for i, rec in enumerate(self.directory)
                     if node in rec.chain]
            if not owned:
                return self.directory
            index = max(owned)[1]
        rec = self.directory[index]
        st.overflowed = False
        if rec.subrange.start == rec.subrange.end:
            self._log("overflow", rec.subrange, node, "-", "width-1 record cannot split")
            return self.directory
        _, upper = rec.subrange.halves()
        free = [n for n in self.live_nodes()
                if n not in rec.chain and (self.state(n).capacity is None
                                           or len(self.state(n).engine) < self.state(n).capacity)]
        if not free:
            self._log("overflow", rec.subrange, node, "-", "no node with free space")
            return self.directory
        dest = min(free, key=lambda n: (len(self.state(n).engine), n.id))
        job = MigrationJob(upper, node, dest, "split", reason="capacity overflow",
                           parent=rec.subrange)
        self.run_job(job)
        return self.directory


def pair_multiset(nodes: Iterable[NodeState], rng: SubRange) -> Counter:
    total: Counter = Counter()
    for st in nodes:
        total.update(st.extract_range(rng))
    return total
