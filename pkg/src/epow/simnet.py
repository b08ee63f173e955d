"""Deterministic discrete-event network simulation.

Time is virtual and kept in integer milliseconds. Every miner is an actor
whose loops are scheduled as events; blocks reach the other actors after a
fixed propagation delay. Stale events are dropped lazily through a per-miner
epoch counter that increments whenever the miner switches heights.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, NamedTuple

import numpy as np

from .consensus import (
    ACCEPTED,
    BlockHeader,
    BlockVerdict,
    CoordinatorView,
    DifficultyState,
    Rejection,
    SENTINEL_LSP,
    genesis_header,
    header_digest,
    k_limit,
    retarget_ratio,
    validate_block,
)
from .coordinator import Coordinator
from .errors import ConfigError
from .matrix import INT_MODE, FLOAT_MODE, random_matrix
from .miner import (
    TASK_FREE,
    MinerState,
    compute_and_submit,
    hash_attempt,
    interrupt,
    lsp_for,
    next_loop,
    search_task_free,
    start_height,
)
from .verify import VERIFIERS

LOOP_COMPLETE = "loop_complete"
BLOCK_ARRIVAL = "block_arrival"
HEIGHT_START = "height_start"
WINDOW_RETARGET = "window_retarget"

NETWORK_TYPES = ("I", "II", "III", "IV", "V")
TYPE_POLICY = {"I": 0, "II": 200, "III": 400, "IV": 600}
_TYPE_ALIASES = {f"type{i}": t for i, t in enumerate(NETWORK_TYPES, start=1)} | {str(i): t for i, t in enumerate(NETWORK_TYPES, start=1)}

FREE_CHUNK = 4096  # task-free loops hashed per scheduled event


def normalize_type(network_type: str) -> str:
    t = str(network_type).strip()
    t = _TYPE_ALIASES.get(t.lower(), t.upper())
    if t not in NETWORK_TYPES:
        raise ConfigError(f"unknown network type {network_type!r}; use I..V or type1..type5")
    return t


def type_assignment(network_type: str, miner_count: int) -> list[int]:
    """Per-miner ``k_policy``; Type V cycles I, II, III, IV in miner-id order."""
    if miner_count < 2:
        raise ConfigError(f"miner_count must be >= 2, got {miner_count}")
    t = normalize_type(network_type)
    if t == "V":
        cycle = [TYPE_POLICY[x] for x in ("I", "II", "III", "IV")]
        return [cycle[i % 4] for i in range(miner_count)]
    return [TYPE_POLICY[t]] * miner_count


def _ms(seconds: float, name: str) -> int:
    ms = round(seconds * 1000)
    if abs(ms - seconds * 1000) > 1e-6:
        raise ConfigError(f"{name}={seconds} s is not a whole number of milliseconds")
    return ms


@dataclass
class ScenarioConfig:
    """Everything a run depends on. Times are seconds.

    ``b`` is the nominal basic size used for clock-period accounting while
    ``kernel_b`` is the block size actually multiplied; loop durations are
    virtual, so the two are independent. ``p0=None`` picks the initial
    ``p_base`` that puts the starting block rate on target.
    """

    network_type: str = "I"
    miner_count: int = 5
    tau_f: float = 0.01
    tau_t: float = 0.48
    tau_matrix: float = 0.40
    block_time: float = 300.0
    window: int = 10
    p0: float | None = None
    b: int = 500
    kernel_b: int = 8
    k_max: int = 600
    propagation_delay: float = 0.1
    seed: int = 0
    target_height: int = 50
    clock_rate: float = 3.2e9
    verifier: str = "spot"
    verify_rounds: int = 3
    attempt_batch: int = 1
    matrix_mode: str = INT_MODE
    task_chain_len: int = 2
    task_max_units: int = 4
    retention: int = 20
    k_policies: list[int] | None = None
    cheat_plan: dict[int, list[int]] = field(default_factory=dict)
    max_virtual_time: float | None = None

    def __post_init__(self):
        self.network_type = normalize_type(self.network_type)
        self.cheat_plan = {int(k): sorted(int(h) for h in v) for k, v in dict(self.cheat_plan).items()}
        if self.k_policies is not None:
            self.k_policies = [int(k) for k in self.k_policies]

    # -- derived ------------------------------------------------------------

    @property
    def policies(self) -> list[int]:
        if self.k_policies is not None:
            return list(self.k_policies)
        return type_assignment(self.network_type, self.miner_count)

    @property
    def initial_p(self) -> float:
        if self.p0 is not None:
            return self.p0
        return min(1.0, self.tau_f / (self.miner_count * self.block_time))

    @property
    def cp_per_task(self) -> int:
        return 2 * self.b**3

    def difficulty(self) -> DifficultyState:
        return DifficultyState(
            p_base=self.initial_p,
            block_time=self.block_time,
            window=self.window,
            tau_f=self.tau_f,
            tau_t=self.tau_t,
            k_max=self.k_max,
            attempt_batch=self.attempt_batch,
        )

    def validate(self) -> "ScenarioConfig":
        errs = []
        if self.miner_count < 2:
            errs.append(f"miner_count must be >= 2, got {self.miner_count}")
        if self.k_policies is not None:
            if len(self.k_policies) != self.miner_count:
                errs.append(f"k_policies has {len(self.k_policies)} entries for {self.miner_count} miners")
            if any(k < 0 for k in self.k_policies):
                errs.append("k_policies must be >= 0")
        if not 0 < self.tau_f < self.tau_t:
            errs.append(f"need 0 < tau_f < tau_t, got tau_f={self.tau_f}, tau_t={self.tau_t}")
        if not 0 < self.tau_matrix < self.tau_t:
            errs.append(f"need 0 < tau_matrix < tau_t, got {self.tau_matrix}")
        if self.block_time <= 0 or self.window < 1 or self.target_height < 1:
            errs.append("block_time, window and target_height must be positive")
        elif self.k_max < 0 or self.k_max > k_limit(self.tau_t, self.block_time):
            errs.append(f"K_max*tau_t <= T_B violated: {self.k_max}*{self.tau_t} > {self.block_time}")
        if not 0 <= self.propagation_delay < self.block_time / 10:
            errs.append(f"propagation_delay {self.propagation_delay} must be in [0, T_B/10)")
        if self.p0 is not None and not 0 < self.p0 <= 1:
            errs.append(f"p0 {self.p0} outside (0, 1]")
        if self.b < 1 or self.kernel_b < 1:
            errs.append("b and kernel_b must be >= 1")
        if self.verifier not in VERIFIERS:
            errs.append(f"verifier {self.verifier!r} not in {sorted(VERIFIERS)}")
        if self.verify_rounds < 1 or self.attempt_batch < 1:
            errs.append("verify_rounds and attempt_batch must be >= 1")
        if self.matrix_mode not in (INT_MODE, FLOAT_MODE):
            errs.append(f"matrix_mode must be {INT_MODE!r} or {FLOAT_MODE!r}")
        if self.task_chain_len < 2 or self.task_max_units < 1:
            errs.append("task_chain_len must be >= 2 and task_max_units >= 1")
        if not 0 <= self.seed < 2**64:
            errs.append("seed must fit in 64 bits")
        if any(m < 0 or m >= self.miner_count for m in self.cheat_plan):
            errs.append("cheat_plan names a miner outside the network")
        for name in ("tau_f", "tau_t", "tau_matrix", "block_time", "propagation_delay"):
            try:
                _ms(getattr(self, name), name)
            except ConfigError as e:
                errs.append(str(e))
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    # -- (de)serialization ----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["cheat_plan"] = {str(k): v for k, v in self.cheat_plan.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


PAPER_REPLICA = dict(
    b=500,
    tau_t=0.48,
    block_time=300.0,
    k_max=600,
    p0=2.5e-3,
    tau_matrix=0.40,
    tau_f=0.001,
    attempt_batch=100,
)


def paper_replica(**overrides) -> ScenarioConfig:
    """Testbed parameters; ``tau_f`` and the batch size are our choice (the testbed does not report them)."""
    return ScenarioConfig(**(PAPER_REPLICA | overrides))


# -- events ---------------------------------------------------------------


class Event(NamedTuple):
    """Heap entry; ordered by ``(time, seq)`` and ``seq`` is unique."""

    time: int
    seq: int
    actor_id: int
    kind: str
    epoch: int = 0
    payload: Any = None


class EventQueue:
    def __init__(self):
        self._heap: list[Event] = []
        self._seq = 0
        self.now = 0

    def push(self, time: int, actor_id: int, kind: str, epoch: int = 0, payload: Any = None) -> Event:
        if time < self.now:
            raise ValueError(f"event at {time} ms scheduled in the past (now {self.now} ms)")
        ev = Event(time, self._seq, actor_id, kind, epoch, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def __len__(self) -> int:
        return len(self._heap)


# -- chain store ------------------------------------------------------------


@dataclass(slots=True)
class StoredBlock:
    header: BlockHeader
    digest: bytes
    ds: DifficultyState  # in force for children of this block
    order: int

    @property
    def height(self) -> int:
        return self.header.height


class ChainStore:
    """All valid blocks, keyed by digest; the head is the first-inserted block of maximal height."""

    def __init__(self, genesis_ds: DifficultyState, genesis: BlockHeader | None = None):
        g = genesis or genesis_header()
        d = header_digest(g)
        self.genesis = d
        self.blocks: dict[bytes, StoredBlock] = {d: StoredBlock(g, d, genesis_ds, 0)}
        self.children: dict[bytes, list[bytes]] = {d: []}
        self.head = d
        self.rejected: list[tuple[BlockHeader, BlockVerdict]] = []

    @property
    def head_block(self) -> StoredBlock:
        return self.blocks[self.head]

    def check(self, h: BlockHeader, coordinator: CoordinatorView) -> tuple[bytes, BlockVerdict]:
        d = header_digest(h)
        if d in self.blocks:
            return d, BlockVerdict(Rejection.BAD_LINKAGE, "duplicate block")
        parent = self.blocks.get(h.prev_digest)
        if parent is None:
            return d, BlockVerdict(Rejection.BAD_LINKAGE, f"unknown parent {h.prev_digest.hex()[:16]}")
        return d, validate_block(h, parent.header, parent.ds, coordinator, parent.digest)

    def insert(self, h: BlockHeader, coordinator: CoordinatorView) -> tuple[bytes, BlockVerdict]:
        d, verdict = self.check(h, coordinator)
        if not verdict:
            self.rejected.append((h, verdict))
            return d, verdict
        parent = self.blocks[h.prev_digest]
        self.blocks[d] = StoredBlock(h, d, parent.ds.after_block(h.height, h.timestamp_ms), len(self.blocks))
        self.children[d] = []
        self.children[h.prev_digest].append(d)
        if h.height > self.head_block.height:
            self.head = d
        return d, ACCEPTED

    def chain(self, tip: bytes | None = None) -> list[StoredBlock]:
        """Blocks from genesis to ``tip`` (default: head), genesis included."""
        out = []
        d = self.head if tip is None else tip
        while True:
            blk = self.blocks[d]
            out.append(blk)
            if d == self.genesis:
                break
            d = blk.header.prev_digest
        out.reverse()
        return out

    def stale_count(self) -> int:
        return len(self.blocks) - len(self.chain())


# -- task feed ----------------------------------------------------------------


class TaskFeed:
    """Synthetic task source: chains of square-ish matrices with sides ``kernel_b * u``, ``u`` uniform in 1..max_units."""

    def __init__(self, rng: np.random.Generator, kernel_b: int, chain_len: int = 2, max_units: int = 4,
                 mode: str = INT_MODE):
        self.rng = rng
        self.kernel_b = kernel_b
        self.chain_len = chain_len
        self.max_units = max_units
        self.mode = mode
        self.ingested = 0
        self.chains: dict[int, list] | None = None  # task id -> chain, when kept

    def make_chain(self):
        dims = (self.rng.integers(1, self.max_units + 1, size=self.chain_len + 1) * self.kernel_b).tolist()
        return [random_matrix(self.rng, r, c, self.mode) for r, c in zip(dims, dims[1:])]

    def __call__(self, coordinator: Coordinator, shortfall: int) -> None:
        want = len(coordinator.queue) + shortfall
        while len(coordinator.queue) < want:
            chain = self.make_chain()
            tid = coordinator.ingest_task(chain, source_id=1 + self.ingested % 6)
            if self.chains is not None:
                self.chains[tid] = chain
            self.ingested += 1


# -- metrics ------------------------------------------------------------------


@dataclass(frozen=True)
class BlockRow:
    height: int
    miner_id: int
    block_time_s: float
    timestamp_ms: int


@dataclass(frozen=True)
class TaskRow:
    height: int
    miner_id: int
    cumulative_cp: int


@dataclass(frozen=True)
class EfficiencyRow:
    miner_id: int
    network_type: str
    miner_count: int
    k_policy: int
    verified: int
    efficiency: float


@dataclass(frozen=True)
class RetargetRow:
    window_index: int
    height: int
    timestamp_ms: int
    duration_s: float
    ratio: float
    p_before: float
    p_after: float


@dataclass
class MetricsReport:
    config: ScenarioConfig
    blocks: list[BlockRow]
    tasks: list[TaskRow]
    efficiency: list[EfficiencyRow]
    retarget: list[RetargetRow]
    end_ms: int
    complete: bool
    wins: dict[int, int]
    stale_blocks: int
    rejected_blocks: int
    attempts: dict[int, int]
    tasks_completed: int

    @property
    def end_s(self) -> float:
        return self.end_ms / 1000.0

    def mean_block_time(self, from_height: int = 1) -> float:
        rows = [r for r in self.blocks if r.height >= from_height]
        return sum(r.block_time_s for r in rows) / len(rows) if rows else math.nan

    def total_cp(self, height: int) -> int:
        return sum(r.cumulative_cp for r in self.tasks if r.height == height)

    def window_bgr(self) -> list[float]:
        """Blocks per second in each complete retarget window of the head chain."""
        w = self.config.window
        out = []
        ts = [0] + [r.timestamp_ms for r in self.blocks]
        for start in range(0, len(ts) - w, w):
            out.append(w / ((ts[start + w] - ts[start]) / 1000.0))
        return out


# -- engine -----------------------------------------------------------------


@dataclass(slots=True)
class TraceRecord:
    miner_id: int
    height: int
    kind: str
    start_ms: int
    end_ms: int
    loops: int
    outcome: str  # found / none / aborted / invalid
    submit: str = ""


class Simulation:
    """One scenario run. Use :func:`run` unless the internals are needed."""

    def __init__(self, cfg: ScenarioConfig, trace: bool = False, event_log: bool = False, keep_tasks: bool = False):
        self.cfg = cfg.validate()
        ss = np.random.SeedSequence(cfg.seed)
        feed_ss, verify_ss, cheat_ss, nonce_ss = ss.spawn(4)
        self.tau_f_ms = _ms(cfg.tau_f, "tau_f")
        self.tau_t_ms = _ms(cfg.tau_t, "tau_t")
        self.tau_m_ms = _ms(cfg.tau_matrix, "tau_matrix")
        self.delay_ms = _ms(cfg.propagation_delay, "propagation_delay")
        self.step_ms = self.tau_f_ms * cfg.attempt_batch
        self.limit_ms = None if cfg.max_virtual_time is None else round(cfg.max_virtual_time * 1000)

        self.feed = TaskFeed(np.random.default_rng(feed_ss), cfg.kernel_b, cfg.task_chain_len, cfg.task_max_units,
                             cfg.matrix_mode)
        self.coordinator = Coordinator(
            cfg.kernel_b,
            verifier=cfg.verifier,
            rounds=cfg.verify_rounds,
            rng=np.random.default_rng(verify_ss),
            retention=cfg.retention,
            feed=self.feed,
            keep_results=keep_tasks,
        )
        if keep_tasks:
            self.feed.chains = {}
        self.store = ChainStore(cfg.difficulty())
        cheat_rng = np.random.default_rng(cheat_ss)
        self.miners = [
            MinerState(i, k, cheat_heights=frozenset(cfg.cheat_plan.get(i, ())), cheat_rng=cheat_rng)
            for i, k in enumerate(cfg.policies)
        ]
        # each miner starts its nonce walk at a seed-dependent point, otherwise
        # task-free networks would replay the same chain for every seed
        starts = np.random.default_rng(nonce_ss).integers(0, 2**63, size=len(self.miners))
        for st, n0 in zip(self.miners, starts.tolist()):
            st.nonce_cursor = n0
        self.view = [self.store.genesis] * len(self.miners)
        self.epoch = [0] * len(self.miners)
        self.inflight: list[tuple | None] = [None] * len(self.miners)
        self.height_start_ms = [0] * len(self.miners)
        self.verified_ms: list[list[int]] = [[] for _ in self.miners]
        self.queue = EventQueue()
        self.trace: list[TraceRecord] | None = [] if trace else None
        self.log: list[dict] | None = [] if event_log else None
        self.end_ms: int | None = None
        self.complete = False

    # -- helpers --------------------------------------------------------------

    def _trace(self, m: int, kind: str, start: int, end: int, loops: int, outcome: str, submit: str = "") -> None:
        if self.trace is not None:
            self.trace.append(TraceRecord(m, self.miners[m].height, kind, start, end, loops, outcome, submit))

    def _switch(self, m: int, digest: bytes, now: int) -> None:
        """Abort whatever ``m`` is doing and queue the start of the height above ``digest``."""
        st = self.miners[m]
        fl = self.inflight[m]
        if fl is not None:
            kind, start = fl[0], fl[1]
            if kind == TASK_FREE:
                n = fl[2]
                done = min(n, (now - start) // self.step_ms)
                if done == n:
                    done -= 1  # the chunk's last loop ends right now but its event has not run
                st.nonce_cursor = (st.nonce_cursor + done) & 0xFFFFFFFFFFFFFFFF
                st.attempts_this_height += done
                st.attempts_total += done
                if done:
                    self._trace(m, TASK_FREE, start, start + done * self.step_ms, done, "none")
                self._trace(m, TASK_FREE, start + done * self.step_ms, now, 0, "aborted")
            else:
                self._trace(m, kind, start, now, 0, "aborted")
            self.inflight[m] = None
        interrupt(st)
        self.view[m] = digest
        self.epoch[m] += 1
        self.queue.push(now, m, HEIGHT_START, self.epoch[m], digest)

    def _schedule_next(self, m: int, now: int) -> None:
        st = self.miners[m]
        loop = next_loop(st)
        ep = self.epoch[m]
        if loop.kind == TASK_FREE:
            n, nonce, digest = search_task_free(st, now, self.step_ms, FREE_CHUNK)
            self.inflight[m] = (TASK_FREE, now, n)
            self.queue.push(now + n * self.step_ms, m, LOOP_COMPLETE, ep, ("free", now, n, nonce))
            return
        a = loop.assignment
        self.inflight[m] = (loop.kind, now)
        if a.result is None:
            self.queue.push(now + self.tau_m_ms, m, LOOP_COMPLETE, ep, ("compute", now, a))
        else:
            self.queue.push(now + self.tau_t_ms - self.tau_m_ms, m, LOOP_COMPLETE, ep, ("hash", now, a, ""))

    def _found(self, m: int, h: BlockHeader, now: int, start: int, kind: str, loops: int, submit: str = "") -> None:
        digest, verdict = self.store.insert(h, self.coordinator)
        if not verdict:
            self._trace(m, kind, start, now, loops, "invalid", submit)
            self._schedule_next(m, now)
            return
        self._trace(m, kind, start, now, loops, "found", submit)
        self.inflight[m] = None
        blk = self.store.blocks[digest]
        if blk.ds is not self.store.blocks[h.prev_digest].ds:
            self.queue.push(now, m, WINDOW_RETARGET, 0, digest)
        self.coordinator.set_height(self.store.head_block.height)
        broadcast(self.queue, digest, m, len(self.miners), self.delay_ms, now)
        self._switch(m, digest, now)
        if self.store.head_block.height >= self.cfg.target_height:
            self.end_ms = self.store.head_block.header.timestamp_ms
            self.complete = True

    # -- event handlers ---------------------------------------------------------

    def _on_height_start(self, m: int, digest: bytes, now: int) -> None:
        blk = self.store.blocks[digest]
        st = self.miners[m]
        start_height(st, self.coordinator, blk.height + 1, blk.header, digest, blk.ds)
        self.height_start_ms[m] = now
        self._schedule_next(m, now)

    def _on_loop(self, m: int, payload: tuple, now: int) -> None:
        st = self.miners[m]
        tag = payload[0]
        if tag == "free":
            _, start, n, nonce = payload
            if nonce is None:
                st.nonce_cursor = (st.nonce_cursor + n) & 0xFFFFFFFFFFFFFFFF
                st.attempts_this_height += n
                st.attempts_total += n
                self._trace(m, TASK_FREE, start, now, n, "none")
                self._schedule_next(m, now)
                return
            st.nonce_cursor = nonce
            st.attempts_this_height += n - 1
            st.attempts_total += n - 1
            h, _, _ = hash_attempt(st, now, SENTINEL_LSP, st.ds.loop_probability(st.k_current, True))
            self._found(m, h, now, start, TASK_FREE, n)
            return
        if tag == "compute":
            _, start, a = payload
            out = compute_and_submit(st, a, self.coordinator)
            if out.accepted:
                self.verified_ms[m].append(now)
            verdict = "accepted" if out.accepted else "rejected"
            self.queue.push(now + self.tau_t_ms - self.tau_m_ms, m, LOOP_COMPLETE, self.epoch[m],
                            ("hash", start, a, verdict))
            return
        _, start, a, verdict = payload
        st.assigned.popleft()
        st.completed_this_height += 1
        h, _, ok = hash_attempt(st, now, lsp_for(a), st.p_eff)
        if ok:
            self._found(m, h, now, start, "task_involved", 1, verdict)
        else:
            self._trace(m, "task_involved", start, now, 1, "none", verdict)
            self._schedule_next(m, now)

    def _on_arrival(self, m: int, digest: bytes, now: int) -> None:
        if self.store.blocks[digest].height > self.store.blocks[self.view[m]].height:
            self._switch(m, digest, now)

    # -- main loop ----------------------------------------------------------------

    def run(self) -> MetricsReport:
        for m in range(len(self.miners)):
            self.queue.push(0, m, HEIGHT_START, self.epoch[m], self.store.genesis)
        q = self.queue
        while q and self.end_ms is None:
            ev = q.pop()
            if self.limit_ms is not None and ev.time > self.limit_ms:
                self.end_ms = self.limit_ms
                break
            kind, m = ev.kind, ev.actor_id
            if kind in (LOOP_COMPLETE, HEIGHT_START) and ev.epoch != self.epoch[m]:
                continue
            if self.log is not None:
                self.log.append(self._log_record(ev))
            if kind == LOOP_COMPLETE:
                self._on_loop(m, ev.payload, ev.time)
            elif kind == BLOCK_ARRIVAL:
                self._on_arrival(m, ev.payload, ev.time)
            elif kind == HEIGHT_START:
                self._on_height_start(m, ev.payload, ev.time)
        if self.end_ms is None:
            self.end_ms = q.now
        return self.report()

    def _log_record(self, ev: Event) -> dict:
        rec = {"time_ms": ev.time, "seq": ev.seq, "actor_id": ev.actor_id, "kind": ev.kind}
        p = ev.payload
        if isinstance(p, bytes):
            rec["block"] = p.hex()
        elif isinstance(p, tuple):
            rec["phase"] = p[0]
        return rec

    # -- metrics --------------------------------------------------------------------

    def report(self) -> MetricsReport:
        cfg = self.cfg
        chain = self.store.chain()
        blocks = [
            BlockRow(b.height, b.header.miner_id, (b.header.timestamp_ms - p.header.timestamp_ms) / 1000.0,
                     b.header.timestamp_ms)
            for p, b in zip(chain, chain[1:])
        ]
        cp = cfg.cp_per_task
        tasks = [
            TaskRow(b.height, m, bisect_right(self.verified_ms[m], b.timestamp_ms) * cp)
            for b in blocks
            for m in range(len(self.miners))
        ]
        end = self.end_ms
        eff = []
        for m, st in enumerate(self.miners):
            v = bisect_right(self.verified_ms[m], end)
            e = v * cfg.tau_matrix / (end / 1000.0) if end > 0 else 0.0
            eff.append(EfficiencyRow(m, cfg.network_type, cfg.miner_count, st.k_policy, v, e))
        ret = []
        for p, b in zip(chain, chain[1:]):
            if b.ds is not p.ds:
                dur = (b.header.timestamp_ms - p.ds.window_start_ms) / 1000.0
                ret.append(RetargetRow(b.ds.window_index, b.height, b.header.timestamp_ms, dur,
                                       retarget_ratio(dur, cfg.window, cfg.block_time), p.ds.p_base, b.ds.p_base))
        wins = Counter(b.miner_id for b in blocks)
        return MetricsReport(
            config=cfg,
            blocks=blocks,
            tasks=tasks,
            efficiency=eff,
            retarget=ret,
            end_ms=end,
            complete=self.complete,
            wins={m: wins.get(m, 0) for m in range(len(self.miners))},
            stale_blocks=self.store.stale_count(),
            rejected_blocks=len(self.store.rejected),
            attempts={m: st.attempts_total for m, st in enumerate(self.miners)},
            tasks_completed=len(self.coordinator.completed),
        )


def run(cfg: ScenarioConfig, trace: bool = False, event_log: bool = False) -> MetricsReport:
    return Simulation(cfg, trace=trace, event_log=event_log).run()


def broadcast(queue: EventQueue, digest: bytes, from_actor: int, actors: int, delay_ms: int, now: int) -> list[Event]:
    """Schedule arrivals of ``digest`` at every actor except the generator."""
    return [queue.push(now + delay_ms, j, BLOCK_ARRIVAL, 0, digest) for j in range(actors) if j != from_actor]


def with_seed(cfg: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(cfg, seed=seed)
