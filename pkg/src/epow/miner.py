"""Per-miner state machine: claim planning, loop selection and execution.

A height (block time) starts with :func:`plan_block_time`; the miner then
runs task-involved loops for every block product it holds, carried ones
first, and task-free loops afterwards. A block arriving mid-height aborts the
loop in flight; whatever is unfinished is carried to the next height and
reduces the next claim.
"""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .consensus import (
    EMPTY_PAYLOAD_DIGEST,
    HEADER_VERSION,
    SENTINEL_LSP,
    BlockHeader,
    DifficultyState,
    LSPField,
    attempt,
    threshold_bytes,
)
from .coordinator import Coordinator, SubmitOutcome
from .matrix import random_matrix
from .tasks import Ids, NSubResult, NSubTask, compute_nsubtask

TASK_FREE = "task_free"
TASK_INVOLVED = "task_involved"

_PREFIX = struct.Struct(">I32s32sQ")  # version, prev, payload, height
_TAIL = struct.Struct(">QIIQ")  # timestamp, miner, k, nonce
_LSP = struct.Struct(">QQQ32s32s")
_SENTINEL_LSP_BYTES = _LSP.pack(0, 0, 0, bytes(32), bytes(32))


@dataclass(slots=True, eq=False)
class Assignment:
    """A block product held by a miner; ``result`` is set once submitted."""

    nst: NSubTask
    result: NSubResult | None = None
    rejected: bool = False

    @property
    def ids(self) -> Ids:
        return self.nst.ids


@dataclass(frozen=True)
class Loop:
    kind: str
    assignment: Assignment | None = None


TASK_FREE_LOOP = Loop(TASK_FREE)


@dataclass(frozen=True)
class ClaimRequest:
    miner_id: int
    count: int
    carried: tuple[Ids, ...]


@dataclass(frozen=True)
class LoopOutcome:
    end_ms: int
    header: BlockHeader | None
    digest: bytes
    found: bool
    submit: SubmitOutcome | None = None


@dataclass(eq=False)
class MinerState:
    miner_id: int
    k_policy: int
    carried: deque[Assignment] = field(default_factory=deque)
    k_current: int = 0
    completed_this_height: int = 0
    nonce_cursor: int = 0
    height: int = 0
    parent: BlockHeader | None = None
    parent_digest: bytes = bytes(32)
    ds: DifficultyState | None = None
    assigned: deque[Assignment] = field(default_factory=deque)
    attempts_this_height: int = 0
    attempts_total: int = 0
    cheat_heights: frozenset[int] = frozenset()
    cheat_rng: np.random.Generator | None = None

    @property
    def p_eff(self) -> float:
        return self.ds.p_eff(self.k_current)


def plan_block_time(st: MinerState, k_max: int) -> ClaimRequest:
    """Decide the claim for a new height: carried work first, then top up to ``k_policy``.

    Carried work beyond ``k_max`` stays in ``st.carried`` for later heights.
    """
    work = list(st.carried)[:k_max]
    new = max(0, min(st.k_policy, k_max) - len(st.carried))
    return ClaimRequest(st.miner_id, new, tuple(a.ids for a in work))


def begin_height(
    st: MinerState,
    height: int,
    parent: BlockHeader,
    parent_digest: bytes,
    ds: DifficultyState,
    req: ClaimRequest,
    granted: list[NSubTask],
) -> None:
    n_work = len(req.carried)
    work = [st.carried.popleft() for _ in range(n_work)]
    st.assigned = deque(work)
    st.assigned.extend(Assignment(n) for n in granted)
    st.k_current = len(st.assigned)
    st.height = height
    st.parent = parent
    st.parent_digest = parent_digest
    st.ds = ds
    st.completed_this_height = 0
    st.attempts_this_height = 0


def start_height(
    st: MinerState,
    coordinator: Coordinator,
    height: int,
    parent: BlockHeader,
    parent_digest: bytes,
    ds: DifficultyState,
) -> ClaimRequest:
    """Plan, claim from the coordinator, and install the height's work list."""
    req = plan_block_time(st, ds.k_max)
    granted = coordinator.claim(st.miner_id, height, req.count, req.carried)
    begin_height(st, height, parent, parent_digest, ds, req, granted)
    return req


def next_loop(st: MinerState) -> Loop:
    if st.assigned:
        return Loop(TASK_INVOLVED, st.assigned[0])
    return TASK_FREE_LOOP


def interrupt(st: MinerState) -> None:
    """Abort the height: unfinished, non-rejected assignments move to ``carried``."""
    keep = [a for a in st.assigned if not a.rejected]
    st.assigned.clear()
    st.carried.extendleft(reversed(keep))


def compute_and_submit(st: MinerState, a: Assignment, coordinator: Coordinator) -> SubmitOutcome:
    """Task part of a task-involved loop. Fabricates a product at scripted cheat heights."""
    if st.height in st.cheat_heights:
        rng = st.cheat_rng if st.cheat_rng is not None else np.random.default_rng(st.miner_id)
        fake = random_matrix(rng, a.nst.b, a.nst.b)
        res = NSubResult.of(a.nst, fake, st.miner_id)
    else:
        res = compute_nsubtask(a.nst, st.miner_id)
    a.result = res
    out = coordinator.submit_result(st.miner_id, res)
    if not out.accepted:
        a.rejected = True
        dropped = set(out.requeued)
        st.assigned = deque(x for x in st.assigned if x is a or x.ids not in dropped)
    return out


def lsp_for(a: Assignment) -> LSPField:
    r = a.result
    return LSPField(r.task_id, r.sub_id, r.nsub_id, a.nst.operand_digest, r.result_digest)


def make_header(st: MinerState, timestamp_ms: int, lsp: LSPField, nonce: int) -> BlockHeader:
    return BlockHeader(
        HEADER_VERSION,
        st.parent_digest,
        EMPTY_PAYLOAD_DIGEST,
        st.height,
        timestamp_ms,
        st.miner_id,
        st.k_current,
        nonce,
        lsp,
    )


def hash_attempt(st: MinerState, timestamp_ms: int, lsp: LSPField, p: float) -> tuple[BlockHeader, bytes, bool]:
    """One attempt; advances the nonce cursor."""
    h = make_header(st, timestamp_ms, lsp, st.nonce_cursor)
    st.nonce_cursor = (st.nonce_cursor + 1) & 0xFFFFFFFFFFFFFFFF
    st.attempts_this_height += 1
    st.attempts_total += 1
    digest, ok = attempt(h, p)
    return h, digest, ok


def search_task_free(st: MinerState, start_ms: int, step_ms: int, max_loops: int) -> tuple[int, int | None, bytes]:
    """Run up to ``max_loops`` task-free loops back to back without touching ``st``.

    Returns ``(loops_run, winning_nonce_or_None, digest)``; the caller settles
    the nonce cursor, since loops after an interruption never happened.
    """
    thr = threshold_bytes(st.ds.loop_probability(st.k_current, task_free=True))
    prefix = _PREFIX.pack(HEADER_VERSION, st.parent_digest, EMPTY_PAYLOAD_DIGEST, st.height)
    base = hashlib.sha256(prefix)
    tail_pack = _TAIL.pack
    miner, k = st.miner_id, st.k_current
    nonce0 = st.nonce_cursor
    ts = start_ms
    for i in range(max_loops):
        ts += step_ms
        nonce = (nonce0 + i) & 0xFFFFFFFFFFFFFFFF
        h = base.copy()
        h.update(tail_pack(ts, miner, k, nonce) + _SENTINEL_LSP_BYTES)
        d = h.digest()
        if thr is None or d < thr:
            return i + 1, nonce, d
    return max_loops, None, b""


def execute_loop(st: MinerState, loop: Loop, now_ms: int, coordinator: Coordinator, tau_matrix_ms: int,
                 tau_t_ms: int, tau_f_ms: int) -> LoopOutcome:
    """Run one loop to completion starting at ``now_ms``.

    Handy for stepping a single miner; the event engine splits task-involved
    loops into their compute and hash parts so a block can land in between.
    """
    if loop.kind == TASK_FREE:
        end = now_ms + tau_f_ms * st.ds.attempt_batch
        h, d, ok = hash_attempt(st, end, SENTINEL_LSP, st.ds.loop_probability(st.k_current, True))
        return LoopOutcome(end, h if ok else None, d, ok)
    a = loop.assignment
    out = None
    if a.result is None:
        out = compute_and_submit(st, a, coordinator)
        end = now_ms + tau_t_ms
    else:
        end = now_ms + tau_t_ms - tau_matrix_ms
    st.assigned.popleft()
    st.completed_this_height += 1
    h, d, ok = hash_attempt(st, end, lsp_for(a), st.p_eff)
    return LoopOutcome(end, h if ok else None, d, ok, out)
