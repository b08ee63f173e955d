"""Honest coordinator: task intake, FIFO assignment, verification, archive.

The coordinator is a single-writer state machine. Miners call :meth:`claim`
at the start of each height and :meth:`submit_result` after every block
product; validators only use the read-only :meth:`lookup` and
:meth:`recorded_claim`.
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ClaimError, NotFound, SubmissionError
from .matrix import Matrix
from .tasks import (
    Ids,
    MMCTask,
    NSubResult,
    NSubTask,
    PlannedSubTask,
    SubTask,
    accumulate,
    divide_into_subtasks,
    materialize,
    partition,
)
from .verify import SPOT, Verdict, get_verifier

log = logging.getLogger(__name__)

BAN_HEIGHTS = 2  # banned_until = penalty height + 2, i.e. exactly the next block time


class Status(str, enum.Enum):
    PENDING = "pending"
    SUBMITTED = "submitted"
    VERIFIED = "verified"
    REJECTED = "rejected"
    REASSIGNED = "reassigned"


@dataclass(slots=True)
class AssignmentRecord:
    ids: Ids
    miner_id: int
    height_issued: int
    status: Status = Status.PENDING
    heights: list[int] = field(default_factory=list)


@dataclass
class LedgerEntry:
    verified_count: int = 0
    rejected_count: int = 0
    reward_units: int = 0
    banned_until_height: int | None = None

    def banned_at(self, height: int) -> bool:
        return self.banned_until_height is not None and height < self.banned_until_height


@dataclass(frozen=True, slots=True)
class ArchiveRecord:
    ids: Ids
    operand_digest: bytes
    result_digest: bytes
    miner_id: int
    heights: tuple[int, ...]
    height: int
    recorded_claim: int

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "operand_digest": self.operand_digest.hex(),
            "result_digest": self.result_digest.hex(),
            "miner_id": self.miner_id,
            "heights": list(self.heights),
            "height": self.height,
            "recorded_claim": self.recorded_claim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchiveRecord":
        return cls(
            tuple(d["ids"]),
            bytes.fromhex(d["operand_digest"]),
            bytes.fromhex(d["result_digest"]),
            int(d["miner_id"]),
            tuple(d["heights"]),
            int(d["height"]),
            int(d["recorded_claim"]),
        )


@dataclass(frozen=True)
class SubmitOutcome:
    verdict: Verdict
    reward_units: int
    requeued: tuple[Ids, ...] = ()
    completed: tuple[int, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.verdict.accepted


@dataclass(frozen=True)
class CompletedTask:
    task_id: int
    source_id: int
    digest: bytes
    result: Matrix | None


@dataclass(eq=False)
class _TaskState:
    task: MMCTask
    plan: list[PlannedSubTask]
    sub: SubTask
    nsubs: dict[int, NSubTask]
    results: dict[int, NSubResult] = field(default_factory=dict)


class Coordinator:
    """Normalizes tasks, hands out block products and checks what comes back.

    ``feed`` (optional) is called as ``feed(coordinator, shortfall)`` when a
    claim asks for more work than is queued; it is how the simulator keeps the
    queue stocked. ``on_complete`` receives each finished task.
    """

    def __init__(
        self,
        b: int,
        verifier: str = SPOT,
        rounds: int = 3,
        rng: np.random.Generator | None = None,
        retention: int = 20,
        tol: float = 0.0,
        feed: Callable[["Coordinator", int], None] | None = None,
        on_complete: Callable[[CompletedTask], None] | None = None,
        keep_results: bool = True,
    ):
        self.b = b
        self.verifier_name = verifier
        self._verify = get_verifier(verifier)
        self.rounds = rounds
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.retention = retention
        self.tol = tol
        self.feed = feed
        self.on_complete = on_complete
        self.keep_results = keep_results

        self.queue: deque[NSubTask] = deque()
        self.tasks: dict[int, _TaskState] = {}
        self.completed: dict[int, CompletedTask] = {}
        self.records: dict[Ids, list[AssignmentRecord]] = {}
        self.claims: dict[tuple[int, int], int] = {}
        self.ledger: dict[int, LedgerEntry] = {}
        self.current_height = 0
        self._next_task_id = 1
        self._outstanding: dict[int, dict[Ids, AssignmentRecord]] = {}
        self._miner_height: dict[int, int] = {}
        self._history: dict[Ids, ArchiveRecord] = {}
        self._products: dict[Ids, Matrix] = {}
        self._product_heights: dict[int, list[Ids]] = {}
        self._enqueued = 0

    # -- intake -----------------------------------------------------------

    def ingest_task(self, chain: Sequence[Matrix], source_id: int = 0) -> int:
        task = MMCTask(self._next_task_id, tuple(chain), source_id)
        self._next_task_id += 1
        plan = divide_into_subtasks(task)
        sub = materialize(plan[0], self.b)
        state = _TaskState(task, plan, sub, {})
        self.tasks[task.task_id] = state
        self._enqueue(state, sub)
        return task.task_id

    def _enqueue(self, state: _TaskState, sub: SubTask) -> None:
        state.sub = sub
        state.results = {}
        nsubs = partition(sub)
        state.nsubs = {n.nsub_id: n for n in nsubs}
        self.queue.extend(nsubs)
        self._enqueued += len(nsubs)

    # -- assignment -------------------------------------------------------

    def entry(self, miner_id: int) -> LedgerEntry:
        e = self.ledger.get(miner_id)
        if e is None:
            e = self.ledger[miner_id] = LedgerEntry()
        return e

    def claim(self, miner_id: int, height: int, count: int, carried: Iterable[Ids] = ()) -> list[NSubTask]:
        """Hand out up to ``count`` queued block products and record the miner's claim.

        ``carried`` lists assignments the miner brings over from earlier
        heights; they count towards the recorded claim without new issue.
        """
        if count < 0:
            raise ClaimError(f"negative claim {count}")
        key = (miner_id, height)
        if key in self.claims:
            raise ClaimError(f"miner {miner_id} already claimed at height {height}")
        self._miner_height[miner_id] = height
        outstanding = self._outstanding.setdefault(miner_id, {})
        n_carried = 0
        for ids in carried:
            rec = outstanding.get(ids)
            if rec is None:
                # submitted before a block interrupted the loop: only the hash part remains
                rec = self.records.get(ids, [None])[-1]
                if rec is None or rec.miner_id != miner_id or rec.status is not Status.VERIFIED:
                    raise ClaimError(f"miner {miner_id} carries {ids} which it does not hold")
                rec.heights.append(height)
                self._history[ids] = replace(self._history[ids], heights=tuple(rec.heights))
            else:
                rec.heights.append(height)
            n_carried += 1

        got: list[NSubTask] = []
        if count and not self.entry(miner_id).banned_at(height):
            if self.feed is not None and len(self.queue) < count:
                self.feed(self, count - len(self.queue))
            q = self.queue
            while q and len(got) < count:
                nst = q.popleft()
                rec = AssignmentRecord(nst.ids, miner_id, height, Status.PENDING, [height])
                self.records.setdefault(nst.ids, []).append(rec)
                outstanding[nst.ids] = rec
                got.append(nst)
        self.claims[key] = n_carried + len(got)
        return got

    def nsub(self, ids: Ids) -> NSubTask:
        state = self.tasks.get(ids[0])
        if state is None or state.sub.sub_id != ids[1] or ids[2] not in state.nsubs:
            raise NotFound(f"no live nsub-task {ids}")
        return state.nsubs[ids[2]]

    def record(self, ids: Ids) -> AssignmentRecord:
        try:
            return self.records[ids][-1]
        except KeyError:
            raise NotFound(f"nsub {ids} was never assigned") from None

    # -- results ----------------------------------------------------------

    def submit_result(self, miner_id: int, res: NSubResult) -> SubmitOutcome:
        ids = res.ids
        rec = self._outstanding.get(miner_id, {}).get(ids)
        if rec is None:
            history = self.records.get(ids)
            if history and any(r.miner_id == miner_id for r in history):
                raise SubmissionError(f"miner {miner_id} already has a verdict for {ids}")
            raise SubmissionError(f"miner {miner_id} holds no assignment {ids}")
        if rec.status is not Status.PENDING:
            raise SubmissionError(f"assignment {ids} is {rec.status.value}")
        rec.status = Status.SUBMITTED
        nst = self.tasks[ids[0]].nsubs[ids[2]]
        verdict = self._verify(nst, res, self.rounds, self.rng, self.tol)
        entry = self.entry(miner_id)
        outstanding = self._outstanding[miner_id]
        del outstanding[ids]

        if verdict.accepted:
            rec.status = Status.VERIFIED
            entry.verified_count += 1
            entry.reward_units += 1
            height = self._miner_height.get(miner_id, rec.height_issued)
            self._history[ids] = ArchiveRecord(
                ids,
                nst.operand_digest,
                res.result_digest,
                miner_id,
                tuple(rec.heights),
                height,
                self.claims.get((miner_id, height), 0),
            )
            self._products[ids] = res.product
            self._product_heights.setdefault(height, []).append(ids)
            state = self.tasks[ids[0]]
            state.results[ids[2]] = res
            done = self.advance(ids[0])
            return SubmitOutcome(verdict, 1, (), (done[0],) if done else ())

        rec.status = Status.REJECTED
        entry.rejected_count += 1
        height = self._miner_height.get(miner_id, rec.height_issued)
        entry.banned_until_height = height + BAN_HEIGHTS
        requeue = [nst]
        requeued = [ids]
        for other_ids, other in list(outstanding.items()):
            other.status = Status.REASSIGNED
            requeue.append(self.tasks[other_ids[0]].nsubs[other_ids[2]])
            requeued.append(other_ids)
        outstanding.clear()
        self.queue.extendleft(reversed(requeue))
        log.debug("miner %d penalized at height %d: %s; %d requeued", miner_id, height, verdict.detail, len(requeue))
        return SubmitOutcome(verdict, 0, tuple(requeued))

    def advance(self, task_id: int) -> tuple[int, Matrix] | None:
        """Merge a finished sub-task and queue the next one, or emit the task result."""
        state = self.tasks.get(task_id)
        if state is None or len(state.results) < state.sub.nsub_count:
            return None
        merged = accumulate(state.sub, state.results)
        nxt = state.sub.sub_id  # plan index of the following sub-task
        if nxt < len(state.plan):
            self._enqueue(state, materialize(state.plan[nxt], self.b, merged))
            return None
        del self.tasks[task_id]
        done = CompletedTask(task_id, state.task.source_id, merged.digest(), merged if self.keep_results else None)
        self.completed[task_id] = done
        if self.on_complete is not None:
            self.on_complete(done)
        return task_id, merged

    # -- validator interface ------------------------------------------------

    def set_height(self, height: int) -> None:
        """Advance the retention clock and drop result matrices that fell out of it."""
        if height <= self.current_height:
            return
        self.current_height = height
        horizon = height - self.retention
        for h in [h for h in self._product_heights if h < horizon]:
            for ids in self._product_heights.pop(h):
                self._products.pop(ids, None)

    def lookup(self, ids: Ids) -> ArchiveRecord:
        rec = self._history.get(tuple(ids))
        if rec is None or rec.height < self.current_height - self.retention:
            raise NotFound(f"nsub {tuple(ids)} not in archive")
        return rec

    def archived_product(self, ids: Ids) -> Matrix:
        self.lookup(ids)
        try:
            return self._products[tuple(ids)]
        except KeyError:
            raise NotFound(f"result matrix for {tuple(ids)} expired") from None

    def recorded_claim(self, miner_id: int, height: int) -> int:
        try:
            return self.claims[(miner_id, height)]
        except KeyError:
            raise NotFound(f"no claim for miner {miner_id} at height {height}") from None

    # -- reporting ----------------------------------------------------------

    @property
    def archive_size(self) -> int:
        return len(self._history)

    @property
    def enqueued_total(self) -> int:
        return self._enqueued

    def archived_ids(self) -> list[Ids]:
        return sorted(self._history)

    def history(self, ids: Ids) -> ArchiveRecord:
        """Archive entry regardless of retention (for dumps)."""
        return self._history[tuple(ids)]

    def ledger_dict(self) -> dict:
        return {
            str(m): {
                "verified_count": e.verified_count,
                "rejected_count": e.rejected_count,
                "reward_units": e.reward_units,
                "banned_until_height": e.banned_until_height,
            }
            for m, e in sorted(self.ledger.items())
        }


class ArchiveView:
    """Validator-side view rebuilt from a dump (no retention limit)."""

    def __init__(self, records: Iterable[ArchiveRecord], claims: dict[tuple[int, int], int]):
        self._records = {r.ids: r for r in records}
        self._claims = dict(claims)

    def lookup(self, ids: Ids) -> ArchiveRecord:
        try:
            return self._records[tuple(ids)]
        except KeyError:
            raise NotFound(f"nsub {tuple(ids)} not in archive dump") from None

    def recorded_claim(self, miner_id: int, height: int) -> int:
        try:
            return self._claims[(miner_id, height)]
        except KeyError:
            raise NotFound(f"no claim for miner {miner_id} at height {height}") from None
