"""Normalization of matrix-chain tasks into fixed-size block products.

A chain ``M1 @ M2 @ ... @ Mr`` becomes ``r - 1`` sequential sub-tasks; each
sub-task is zero-padded up to multiples of the basic size ``b`` and cut into
``b x b`` block products (nsub-tasks). The k-summation across inner blocks is
done by :func:`accumulate`, so every nsub-task is the same pure ``b x b``
product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionError, IncompleteError
from .matrix import Matrix, digest_pair, multiply

Ids = tuple[int, int, int]


def _round_up(x: int, b: int) -> int:
    return -(-x // b) * b


@dataclass(frozen=True)
class MMCTask:
    task_id: int
    chain: tuple[Matrix, ...]
    source_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        if len(self.chain) < 2:
            raise DimensionError(f"task {self.task_id}: chain needs at least 2 matrices, got {len(self.chain)}")
        for i, (x, y) in enumerate(zip(self.chain, self.chain[1:])):
            if x.cols != y.rows:
                raise DimensionError(
                    f"task {self.task_id}: chain[{i}] is {x.rows}x{x.cols} but chain[{i + 1}] is {y.rows}x{y.cols}"
                )


@dataclass(frozen=True)
class PlannedSubTask:
    """Plan entry; ``left`` is only known up front for the first sub-task."""

    task_id: int
    sub_id: int
    right: Matrix
    left: Matrix | None = None


@dataclass(frozen=True, eq=False)
class SubTask:
    task_id: int
    sub_id: int
    left: Matrix
    right: Matrix
    b: int
    left_exp: Matrix = field(repr=False)
    right_exp: Matrix = field(repr=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.left.rows, self.left.cols, self.right.cols

    @property
    def expanded_dims(self) -> tuple[int, int, int]:
        return self.left_exp.rows, self.left_exp.cols, self.right_exp.cols

    @property
    def block_grid(self) -> tuple[int, int, int]:
        m_, n_, p_ = self.expanded_dims
        return m_ // self.b, n_ // self.b, p_ // self.b

    @property
    def nsub_count(self) -> int:
        gi, gk, gj = self.block_grid
        return gi * gk * gj

    def nsub_id(self, i: int, k: int, j: int) -> int:
        _, gk, gj = self.block_grid
        return 1 + i * gk * gj + k * gj + j

    def coords(self, nsub_id: int) -> tuple[int, int, int]:
        _, gk, gj = self.block_grid
        i, rest = divmod(nsub_id - 1, gk * gj)
        k, j = divmod(rest, gj)
        return i, k, j


@dataclass(frozen=True, eq=False, slots=True)
class NSubTask:
    task_id: int
    sub_id: int
    nsub_id: int
    block_coords: tuple[int, int, int]
    a_block: Matrix = field(repr=False)
    b_block: Matrix = field(repr=False)
    b: int
    operand_digest: bytes = field(repr=False)

    @property
    def ids(self) -> Ids:
        return (self.task_id, self.sub_id, self.nsub_id)


@dataclass(frozen=True, eq=False, slots=True)
class NSubResult:
    task_id: int
    sub_id: int
    nsub_id: int
    product: Matrix = field(repr=False)
    miner_id: int
    result_digest: bytes = field(repr=False)

    @property
    def ids(self) -> Ids:
        return (self.task_id, self.sub_id, self.nsub_id)

    @classmethod
    def of(cls, nst: NSubTask, product: Matrix, miner_id: int) -> "NSubResult":
        return cls(nst.task_id, nst.sub_id, nst.nsub_id, product, miner_id, product.digest())


def divide_into_subtasks(task: MMCTask) -> list[PlannedSubTask]:
    """One plan entry per adjacent pair; entry ``s`` consumes the result of ``s - 1``."""
    plan = []
    for s, right in enumerate(task.chain[1:], start=1):
        plan.append(PlannedSubTask(task.task_id, s, right, task.chain[0] if s == 1 else None))
    return plan


def expand_pair(left: Matrix, right: Matrix, b: int) -> tuple[Matrix, Matrix]:
    """Zero-pad both operands up to the least multiples of ``b``.

    The top-left ``m x p`` block of the padded product equals ``left @ right``.
    """
    if left.cols != right.rows:
        raise DimensionError(f"cannot pair {left.rows}x{left.cols} with {right.rows}x{right.cols}")
    if b < 1:
        raise ValueError(f"basic size must be >= 1, got {b}")
    m, n = left.shape
    p = right.cols
    m_, n_, p_ = _round_up(m, b), _round_up(n, b), _round_up(p, b)
    if (m_, n_, p_) == (m, n, p):
        return left, right
    le = np.zeros((m_, n_))
    le[:m, :n] = left.array
    re = np.zeros((n_, p_))
    re[:n, :p] = right.array
    return Matrix.wrap(le), Matrix.wrap(re)


def materialize(planned: PlannedSubTask, b: int, left: Matrix | None = None) -> SubTask:
    left = planned.left if left is None else left
    if left is None:
        raise ValueError(f"sub-task {planned.sub_id} needs the result of sub-task {planned.sub_id - 1}")
    le, re = expand_pair(left, planned.right, b)
    return SubTask(planned.task_id, planned.sub_id, left, planned.right, b, le, re)


def partition(sub: SubTask, b: int | None = None) -> list[NSubTask]:
    """All ``(i, k, j)`` block products of an expanded sub-task, row-major over ``(i, k, j)``."""
    b = sub.b if b is None else b
    if b != sub.b:
        raise ValueError(f"sub-task was expanded for b={sub.b}, asked to partition with b={b}")
    gi, gk, gj = sub.block_grid
    la, ra = sub.left_exp.array, sub.right_exp.array
    a_blocks = [[Matrix.wrap(la[i * b:(i + 1) * b, k * b:(k + 1) * b]) for k in range(gk)] for i in range(gi)]
    b_blocks = [[Matrix.wrap(ra[k * b:(k + 1) * b, j * b:(j + 1) * b]) for j in range(gj)] for k in range(gk)]
    out = []
    nid = 1
    for i in range(gi):
        for k in range(gk):
            for j in range(gj):
                ab, bb = a_blocks[i][k], b_blocks[k][j]
                out.append(NSubTask(sub.task_id, sub.sub_id, nid, (i, k, j), ab, bb, b, digest_pair(ab, bb)))
                nid += 1
    return out


def compute_nsubtask(nst: NSubTask, miner_id: int = 0) -> NSubResult:
    return NSubResult.of(nst, multiply(nst.a_block, nst.b_block), miner_id)


def accumulate(sub: SubTask, results: Mapping[int, NSubResult] | Iterable[NSubResult]) -> Matrix:
    """Sum partial products over the inner block index and crop to ``m x p``.

    ``results`` may be keyed by nsub id or be a plain iterable of results.
    """
    if not isinstance(results, Mapping):
        results = {r.nsub_id: r for r in results}
    missing = [(sub.task_id, sub.sub_id, n) for n in range(1, sub.nsub_count + 1) if n not in results]
    if missing:
        raise IncompleteError(missing)
    b = sub.b
    gi, gk, gj = sub.block_grid
    out = np.zeros((gi * b, gj * b))
    for i in range(gi):
        for j in range(gj):
            acc = out[i * b:(i + 1) * b, j * b:(j + 1) * b]
            for k in range(gk):
                acc += results[sub.nsub_id(i, k, j)].product.array
    m, _, p = sub.dims
    return Matrix.wrap(np.ascontiguousarray(out[:m, :p]))


def run_local(task: MMCTask, b: int) -> Matrix:
    """Drive the whole pipeline in-process; the coordinator does the same across miners."""
    left = None
    for planned in divide_into_subtasks(task):
        sub = materialize(planned, b, left)
        left = accumulate(sub, [compute_nsubtask(n) for n in partition(sub)])
    return left


def nsub_record(nst: NSubTask, res: NSubResult | None = None) -> dict:
    """One line of the task dump."""
    rec = {
        "task_id": nst.task_id,
        "sub_id": nst.sub_id,
        "nsub_id": nst.nsub_id,
        "coords": list(nst.block_coords),
        "b": nst.b,
        "operand_digest": nst.operand_digest.hex(),
        "result_digest": None,
    }
    if res is not None:
        rec["result_digest"] = res.result_digest.hex()
        rec["miner_id"] = res.miner_id
    return rec
