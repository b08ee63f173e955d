"""Header format, per-miner difficulty scaling and window retargeting.

Difficulty is carried as an *ease*: ``p`` is the success probability of one
hash attempt, so a digest is valid when ``int(digest) < p * 2**256``. A miner
that claims ``k`` block products for a block time gets the scale factor
``s(k) = A(k) / A(0)``, where ``A(k)`` counts its hash attempts in one target
block time; its per-attempt ease is ``p_base / s``. With that choice
``p_eff(k) * A(k) == p_base * A(0)`` for every ``k``.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass, replace
from typing import Protocol

from .errors import NotFound

DIGEST_LEN = 32
ZERO_DIGEST = bytes(DIGEST_LEN)
EMPTY_PAYLOAD_DIGEST = hashlib.sha256(b"").digest()
HEADER_VERSION = 1
S_MIN = 0.01
RETARGET_CLAMP = 4.0
TWO_256 = 1 << 256

# version, prev, payload, height, timestamp_ms, miner, k, nonce | task, sub, nsub, nsub_digest, result_digest
_HEADER = struct.Struct(">I32s32sQQIIQQQQ32s32s")
HEADER_LEN = _HEADER.size
NONCE_OFFSET = 4 + 32 + 32 + 8 + 8 + 4 + 4
LSP_OFFSET = NONCE_OFFSET + 8

assert HEADER_LEN == 188


@dataclass(frozen=True, slots=True)
class LSPField:
    task_id: int = 0
    sub_id: int = 0
    nsub_id: int = 0
    nsub_digest: bytes = ZERO_DIGEST
    result_digest: bytes = ZERO_DIGEST

    def __post_init__(self):
        parts = (self.task_id, self.sub_id, self.nsub_id, any(self.nsub_digest), any(self.result_digest))
        if any(parts) and not all(parts):
            raise ValueError(f"LSP field must be all-zero or fully populated: {self}")

    @property
    def is_sentinel(self) -> bool:
        return self.task_id == 0 and self.sub_id == 0 and self.nsub_id == 0 and not any(self.result_digest)

    @property
    def ids(self) -> tuple[int, int, int]:
        return (self.task_id, self.sub_id, self.nsub_id)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "sub_id": self.sub_id,
            "nsub_id": self.nsub_id,
            "nsub_digest": self.nsub_digest.hex(),
            "result_digest": self.result_digest.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LSPField":
        return cls(
            int(d["task_id"]),
            int(d["sub_id"]),
            int(d["nsub_id"]),
            bytes.fromhex(d["nsub_digest"]),
            bytes.fromhex(d["result_digest"]),
        )


SENTINEL_LSP = LSPField()


@dataclass(frozen=True, slots=True)
class BlockHeader:
    version: int
    prev_digest: bytes
    payload_digest: bytes
    height: int
    timestamp_ms: int
    miner_id: int
    claimed_task_count: int
    nonce: int
    lsp: LSPField = SENTINEL_LSP

    @property
    def timestamp(self) -> float:
        return self.timestamp_ms / 1000.0

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "prev_digest": self.prev_digest.hex(),
            "payload_digest": self.payload_digest.hex(),
            "height": self.height,
            "timestamp_ms": self.timestamp_ms,
            "miner_id": self.miner_id,
            "claimed_task_count": self.claimed_task_count,
            "nonce": self.nonce,
            "lsp": self.lsp.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockHeader":
        return cls(
            int(d["version"]),
            bytes.fromhex(d["prev_digest"]),
            bytes.fromhex(d["payload_digest"]),
            int(d["height"]),
            int(d["timestamp_ms"]),
            int(d["miner_id"]),
            int(d["claimed_task_count"]),
            int(d["nonce"]),
            LSPField.from_dict(d["lsp"]),
        )


def genesis_header() -> BlockHeader:
    return BlockHeader(HEADER_VERSION, ZERO_DIGEST, EMPTY_PAYLOAD_DIGEST, 0, 0, 0xFFFFFFFF, 0, 0)


def serialize_header(h: BlockHeader) -> bytes:
    lsp = h.lsp
    return _HEADER.pack(
        h.version,
        h.prev_digest,
        h.payload_digest,
        h.height,
        h.timestamp_ms,
        h.miner_id,
        h.claimed_task_count,
        h.nonce,
        lsp.task_id,
        lsp.sub_id,
        lsp.nsub_id,
        lsp.nsub_digest,
        lsp.result_digest,
    )


def parse_header(data: bytes) -> BlockHeader:
    if len(data) != HEADER_LEN:
        raise ValueError(f"header must be {HEADER_LEN} bytes, got {len(data)}")
    v, prev, payload, height, ts, miner, k, nonce, t, s, n, nd, rd = _HEADER.unpack(data)
    return BlockHeader(v, prev, payload, height, ts, miner, k, nonce, LSPField(t, s, n, nd, rd))


def header_digest(h: BlockHeader) -> bytes:
    return hashlib.sha256(serialize_header(h)).digest()


def threshold(p: float) -> int:
    """Digest bound for per-attempt probability ``p``; digests strictly below it win."""
    if p <= 0:
        return 0
    if p >= 1:
        return TWO_256
    return int(p * TWO_256)


def threshold_bytes(p: float) -> bytes | None:
    """Big-endian 32-byte form of :func:`threshold` for fast ``digest < t`` tests; None means always valid."""
    t = threshold(p)
    return None if t >= TWO_256 else t.to_bytes(DIGEST_LEN, "big")


def attempt(h: BlockHeader, p_eff: float) -> tuple[bytes, bool]:
    digest = header_digest(h)
    return digest, int.from_bytes(digest, "big") < threshold(p_eff)


def k_limit(tau_t: float, block_time: float) -> int:
    """Most block products a miner can finish in one target block time."""
    return math.floor(block_time / tau_t + 1e-9)


def scale_factor(k: int, tau_f: float, tau_t: float, block_time: float, s_min: float = S_MIN) -> float:
    """``1 - k (tau_t - tau_f) / T_B``, floored at ``s_min``."""
    limit = k_limit(tau_t, block_time)
    if not 0 <= k <= limit:
        raise ValueError(f"claimed count {k} outside [0, {limit}]")
    if k == 0:
        return 1.0
    return max(s_min, 1.0 - k * (tau_t - tau_f) / block_time)


def effective_probability(p_base: float, s: float) -> float:
    if not 0 < s <= 1:
        raise ValueError(f"scale factor {s} outside (0, 1]")
    return min(1.0, p_base / s)


def batch_probability(p: float, m: int) -> float:
    """Chance that at least one of ``m`` independent attempts at ``p`` succeeds."""
    if m == 1 or p >= 1:
        return min(p, 1.0)
    return -math.expm1(m * math.log1p(-p))


def attempts_per_block_time(k: int, tau_f: float, tau_t: float, block_time: float) -> float:
    """``A(k)``: task-involved attempts plus the task-free ones that fit in the remainder."""
    return k + (block_time - k * tau_t) / tau_f


def retarget_ratio(actual_duration: float, window: int, block_time: float) -> float:
    if actual_duration <= 0:
        raise ValueError("window duration must be positive")
    return min(RETARGET_CLAMP, max(1.0 / RETARGET_CLAMP, actual_duration / (window * block_time)))


@dataclass(frozen=True)
class DifficultyState:
    """Difficulty in force for children of one block.

    ``window_index`` counts completed retarget windows; ``window_start_ms`` is
    the timestamp of the block that opened the current window. Time constants
    are seconds.
    """

    p_base: float
    block_time: float = 300.0
    window: int = 10
    window_start_ms: int = 0
    tau_f: float = 0.01
    tau_t: float = 0.48
    k_max: int = 600
    attempt_batch: int = 1
    window_index: int = 0

    def __post_init__(self):
        if not 0 < self.p_base <= 1:
            raise ValueError(f"p_base {self.p_base} outside (0, 1]")
        if not 0 < self.tau_f < self.tau_t:
            raise ValueError(f"need 0 < tau_f < tau_t, got {self.tau_f}, {self.tau_t}")
        if self.k_max > k_limit(self.tau_t, self.block_time):
            raise ValueError(f"k_max {self.k_max} exceeds floor(T_B / tau_t) = {k_limit(self.tau_t, self.block_time)}")
        if self.window < 1 or self.attempt_batch < 1:
            raise ValueError("window and attempt_batch must be >= 1")

    @property
    def window_start_time(self) -> float:
        return self.window_start_ms / 1000.0

    def scale(self, k: int) -> float:
        return scale_factor(k, self.tau_f, self.tau_t, self.block_time)

    def p_eff(self, k: int) -> float:
        return effective_probability(self.p_base, self.scale(k))

    def loop_probability(self, k: int, task_free: bool) -> float:
        """Per-loop success chance; a task-free loop bundles ``attempt_batch`` attempts."""
        p = self.p_eff(k)
        return batch_probability(p, self.attempt_batch) if task_free else p

    def after_block(self, height: int, timestamp_ms: int) -> "DifficultyState":
        """State for the children of the block at ``height``; retargets on window boundaries."""
        if height == 0 or height % self.window:
            return self
        duration = (timestamp_ms - self.window_start_ms) / 1000.0
        return replace(
            self,
            p_base=retarget(self, duration),
            window_start_ms=timestamp_ms,
            window_index=self.window_index + 1,
        )


def retarget(ds: DifficultyState, actual_window_duration: float) -> float:
    """Scale ``p_base`` by the clamped ratio of actual to target window duration."""
    return min(1.0, ds.p_base * retarget_ratio(actual_window_duration, ds.window, ds.block_time))


class Rejection(str, enum.Enum):
    BAD_LINKAGE = "bad-linkage"
    BAD_POW = "bad-pow"
    BAD_LSP = "bad-lsp"
    BAD_CLAIM = "bad-claim"


@dataclass(frozen=True)
class BlockVerdict:
    reason: Rejection | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.reason is None

    def __bool__(self) -> bool:
        return self.ok


ACCEPTED = BlockVerdict()


class CoordinatorView(Protocol):
    """Read-only questions a validator may ask the coordinator."""

    def lookup(self, ids: tuple[int, int, int]):  # -> ArchiveRecord
        ...

    def recorded_claim(self, miner_id: int, height: int) -> int:
        ...


def validate_block(
    h: BlockHeader,
    parent: BlockHeader,
    ds: DifficultyState,
    coordinator: CoordinatorView,
    parent_digest: bytes | None = None,
) -> BlockVerdict:
    """Check linkage, proof of work, the LSP commitment and the claimed count.

    ``ds`` is the difficulty state in force for children of ``parent``.
    """
    if parent_digest is None:
        parent_digest = header_digest(parent)
    if h.prev_digest != parent_digest:
        return BlockVerdict(Rejection.BAD_LINKAGE, "prev_digest does not name the parent")
    if h.height != parent.height + 1:
        return BlockVerdict(Rejection.BAD_LINKAGE, f"height {h.height} after parent height {parent.height}")
    if h.timestamp_ms <= parent.timestamp_ms:
        return BlockVerdict(Rejection.BAD_LINKAGE, f"timestamp {h.timestamp_ms} not after parent {parent.timestamp_ms}")

    k = h.claimed_task_count
    if k > ds.k_max:
        return BlockVerdict(Rejection.BAD_CLAIM, f"claimed {k} > k_max {ds.k_max}")
    task_free = h.lsp.is_sentinel
    if not task_free and k == 0:
        return BlockVerdict(Rejection.BAD_CLAIM, "task-involved block with zero claimed tasks")
    digest = header_digest(h)
    if int.from_bytes(digest, "big") >= threshold(ds.loop_probability(k, task_free)):
        return BlockVerdict(Rejection.BAD_POW, f"digest {digest.hex()[:16]}... above threshold for k={k}")

    if not task_free:
        try:
            rec = coordinator.lookup(h.lsp.ids)
        except NotFound:
            return BlockVerdict(Rejection.BAD_LSP, f"nsub {h.lsp.ids} unknown to coordinator")
        if rec.miner_id != h.miner_id or h.height not in rec.heights:
            return BlockVerdict(
                Rejection.BAD_LSP, f"nsub {h.lsp.ids} held by miner {rec.miner_id} at heights {list(rec.heights)}"
            )
        if rec.operand_digest != h.lsp.nsub_digest:
            return BlockVerdict(Rejection.BAD_LSP, f"nsub {h.lsp.ids} operand digest mismatch")
        if rec.result_digest != h.lsp.result_digest:
            return BlockVerdict(Rejection.BAD_LSP, f"nsub {h.lsp.ids} result digest differs from verified result")

    try:
        recorded = coordinator.recorded_claim(h.miner_id, h.height)
    except NotFound:
        return BlockVerdict(Rejection.BAD_CLAIM, f"no claim recorded for miner {h.miner_id} at height {h.height}")
    if recorded != k:
        return BlockVerdict(Rejection.BAD_CLAIM, f"header claims {k}, coordinator recorded {recorded}")
    return ACCEPTED
