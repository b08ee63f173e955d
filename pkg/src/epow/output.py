"""Result files: CSV tables, the chain dump, and re-validation of a dump."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .consensus import BlockHeader, BlockVerdict
from .coordinator import ArchiveRecord, ArchiveView
from .errors import EPowError
from .simnet import ChainStore, MetricsReport, ScenarioConfig, Simulation

BLOCKS_HEADER = ("height", "miner_id", "block_time_s")
TASKS_HEADER = ("height", "miner_id", "cumulative_cp")
EFFICIENCY_HEADER = ("miner_id", "network_type", "miner_count", "efficiency")
RETARGET_HEADER = ("window_index", "height", "timestamp_s", "duration_s", "ratio", "p_before", "p_after")


class DumpError(EPowError):
    """A chain dump that cannot be parsed; ``offset`` is a byte offset when known."""

    def __init__(self, msg: str, offset: int | None = None):
        super().__init__(msg if offset is None else f"{msg} (byte offset {offset})")
        self.offset = offset


def _secs(ms: int) -> str:
    return f"{ms / 1000:.3f}"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def blocks_csv(rep: MetricsReport) -> str:
    prev = 0
    rows = []
    for r in rep.blocks:
        rows.append((r.height, r.miner_id, _secs(r.timestamp_ms - prev)))
        prev = r.timestamp_ms
    return csv_text(BLOCKS_HEADER, rows)


def tasks_csv(rep: MetricsReport) -> str:
    return csv_text(TASKS_HEADER, [(r.height, r.miner_id, r.cumulative_cp) for r in rep.tasks])


def efficiency_csv(rep: MetricsReport) -> str:
    return csv_text(
        EFFICIENCY_HEADER,
        [(r.miner_id, r.network_type, r.miner_count, f"{r.efficiency:.6f}") for r in rep.efficiency],
    )


def retarget_csv(rep: MetricsReport) -> str:
    return csv_text(
        RETARGET_HEADER,
        [
            (r.window_index, r.height, _secs(r.timestamp_ms), f"{r.duration_s:.3f}", repr(r.ratio), repr(r.p_before),
             repr(r.p_after))
            for r in rep.retarget
        ],
    )


def chain_dump(sim: Simulation) -> dict:
    """Everything needed to re-validate the stored blocks offline."""
    store, coord = sim.store, sim.coordinator
    blocks = [b for b in sorted(store.blocks.values(), key=lambda b: b.order) if b.digest != store.genesis]
    lsp_ids = sorted({b.header.lsp.ids for b in blocks if not b.header.lsp.is_sentinel}
                     | {h.lsp.ids for h, _ in store.rejected if not h.lsp.is_sentinel})
    archive = []
    for ids in lsp_ids:
        try:
            archive.append(coord.history(ids).to_dict())
        except KeyError:
            pass  # cheating block whose result was never verified
    return {
        "config": sim.cfg.to_dict(),
        "genesis": store.genesis.hex(),
        "head": store.head.hex(),
        "head_height": store.head_block.height,
        "end_ms": sim.end_ms,
        "blocks": [{"digest": b.digest.hex(), "header": b.header.to_dict()} for b in blocks],
        "rejected": [{"header": h.to_dict(), "reason": v.reason.value, "detail": v.detail} for h, v in store.rejected],
        "archive": archive,
        "claims": [[m, h, k] for (m, h), k in sorted(coord.claims.items())],
        "ledger": coord.ledger_dict(),
        "tasks_completed": len(coord.completed),
        "nsubs_enqueued": coord.enqueued_total,
    }


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- inspection ----------------------------------------------------------------


@dataclass
class ChainDump:
    config: ScenarioConfig
    blocks: list[tuple[str, BlockHeader]]
    archive: list[ArchiveRecord]
    claims: dict[tuple[int, int], int]
    ledger: dict
    tasks_completed: int
    head: str


def parse_chain(raw: bytes) -> ChainDump:
    text = raw.decode("utf-8", errors="strict") if isinstance(raw, bytes) else raw
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise DumpError(f"malformed JSON: {e.msg}", len(text[: e.pos].encode())) from None
    if not isinstance(d, dict):
        raise DumpError("top level is not an object", 0)
    where = "config"
    try:
        cfg = ScenarioConfig.from_dict(d["config"])
        blocks = []
        for i, b in enumerate(d["blocks"]):
            where = f"blocks[{i}]"
            blocks.append((b["digest"], BlockHeader.from_dict(b["header"])))
        archive = []
        for i, r in enumerate(d["archive"]):
            where = f"archive[{i}]"
            archive.append(ArchiveRecord.from_dict(r))
        where = "claims"
        claims = {(int(m), int(h)): int(k) for m, h, k in d["claims"]}
        where = "ledger"
        return ChainDump(cfg, blocks, archive, claims, dict(d.get("ledger", {})), int(d.get("tasks_completed", 0)),
                         d.get("head", ""))
    except (KeyError, TypeError, ValueError) as e:
        key = f'"{where.split("[")[0]}"'
        raise DumpError(f"invalid {where}: {e!r}", _offset_of(text, key)) from None


def _offset_of(text: str, needle: str) -> int | None:
    i = text.find(needle)
    return None if i < 0 else len(text[:i].encode())


@dataclass
class InspectReport:
    stored: int
    head_height: int
    head_digest: str
    stale: int
    fork_points: int
    wins: dict[int, int]
    lsp_blocks: int
    lsp_blocks_head: int
    ledger_verified: int
    ledger_rejected: int
    tasks_completed: int
    failures: list[str] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"blocks stored: {self.stored}",
            f"head: height {self.head_height} digest {self.head_digest}",
            f"stale blocks: {self.stale}  fork points: {self.fork_points}",
            "wins on head chain: " + ", ".join(f"miner {m}: {n}" for m, n in sorted(self.wins.items())),
            f"LSP blocks: {self.lsp_blocks} stored, {self.lsp_blocks_head} on head chain",
            f"coordinator: {self.ledger_verified} verified, {self.ledger_rejected} rejected, "
            f"{self.tasks_completed} tasks completed",
            f"verdict failures: {len(self.failures)}",
        ]
        out.extend(f"  {f}" for f in self.failures)
        return out


def inspect_chain(dump: ChainDump) -> InspectReport:
    """Re-insert every stored block into a fresh store, validating against the archived records."""
    view = ArchiveView(dump.archive, dump.claims)
    store = ChainStore(dump.config.difficulty())
    failures = []
    for listed, h in dump.blocks:
        digest, verdict = store.insert(h, view)
        if digest.hex() != listed:
            failures.append(f"height {h.height} {listed[:16]}: listed digest differs from header digest {digest.hex()[:16]}")
        if not verdict:
            failures.append(f"height {h.height} {digest.hex()[:16]}: {_describe(verdict)}")
    head = store.chain()
    fork_points = sum(1 for kids in store.children.values() if len(kids) > 1)
    wins = Counter(b.header.miner_id for b in head[1:])
    for m in range(dump.config.miner_count):
        wins.setdefault(m, 0)
    return InspectReport(
        stored=len(store.blocks) - 1,
        head_height=store.head_block.height,
        head_digest=store.head.hex(),
        stale=len(store.blocks) - len(head),
        fork_points=fork_points,
        wins=dict(wins),
        lsp_blocks=sum(1 for _, h in dump.blocks if not h.lsp.is_sentinel),
        lsp_blocks_head=sum(1 for b in head[1:] if not b.header.lsp.is_sentinel),
        ledger_verified=sum(int(e.get("verified_count", 0)) for e in dump.ledger.values()),
        ledger_rejected=sum(int(e.get("rejected_count", 0)) for e in dump.ledger.values()),
        tasks_completed=dump.tasks_completed,
        failures=failures,
    )


def _describe(v: BlockVerdict) -> str:
    return f"{v.reason.value}: {v.detail}"
