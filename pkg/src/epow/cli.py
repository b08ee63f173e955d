"""Command line: ``epow run``, ``epow sweep`` and ``epow inspect``.

Exit codes: 0 success, 1 runtime or I/O failure (or verdict failures found
by ``inspect``), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .output import (
    DumpError,
    blocks_csv,
    chain_dump,
    csv_text,
    digest_text,
    dumps_json,
    efficiency_csv,
    file_digest,
    inspect_chain,
    parse_chain,
    retarget_csv,
    tasks_csv,
)
from .simnet import PAPER_REPLICA, ScenarioConfig, Simulation, normalize_type

RUN_FILES = ("blocks.csv", "tasks.csv", "efficiency.csv", "retarget.csv", "chain.json")
FIGURES = {
    "4": {"types": ("I", "II", "III", "IV"), "counts": (5,)},
    "5": {"types": ("II", "III", "IV"), "counts": (2, 3, 4, 5)},
    "6": {"types": ("I", "II", "III", "IV"), "counts": (2, 3, 4, 5)},
}


class UsageError(Exception):
    pass


# -- configuration -------------------------------------------------------------


def build_config(args: argparse.Namespace) -> ScenarioConfig:
    """Defaults, then the replica preset, then the config file, then flags."""
    values: dict = {}
    if getattr(args, "paper_replica", False):
        values.update(PAPER_REPLICA)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed JSON at byte offset {e.pos}: {e.msg}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        values.update(loaded)
    flags = {
        "network_type": getattr(args, "scenario", None),
        "miner_count": getattr(args, "miners", None),
        "target_height": getattr(args, "blocks", None),
        "seed": resolve_seed(getattr(args, "seed", None)),
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    return ScenarioConfig.from_dict(values).validate()


def resolve_seed(flag: int | None) -> int | None:
    env = os.environ.get("EPOW_SEED")
    if env is None or env.strip() == "":
        return flag
    try:
        return int(env, 0)
    except ValueError:
        raise ConfigError(f"EPOW_SEED={env!r} is not an integer") from None


def seed_list(base: int, count: int) -> list[int]:
    if count < 1:
        raise UsageError("--seeds must be >= 1")
    return [base + i for i in range(count)]


# -- run ---------------------------------------------------------------------------


def run_one(cfg: ScenarioConfig, outdir: Path | None = None, dump_tasks: bool = False, event_log: bool = False):
    """Run one seed; returns ``(report, {file name: text})`` and writes the files if ``outdir`` is given."""
    sim = Simulation(cfg, event_log=event_log)
    rep = sim.run()
    files = {
        "blocks.csv": blocks_csv(rep),
        "tasks.csv": tasks_csv(rep),
        "efficiency.csv": efficiency_csv(rep),
        "retarget.csv": retarget_csv(rep),
        "chain.json": dumps_json(chain_dump(sim)),
    }
    if dump_tasks:
        coord = sim.coordinator
        lines = [json.dumps(coord.history(ids).to_dict(), sort_keys=True) for ids in coord.archived_ids()]
        files["nsubs.ndjson"] = "".join(line + "\n" for line in lines)
    if event_log:
        files["events.ndjson"] = "".join(json.dumps(r, sort_keys=True) + "\n" for r in sim.log)
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            with open(outdir / name, "w", newline="") as fh:
                fh.write(text)
    return rep, files


def cmd_run(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    seeds = seed_list(cfg.seed, args.seeds)
    out = Path(args.out)
    runs = []
    for s in seeds:
        sub = out if len(seeds) == 1 else out / f"seed_{s}"
        rep, files = run_one(replace(cfg, seed=s), sub, args.dump_tasks, args.event_log)
        rel = sub.relative_to(out).as_posix() if sub != out else "."
        runs.append({"seed": s, "dir": rel, "files": {n: digest_text(t) for n, t in sorted(files.items())}})
        effs = ", ".join(f"{e.efficiency:.3f}" for e in rep.efficiency)
        print(f"seed {s}: height {rep.blocks[-1].height if rep.blocks else 0}, end {rep.end_s:.1f}s, "
              f"mean block time {rep.mean_block_time():.1f}s, efficiency [{effs}]"
              + ("" if rep.complete else " (stopped at time limit)"))
    manifest = {
        "tool": "epow",
        "version": __version__,
        "config": {k: v for k, v in cfg.to_dict().items() if k != "seed"},
        "seeds": seeds,
        "out": str(out),
        "runs": runs,
    }
    (out / "manifest.json").write_text(dumps_json(manifest))
    print(f"wrote {out / 'manifest.json'}")
    return 0


# -- sweep ---------------------------------------------------------------------------


def cmd_sweep(args: argparse.Namespace) -> int:
    base = build_config(args)
    fig = FIGURES[args.figure]
    seeds = seed_list(base.seed, args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in fig["types"]:
        for n in fig["counts"]:
            reps = []
            for s in seeds:
                cfg = replace(base, network_type=t, miner_count=n, seed=s, k_policies=None).validate()
                reps.append(Simulation(cfg).run())
            rows.extend(_figure_rows(args.figure, t, n, reps))
            print(f"figure {args.figure}: type {t}, {n} miners, {len(seeds)} seed(s) done")
    header = {
        "4": ("network_type", "miner_count", "height", "block_time_s", "seeds"),
        "5": ("network_type", "miner_count", "height", "cumulative_cp", "seeds"),
        "6": ("network_type", "miner_count", "efficiency", "efficiency_min", "efficiency_max", "seeds"),
    }[args.figure]
    path = out / f"fig{args.figure}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows))
    print(f"wrote {path}")
    return 0


def _figure_rows(figure: str, t: str, n: int, reps) -> list[tuple]:
    k = len(reps)
    if figure == "6":
        effs = [e.efficiency for r in reps for e in r.efficiency]
        return [(t, n, f"{statistics.fmean(effs):.6f}", f"{min(effs):.6f}", f"{max(effs):.6f}", k)]
    per_height = defaultdict(list)
    for r in reps:
        if figure == "4":
            for b in r.blocks:
                per_height[b.height].append(b.block_time_s)
        else:
            totals = defaultdict(int)
            for row in r.tasks:
                totals[row.height] += row.cumulative_cp
            for h, v in totals.items():
                per_height[h].append(v)
    if figure == "4":
        return [(t, n, h, f"{statistics.fmean(v):.3f}", len(v)) for h, v in sorted(per_height.items())]
    # cumulative CP: mean over seeds, kept integral so series stay monotone
    return [(t, n, h, sum(v) // len(v), len(v)) for h, v in sorted(per_height.items())]


# -- inspect ---------------------------------------------------------------------------


def cmd_inspect(args: argparse.Namespace) -> int:
    failures = 0
    if args.manifest:
        mpath = Path(args.manifest)
        try:
            manifest = json.loads(mpath.read_bytes())
        except json.JSONDecodeError as e:
            raise DumpError(f"{mpath}: malformed JSON: {e.msg}", e.pos) from None
        chains = []
        for run in manifest.get("runs", []):
            d = mpath.parent / run.get("dir", ".")
            for name, want in sorted(run.get("files", {}).items()):
                p = d / name
                got = file_digest(p) if p.exists() else None
                if got != want:
                    failures += 1
                    print(f"seed {run.get('seed')}: {name} digest mismatch" if got else f"{p}: missing")
            chains.append(d / "chain.json")
        print(f"manifest: {len(chains)} run(s), {failures} file digest mismatch(es)")
    else:
        chains = [Path(args.chain)]
    for path in chains:
        try:
            dump = parse_chain(path.read_bytes())
        except DumpError as e:
            raise DumpError(f"{path}: {e}") from None
        rep = inspect_chain(dump)
        print(f"== {path}")
        for line in rep.lines():
            print(line)
        failures += len(rep.failures)
    return 1 if failures else 0


# -- entry point -----------------------------------------------------------------------


def _scenario(value: str) -> str:
    try:
        return normalize_type(value)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epow", description="E-PoW network simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="base seed (EPOW_SEED overrides)")
        sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
        sp.add_argument("--config", help="flat JSON object of scenario fields")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--paper-replica", action="store_true", help="testbed parameter set")
        sp.add_argument("--blocks", type=int, help="target height")

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", type=_scenario, help="type1..type5")
    r.add_argument("--miners", type=int)
    common(r)
    r.add_argument("--dump-tasks", action="store_true", help="also write nsubs.ndjson")
    r.add_argument("--event-log", action="store_true", help="also write events.ndjson")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="regenerate figure data")
    s.add_argument("--figure", required=True, choices=sorted(FIGURES))
    common(s)
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect", help="summarize and re-validate a chain dump")
    g = i.add_mutually_exclusive_group(required=True)
    g.add_argument("--chain")
    g.add_argument("--manifest")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        parser.error(str(e))
    except DumpError as e:
        print(f"epow: parse error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"epow: I/O error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
