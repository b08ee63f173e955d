import csv
import json
import os
import subprocess
import sys

import pytest

from epow.cli import main

FAST = {"block_time": 30.0, "k_max": 60, "kernel_b": 4, "window": 5, "attempt_batch": 10}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(FAST))
    return str(p)


def run_cli(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_files(tmp_path, cfg_file, capsys):
    out = tmp_path / "o"
    assert run_cli("run", "--scenario", "type4", "--miners", 3, "--blocks", 8, "--seed", 4, "--config", cfg_file,
                   "--out", out) == 0
    for name in ("blocks.csv", "tasks.csv", "efficiency.csv", "retarget.csv", "chain.json", "manifest.json"):
        assert (out / name).exists()
    rows = read_csv(out / "blocks.csv")
    assert [int(r["height"]) for r in rows] == list(range(1, 9))
    total = sum(float(r["block_time_s"]) for r in rows)
    end = json.loads((out / "chain.json").read_text())["end_ms"] / 1000
    assert total == pytest.approx(end, abs=1e-9)
    assert (out / "blocks.csv").read_bytes().count(b"\r") == 0
    assert "seed 4" in capsys.readouterr().out


def test_run_is_byte_stable(tmp_path, cfg_file):
    for d in ("a", "b"):
        run_cli("run", "--scenario", "type5", "--miners", 4, "--blocks", 6, "--seed", 9, "--config", cfg_file,
                "--out", tmp_path / d)
    for name in ("blocks.csv", "tasks.csv", "chain.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_env_overrides_flag(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv("EPOW_SEED", "9")
    run_cli("run", "--scenario", "type1", "--miners", 2, "--blocks", 4, "--seed", 1, "--config", cfg_file,
            "--out", tmp_path)
    assert json.loads((tmp_path / "manifest.json").read_text())["seeds"] == [9]


def test_multiple_seeds_use_subdirs(tmp_path, cfg_file):
    run_cli("run", "--scenario", "type1", "--miners", 2, "--blocks", 3, "--seed", 5, "--seeds", 2,
            "--config", cfg_file, "--out", tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"] == [5, 6] and [r["dir"] for r in man["runs"]] == ["seed_5", "seed_6"]


def test_inspect_valid_and_manifest(tmp_path, cfg_file, capsys):
    run_cli("run", "--scenario", "type1", "--miners", 2, "--blocks", 5, "--config", cfg_file, "--out", tmp_path)
    capsys.readouterr()
    assert run_cli("inspect", "--chain", tmp_path / "chain.json") == 0
    text = capsys.readouterr().out
    assert "LSP blocks: 0 stored" in text and "verdict failures: 0" in text
    assert run_cli("inspect", "--manifest", tmp_path / "manifest.json") == 0


def test_inspect_surfaces_tampered_result_digest(tmp_path, cfg_file, capsys):
    run_cli("run", "--scenario", "type4", "--miners", 2, "--blocks", 20, "--config", cfg_file, "--out", tmp_path)
    path = tmp_path / "chain.json"
    dump = json.loads(path.read_text())
    assert dump["archive"]
    dump["archive"][0]["result_digest"] = "ab" * 32
    path.write_text(json.dumps(dump))
    capsys.readouterr()
    assert run_cli("inspect", "--chain", path) == 1
    assert "bad-lsp" in capsys.readouterr().out


def test_manifest_detects_changed_file(tmp_path, cfg_file, capsys):
    run_cli("run", "--scenario", "type1", "--miners", 2, "--blocks", 3, "--config", cfg_file, "--out", tmp_path)
    with open(tmp_path / "blocks.csv", "a") as fh:
        fh.write("99,0,1.000\n")
    assert run_cli("inspect", "--manifest", tmp_path / "manifest.json") == 1
    assert "digest mismatch" in capsys.readouterr().out


def test_corrupt_chain_reports_offset(tmp_path, capsys):
    p = tmp_path / "chain.json"
    p.write_bytes(b'{"config": {}, "blocks": [1,,2]}')
    assert run_cli("inspect", "--chain", p) == 1
    assert "byte offset 28" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as ei:
        run_cli("run", "--scenario", "type9")
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        run_cli("run", "--miners", 1, "--out", tmp_path)
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        run_cli("run", "--seeds", 0, "--out", tmp_path)
    assert ei.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    with pytest.raises(SystemExit) as ei:
        run_cli("run", "--config", bad, "--out", tmp_path)
    assert ei.value.code == 2


def test_unwritable_out_is_io_error(tmp_path, cfg_file, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run_cli("run", "--scenario", "type1", "--miners", 2, "--blocks", 2, "--config", cfg_file,
                   "--out", blocker / "sub") == 1
    assert "I/O error" in capsys.readouterr().err


def test_sweep_figure6_rows(tmp_path, cfg_file):
    cfg = json.loads(open(cfg_file).read()) | {"tau_f": 0.02}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert run_cli("sweep", "--figure", 6, "--seeds", 1, "--blocks", 3, "--config", p, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "fig6.csv")
    assert len(rows) == 16
    assert {(r["network_type"], r["miner_count"]) for r in rows} == {
        (t, str(n)) for t in ("I", "II", "III", "IV") for n in (2, 3, 4, 5)}


def test_sweep_figure5_monotone(tmp_path, cfg_file):
    assert run_cli("sweep", "--figure", 5, "--blocks", 5, "--config", cfg_file, "--out", tmp_path) == 0
    series = {}
    for r in read_csv(tmp_path / "fig5.csv"):
        series.setdefault((r["network_type"], r["miner_count"]), []).append(int(r["cumulative_cp"]))
    assert len(series) == 12 and all(s == sorted(s) and len(s) == 5 for s in series.values())


def test_separate_processes_identical(tmp_path, cfg_file):
    env = {k: v for k, v in os.environ.items() if k != "EPOW_SEED"}
    for d in ("p1", "p2"):
        subprocess.run([sys.executable, "-m", "epow.cli", "run", "--scenario", "type3", "--miners", "2", "--blocks",
                        "5", "--seed", "2", "--config", cfg_file, "--out", str(tmp_path / d)],
                       check=True, env=env, capture_output=True)
    for name in ("blocks.csv", "tasks.csv", "chain.json"):
        assert (tmp_path / "p1" / name).read_bytes() == (tmp_path / "p2" / name).read_bytes()
