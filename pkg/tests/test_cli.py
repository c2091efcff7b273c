import json
import socket
import subprocess
import sys

import numpy as np
import pytest

from shapeattack.cli import EXIT_BIND, EXIT_NOT_FOUND, EXIT_OK, EXIT_USAGE, main
from shapeattack.corpus import make_corpus
from shapeattack.imaging import load_frame

SMALL = ["--population", "10", "--iterations", "8"]


def run_cli(*args, timeout=120):
    return subprocess.run([sys.executable, "-m", "shapeattack", *map(str, args)],
                          capture_output=True, text=True, timeout=timeout)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return make_corpus(tmp_path_factory.mktemp("cli_corpus"), n=3, seed=2)


@pytest.fixture(scope="module")
def ellipse_run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["attack", "--shape", "ellipse", "--manifest", str(corpus), "--out", str(out),
                 "--seed", "7", *SMALL]) == EXIT_OK
    return out


def _run_files(run_dir):
    files = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file():
            rel = str(p.relative_to(run_dir))
            data = p.read_bytes()
            if rel == "run_manifest.json":
                doc = json.loads(data)
                doc.pop("started_at")
                data = json.dumps(doc, sort_keys=True).encode()
            files[rel] = data
    return files


def test_attack_is_byte_identical_across_processes(corpus, tmp_path):
    for name in ("a", "b"):
        r = run_cli("attack", "--shape", "ellipse", "--manifest", corpus, "--oracle", "mock",
                    "--seed", 7, "--out", tmp_path / name, *SMALL)
        assert r.returncode == 0, r.stderr
    a, b = _run_files(tmp_path / "a"), _run_files(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) > 5
    assert a == b


def test_lines_dimension(corpus, tmp_path, capsys):
    assert main(["attack", "--shape", "lines", "--line-count", "2", "--manifest", str(corpus),
                 "--out", str(tmp_path / "r"), *SMALL]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["dimension"] == 8 and summary["shape"] == "lines2"


def test_missing_manifest_is_usage_error(tmp_path):
    out = tmp_path / "never"
    assert main(["attack", "--manifest", str(tmp_path / "missing.json"), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()
    r = run_cli("attack", "--shape", "hexagon")
    assert r.returncode == 2


def test_bad_parameter_is_usage_error(corpus, tmp_path):
    assert main(["attack", "--manifest", str(corpus), "--out", str(tmp_path / "r"),
                 "--threshold", "1.5"]) == EXIT_USAGE


def test_config_file_then_flags(corpus, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"shape": {"family": "polygon", "count": 5},
                               "hyper": {"population": 6, "iterations": 3}, "seed": 1}))
    assert main(["attack", "--config", str(cfg), "--manifest", str(corpus),
                 "--out", str(tmp_path / "r"), "--iterations", "2"]) == EXIT_OK
    capsys.readouterr()
    snap = json.loads((tmp_path / "r" / "run_manifest.json").read_text())["config"]
    assert snap["shape"]["count"] == 5 and snap["hyper"]["population"] == 6
    assert snap["hyper"]["iterations"] == 2 and snap["seed"] == 1
    # replaying from the snapshot reproduces the run
    assert main(["attack", "--config", str(tmp_path / "r" / "run_manifest.json"),
                 "--manifest", str(corpus), "--out", str(tmp_path / "again")]) == EXIT_OK
    assert _run_files(tmp_path / "r") == _run_files(tmp_path / "again")


def test_eval_and_self_transfer(ellipse_run, capsys):
    assert main(["eval", "--run", str(ellipse_run)]) == EXIT_OK
    rep = json.loads((ellipse_run / "report.json").read_text())
    assert rep["n"] == 3
    assert main(["transfer", "--run", str(ellipse_run)]) == EXIT_OK
    tr = json.loads((ellipse_run / "transfer_report.json").read_text())
    assert tr["asr"] == 1.0
    capsys.readouterr()


def test_render_composite_confined_to_mask(ellipse_run, capsys):
    index = json.loads((ellipse_run / "index.json").read_text())
    rec = next(r for r in index if r["status"] == "success")
    assert main(["render", "--run", str(ellipse_run), "--id", rec["id"]]) == EXIT_OK
    capsys.readouterr()
    comp = load_frame(ellipse_run / "render" / f"{rec['id']}_composite.png")
    clean = load_frame(rec["image"])
    w = clean.shape[1]
    assert comp.shape[1] == 2 * w
    assert np.array_equal(comp[:, :w], clean)
    changed = np.argwhere(np.any(comp[:, w:] != clean, axis=2))
    assert len(changed) > 0
    x1, y1, x2, y2 = rec["box"]
    assert changed[:, 1].min() >= x1 and changed[:, 1].max() < x2
    assert changed[:, 0].min() >= y1 and changed[:, 0].max() < y2


def test_render_missing_entry(ellipse_run, tmp_path):
    assert main(["render", "--run", str(ellipse_run), "--id", "nope"]) == EXIT_NOT_FOUND
    assert main(["eval", "--run", str(tmp_path / "nowhere")]) == EXIT_NOT_FOUND


def test_remote_unreachable_is_oracle_error(corpus, tmp_path):
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    assert main(["attack", "--manifest", str(corpus), "--out", str(tmp_path / "r"),
                 "--oracle", "remote", "--endpoint", f"http://127.0.0.1:{port}"]) == 3


def test_ablate_writes_tables(corpus, tmp_path, capsys):
    assert main(["ablate", "--manifest", str(corpus), "--axis", "color",
                 "--values", "0,0,0;255,255,255", "--out", str(tmp_path / "abl"), *SMALL]) == EXIT_OK
    out = capsys.readouterr().out
    assert "(0,0,0)" in out and "(255,255,255)" in out
    rows = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    assert rows[0]["asr"] == 1.0 and rows[1]["asr"] == 0.0
    assert main(["ablate", "--manifest", str(corpus), "--axis", "line_count", "--values", "9",
                 "--out", str(tmp_path / "bad")]) == EXIT_USAGE


def test_make_corpus_command(tmp_path, capsys):
    assert main(["make-corpus", "--out", str(tmp_path / "c"), "--count", "2"]) == EXIT_OK
    doc = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert len(doc["entries"]) == 2
    capsys.readouterr()


def _start_server(*args):
    proc = subprocess.Popen([sys.executable, "-m", "shapeattack", "mock-serve", "--port", "0", *args],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    line = proc.stdout.readline()
    assert line.startswith("listening on "), proc.stderr.read()
    return proc, line.split()[-1]


def test_loopback_equals_in_process(corpus, ellipse_run, tmp_path):
    proc, url = _start_server("--manifest", str(corpus))
    try:
        r = run_cli("attack", "--shape", "ellipse", "--manifest", corpus, "--out", tmp_path / "remote",
                    "--seed", 7, "--oracle", "remote", "--endpoint", url, *SMALL)
        assert r.returncode == 0, r.stderr
    finally:
        proc.terminate()
        proc.wait(10)
    local, remote = _run_files(ellipse_run), _run_files(tmp_path / "remote")
    for rel in local:
        if rel.startswith(("results/", "records/", "frames/")) or rel in ("index.json", "summary.json"):
            assert remote[rel] == local[rel], rel


def test_port_in_use_is_bind_error():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    s.listen(1)
    try:
        r = run_cli("mock-serve", "--port", s.getsockname()[1])
        assert r.returncode == EXIT_BIND
    finally:
        s.close()


def test_relative_manifest_survives_cwd_change(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    make_corpus("c", n=1, seed=3)
    assert main(["attack", "--manifest", "c/manifest.json", "--out", "r", *SMALL]) == EXIT_OK
    rec = json.loads((tmp_path / "r" / "index.json").read_text())[0]
    monkeypatch.chdir("/")
    assert main(["render", "--run", str(tmp_path / "r"), "--id", rec["id"]]) == EXIT_OK
    assert (tmp_path / "r" / "render" / f"{rec['id']}_adv.png").exists()
    capsys.readouterr()
