import json

import pytest

from touchloc.cli import main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def strip_time(report):
    report = json.loads(report)
    report.pop("wall_time_s", None)
    return report


# ------------------------------------------------------------------ index

def test_index_build_box(tmp_path, capsys):
    out = tmp_path / "box.idx.json"
    code, text, _ = run(["index", "build", "--fixture", "box", "--out", out], capsys)
    assert code == 0
    stats = json.loads(text)
    assert stats["entries"] == 12
    first = out.read_bytes()
    run(["index", "build", "--fixture", "box", "--out", out], capsys)
    assert out.read_bytes() == first
    code, text, _ = run(["index", "stats", "--index", out, "--fixture", "box"], capsys)
    assert code == 0 and json.loads(text)["entries"] == 12


def test_index_register_entropy_positive(capsys):
    code, text, _ = run(["index", "build", "--fixture", "register"], capsys)
    assert code == 0 and json.loads(text)["entropy"] > 0


def test_index_stats_wrong_mesh(tmp_path, capsys):
    out = tmp_path / "box.idx.json"
    run(["index", "build", "--fixture", "box", "--out", out], capsys)
    code, _, err = run(["index", "stats", "--index", out, "--fixture", "back"], capsys)
    assert code == 1 and "error" in err


# ------------------------------------------------------------------ localize

def test_localize_noiseless_box(tmp_path, capsys):
    out = tmp_path / "r.json"
    argv = ["localize", "--fixture", "box", "--simulate", "surface", "--noiseless", "--seed", 3,
            "--out", out]
    code, _, _ = run(argv, capsys)
    report = json.loads(out.read_text())
    assert code == 0 and report["success"] is True
    assert report["schema_version"] == "1.0"
    first = out.read_text()
    run(argv, capsys)
    assert strip_time(out.read_text()) == strip_time(first)


def test_localize_from_files(tmp_path, capsys):
    ys = tmp_path / "ys.jsonl"
    truth = tmp_path / "truth.json"
    code, _, _ = run(["simulate", "surface", "--fixture", "box", "--n", 15, "--noiseless",
                      "--region", "20,0.2", "--seed", 1, "--out", ys, "--truth-out", truth],
                     capsys)
    assert code == 0
    # tight prior around the truth, default region extents
    code, text, _ = run(["localize", "--fixture", "box", "--measurements", ys, "--truth", truth,
                         "--region", "20,0.2", "--seed", 1], capsys)
    report = json.loads(text)
    assert "trans_err_mm" in report and code in (0, 2)


def test_localize_ransac_report(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, _, _ = run(["localize", "--simulate", "clutter", "--ransac", "--max-iters", 4,
                      "--seed", 2, "--out", out], capsys)
    report = json.loads(out.read_text())
    assert code in (0, 2)
    if "error" not in report:
        r = report["ransac"]
        assert set(r["inliers"]) | set(r["outliers"]) == set(range(15))


@pytest.mark.slow
def test_clutter_without_ransac_mostly_fails(capsys):
    fails = 0
    seeds = range(7)
    for s in seeds:
        code, text, _ = run(["localize", "--simulate", "clutter", "--seed", s], capsys)
        fails += json.loads(text)["success"] is False
    assert fails > len(seeds) / 2


def test_localize_errors_and_no_partial_output(tmp_path, capsys):
    out = tmp_path / "r.json"
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"p": [0, 0}\n')
    code, _, err = run(["localize", "--fixture", "box", "--measurements", bad, "--out", out],
                       capsys)
    assert code == 1 and "error" in err
    assert not out.exists()
    code, _, _ = run(["localize", "--fixture", "box", "--out", out], capsys)
    assert code == 1 and not out.exists()
    code, _, _ = run(["localize", "--fixture", "box", "--simulate", "surface", "--region", "1,2,3",
                      "--out", out], capsys)
    assert code == 1 and not out.exists()
    code, _, _ = run(["localize", "--mesh", tmp_path / "missing.obj", "--simulate", "surface"],
                     capsys)
    assert code == 1
    assert sorted(p.name for p in tmp_path.iterdir()) == ["bad.jsonl"]


def test_failed_success_check_exits_2(tmp_path, capsys):
    # impossible tolerances turn a good run into a failed one
    code, text, _ = run(["localize", "--fixture", "box", "--simulate", "surface", "--noiseless",
                         "--trans-tol", 0, "--rot-tol", 0, "--seed", 3], capsys)
    assert code == 2 and json.loads(text)["success"] is False


def test_no_consensus_exits_2(capsys):
    code, text, _ = run(["localize", "--simulate", "clutter", "--ransac", "--max-iters", 1,
                         "-d", 15, "--seed", 0], capsys)
    assert code == 2 and json.loads(text)["error"] == "NoConsensusError"


# ------------------------------------------------------------------ simulate

def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        assert run(["simulate", "clutter", "--seed", 9, "--out", path], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    lines = [json.loads(x) for x in a.read_text().splitlines()]
    assert len(lines) == 15 and all("outlier" in x for x in lines)


# ------------------------------------------------------------------ benchmark

def test_benchmark_small_run(tmp_path, capsys):
    out = tmp_path / "b.json"
    code, table, _ = run(["benchmark", "speedup", "--trials", 1, "--fixtures", "box",
                          "--out", out], capsys)
    assert code == 0 and "box" in table
    report = json.loads(out.read_text())
    assert report["schema_version"] == "1.0" and report["suite"] == "speedup"


def test_benchmark_unknown_fixture(capsys):
    code, _, err = run(["benchmark", "speedup", "--trials", 1, "--fixtures", "teapot"], capsys)
    assert code == 1
