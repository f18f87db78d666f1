import csv
import json
import textwrap

import numpy as np
import pytest

from sgemas.cli import main


def _write(path, text):
    path.write_text(textwrap.dedent(text))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def small_synth(tmp_path):
    return _write(tmp_path / "synth.toml", """
        [run]
        seed = 3
        [engine]
        beta = 0.25
        [engine.precision]
        eps = 1.0
        [input.synthetic]
        total_len = 1200
        frequency = 0.005
        [[input.synthetic.segments]]
        kind = "chaos"
        start = 400
        length = 400
        intensity = 10.0
    """)


@pytest.fixture
def labeled_csv(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["value,label"]
    for t in range(300):
        anomalous = 150 <= t < 200
        v = rng.normal(0, 3.0 if anomalous else 0.2)
        lines.append(f"{v!r},{int(anomalous)}")
    p = tmp_path / "rec.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_simulate_writes_trace_and_summary(tmp_path, small_synth, capsys):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(small_synth), "--out", str(out)]) == 0
    rows = _rows(out / "trace.csv")
    assert len(rows) == 1200
    assert list(rows[0]) == ["step", "x", "mu", "free_energy", "precision", "energy", "n_agents", "entropy",
                             "instability", "score", "births", "deaths", "flops_step", "label"]
    assert len(_rows(out / "phase.csv")) == 1200
    report = json.loads((out / "report.json").read_text())
    run = report["runs"][0]
    n = [int(r["n_agents"]) for r in rows]
    assert run["peak_n"] == max(n) and run["steps"] == 1200
    assert 400 <= int(np.argmax(n)) < 800
    assert run["flops_total"] == sum(int(r["flops_step"]) for r in rows)
    line = capsys.readouterr().out
    assert "steps=1200" in line and "peak_n=" in line and "final_E=" in line and "flops_total=" in line


def test_simulate_is_byte_reproducible(tmp_path, small_synth):
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(small_synth), "--out", str(tmp_path / d)]) == 0
    for name in ("trace.csv", "phase.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides(tmp_path, small_synth):
    main(["simulate", "--config", str(small_synth), "--out", str(tmp_path / "a"), "--seed", "3"])
    main(["simulate", "--config", str(small_synth), "--out", str(tmp_path / "b"), "--seed", "4"])
    assert json.loads((tmp_path / "b" / "report.json").read_text())["seed"] == 4
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "b" / "trace.csv").read_bytes()


def test_jsonl_trace(tmp_path):
    cfg = _write(tmp_path / "j.toml", """
        [input.synthetic]
        total_len = 50
        [output]
        format = "jsonl"
    """)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "trace.jsonl").read_text().splitlines()
    assert len(lines) == 50 and json.loads(lines[0])["step"] == 0


def test_invalid_config_leaves_no_output(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.toml", """
        [engine]
        gamma = 2.0
        [input.synthetic]
        total_len = 100
    """)
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "engine.gamma" in capsys.readouterr().err


def test_zero_length_stream_rejected(tmp_path):
    cfg = _write(tmp_path / "z.toml", """
        [input.synthetic]
        total_len = 0
    """)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_simulate_needs_synthetic(tmp_path, labeled_csv):
    cfg = _write(tmp_path / "c.toml", f"""
        [input.csv]
        path = "{labeled_csv}"
    """)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_detect_labeled_per_sample(tmp_path, labeled_csv):
    cfg = _write(tmp_path / "c.toml", f"""
        [input.csv]
        path = "{labeled_csv}"
        value_column = "value"
        label_column = "label"
        window_len = 50
    """)
    assert main(["detect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "scores.csv")
    assert len(rows) == 300
    assert sum(r["label"] == "1" for r in rows) == 50


def test_detect_per_beat_count(tmp_path, labeled_csv):
    cfg = _write(tmp_path / "c.toml", f"""
        [input.csv]
        path = "{labeled_csv}"
        label_column = "label"
        beat_len = 7
    """)
    assert main(["detect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "scores.csv")
    assert len(rows) == 300 // 7
    assert "beat" in rows[0]


def test_unlabeled_scores_refused_by_evaluate(tmp_path, capsys):
    data = tmp_path / "u.csv"
    data.write_text("value\n" + "\n".join(str(v) for v in np.sin(np.arange(100) / 5)) + "\n")
    cfg = _write(tmp_path / "c.toml", f"""
        [input.csv]
        path = "{data}"
    """)
    assert main(["detect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "scores.csv")
    assert len(rows) == 100 and all(r["label"] == "" for r in rows)
    capsys.readouterr()
    code = main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e"), "--scores", str(tmp_path / "o" / "scores.csv")])
    assert code == 2
    assert "no labels" in capsys.readouterr().err
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e2")]) == 2
    assert not (tmp_path / "e2").exists()


def test_evaluate_scores_file_separated(tmp_path, small_synth):
    scores = tmp_path / "toy.csv"
    scores.write_text("step,score,label\n0,0.1,0\n1,0.2,0\n2,0.8,1\n3,0.9,1\n")
    out = tmp_path / "o"
    assert main(["evaluate", "--config", str(small_synth), "--out", str(out), "--scores", str(scores)]) == 0
    assert json.loads((out / "report.json").read_text())["auc"] == 1.0
    roc = _rows(out / "roc.csv")
    fpr = [float(r["fpr"]) for r in roc]
    tpr = [float(r["tpr"]) for r in roc]
    assert fpr == sorted(fpr) and tpr == sorted(tpr)


def test_evaluate_single_class_fails(tmp_path, small_synth, capsys):
    scores = tmp_path / "one.csv"
    scores.write_text("step,score,label\n0,0.1,1\n1,0.2,1\n")
    assert main(["evaluate", "--config", str(small_synth), "--out", str(tmp_path / "o"), "--scores", str(scores)]) == 1
    assert "undefined" in capsys.readouterr().err.lower()


def test_evaluate_engine_beats_baseline(tmp_path):
    out = tmp_path / "o"
    assert main(["evaluate", "--config", "inertia-ablation", "--out", str(out)]) == 0
    stream = json.loads((out / "report.json").read_text())["streams"][0]
    assert stream["engine"]["auc"] > stream["baseline"]["auc"]
    for name in ("roc.csv", "roc_baseline.csv"):
        roc = _rows(out / name)
        fpr = [float(r["fpr"]) for r in roc]
        tpr = [float(r["tpr"]) for r in roc]
        assert fpr == sorted(fpr) and tpr == sorted(tpr)


def test_evaluate_per_beat_csv(tmp_path, labeled_csv):
    cfg = _write(tmp_path / "c.toml", f"""
        [input.csv]
        path = "{labeled_csv}"
        label_column = "label"
        beat_len = 10
        [eval]
        mode = "per-beat"
    """)
    out = tmp_path / "o"
    assert main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["pipeline"]["mode"] == "per-beat"
    assert rep["streams"][0]["engine"]["n_pos"] + rep["streams"][0]["engine"]["n_neg"] == 30


def test_ablate_sweep(tmp_path, capsys):
    cfg = _write(tmp_path / "a.toml", """
        [input.synthetic]
        total_len = 800
        noise_sigma = 0.3
        replicates = 5
        [[input.synthetic.segments]]
        kind = "chaos"
        start = 300
        length = 200
        intensity = 2.0
    """)
    for d in ("a", "b"):
        assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    table = _rows(tmp_path / "a" / "report.csv")
    assert len(table) == 20
    assert list(table[0]) == ["variant", "stream_id", "auc", "n_pos", "n_neg"]
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert len(rep["pvalues"]) == 3
    for name in ("report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "v3_3: mean_auc=" in capsys.readouterr().out


def test_ablate_needs_two_streams(tmp_path, small_synth):
    assert main(["ablate", "--config", str(small_synth), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_unknown_config_reference(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 2
