import csv

import pytest

from gramtrain import trainer
from gramtrain.cli import main


@pytest.fixture
def pipeline(tmp_path):
    spec = tmp_path / "s.txt"
    spec.write_text("n_left = 40\nn_right = 40\nlatent_dim = 3\npositive_fraction = 0.05\nattribute_bins = 3\n")
    config = tmp_path / "c.txt"
    config.write_text("estimator = sogram\nalpha = 0.1\nsteps = 20\nbatch_size = 16\neta = 0.05\n"
                      "eval_every = 10\ncheckpoint_every = 10\nembed_dim = 4\nhidden = 4\ndim = 3\n"
                      "num_candidates = 20\neval_queries = 10\n")
    return tmp_path, spec, config


def run_pipeline(tmp_path, spec, config):
    assert main(["gen-synth", "--spec", str(spec), "--out", str(tmp_path / "d.tsv"), "--seed", "3"]) == 0
    assert main(["train", "--config", str(config), "--data", str(tmp_path / "d.tsv"),
                 "--out", str(tmp_path / "run")]) == 0
    return tmp_path / "d.tsv", tmp_path / "run"


def test_gen_synth_then_train_writes_metrics(pipeline):
    data, run = run_pipeline(*pipeline)
    with open(run / "metrics.csv") as f:
        rows = list(csv.reader(f))
    assert tuple(rows[0]) == trainer.METRICS_HEADER
    assert [r[0] for r in rows[1:]] == ["10", "20"]
    assert [s for s, _ in trainer.read_trajectory(run / "trajectory.txt")] == [0, 10, 20]


def test_train_is_seeded(pipeline):
    tmp_path, spec, config = pipeline
    _, run = run_pipeline(tmp_path, spec, config)
    first = (run / "metrics.csv").read_text()
    assert main(["train", "--config", str(config), "--data", str(tmp_path / "d.tsv"), "--out", str(run)]) == 0
    assert (run / "metrics.csv").read_text() == first


def test_eval_gram_error_hist(pipeline, capsys):
    tmp_path, spec, config = pipeline
    data, run = run_pipeline(tmp_path, spec, config)
    ckpt = run / "ckpt_00000020.bin"
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--split", "all",
                 "--candidates", "20", "--k", "5"]) == 0
    out = capsys.readouterr().out
    value = float(out.split("\n")[0].split("\t")[1])
    assert out.startswith("map_at_5\t") and 0.0 <= value <= 1.0

    out_csv = tmp_path / "g.csv"
    assert main(["gram-error", "--trajectory", str(run / "trajectory.txt"), "--data", str(data),
                 "--estimators", "exact,sampling,sogram:0.1", "--batch-size", "8", "16", "--out", str(out_csv)]) == 0
    with open(out_csv) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 3 * 3 * 2
    assert all(float(r["gram_err_u"]) == 0.0 for r in rows if r["estimator"] == "exact")

    hist = tmp_path / "h.csv"
    assert main(["hist", "--checkpoint", str(ckpt), "--data", str(data), "--bins=-1,1,8",
                 "--num-random", "100", "--out", str(hist)]) == 0
    with open(hist) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["bin_lo", "bin_hi", "count_observed", "count_random"] and len(rows) == 9


def test_resume_matches_uninterrupted(pipeline):
    tmp_path, spec, config = pipeline
    data, run = run_pipeline(tmp_path, spec, config)
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(tmp_path / "half"),
                 "--steps", "10"]) == 0
    assert main(["train", "--config", str(config), "--data", str(data), "--out", str(tmp_path / "rest"),
                 "--resume", str(tmp_path / "half" / "ckpt_00000010.bin")]) == 0
    assert (tmp_path / "rest" / "ckpt_00000020.bin").read_bytes() == (run / "ckpt_00000020.bin").read_bytes()


def test_malformed_config_names_key(pipeline, capsys):
    tmp_path, spec, config = pipeline
    main(["gen-synth", "--spec", str(spec), "--out", str(tmp_path / "d.tsv")])
    bad = tmp_path / "bad.txt"
    bad.write_text("steps = 5\nlearning_rate = 0.1\n")
    assert main(["train", "--config", str(bad), "--data", str(tmp_path / "d.tsv")]) == 1
    assert "learning_rate" in capsys.readouterr().err
    bad.write_text("steps = many\n")
    assert main(["train", "--config", str(bad), "--data", str(tmp_path / "d.tsv")]) == 1
    assert "'steps'" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["train", "--config", "c.txt", "--data", "d.tsv", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("gramtrain: error:") and "--bogus" in err
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["hist", "--checkpoint", "x", "--data", "y", "--out", "z", "--bins", "1,0,4"]) == 1


def test_data_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("steps = 1\n")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "missing.tsv")]) == 2
    bad = tmp_path / "bad.tsv"
    bad.write_text("id:1\tid:2\n")
    assert main(["train", "--config", str(cfg), "--data", str(bad)]) == 2
    assert "bad.tsv" in capsys.readouterr().err


def test_divergence_exits_3(pipeline, capsys):
    tmp_path, spec, config = pipeline
    main(["gen-synth", "--spec", str(spec), "--out", str(tmp_path / "d.tsv")])
    hot = tmp_path / "hot.txt"
    hot.write_text("eta = 1e3\nlam = 10\nsteps = 200\neval_every = 0\nbatch_size = 16\n")
    assert main(["train", "--config", str(hot), "--data", str(tmp_path / "d.tsv"),
                 "--out", str(tmp_path / "hot")]) == 3
    assert "gramtrain: error:" in capsys.readouterr().err
