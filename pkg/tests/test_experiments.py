import csv

import numpy as np
import pytest

from cvq.cli import main
from cvq.config import ExperimentConfig, load_config
from cvq.experiments import (
    check_thresholds,
    compare_summaries,
    parse_thresholds,
    run_bench,
    run_stream_experiment,
    run_train_experiment,
)
from cvq.report import CSV_COLUMNS, MetricsRow, Summary, read_metrics_csv, read_summary, write_metrics_csv

SMALL = dict(K=16, n_clusters=8, n_q=4, steps=60, batch=128, log_every=20, eval_size=512)


def small(**kw):
    return ExperimentConfig(mode="stream", **{**SMALL, **kw})


def test_csv_header_is_fixed():
    assert CSV_COLUMNS == (
        "step", "mse", "psnr", "usage", "perplexity", "min_alpha", "max_alpha", "contrastive", "policy", "seed"
    )


def test_zero_steps_single_row(tmp_path):
    run_stream_experiment(small(steps=0, policies=["cvq-online"]), tmp_path)
    rows = read_metrics_csv(tmp_path / "metrics-cvq-online.csv")
    assert [r["step"] for r in rows] == ["0"]


def test_outputs_written_and_self_describing(tmp_path):
    cfg = small()
    res = run_stream_experiment(cfg, tmp_path)
    for name in ("summary.txt", "config.resolved", "mse.svg", "usage.svg", "perplexity.svg",
                 "metrics-vanilla-ema.csv", "codebook-cvq-online.cvqb"):
        assert (tmp_path / name).exists(), name
    assert load_config(tmp_path / "config.resolved") == cfg
    rows = read_metrics_csv(tmp_path / "metrics-cvq-online.csv")
    assert [int(r["step"]) for r in rows] == [0, 20, 40, 60]
    assert list(rows[0]) == list(CSV_COLUMNS)
    summaries = read_summary(tmp_path / "summary.txt")
    assert [s.policy for s in summaries] == cfg.policies
    assert summaries[1].usage == res.by_policy()["cvq-online"].usage
    for r in rows:
        assert 0 <= float(r["usage"]) <= 1 and 1 <= float(r["perplexity"]) <= cfg.K


def test_rerun_is_byte_identical(tmp_path, monkeypatch):
    run_stream_experiment(small(), tmp_path / "a")
    monkeypatch.setenv("CVQ_THREADS", "2")
    run_stream_experiment(small(), tmp_path / "b")
    for name in ("metrics-vanilla-ema.csv", "metrics-cvq-online.csv", "summary.txt", "mse.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_psnr_sentinel(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [MetricsRow(0, 0.0, 1.0, 2.0, "p", 0), MetricsRow(1, 0.01, 1.0, 2.0, "p", 0)])
    rows = read_metrics_csv(path)
    assert rows[0]["psnr"] == "inf" and float(rows[1]["psnr"]) == pytest.approx(20.0)


def _summary(policy, mse=0.1, usage=0.5, ppl=10.0, seed="0", steps=100):
    return Summary(policy, seed, "stream", steps, 16, mse, usage, ppl)


def test_identical_runs_tie():
    verdicts = compare_summaries([_summary("a"), _summary("b")])
    assert all(v["verdict"] == "tie" and v["relative_gap"] == 0 for v in verdicts)


def test_winner_and_gap():
    verdicts = {v["metric"]: v for v in compare_summaries([_summary("a", mse=0.2), _summary("b", mse=0.1)])}
    assert verdicts["mse"]["winner"] == "b"
    assert verdicts["mse"]["relative_gap"] == pytest.approx(0.5)


def test_mismatched_shapes_rejected():
    with pytest.raises(ValueError, match="comparable"):
        compare_summaries([_summary("a"), _summary("b", seed="1")])
    with pytest.raises(ValueError, match="comparable"):
        compare_summaries([_summary("a"), _summary("b", steps=5)])
    with pytest.raises(ValueError):
        compare_summaries([_summary("a")])


def test_threshold_fail_at_098():
    checks = check_thresholds([_summary("cvq-online", usage=0.98)], parse_thresholds("cvq-online usage >= 0.99"))
    assert checks[0]["result"] == "fail"
    checks = check_thresholds([_summary("cvq-online", usage=0.99)], parse_thresholds("cvq-online usage >= 0.99"))
    assert checks[0]["result"] == "pass"


def test_threshold_parse_errors_and_missing_policy():
    with pytest.raises(ValueError, match="line 2"):
        parse_thresholds("# header\nthis is not a threshold")
    checks = check_thresholds([_summary("a")], parse_thresholds("b mse < 1"))
    assert checks[0]["result"] == "fail"


def test_bench_averages_over_seeds(tmp_path):
    cfg = ExperimentConfig(mode="bench", seeds=[0, 1], **SMALL)
    res = run_bench(cfg, tmp_path)
    singles = [run_stream_experiment(cfg.replace(mode="stream", seed=s)).by_policy()["cvq-online"].mse for s in (0, 1)]
    assert res.by_policy()["cvq-online"].mse == pytest.approx(np.mean(singles), rel=1e-12)
    assert (tmp_path / "seed-1" / "summary.txt").exists()
    assert res.by_policy()["cvq-online"].seed == "0;1"


@pytest.fixture(scope="module")
def train_cfg(mnist_paths):
    return dict(mode="train", dataset=str(mnist_paths[0]), n_train=128, epochs=1, K=16, hidden=32, train_batch=32)


def test_train_row_a_uses_no_reinit(tmp_path, train_cfg):
    run_train_experiment(ExperimentConfig(policies=["vanilla-ema"], **train_cfg), tmp_path)
    rows = read_metrics_csv(tmp_path / "metrics-vanilla-ema.csv")
    assert [r["step"] for r in rows] == ["0", "1"]
    assert all(r["min_alpha"] == "nan" and r["contrastive"] == "0" for r in rows)


def test_train_row_e_logs_contrastive(tmp_path, train_cfg):
    run_train_experiment(ExperimentConfig(policies=["cvq-online"], contrastive=True, **train_cfg), tmp_path)
    rows = read_metrics_csv(tmp_path / "metrics-cvq-online.csv")
    assert float(rows[-1]["contrastive"]) > 0
    assert float(rows[-1]["max_alpha"]) > 0


# -- command line ------------------------------------------------------------------


def _write_cfg(path, **kw):
    path.write_text("".join(f"{k} = {v}\n" for k, v in {"mode": "stream", **SMALL, **kw}.items()))
    return path


def test_cli_exit_codes(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "run.cfg")
    (tmp_path / "ok.txt").write_text("cvq-online usage >= 0\n")
    (tmp_path / "bad.txt").write_text("cvq-online usage > 1\n")
    out = tmp_path / "out"
    assert main(["stream", "--config", str(cfg), "--out", str(out), "--thresholds", str(tmp_path / "ok.txt")]) == 0
    assert main(["stream", "--config", str(cfg), "--out", str(out), "--thresholds", str(tmp_path / "bad.txt")]) == 1
    assert main(["stream", "--config", str(cfg), "--out", str(out)]) == 0
    assert "fail" in capsys.readouterr().out


def test_cli_seed_and_policy_flags(tmp_path):
    cfg = _write_cfg(tmp_path / "run.cfg", seed=0)
    out = tmp_path / "o"
    code = main(["stream", "--config", str(cfg), "--seed", "5", "--out", str(out),
                 "--policy", "hvq-reset", "--policy", "jukebox-reset"])
    assert code == 0
    resolved = load_config(out / "config.resolved")
    assert resolved.seed == 5 and resolved.policies == ["hvq-reset", "jukebox-reset"]
    with open(out / "metrics-hvq-reset.csv") as f:
        assert {r["seed"] for r in csv.DictReader(f)} == {"5"}


def test_cli_compare(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "run.cfg")
    main(["stream", "--config", str(cfg), "--out", str(tmp_path / "r")])
    capsys.readouterr()
    (tmp_path / "t.txt").write_text("vanilla-ema mse > 0\n")
    assert main(["compare", str(tmp_path / "r" / "summary.txt"), "--thresholds", str(tmp_path / "t.txt")]) == 0
    text = capsys.readouterr().out
    assert "perplexity" in text and "pass" in text


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("mode = stream\ngamma = 2\n")
    assert main(["stream", "--config", str(bad)]) == 2
    assert "gamma" in capsys.readouterr().err
