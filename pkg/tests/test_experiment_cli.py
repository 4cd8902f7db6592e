"""Config plumbing and end-to-end smokes for every experiment subcommand."""
import math
import os

import numpy as np
import pytest

from avgsgd.data_io import (
    read_table,
    save_text,
    synthetic_least_squares,
    write_libsvm,
)
from avgsgd.experiment_cli import (
    ExperimentConfig,
    _threshold_crossing,
    build_config,
    build_parser,
    main,
    parse_config_file,
    run_convex_compare,
    run_equivalence,
    run_lemma_sweep,
    run_pca,
    run_profile_envelope,
    run_quartic,
)

# ---------------------------------------------------------------------------
# config plumbing


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "seed = 5\n"
        "grid-alpha = 0.1, 0.2  # dashes work too\n"
        "grid_d = inf,100\n"
        "scale = yes\n"
        "schedules = oneshot, every:32\n"
        "\n"
        "# full-line comment\n"
        "threshold = 0.25\n"
    )
    cfg = parse_config_file(path)
    assert cfg == {
        "seed": 5,
        "grid_alpha": (0.1, 0.2),
        "grid_d": (math.inf, 100.0),
        "scale": True,
        "schedules": ("oneshot", "every:32"),
        "threshold": 0.25,
    }


def test_parse_config_file_errors(tmp_path):
    bad_key = tmp_path / "a.cfg"
    bad_key.write_text("bogus = 1\n")
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_file(bad_key)
    no_eq = tmp_path / "b.cfg"
    no_eq.write_text("just words\n")
    with pytest.raises(ValueError, match="expected 'key = value'"):
        parse_config_file(no_eq)
    bad_bool = tmp_path / "c.cfg"
    bad_bool.write_text("scale = maybe\n")
    with pytest.raises(ValueError, match="bad boolean"):
        parse_config_file(bad_bool)


def test_kind_defaults_applied():
    args = build_parser().parse_args(["lemma-sweep"])
    cfg = build_config(args)
    assert cfg.kind == "lemma-sweep"
    assert cfg.workers == 4
    assert cfg.grid_alpha == (0.1,)


def test_cli_flags_override_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 5\nworkers = 7\n")
    parser = build_parser()
    from_file = build_config(parser.parse_args(
        ["lemma-sweep", "--config", str(path)]))
    assert from_file.seed == 5 and from_file.workers == 7
    overridden = build_config(parser.parse_args(
        ["lemma-sweep", "--config", str(path), "--seed", "9"]))
    assert overridden.seed == 9 and overridden.workers == 7


def test_repeatable_schedule_flag_and_lists():
    args = build_parser().parse_args([
        "convex-compare", "--schedule", "oneshot", "--schedule", "every:32",
        "--grid-alpha", "0.1,0.2", "--grid-d", "inf", "--scale",
    ])
    cfg = build_config(args)
    assert cfg.schedules == ("oneshot", "every:32")
    assert cfg.grid_alpha == (0.1, 0.2)
    assert cfg.grid_d == (math.inf,)
    assert cfg.scale is True


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(kind="quartic", repeats=0)
    with pytest.raises(ValueError):
        ExperimentConfig(kind="quartic", threads=0)
    with pytest.raises(ValueError):
        ExperimentConfig(kind="convex-compare", grid_alpha=())


def test_main_reports_errors_on_stderr(capsys):
    assert main(["convex-compare"]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["profile-envelope", "--synthetic", "nosuch"]) == 1
    assert "unknown synthetic instance" in capsys.readouterr().err
    assert main(["profile-envelope", "--synthetic", "lowrho",
                 "--data", "also.txt"]) == 1
    assert "not both" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# threshold crossing


def test_threshold_crossing_interpolates():
    assert _threshold_crossing((0, 10, 20), (1.0, 0.5, 0.1), 0.3) == 15.0
    assert _threshold_crossing((0, 10), (0.05, 0.01), 0.3) == 0.0
    assert _threshold_crossing((0, 10), (1.0, 0.5), 0.3) is None
    assert _threshold_crossing((0, 10), (math.inf, 0.2), 0.3) == 10.0
    assert _threshold_crossing((0, 10, 20), (1.0, 0.4, 0.4), 0.4) == 10.0


# ---------------------------------------------------------------------------
# runner smokes


def tiny_dataset_file(tmp_path, n_rows=40, noise=0.5):
    ds = synthetic_least_squares(n_rows, 6, density=0.5, label_noise=noise, seed=0)
    path = tmp_path / "tiny.libsvm"
    save_text(path, write_libsvm(ds))
    return str(path)


def test_convex_compare_smoke(tmp_path, capsys):
    out = tmp_path / "results"
    cfg = ExperimentConfig(
        kind="convex-compare", data=tiny_dataset_file(tmp_path),
        workers=2, steps=128, trace_every=32, repeats=2,
        schedules=("oneshot", "every:32"), grid_alpha=(0.01, 0.05),
        grid_d=(math.inf,), threshold=0.5, seed=0, out=str(out),
    )
    curves = run_convex_compare(cfg)
    assert set(curves) == {"oneshot", "every32", "single"}
    for c in curves.values():
        assert c.iterations[0] == 0 and c.iterations[-1] == 128
        assert c.values[0] == 1.0
        assert len(c.cells) == len(c.values) == len(c.iterations)
    assert curves["oneshot"].gradient_evals == 2 * 128
    assert curves["single"].gradient_evals == 128
    assert "threshold 0.5 crossings" in capsys.readouterr().out
    header, rows, meta = read_table((out / "compare_oneshot.csv").read_text())
    assert header == "iter,normalized_objective,alpha,d"
    assert len(rows) == len(curves["oneshot"].iterations)
    assert meta["workers"] == "2" and meta["dataset"] == "tiny.libsvm"
    header, rows, _ = read_table((out / "speedup.csv").read_text())
    assert [r[0] for r in rows] == ["oneshot", "every32", "single"]


def test_quartic_smoke(tmp_path, capsys):
    cfg = ExperimentConfig(kind="quartic", workers=2, steps=200, repeats=4,
                           alpha=0.025, schedules=("oneshot", "minibatch"),
                           seed=0, out=str(tmp_path))
    results = run_quartic(cfg)
    assert set(results) == {"oneshot", "minibatch"}
    mean, se, arr = results["oneshot"]
    assert arr.shape == (4,) and math.isfinite(mean) and se >= 0
    assert mean == pytest.approx(arr.mean())
    header, rows, _ = read_table((tmp_path / "quartic.csv").read_text())
    assert header == "schedule,mean_final_objective,stderr,replicas"
    assert rows[0][3] == "4"
    assert "mean final objective" in capsys.readouterr().out


def test_pca_ladder_smoke(tmp_path, capsys):
    cfg = ExperimentConfig(kind="pca", workers=2, steps=300, repeats=3,
                           schedules=(), seed=0, out=str(tmp_path))
    errors = run_pca(cfg)
    # 300 // 1000 == 0 collapses the last rung into minibatch
    assert set(errors) == {"oneshot", "every30", "every3", "minibatch"}
    for errs in errors.values():
        assert errs.shape == (3,)
        assert np.all((0.0 <= errs) & (errs <= 1.0))
    header, rows, _ = read_table((tmp_path / "pca.csv").read_text())
    assert header == "avg_events,schedule,mean_error,stderr"
    assert "avg events" in capsys.readouterr().out


def test_lemma_sweep_smoke(tmp_path, capsys):
    cfg = ExperimentConfig(kind="lemma-sweep", workers=2, grid_alpha=(0.2,),
                           beta2=(0.0,), zeta=(0.0,), horizon=40, trials=200,
                           seed=0, out=str(tmp_path))
    rows = run_lemma_sweep(cfg)
    assert len(rows) == 1
    a, c, b2, s2, m, z, q_closed, q_fp, q_mc, se = rows[0]
    assert q_closed == pytest.approx(0.2 / (2 * 1.8), rel=1e-12)
    assert q_fp == pytest.approx(q_closed, rel=1e-10)
    assert abs(q_mc - q_closed) <= 5 * se
    header, file_rows, meta = read_table((tmp_path / "lemma_sweep.csv").read_text())
    assert header.startswith("alpha,c,beta2")
    assert len(file_rows) == 1 and meta["workers"] == "2"
    assert "closed" in capsys.readouterr().out


def test_profile_envelope_smoke(tmp_path, capsys):
    cfg = ExperimentConfig(kind="profile-envelope",
                           data=tiny_dataset_file(tmp_path, n_rows=60),
                           lines=6, points_per_line=5, seed=0, out=str(tmp_path))
    env = run_profile_envelope(cfg)
    assert env.sigma2 > 0
    out = capsys.readouterr().out
    assert "rho = " in out and "sigma2 = " in out
    from avgsgd.data_io import read_envelope_report
    rows, meta = read_envelope_report((tmp_path / "envelope.csv").read_text())
    assert rows[0].sigma2 == env.sigma2
    assert meta["dataset"] == "tiny.libsvm"


def test_equivalence_smoke(capsys):
    cfg = ExperimentConfig(kind="equivalence", workers=4, steps=256, k=16, seed=0)
    dev = run_equivalence(cfg)
    assert dev <= 1e-9
    assert "max relative deviation" in capsys.readouterr().out


def test_main_end_to_end(tmp_path, capsys):
    code = main([
        "lemma-sweep", "--grid-alpha", "0.2", "--beta2", "0", "--zeta", "0",
        "--workers", "2", "--horizon", "40", "--trials", "200",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert code == 0
    assert (tmp_path / "lemma_sweep.csv").exists()
    capsys.readouterr()
