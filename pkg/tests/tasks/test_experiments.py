from __future__ import annotations

import csv
import math

import numpy as np
import pytest
import yaml

from robustmean.errors import ConfigError, InvalidParameterError, RecoverabilityError
from robustmean.services.estimator import Mode
from robustmean.services.experiment_config import load_config
from robustmean.tasks import experiments
from robustmean.tasks.experiments import (
    CSV_COLUMNS,
    compare_methods,
    fit_rate,
    mean_and_se,
    run_experiment,
    tomography_demo,
)

SMALL = """\
problem.A = A.txt
problem.mu_true = mu_true.txt
problem.sigma = 1
problem.m = 1
problem.adversaries = 6
box.lo = 0
box.hi = 30
attack.kind = baruch
run.mode = sync
run.schedule = s3
run.n = 200
run.trials = 3
run.seed = 5
baseline.s = 3
"""


def _rows(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


# --- statistics ------------------------------------------------------------------


def test_mean_and_se():
    mean, se = mean_and_se(np.array([[1.0], [3.0]]))
    assert mean[0] == pytest.approx(2.0)
    assert se[0] == pytest.approx(1.0)
    _, single = mean_and_se(np.array([[5.0]]))
    assert single[0] == 0.0


@pytest.mark.parametrize("power", [0.5, 1.0])
def test_fit_rate_recovers_exact_power_laws(power):
    points = [(n, 3.0 * n**-power) for n in (100, 316, 1000, 3162, 10000)]
    fit = fit_rate(points)
    assert fit.slope == pytest.approx(-power, abs=1e-9)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-9)
    assert fit.residual == pytest.approx(0.0, abs=1e-9)
    assert not fit.flagged


def test_fit_rate_excludes_nonpositive_values():
    points = [(100, 0.1), (316, 0.0), (1000, 0.01), (3162, -1.0), (10000, 0.001)]
    fit = fit_rate(points)
    assert fit.flagged
    assert fit.excluded == [316.0, 3162.0]
    assert fit.points == 3
    assert fit.slope == pytest.approx(-0.5, abs=1e-9)


def test_fit_rate_needs_enough_points():
    with pytest.raises(InvalidParameterError):
        fit_rate([(100, 1.0), (1000, 0.1)])
    with pytest.raises(InvalidParameterError):
        fit_rate([(100, 0.0), (200, 0.0), (300, 0.0), (400, 0.0), (500, 1.0)])


# --- single experiments --------------------------------------------------------


def test_run_experiment_writes_csv_and_metadata(write_config, tmp_path):
    config = load_config(write_config(SMALL))
    report = run_experiment(config, out=tmp_path / "out" / "estimator.csv", max_workers=1)

    header, rows = _rows(report.csv_path)
    assert header == "# robustmean-csv schema=2"
    assert tuple(rows[0].keys()) == CSV_COLUMNS
    assert CSV_COLUMNS[:7] == ("trial", "t", "f_x", "f_xtail", "err_x_l2", "max_honest_y_err", "bound_value")
    assert {row["rule"] for row in rows} == {""}
    assert {row["trial"] for row in rows} == {"0", "1", "2"}
    assert {row["method"] for row in rows} == {"estimator"}
    assert {row["attack"] for row in rows} == {"baruch-y"}
    final = [row for row in rows if row["t"] == "200"]
    assert len(final) == 3
    assert all(row["bound_value"] for row in final)

    meta = yaml.safe_load(report.meta_path.read_text(encoding="utf-8"))
    assert report.meta_path.name == "estimator.meta.yaml"
    assert meta["schema_version"] == 2
    assert meta["trials"] == 3
    assert meta["problem"]["adversaries"] == [6]
    assert meta["recoverability"]["holds_A2"] is True
    assert meta["bound"] == "ok"
    assert report.rate is None
    assert report.final_error == pytest.approx(report.at("err_x", 200)[0])


def test_run_experiment_is_deterministic(write_config, tmp_path):
    config = load_config(write_config(SMALL.replace("run.mode = sync", "run.mode = async")))
    first = run_experiment(config, out=tmp_path / "a.csv", max_workers=1)
    second = run_experiment(config, out=tmp_path / "b.csv", max_workers=1)
    pooled = run_experiment(config, out=tmp_path / "c.csv", max_workers=2)

    text = first.csv_path.read_text(encoding="utf-8")
    assert text == second.csv_path.read_text(encoding="utf-8")
    assert text == pooled.csv_path.read_text(encoding="utf-8")


def test_run_experiment_fits_rate(write_config, tmp_path):
    body = SMALL.replace("run.n = 200", "run.n = 1000") + "run.rate_checkpoints = 100, 200, 400, 700, 1000\n"
    report = run_experiment(load_config(write_config(body)), out=tmp_path / "rate.csv")
    assert report.rate is not None
    assert math.isfinite(report.rate.slope)
    meta = yaml.safe_load(report.meta_path.read_text(encoding="utf-8"))
    assert set(meta["rate_fit"]) >= {"slope", "intercept", "residual", "flagged"}


def test_baseline_experiment_has_no_bound(write_config, tmp_path):
    config = load_config(write_config(SMALL)).with_method("cm+bucketing")
    report = run_experiment(config, out=tmp_path / "cm.csv", series_dir=tmp_path / "series")
    _, rows = _rows(report.csv_path)

    assert {row["method"] for row in rows} == {"cm+bucketing(3)"}
    assert {row["rule"] for row in rows} == {"cm"}
    assert {row["attack"] for row in rows} == {"baruch"}
    assert all(row["bound_value"] == "" for row in rows)
    assert report.bound is None
    assert [p.name for p in report.series_paths] == ["cm_bucketing-f_xtail.dat", "cm_bucketing-err_x.dat"]
    assert (tmp_path / "series" / "index.gp").read_text(encoding="utf-8").startswith("set logscale xy")


def test_partial_output_is_removed_on_failure(write_config, tmp_path, monkeypatch):
    config = load_config(write_config(SMALL))

    def broken(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr(experiments, "write_series", broken)
    with pytest.raises(OSError):
        run_experiment(config, out=tmp_path / "partial.csv", series_dir=tmp_path / "series")
    assert not (tmp_path / "partial.csv").exists()
    assert not (tmp_path / "partial.meta.yaml").exists()


def test_partial_output_can_be_kept(write_config, tmp_path, monkeypatch):
    config = load_config(write_config(SMALL))

    def broken(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr(experiments, "write_series", broken)
    monkeypatch.setattr(experiments.Settings, "KEEP_PARTIAL_OUTPUT", True)
    with pytest.raises(OSError):
        run_experiment(config, out=tmp_path / "kept.csv", series_dir=tmp_path / "series")
    assert (tmp_path / "kept.csv").exists()


def test_run_experiment_exports_metrics(write_config, tmp_path):
    config = load_config(write_config(SMALL))
    metrics = tmp_path / "metrics.prom"
    run_experiment(config, out=tmp_path / "m.csv", metrics_out=str(metrics))
    text = metrics.read_text(encoding="utf-8")
    assert "robustmean_trials_total" in text
    assert 'method="estimator"' in text


# --- comparisons -----------------------------------------------------------------


def test_compare_methods_ranks_by_final_error(write_config, tmp_path):
    base = load_config(write_config(SMALL))
    configs = [base.with_method(label) for label in ("estimator", "cm", "ctm+bucketing")]
    report = compare_methods(configs, series_dir=tmp_path / "series")

    errors = [entry.final_error for entry in report.results]
    assert errors == sorted(errors)
    assert [entry.rank for entry in report.results] == [1, 2, 3]
    assert sorted(report.ranking) == ["cm", "ctm+bucketing", "estimator"]
    assert report.result("cm").descriptor == "cm"
    assert report.index_path is not None and report.index_path.exists()
    with pytest.raises(KeyError):
        report.result("krum")


def test_compare_single_config(write_config):
    report = compare_methods([load_config(write_config(SMALL))])
    assert report.ranking == ["estimator"]
    assert report.results[0].rank == 1


def test_compare_renames_duplicate_labels(write_config):
    config = load_config(write_config(SMALL.replace("run.trials = 3", "run.trials = 1")))
    other = config.model_copy(update={"run": config.run.model_copy(update={"seed": 6})})
    report = compare_methods([config, other])
    assert sorted(report.ranking) == ["estimator", "estimator-2"]


def test_compare_rejects_different_problems(write_config):
    first = load_config(write_config(SMALL, name="a.cfg"))
    second = load_config(write_config(SMALL.replace("problem.sigma = 1", "problem.sigma = 2"), name="b.cfg"))
    with pytest.raises(ConfigError) as info:
        compare_methods([first, second])
    assert info.value.issues[0][0] == "problem"
    with pytest.raises(InvalidParameterError):
        compare_methods([])


# --- tomography ------------------------------------------------------------------


def test_tomography_demo_recovers_link_means(data_dir):
    report = tomography_demo(data_dir, n=3000, sigma=1.0, seed=3)

    assert report.recoverability.holds_A2
    assert report.recoverability.certified
    assert np.allclose(report.link_means_star[:5], 5.47)
    assert np.allclose(report.link_means_star[5:], [7.88, 11.51, 13.58])
    assert report.theta_error[-1] < report.theta_error[0]
    assert report.link_errors.shape == (8,)
    payload = report.as_dict()
    assert payload["certified"] is True
    assert len(payload["theta_hat"]) == 4


@pytest.mark.slow
@pytest.mark.parametrize("mode", [Mode.SYNC, Mode.ASYNC])
def test_tomography_demo_error_falls_below_a_tenth(data_dir, mode):
    report = tomography_demo(data_dir, n=10_000, sigma=1.0, trials=5, seed=3, mode=mode)
    assert report.theta_error[-1] < 0.1 * report.theta_error[0]


def test_tomography_demo_refuses_unrecoverable_routing(tmp_path, data_dir):
    (tmp_path / "P.txt").write_text("1 1 1 1 1 1 1 1\n" * 7, encoding="utf-8")
    for name in ("B.txt", "mu_true.txt"):
        (tmp_path / name).write_text((data_dir / name).read_text(encoding="utf-8"), encoding="utf-8")
    with pytest.raises(RecoverabilityError):
        tomography_demo(tmp_path, n=10)


# --- acceptance ------------------------------------------------------------------


@pytest.mark.slow
def test_decaying_schedule_rate_under_attack(data_dir, tmp_path):
    report = run_experiment(load_config(data_dir / "rate_s3.cfg"), out=tmp_path / "rate.csv")
    assert report.rate is not None
    assert -0.65 <= report.rate.slope <= -0.35


# constant-alpha schedules are tuned to one horizon, so each n is its own run
@pytest.mark.slow
@pytest.mark.parametrize("schedule, low, high", [("s1", -0.70, -0.30), ("s2", -0.65, -0.35)])
def test_constant_alpha_schedule_rate_across_horizons(data_dir, tmp_path, schedule, low, high):
    config = load_config(data_dir / "rate_s3.cfg")
    points = []
    for n in config.run.rate_checkpoints:
        run_section = config.run.model_copy(update={"schedule": schedule, "n": n, "rate_checkpoints": []})
        report = run_experiment(config.model_copy(update={"run": run_section}), out=tmp_path / f"{schedule}-{n}.csv")
        points.append((n, report.final_f_tail))
    slope = fit_rate(points).slope
    assert low <= slope <= high


@pytest.mark.slow
def test_estimator_wins_under_high_heterogeneity(data_dir):
    config = load_config(data_dir / "paper_fig2f.cfg")
    assert config.run.trials == 10
    report = compare_methods([config.with_method(label) for label in config.compare.methods])
    assert len(report.results) == len(config.compare.methods)
    assert report.ranking[0] == "estimator"


@pytest.mark.slow
def test_independent_seeds_agree_statistically(data_dir):
    config = load_config(data_dir / "rate_s3.cfg")
    reseeded = config.model_copy(update={"run": config.run.model_copy(update={"seed": 99})})
    report = compare_methods([config, reseeded])
    first, second = report.results
    combined = math.hypot(first.final_error_se, second.final_error_se)
    assert abs(first.final_error - second.final_error) <= 3 * combined
