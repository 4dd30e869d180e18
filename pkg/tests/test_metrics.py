from robustmean.metrics import REGISTRY, export_metrics, trials_total


def test_export_metrics_writes_textfile(tmp_path):
    trials_total.labels(method="cm", mode="sync").inc()
    target = tmp_path / "robustmean.prom"

    assert export_metrics(str(target)) is True
    text = target.read_text(encoding="utf-8")
    assert "robustmean_trials_total" in text
    assert 'method="cm"' in text


def test_export_metrics_without_path_is_a_noop():
    assert export_metrics(None) is False
    assert export_metrics("") is False


def test_export_metrics_reports_unwritable_path(tmp_path):
    assert export_metrics(str(tmp_path / "missing" / "dir" / "out.prom")) is False


def test_registry_is_dedicated():
    names = {metric.name for metric in REGISTRY.collect()}
    assert {"robustmean_trials", "robustmean_trial_duration_seconds", "robustmean_trials_active"} <= names
