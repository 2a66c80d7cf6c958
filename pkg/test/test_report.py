import json

import pytest

from report import calibration_table, load_metrics, ood_table, rejection_table, report, summary_table
from ubmf_exceptions import InvalidInput

METRICS = {
    "classifier": "bayes",
    "evaluation": {"mean_std_acc": 0.62, "ci95": 0.05, "n_tasks": 100, "per_task": []},
    "baseline": {"mean_std_acc": 0.41, "ci95": 0.06},
    "calibration": {"ece": 0.08, "mce": 0.2, "abce": 0.04, "bins": 10},
    "ood_auroc": {"de": 0.9, "maxp": 0.8, "mi": 0.85, "joint": 0.92},
    "rejection": {
        "0.7": {"accuracy": 0.8, "kept_fraction": 0.7},
        "0.9": {"accuracy": None, "kept_fraction": 0.0},
    },
    "uncertainty": {"total": 0.9, "aleatoric": 0.6, "epistemic": 0.3},
}


def test_tables():
    summary = summary_table(METRICS)
    assert list(summary["model"]) == ["bayes", "protonet"]
    assert summary.loc[1, "mean_std_acc"] == 0.41
    assert calibration_table(METRICS).loc[0, "abce"] == 0.04
    assert list(ood_table(METRICS)["selector"]) == ["de", "maxp", "mi", "joint"]
    rejection = rejection_table(METRICS)
    assert list(rejection["tau_c"]) == [0.7, 0.9]
    assert rejection.loc[1, "kept_fraction"] == 0.0


def test_tables_without_optional_parts():
    metrics = {"evaluation": METRICS["evaluation"]}
    assert len(summary_table(metrics)) == 1
    assert ood_table(metrics).empty
    assert rejection_table(metrics).empty
    assert calibration_table(metrics).loc[0, "ece"] is None


def test_report(tmp_path, capsys):
    (tmp_path / "metrics.json").write_text(json.dumps(METRICS), encoding="utf-8")
    tables = report(tmp_path)
    assert set(tables) == {"summary", "calibration", "ood", "rejection"}
    out = capsys.readouterr().out
    assert "Standardized accuracy: 0.6200 +- 0.0500 over 100 tasks" in out
    assert "Uncertainty: total 0.9000 aleatoric 0.6000 epistemic 0.3000" in out


def test_load_metrics_errors(tmp_path):
    with pytest.raises(InvalidInput):
        load_metrics(tmp_path)
    (tmp_path / "metrics.json").write_text("{", encoding="utf-8")
    with pytest.raises(InvalidInput):
        load_metrics(tmp_path)
