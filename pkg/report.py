import json
from pathlib import Path

import pandas

from ubmf_exceptions import InvalidInput


def load_metrics(run_dir: Path | str) -> dict:
    path = Path(run_dir) / "metrics.json"
    if not path.exists():
        raise InvalidInput("Run has no metrics.json, evaluate it first", context=str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidInput("Unreadable metrics.json", context=str(path), parent=e)


def _format(value, digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def summary_table(metrics: dict) -> pandas.DataFrame:
    evaluation = metrics["evaluation"]
    rows = [
        {
            "model": metrics.get("classifier", "bayes"),
            "mean_std_acc": evaluation["mean_std_acc"],
            "ci95": evaluation["ci95"],
            "n_tasks": evaluation["n_tasks"],
        }
    ]
    baseline = metrics.get("baseline")
    if baseline is not None:
        rows.append(
            {
                "model": "protonet",
                "mean_std_acc": baseline["mean_std_acc"],
                "ci95": baseline["ci95"],
                "n_tasks": evaluation["n_tasks"],
            }
        )
    return pandas.DataFrame(rows)


def calibration_table(metrics: dict) -> pandas.DataFrame:
    calibration = metrics.get("calibration") or {}
    return pandas.DataFrame(
        [{name: calibration.get(name) for name in ("ece", "mce", "abce", "bins")}]
    )


def ood_table(metrics: dict) -> pandas.DataFrame:
    report = metrics.get("ood_auroc") or {}
    return pandas.DataFrame(
        [{"selector": name, "auroc": value} for name, value in report.items()],
        columns=["selector", "auroc"],
    )


def rejection_table(metrics: dict) -> pandas.DataFrame:
    sweep = metrics.get("rejection") or {}
    return pandas.DataFrame(
        [
            {"tau_c": float(tau), "accuracy": row["accuracy"], "kept_fraction": row["kept_fraction"]}
            for tau, row in sweep.items()
        ],
        columns=["tau_c", "accuracy", "kept_fraction"],
    )


def report(run_dir: Path | str) -> dict[str, pandas.DataFrame]:
    """
    Print the run summary tables; the output only depends on files under ``run_dir``
    """
    metrics = load_metrics(run_dir)
    tables = {
        "summary": summary_table(metrics),
        "calibration": calibration_table(metrics),
        "ood": ood_table(metrics),
        "rejection": rejection_table(metrics),
    }
    evaluation = metrics["evaluation"]
    pandas.set_option("display.max_rows", None)
    pandas.set_option("display.max_columns", None)
    pandas.set_option("display.width", 2000)
    print(
        f"Standardized accuracy: {_format(evaluation['mean_std_acc'])} "
        f"+- {_format(evaluation['ci95'])} over {evaluation['n_tasks']} tasks"
    )
    for name, table in tables.items():
        print()
        print(name)
        print(table.to_string(index=False))
    uncertainty = metrics.get("uncertainty")
    if uncertainty is not None:
        print()
        print(
            "Uncertainty: total {} aleatoric {} epistemic {}".format(
                *(_format(uncertainty[k]) for k in ("total", "aleatoric", "epistemic"))
            )
        )
    pandas.reset_option("display.max_rows")
    pandas.reset_option("display.max_columns")
    pandas.reset_option("display.width")
    return tables
