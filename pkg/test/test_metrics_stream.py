import json
import math

from metrics_stream import MetricsStream


def test_in_memory():
    stream = MetricsStream(stage="ssl")
    stream.emit(0, loss=1.5, accuracy=0.25)
    stream.emit(1, loss=float("nan"))
    assert stream.values("loss") == [1.5, None]
    assert stream.values("accuracy") == [0.25]
    assert stream.values("loss", stage="filter") == []


def test_for_stage_shares_records(tmp_path):
    path = tmp_path / "metrics" / "train.jsonl"
    stream = MetricsStream(path, stage="ssl")
    stream.emit(0, loss=2.0)
    child = stream.for_stage("prior")
    child.emit(0, loss=math.inf)
    child.emit(1, loss=0.5)
    assert stream.values("loss") == [2.0]
    assert child.values("loss") == [None, 0.5]
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert lines == [
        {"stage": "ssl", "iteration": 0, "loss": 2.0},
        {"stage": "prior", "iteration": 0, "loss": None},
        {"stage": "prior", "iteration": 1, "loss": 0.5},
    ]


def test_new_stream_truncates(tmp_path):
    path = tmp_path / "train.jsonl"
    MetricsStream(path).emit(0, loss=1.0)
    MetricsStream(path)
    assert path.read_text(encoding="utf-8") == ""
