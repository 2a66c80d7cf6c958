import json
import logging
import math
from pathlib import Path

logger = logging.getLogger(__name__)


class MetricsStream:
    """
    Line-delimited JSON training metrics, one object per iteration

    Without a path the records are only kept in memory.
    """

    def __init__(self, path: Path | str | None = None, stage: str = ""):
        self._path = Path(path) if path is not None else None
        self._stage = stage
        self.records: list[dict] = []
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._path.write_text("", encoding="utf-8")

    def for_stage(self, stage: str) -> "MetricsStream":
        child = MetricsStream.__new__(MetricsStream)
        child._path = self._path
        child._stage = stage
        child.records = self.records
        return child

    def emit(self, iteration: int, **values):
        record = {"stage": self._stage, "iteration": int(iteration)}
        for name, value in values.items():
            value = float(value)
            record[name] = value if math.isfinite(value) else None
        self.records.append(record)
        if self._path is not None:
            with open(self._path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        logger.debug("%s", record)

    def values(self, name: str, stage: str | None = None) -> list[float]:
        stage = self._stage if stage is None else stage
        return [r[name] for r in self.records if r["stage"] == stage and name in r]
