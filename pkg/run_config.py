import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ubmf_exceptions import InvalidParameter


@dataclass
class DataConfig:
    # a saved dataset file; when empty a dataset is generated from ``manifest``
    dataset: str | None = None
    # a manifest JSON file; when empty the default bearing manifest is used
    manifest: str | None = None
    counts_per_cell: int = 40
    length: int = 1024
    # per in-distribution class, in class order
    labeled_counts: list[int] = field(default_factory=lambda: [20, 20, 20, 20])
    unlabeled_counts: list[int] = field(default_factory=lambda: [60, 12, 12, 12])
    # classes held out of every training stage, used as OOD positives
    ood_classes: list[int] = field(default_factory=lambda: [4, 5])


@dataclass
class EncoderConfig:
    d: int = 16
    linear: bool = False
    autoencoder_epochs: int = 20
    autoencoder_lr: float = 0.01
    max_reconstruction_error: float = 0.5


@dataclass
class SslConfig:
    t_meta: int = 300
    t_sl: int = 300
    batch_size: int = 16
    temperature: float = 0.5
    tau_p: float = 0.8
    lambda_w: float = 1.0
    lr: float = 0.01
    metric_interval: int = 10
    injection_ratio: float = 0.5
    frozen_metric: bool = False
    prototype_shots: int = 5
    max_grad_norm: float = 5.0
    # contrastive loss on unit-normalized embeddings
    normalize_embeddings: bool = True


@dataclass
class PriorConfig:
    lr: float = 1e-2
    iterations: int = 500
    # bayes | qda_mle | lda
    classifier: str = "bayes"
    textbook_log_det: bool = False
    mle_shrinkage: float = 0.0
    lambda_init: float = 1.0
    psi_init: float = 1.0


@dataclass
class FilterConfig:
    alpha_in: float = 10.0
    omega_out: float = 1.0
    omega_cal: float = 0.5
    omega_rkl: float = 0.0
    lambda_t: float = 0.05
    lambda_out: float = 0.05
    lr: float = 0.01
    steps: int = 200
    batch_size: int = 32
    outer_steps: int = 20
    outer_lambda: float = 0.1
    outer_lr: float = 1e-2
    task_temperature: float = 1.0
    calibrate_iterations: int = 20


@dataclass
class ThresholdConfig:
    # None: 95th percentile of in-distribution training differential entropy
    tau_ood: float | None = None
    tau_c: float = 0.9
    sweep: list[float] = field(default_factory=lambda: [0.7, 0.8, 0.9])
    # model | filter
    confidence_source: str = "model"


@dataclass
class EvaluationConfig:
    # None: number of classes available for evaluation
    max_way: int | None = None
    n_tasks: int = 100
    query_size: int = 50
    baseline: bool = True


@dataclass
class CalibrationConfig:
    bins: int = 10
    v: float = 2.0
    absolute_gap: bool = False


@dataclass
class RunConfig:
    seed: int
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    ssl: SslConfig = field(default_factory=SslConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)

    def validate(self):
        if self.seed is None:
            raise InvalidParameter("Seed is mandatory")
        if self.prior.classifier not in ("bayes", "qda_mle", "lda"):
            raise InvalidParameter("Unknown classifier", context=self.prior.classifier)
        if self.thresholds.confidence_source not in ("model", "filter"):
            raise InvalidParameter(
                "Unknown confidence source", context=self.thresholds.confidence_source
            )
        if not 0.0 <= self.thresholds.tau_c <= 1.0:
            raise InvalidParameter("tau_c must be in [0, 1]", context=self.thresholds.tau_c)
        if self.ssl.metric_interval < 1:
            raise InvalidParameter(
                "Metric interval must be >= 1", context=self.ssl.metric_interval
            )
        if not 0.0 <= self.ssl.injection_ratio <= 1.0:
            raise InvalidParameter(
                "Injection ratio must be in [0, 1]", context=self.ssl.injection_ratio
            )
        for name in ("dataset", "manifest"):
            path = getattr(self.data, name)
            if path is not None and not Path(path).exists():
                raise InvalidParameter(f"Missing {name} file", context=path)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        if "seed" not in data:
            raise InvalidParameter("Seed is mandatory")
        return _build(RunConfig, data, "")


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise InvalidParameter("Expected an object", context=prefix or "<root>")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise InvalidParameter("Unknown configuration keys", context=[prefix + k for k in unknown])
    values = {}
    for name, value in data.items():
        f = known[name]
        if isinstance(f.type, type) and dataclasses.is_dataclass(f.type):
            values[name] = _build(f.type, value, f"{prefix}{name}.")
        else:
            values[name] = value
    return cls(**values)


def parse_override_value(raw: str):
    """
    JSON value when it parses ("0", "true", "[0.7, 0.9]", "null"), the raw string otherwise
    """
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """
    Apply ``--dotted.key value`` pairs to a config dictionary
    """
    if len(overrides) % 2 != 0:
        raise InvalidParameter("Overrides must come as --key value pairs", context=overrides)
    result = json.loads(json.dumps(data))
    for i in range(0, len(overrides), 2):
        key = overrides[i]
        if not key.startswith("--"):
            raise InvalidParameter("Override keys start with --", context=key)
        path = key[2:].split(".")
        node = result
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise InvalidParameter("Override path crosses a value", context=key)
        node[path[-1]] = parse_override_value(overrides[i + 1])
    return result


def load_config(path: Path | str | None, overrides: list[str] | None = None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise InvalidParameter("Unreadable configuration", context=str(path), parent=e)
    data = apply_overrides(data, overrides or [])
    return RunConfig.from_dict(data).validate()
