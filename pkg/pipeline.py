"""
Stage driver: data -> pseudo_label -> ssl -> filter -> prior -> evaluate

Every stage writes its result under ``<output_dir>/checkpoints`` and, with
``resume``, a stage whose checkpoint exists is loaded instead of re-run.
Each stage draws from its own named random stream, so a resumed run ends
with the same metrics as an uninterrupted one.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas
from sklearn.decomposition import PCA

import datagen
from bayes_qda import (
    BayesQdaModel,
    LdaModel,
    NIWParams,
    QdaMleModel,
    default_prior,
    ensemble_predictive,
    episode_features,
    feature_task,
    group_by_class,
    meta_fit_prior,
)
from calibration import bin_reliability, calibration_metrics, records_from_probabilities, reliability_export
from encoder.autoencoder import Autoencoder, train_autoencoder
from encoder.checkpoint import load_checkpoint, save_checkpoint
from encoder.feature_encoder import build_encoder, build_linear_encoder, build_metric_encoder, encode_batch
from encoder.network import Network
from encoder.training import ParamBundle
from metrics_stream import MetricsStream
from perturb.perturb_spec import PerturbKind, PerturbSpec, default_strong_specs, default_weak_specs
from perturb.signal_perturber import SignalPerturber
from random_generator import RandomGenerator
from run_config import EncoderConfig, RunConfig
from sample_filter import (
    FilterHead,
    FilterThresholds,
    build_filter_head,
    calibrate_with_confident,
    domain_aware_prior,
    filter_dataset,
    make_ood_negatives,
    ood_detection_report,
    ood_threshold,
    rejection_sweep,
    train_filter,
    validation_adequacy,
)
from signal_sample import Signal, stack_signals
from ssl_meta import feature_spread, run_pseudo_label_phase, run_ssl_phase
from tasking import ProtoNetModel, evaluate, sample_episode
from ubmf_exceptions import (
    InvalidInput,
    InvalidParameter,
    StageFailure,
    UbmfException,
    UndefinedMetric,
)
from uncertainty import decompose_predictive

logger = logging.getLogger(__name__)

STAGES = ("data", "pseudo_label", "ssl", "filter", "prior", "evaluate")
PRIOR_TASKS = 100
UNCERTAINTY_QUERY = 10


@dataclass
class DataSplit:
    labeled: list[Signal]
    unlabeled: list[Signal]
    test: list[Signal]
    ood: list[Signal]
    classes: list[int]


def check_finite(value, path: str = "metrics"):
    """
    Every number of a metrics document must be finite; None marks an undefined value
    """
    if isinstance(value, dict):
        for k, v in value.items():
            check_finite(v, f"{path}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            check_finite(v, f"{path}[{i}]")
    elif isinstance(value, bool) or value is None or isinstance(value, str):
        return
    elif isinstance(value, (int, float, np.integer, np.floating)):
        if not math.isfinite(float(value)):
            raise StageFailure("evaluate", "Non-finite metric", context=path)
    else:
        raise StageFailure("evaluate", "Unsupported metric type", context=(path, type(value)))


def write_metrics(metrics: dict, path: Path):
    check_finite(metrics)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n", encoding="utf-8")


class Pipeline:
    def __init__(self, config: RunConfig, resume: bool = False):
        self.config = config
        self.resume = resume
        self.rng = RandomGenerator(config.seed)
        self.run_dir = Path(config.output_dir)
        self.checkpoints = self.run_dir / "checkpoints"
        self.stream = MetricsStream(self.run_dir / "training_metrics.jsonl")
        self._split: DataSplit | None = None
        self._baseline_encoder: Network | None = None
        self._encoder: Network | None = None
        self._metric: Network | None = None
        self._ssl_done = False
        self._head: FilterHead | None = None
        self._tau_ood: float | None = None
        self._phi: NIWParams | None = None

    def _stage(self, name: str, fn):
        logger.info("Stage %s", name)
        try:
            return fn()
        except StageFailure:
            raise
        except UbmfException as e:
            raise StageFailure(name, e.message(), context=e.context(), parent=e)

    def _checkpoint(self, name: str) -> Path:
        return self.checkpoints / f"{name}.ckpt"

    def _load(self, name: str) -> tuple[ParamBundle, dict] | None:
        path = self._checkpoint(name)
        if self.resume and path.exists():
            logger.info("Resuming %s from %s", name, path)
            return load_checkpoint(path)
        return None

    def data(self) -> DataSplit:
        if self._split is None:
            self._split = self._stage("data", self._data)
        return self._split

    def _data(self) -> DataSplit:
        config = self.config.data
        if config.dataset is not None:
            file = datagen.load(config.dataset)
        else:
            if config.manifest is not None:
                manifest = datagen.load_manifest(config.manifest)
            else:
                manifest = datagen.default_manifest(
                    config.counts_per_cell, config.length, self.config.seed
                )
            file = datagen.generate(manifest, self.rng.child("data"))
        signals = file.signals()
        classes = [c for c in file.manifest.class_ids() if c not in config.ood_classes]
        split = datagen.make_imbalanced_split(
            [s for s in signals if s.label in classes],
            dict(zip(classes, config.labeled_counts)),
            dict(zip(classes, config.unlabeled_counts)),
            self.rng.child("split").numpy(),
        )
        ood = [s for s in signals if s.label in config.ood_classes]
        logger.info(
            "Split: %d labeled, %d unlabeled, %d test, %d OOD",
            len(split.labeled),
            len(split.unlabeled),
            len(split.test),
            len(ood),
        )
        return DataSplit(split.labeled, split.unlabeled, split.test, ood, classes)

    def pseudo_label(self) -> tuple[Network, Network | None]:
        if self._encoder is None:
            self._encoder, self._metric = self._stage("pseudo_label", self._pseudo_label)
            self._baseline_encoder = self._encoder
        return self._encoder, self._metric

    def _pseudo_label(self) -> tuple[Network, Network | None]:
        loaded = self._load("pseudo_label")
        if loaded is not None:
            return loaded[0]["encoder"], loaded[0].get("metric")
        split = self.data()
        init = self.rng.child("init").numpy()
        template = split.labeled[0]
        build = build_linear_encoder if self.config.encoder.linear else build_encoder
        encoder = build(template.channels(), template.length(), init, self.config.encoder.d)
        metric = build_metric_encoder(init, self.config.encoder.d)
        encoder, metric = run_pseudo_label_phase(
            split.labeled,
            encoder,
            metric,
            self.config.ssl,
            self.rng,
            stream=self.stream.for_stage("pseudo_label"),
            max_way=self.config.evaluation.max_way,
        )
        self._save("pseudo_label", encoder=encoder, metric=metric)
        return encoder, metric

    def _save(self, name: str, **networks: Network | None):
        bundle = ParamBundle({k: v for k, v in networks.items() if v is not None})
        save_checkpoint(self._checkpoint(name), bundle, self.config.seed, STAGES.index(name))

    def ssl(self) -> tuple[Network, Network | None]:
        self.pseudo_label()
        if not self._ssl_done:
            self._encoder = self._stage("ssl", self._ssl)
            self._ssl_done = True
        return self._encoder, self._metric

    def _ssl(self) -> Network:
        loaded = self._load("ssl")
        if loaded is not None:
            return loaded[0]["encoder"]
        split = self.data()
        std = float(np.mean([s.values.std() for s in split.labeled]))
        encoder = run_ssl_phase(
            split.labeled,
            self._encoder,
            self._metric,
            self.config.ssl,
            self.rng,
            default_weak_specs(std),
            default_strong_specs(split.labeled[0].channels()),
            unlabeled=split.unlabeled,
            stream=self.stream.for_stage("ssl"),
        )
        self._save("ssl", encoder=encoder)
        return encoder

    def filter(self) -> FilterHead:
        self.ssl()
        if self._head is None:
            self._head = self._stage("filter", self._filter)
        return self._head

    def _thresholds(self) -> FilterThresholds:
        return FilterThresholds(self._tau_ood, self.config.thresholds.tau_c)

    def _filter(self) -> FilterHead:
        split = self.data()
        loaded = self._load("filter")
        if loaded is not None:
            bundle, _ = loaded
            head = FilterHead(bundle["filter"], tuple(split.classes))
            self._encoder = bundle["encoder"]
            self._metric = bundle.get("metric")
            self._tau_ood = self._resolve_tau_ood(head)
            return head
        template = split.labeled[0]
        head = build_filter_head(
            template.channels(), template.length(), split.classes, self.rng.child("filter_init").numpy()
        )
        negatives = make_ood_negatives(
            split.labeled, len(split.labeled) // 2, self.rng.child("negatives").numpy()
        )
        head = train_filter(
            head,
            split.labeled,
            negatives,
            self.config.filter,
            self.rng,
            stream=self.stream.for_stage("filter"),
        )
        self._tau_ood = self._resolve_tau_ood(head)
        result = filter_dataset(head, split.unlabeled, self._thresholds())
        result.export_decisions(self.run_dir / "filter_decisions.csv")
        self._encoder, self._metric = calibrate_with_confident(
            result.kept,
            split.labeled,
            head,
            self._encoder,
            self._metric,
            self.config.ssl,
            self.config.filter.calibrate_iterations,
            self.rng,
            stream=self.stream.for_stage("calibrate"),
        )
        self._save("filter", filter=head.network, encoder=self._encoder, metric=self._metric)
        return head

    def _resolve_tau_ood(self, head: FilterHead) -> float:
        if self.config.thresholds.tau_ood is not None:
            return float(self.config.thresholds.tau_ood)
        return ood_threshold(head, self.data().labeled)

    def prior(self) -> NIWParams:
        self.filter()
        if self._phi is None:
            self._phi = self._stage("prior", self._prior)
        return self._phi

    def _prior(self) -> NIWParams:
        path = self.checkpoints / "prior.json"
        if self.resume and path.exists():
            return NIWParams.from_dict(json.loads(path.read_text(encoding="utf-8")))
        split = self.data()
        config = self.config.prior
        d = self.config.encoder.d
        tasks = [
            feature_task(
                sample_episode(
                    split.labeled,
                    self.config.evaluation.max_way,
                    self.rng.child("prior", i).numpy(),
                    query_per_class=self.config.ssl.prototype_shots,
                ),
                self._encoder,
            )
            for i in range(PRIOR_TASKS)
        ]
        phi = meta_fit_prior(
            tasks,
            default_prior(d, config.lambda_init, config.psi_init),
            config.lr,
            config.iterations,
            stream=self.stream.for_stage("prior"),
        )
        phi = domain_aware_prior(
            phi,
            split.labeled,
            self._encoder,
            self._head,
            self._thresholds(),
            self.config.filter,
            self.rng,
            self.config.evaluation.max_way,
            stream=self.stream.for_stage("outer"),
            query_per_class=self.config.ssl.prototype_shots,
        )
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(phi.to_dict(), sort_keys=True), encoding="utf-8")
        return phi

    def diagnosis_model(self):
        config = self.config.prior
        if config.classifier == "qda_mle":
            return QdaMleModel(self._encoder, config.mle_shrinkage, config.textbook_log_det)
        if config.classifier == "lda":
            return LdaModel(self._encoder)
        return BayesQdaModel(self._encoder, self._phi)

    def evaluate(self) -> dict:
        self.prior()
        return self._stage("evaluate", self._evaluate)

    def _evaluate(self) -> dict:
        split = self.data()
        config = self.config.evaluation
        model = self.diagnosis_model()
        rng = self.rng.child("evaluation")
        summary = evaluate(model, split.test, config.max_way, rng, config.n_tasks, config.query_size)
        metrics = {
            "seed": self.config.seed,
            "classifier": self.config.prior.classifier,
            "evaluation": summary.to_dict(),
            "prior": self._phi.to_dict(),
            "tau_ood": self._tau_ood,
        }
        if config.baseline:
            baseline = evaluate(
                ProtoNetModel(self._baseline_encoder),
                split.test,
                config.max_way,
                rng,
                config.n_tasks,
                config.query_size,
            )
            metrics["baseline"] = {"mean_std_acc": baseline.mean_std_acc, "ci95": baseline.ci95}

        records = self._calibration_records(model, split.test, rng)
        calibration = self.config.calibration
        metrics["calibration"] = calibration_metrics(
            records, calibration.bins, calibration.v, calibration.absolute_gap
        )
        if records:
            reliability_export(bin_reliability(records, calibration.bins), self.run_dir / "reliability.csv")
        metrics["uncertainty"] = self._uncertainty(split.test, rng)
        metrics["ood_auroc"] = self._ood_report(split)
        metrics["rejection"] = rejection_sweep(
            model,
            split.test,
            self._head,
            self.config.thresholds.sweep,
            rng,
            config.max_way,
            config.n_tasks,
            config.query_size,
            self.config.thresholds.confidence_source,
        )
        metrics["validation"] = validation_adequacy(
            self._head, split.test, self.config.thresholds.tau_c
        )
        metrics["feature_spread"] = feature_spread(self._encoder, split.labeled, self._metric)
        self._export_pca(split)
        write_metrics(metrics, self.run_dir / "metrics.json")
        return metrics

    def _calibration_records(self, model, signals: list[Signal], rng: RandomGenerator) -> list:
        if not hasattr(model, "predict_proba"):
            return []
        config = self.config.evaluation
        records = []
        for task in range(config.n_tasks):
            episode = sample_episode(
                signals, config.max_way, rng.child("evaluate", task).numpy(), query_size=config.query_size
            )
            records.extend(
                records_from_probabilities(
                    model.predict_proba(episode), episode.query_labels(), episode.classes
                )
            )
        return records

    def _uncertainty(self, signals: list[Signal], rng: RandomGenerator) -> dict | None:
        """
        Mean total / aleatoric / epistemic entropy of posterior draws on one episode
        """
        if self.config.evaluation.n_tasks == 0 or self.config.prior.classifier != "bayes":
            return None
        config = self.config.evaluation
        episode = sample_episode(
            signals, config.max_way, rng.child("uncertainty").numpy(), query_size=config.query_size
        )
        support, query = episode_features(episode, self._encoder)
        labels = [s.label for s in episode.support]
        members = ensemble_predictive(
            self._phi,
            group_by_class(support, labels, episode.classes),
            query[:UNCERTAINTY_QUERY],
            rng.child("ensemble").numpy(),
        )
        parts = [decompose_predictive(members[:, i, :]) for i in range(members.shape[1])]
        return {
            name: float(np.mean([getattr(p, name) for p in parts]))
            for name in ("total", "aleatoric", "epistemic")
        }

    def _ood_report(self, split: DataSplit) -> dict | None:
        if not split.ood or not split.test:
            return None
        try:
            return ood_detection_report(self._head, split.test, split.ood)
        except UndefinedMetric as e:
            logger.warning("OOD AUROC undefined: %s", e)
            return None

    def _export_pca(self, split: DataSplit):
        signals = split.test + split.ood
        if len(signals) < 2:
            return
        features = encode_batch(self._encoder, stack_signals(signals))
        coords = PCA(n_components=2, random_state=0).fit_transform(features)
        table = pandas.DataFrame(
            {
                "sample_id": [s.source_id for s in signals],
                "label": [s.label for s in signals],
                "ood": [s.label in self.config.data.ood_classes for s in signals],
                "pc1": coords[:, 0],
                "pc2": coords[:, 1],
            }
        )
        table.to_csv(self.run_dir / "pca_coords.csv", index=False, float_format="%.17g")

    def run(self) -> dict:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "config.json").write_text(
            json.dumps(self.config.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
        )
        return self.evaluate()


def perturb_dataset_file(
    data_path: Path | str,
    specs_path: Path | str,
    out_path: Path | str,
    seed: int,
    encoder_config: EncoderConfig | None = None,
) -> datagen.DatasetFile:
    """
    Apply a JSON list of perturbation specs to every sample of a dataset file

    An autoencoder is trained first when a latent kind is requested.
    """
    file = datagen.load(data_path)
    try:
        raw = json.loads(Path(specs_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidParameter("Unreadable perturbation specs", context=str(specs_path), parent=e)
    specs = [PerturbSpec.from_dict(item) for item in raw]
    signals = file.signals()
    autoencoder = None
    if any(spec.kind in (PerturbKind.LATENT_JITTER, PerturbKind.LATENT_INTERP) for spec in specs):
        config = encoder_config or EncoderConfig()
        rng = RandomGenerator(seed, ("autoencoder",)).numpy()
        autoencoder = Autoencoder.build(
            file.manifest.channels,
            file.manifest.length,
            rng,
            config.d,
            config.linear,
            config.max_reconstruction_error,
        )
        autoencoder, _ = train_autoencoder(
            autoencoder, signals, config.autoencoder_epochs, config.autoencoder_lr, rng
        )
    perturbed = SignalPerturber(autoencoder).perturb_dataset(signals, specs, seed)
    if len(perturbed) == 0:
        raise InvalidInput("No sample could be perturbed", context=str(data_path))
    result = datagen.from_arrays(
        np.stack([s.values for s in perturbed]),
        [s.label for s in perturbed],
        [s.condition for s in perturbed],
        file.manifest.sample_rate,
        f"{file.manifest.name}-perturbed",
    )
    datagen.save(result, out_path)
    return result
