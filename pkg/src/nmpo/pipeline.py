"""End-to-end training of the two-stage offload model and prediction with it."""

from __future__ import annotations

import contextlib
import datetime as _dt
import hashlib
import json
import logging
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    CorpusError,
    FeatureError,
    IntegrityError,
    NmpoError,
    SchemaError,
    VersionError,
    with_context,
)
from .evaluation import (
    LABELS,
    PREDICTED_IPC,
    LoaoSummary,
    SearchResult,
    evaluate_all_apps,
    grid_search,
    labeled,
    random_search,
)
from .forest import (
    CLASSIFICATION,
    REGRESSION,
    Hyperparams,
    RandomForestModel,
    canonical_json,
    fit_forest,
    forest_from_dict,
)
from .ingest import PerfProfile, PerfSchema, RunRecord, RunSpec, load_corpus
from .metrics import (
    HOST_FEATURES,
    LABEL_CONVENTIONS,
    NMC_FEATURES,
    MachineRoofline,
    UnitConfig,
    annotate,
    classify_intensity,
)
from .rng import split_seed
from .stats import DEFAULT_LEAKAGE, CorrelationMatrix, build_matrix, correlation_matrix, select_features

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "nmpo-bundle"
BUNDLE_VERSION = 1
IMBALANCE_FRACTION = 0.10

DEFAULT_REGRESSOR_SPACE = {"n_estimators": [50], "max_depth": [None, 8], "min_samples_leaf": [1, 3]}
DEFAULT_CLASSIFIER_SPACE = {"n_estimators": [50], "max_depth": [None, 4], "min_samples_leaf": [1, 3]}

DECISION_NOTES = {"yes": "offload", "maybe": "user decision", "no": "keep on host"}


@dataclass
class PipelineConfig:
    manifest: Path
    seed: int = 0
    k_folds: int = 5
    roofline: MachineRoofline = field(default_factory=MachineRoofline.default)
    units: UnitConfig = field(default_factory=UnitConfig)
    perf_schema: PerfSchema = field(default_factory=PerfSchema)
    label_convention: str = "lower"
    selection_target: str = "nmc_ipc"
    selection_threshold: float = 0.3
    must_keep: tuple[str, ...] = ()
    include_threads: bool = True
    extra_features: tuple[str, ...] = ()
    search: str = "grid"
    n_draws: int = 10
    regressor_space: dict = field(default_factory=lambda: dict(DEFAULT_REGRESSOR_SPACE))
    classifier_space: dict = field(default_factory=lambda: dict(DEFAULT_CLASSIFIER_SPACE))
    direct_classifier: bool = False
    evaluate: bool = True
    timings: Optional[Path] = None
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if self.label_convention not in LABEL_CONVENTIONS:
            raise ConfigError(f"label_convention must be one of {LABEL_CONVENTIONS}")
        if self.search not in ("grid", "random"):
            raise ConfigError("search must be 'grid' or 'random'")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if not 0 <= self.selection_threshold:
            raise ConfigError("selection_threshold must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | str = ".") -> "PipelineConfig":
        base = Path(base_dir)
        known = {"manifest", "seed", "k_folds", "roofline", "units", "perf_schema",
                 "label_convention", "selection", "search", "direct_classifier", "evaluate",
                 "timings", "n_jobs", "features"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        if "manifest" not in d:
            raise ConfigError("config is missing 'manifest'")
        sel = d.get("selection", {})
        search = d.get("search", {})
        feats = d.get("features", {})
        kwargs: dict[str, Any] = dict(
            manifest=base / d["manifest"],
            seed=int(d.get("seed", 0)),
            k_folds=int(d.get("k_folds", 5)),
            roofline=MachineRoofline.from_dict(d.get("roofline")),
            units=UnitConfig.from_dict(d.get("units", {})),
            perf_schema=PerfSchema.from_dict(d.get("perf_schema", {})),
            label_convention=d.get("label_convention", "lower"),
            selection_target=sel.get("target", "nmc_ipc"),
            selection_threshold=float(sel.get("threshold", 0.3)),
            must_keep=tuple(sel.get("must_keep", ())),
            include_threads=bool(feats.get("include_threads", True)),
            extra_features=tuple(feats.get("extra", ())),
            search=search.get("method", "grid"),
            n_draws=int(search.get("n_draws", 10)),
            regressor_space=dict(search.get("regressor", DEFAULT_REGRESSOR_SPACE)),
            classifier_space=dict(search.get("classifier", DEFAULT_CLASSIFIER_SPACE)),
            direct_classifier=bool(d.get("direct_classifier", False)),
            evaluate=bool(d.get("evaluate", True)),
            timings=base / d["timings"] if d.get("timings") else None,
            n_jobs=d.get("n_jobs"),
        )
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc, path.parent)

    def host_candidates(self) -> list[str]:
        cols = list(HOST_FEATURES)
        if self.include_threads:
            cols.append("threads")
        cols.extend(self.extra_features)
        return cols


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except NmpoError as exc:
        raise with_context(exc, name) from exc


@dataclass
class ModelBundle:
    ipc_regressor: RandomForestModel
    suitability_classifier: RandomForestModel
    host_features: list[str]
    selection_report: dict
    units: UnitConfig = field(default_factory=UnitConfig)
    perf_schema: PerfSchema = field(default_factory=PerfSchema)
    roofline: MachineRoofline = field(default_factory=MachineRoofline.default)
    label_convention: str = "lower"
    direct_classifier: Optional[RandomForestModel] = None
    metadata: dict = field(default_factory=dict)
    created_at: str = ""
    format_version: int = BUNDLE_VERSION

    @property
    def feature_schema(self) -> dict:
        return {"host": list(self.host_features),
                "classifier": list(self.host_features) + [PREDICTED_IPC]}

    def content(self) -> dict:
        """Everything except the timestamp."""
        return {
            "format": BUNDLE_FORMAT,
            "format_version": self.format_version,
            "feature_schema": self.feature_schema,
            "ipc_regressor": self.ipc_regressor.to_dict(),
            "suitability_classifier": self.suitability_classifier.to_dict(),
            "direct_classifier": None if self.direct_classifier is None else self.direct_classifier.to_dict(),
            "selection_report": self.selection_report,
            "units": self.units.to_dict(),
            "perf_schema": self.perf_schema.to_dict(),
            "roofline": self.roofline.to_dict(),
            "label_convention": self.label_convention,
            "metadata": self.metadata,
        }

    @property
    def digest(self) -> str:
        """sha256 of the canonical content; the provenance hash of predictions."""
        return hashlib.sha256(canonical_json(self.content()).encode()).hexdigest()

    def to_dict(self) -> dict:
        d = self.content()
        d["created_at"] = self.created_at
        d["content_sha256"] = self.digest
        return d

    def dumps(self) -> str:
        return canonical_json(self.to_dict()) + "\n"


def _timestamp() -> str:
    """UTC creation time; ``SOURCE_DATE_EPOCH`` pins it for reproducible builds."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        when = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
    else:
        when = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def save_model(bundle: ModelBundle, path) -> None:
    atomic_write_text(path, bundle.dumps())


def _need(cond, where, msg):
    if not cond:
        raise IntegrityError(f"{where}: {msg}")


def bundle_from_dict(d: Any, where: str = "bundle") -> ModelBundle:
    _need(isinstance(d, dict), where, "top level must be an object")
    _need(d.get("format") == BUNDLE_FORMAT, where, "not a model bundle")
    version = d.get("format_version")
    if version != BUNDLE_VERSION:
        raise VersionError(f"{where}: unsupported bundle format_version {version!r} "
                           f"(this build reads {BUNDLE_VERSION})")
    stored = d.get("content_sha256")
    _need(isinstance(stored, str), where, "missing content_sha256")
    body = {k: v for k, v in d.items() if k not in ("created_at", "content_sha256")}
    _need(hashlib.sha256(canonical_json(body).encode()).hexdigest() == stored, where,
          "content does not match content_sha256 (corrupted or hand-edited)")
    schema = d.get("feature_schema")
    _need(isinstance(schema, dict) and isinstance(schema.get("host"), list), f"{where}.feature_schema",
          "missing host feature list")
    host = list(schema["host"])
    _need(schema.get("classifier") == host + [PREDICTED_IPC], f"{where}.feature_schema",
          "classifier schema must be host features plus predicted_ipc")
    reg = forest_from_dict(d.get("ipc_regressor"), f"{where}.ipc_regressor")
    clf = forest_from_dict(d.get("suitability_classifier"), f"{where}.suitability_classifier")
    _need(reg.mode == REGRESSION, f"{where}.ipc_regressor", "must be a regression forest")
    _need(clf.mode == CLASSIFICATION, f"{where}.suitability_classifier", "must be a classification forest")
    _need(reg.n_features == len(host), f"{where}.ipc_regressor", "feature count does not match schema")
    _need(clf.n_features == len(host) + 1, f"{where}.suitability_classifier",
          "feature count does not match schema")
    direct = d.get("direct_classifier")
    direct = None if direct is None else forest_from_dict(direct, f"{where}.direct_classifier")
    try:
        return ModelBundle(
            ipc_regressor=reg,
            suitability_classifier=clf,
            host_features=host,
            selection_report=d.get("selection_report", {}),
            units=UnitConfig.from_dict(d.get("units", {})),
            perf_schema=PerfSchema.from_dict(d.get("perf_schema", {})),
            roofline=MachineRoofline.from_dict(d.get("roofline")),
            label_convention=d.get("label_convention", "lower"),
            direct_classifier=direct,
            metadata=d.get("metadata", {}),
            created_at=d.get("created_at", ""),
            format_version=version,
        )
    except (ConfigError, TypeError, AttributeError) as exc:
        raise IntegrityError(f"{where}: {exc}") from None


def _reject_constant(name):
    raise IntegrityError(f"non-finite constant {name} in model")


def loads_model(text: str, where: str = "bundle") -> ModelBundle:
    try:
        d = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{where}: corrupted JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return bundle_from_dict(d, where)


def load_model(path) -> ModelBundle:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IntegrityError(f"cannot read model {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise IntegrityError(f"{path}: not a text file") from None
    return loads_model(text, str(path))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    bundle: ModelBundle
    records: list[RunRecord]
    correlation: CorrelationMatrix
    selected: list[str]
    regressor_search: SearchResult
    classifier_search: SearchResult
    evaluation: Optional[LoaoSummary] = None
    warnings: list[str] = field(default_factory=list)
    ipc_mismatch: dict = field(default_factory=dict)


def _search(cfg: PipelineConfig, X, y, space, mode, base: Hyperparams) -> SearchResult:
    k = min(cfg.k_folds, X.shape[0])
    labels = LABELS if mode == CLASSIFICATION else None
    if cfg.search == "random":
        return random_search(X, y, space, cfg.n_draws, k, cfg.seed, mode, base, labels, cfg.n_jobs)
    return grid_search(X, y, space, k, cfg.seed, mode, base, labels, cfg.n_jobs)


def class_balance_warnings(labels: Sequence[str]) -> list[str]:
    counts = Counter(labels)
    n = len(labels)
    out = []
    for label in LABELS:
        share = counts.get(label, 0) / n
        if share < IMBALANCE_FRACTION:
            out.append(f"class imbalance: '{label}' is {share:.1%} of training rows "
                       f"({counts.get(label, 0)} of {n})")
    return out


def prepare_records(cfg: PipelineConfig) -> list[RunRecord]:
    with stage("ingest"):
        records = load_corpus(cfg.manifest, cfg.perf_schema)
    with stage("metrics"):
        return annotate(records, cfg.units, cfg.label_convention)


def select_host_features(cfg: PipelineConfig, train: Sequence[RunRecord]):
    host = cfg.host_candidates()
    columns = host + list(NMC_FEATURES)
    with stage("stats"):
        m = build_matrix(train, columns)
        cm = correlation_matrix(m)
        selected = select_features(cm, cfg.selection_target, cfg.selection_threshold,
                                   cfg.must_keep, DEFAULT_LEAKAGE, candidates=host)
    warnings = [f"feature '{n}' is constant in the training data; correlation undefined"
                for n in cm.undefined]
    if not selected:
        warnings.append(f"no host feature reaches |r| >= {cfg.selection_threshold} against "
                        f"{cfg.selection_target}; using all host features")
        selected = [n for n in host if n not in cm.undefined] or host
    return cm, selected, warnings


def train_pipeline(cfg: PipelineConfig, records: Sequence[RunRecord] | None = None) -> TrainResult:
    """Build the labeled corpus, select features, tune and fit both stages."""
    if records is None:
        records = prepare_records(cfg)
    train = [r for r in labeled(records) if r.spec.role == "train"]
    apps = sorted({r.spec.app for r in train})
    if len(apps) < 2:
        raise CorpusError(f"training needs labeled runs from at least 2 applications, found {len(apps)}")
    if len(train) < 2:
        raise CorpusError("training needs at least 2 labeled runs")

    cm, selected, warnings = select_host_features(cfg, train)
    X = build_matrix(train, selected).values
    ipc = np.array([r.derived.nmc_ipc for r in train])
    labels = [str(r.label) for r in train]
    Xc = np.column_stack([X, ipc])
    warnings.extend(class_balance_warnings(labels))

    reg_base = Hyperparams(seed=split_seed(cfg.seed, 1))
    clf_base = Hyperparams(seed=split_seed(cfg.seed, 2))
    with stage("search (regressor)"):
        reg_search = _search(cfg, X, ipc, cfg.regressor_space, REGRESSION, reg_base)
    with stage("search (classifier)"):
        clf_search = _search(cfg, Xc, labels, cfg.classifier_space, CLASSIFICATION, clf_base)

    run_ids = [r.spec.run_id for r in train]
    with stage("fit"):
        reg = fit_forest(X, ipc, reg_search.best, REGRESSION, feature_names=selected,
                         row_ids=run_ids, n_jobs=cfg.n_jobs)
        clf = fit_forest(Xc, labels, clf_search.best, CLASSIFICATION,
                         feature_names=selected + [PREDICTED_IPC], class_labels=LABELS,
                         row_ids=run_ids, n_jobs=cfg.n_jobs)
        direct = None
        if cfg.direct_classifier:
            direct = fit_forest(X, labels, clf_search.best, CLASSIFICATION, feature_names=selected,
                                class_labels=LABELS, row_ids=run_ids, n_jobs=cfg.n_jobs)

    if len(set(labels)) == 1:
        warnings.append(f"every training run is labeled '{labels[0]}'; the classifier is constant")

    # training-set effect of feeding predicted instead of true IPC to stage 2
    pred_ipc = reg.predict(X)
    with_true = clf.predict(Xc)
    with_pred = clf.predict(np.column_stack([X, pred_ipc]))
    mismatch = {
        "train_accuracy_true_ipc": float(np.mean(with_true == np.array(labels, dtype=object))),
        "train_accuracy_predicted_ipc": float(np.mean(with_pred == np.array(labels, dtype=object))),
        "train_ipc_rmse": float(np.sqrt(np.mean((pred_ipc - ipc) ** 2))),
    }

    t = cm.index(cfg.selection_target)
    selection_report = {
        "target": cfg.selection_target,
        "threshold": cfg.selection_threshold,
        "must_keep": list(cfg.must_keep),
        "selected": list(selected),
        "r_to_target": {n: float(cm.r[cm.index(n), t]) for n in cfg.host_candidates()},
        "r_to_speedup": {n: float(cm.r[cm.index(n), cm.index("edp_speedup")]) for n in cm.names},
        "undefined": list(cm.undefined),
    }
    bundle = ModelBundle(
        ipc_regressor=reg,
        suitability_classifier=clf,
        host_features=list(selected),
        selection_report=selection_report,
        units=cfg.units,
        perf_schema=cfg.perf_schema,
        roofline=cfg.roofline,
        label_convention=cfg.label_convention,
        direct_classifier=direct,
        metadata={"seed": cfg.seed, "n_training_rows": len(train), "applications": apps,
                  "regressor_cv": reg_search.report.to_dict(),
                  "classifier_cv": clf_search.report.to_dict()},
        created_at=_timestamp(),
    )

    evaluation = None
    if cfg.evaluate:
        with stage("leave-one-app-out"):
            evaluation = evaluate_all_apps(records, selected, reg_search.best, clf_search.best,
                                           n_jobs=cfg.n_jobs)
    for w in warnings:
        log.warning(w)
    return TrainResult(bundle, list(records), cm, list(selected), reg_search, clf_search,
                       evaluation, warnings, mismatch)


# ---------------------------------------------------------------------------
# prediction


@dataclass
class Prediction:
    app: str
    spec: RunSpec
    predicted_ipc: float
    label: str
    probabilities: dict[str, float]
    roofline_region: Optional[str]
    model_hash: str

    @property
    def decision(self) -> str:
        return DECISION_NOTES[self.label]

    def to_dict(self) -> dict:
        return {
            "app": self.app,
            "spec": self.spec.to_dict(),
            "predicted_ipc": self.predicted_ipc,
            "label": self.label,
            "decision": self.decision,
            "probabilities": dict(self.probabilities),
            "roofline_region": self.roofline_region,
            "model_hash": self.model_hash,
        }


def predict_offload(bundle: ModelBundle, host_profile: PerfProfile, spec: RunSpec) -> Prediction:
    """Predict offload suitability from a host profile alone.

    Stage 1 estimates the NMC IPC from the host features, stage 2 classifies
    host features plus that estimate. Nothing on the NMC side is consulted.
    """
    if bundle.format_version != BUNDLE_VERSION:
        raise VersionError(f"bundle format_version {bundle.format_version} not supported")
    rec = RunRecord(spec=spec, host=host_profile)
    absent = sorted(host_profile.missing & set(bundle.perf_schema.required))
    try:
        rec = annotate([rec], bundle.units, bundle.label_convention)[0]
        X = build_matrix([rec], bundle.host_features).values
    except FeatureError as exc:
        missing = sorted(set(absent) | set(exc.missing))
        raise SchemaError(f"profile does not satisfy the model schema; missing: {', '.join(missing)}",
                          missing) from None
    ipc = float(bundle.ipc_regressor.predict(X)[0])
    Z = np.column_stack([X, [ipc]])
    votes = bundle.suitability_classifier.vote_counts(Z)[0]
    n = len(bundle.suitability_classifier.trees)
    labels = bundle.suitability_classifier.class_labels
    proba = {str(l): int(v) / n for l, v in zip(labels, votes)}
    label = str(labels[int(np.argmax(votes))])

    d = rec.derived
    region = None
    if d.host_flop_per_byte > 0:
        region = classify_intensity(d.host_flop_per_byte, bundle.roofline).value
    return Prediction(spec.app, spec, ipc, label, proba, region, bundle.digest)


def predict_record(bundle: ModelBundle, rec: RunRecord) -> Prediction:
    """Prediction for a record; its NMC fields, if any, are ignored."""
    return predict_offload(bundle, rec.host, rec.spec)
