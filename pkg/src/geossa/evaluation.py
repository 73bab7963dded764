"""
Evaluation: n-space error, minimum-distance-to-mean classification and the
synthetic benchmark comparing the gaSSA variants with SSA.
"""
import os
import time
import warnings
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pyriemann.classification import MDM

from .datagen import (
    EstimatorConfig,
    MixingKind,
    MixingModel,
    MixingParams,
    gen_model,
    gen_signals,
    make_two_class_covs,
    split_epochs,
    true_nspace,
)
from .errors import BadDims, EmptyClass, GeossaError, InsufficientData, MixedLabels
from .gassa import GassaConfig, Reference, fit, project_to_s_space
from .log import configure_worker_logging, current_level
from .manifold_opt import OptimizerOptions, Subspace, grassmann_dist
from .spd_core import MetricKind, SymPosDef, distance2, metric_mean
from .ssa_baseline import EpochStats, SsaConfig, epoch_stats, fit_ssa

Label = Union[int, str]
MethodName = Literal["gassa_airm_w", "gassa_airm_nw", "gassa_stein_w", "gassa_stein_nw", "ssa"]
ALL_METHODS: List[str] = ["gassa_airm_w", "gassa_airm_nw", "gassa_stein_w", "gassa_stein_nw", "ssa"]
MAX_FAILURE_RATE = 0.2
TIE_RTOL = 1e-12
_PYRIEMANN_METRIC = {MetricKind.AIRM: "riemann", MetricKind.STEIN: "logdet"}


def nspace_error_raw(estimated: Subspace, model: MixingModel) -> float:
    """Grassmann distance between the estimated and the true n-space."""
    if estimated.ambient_dim != model.D or estimated.sub_dim != model.D - model.m:
        raise BadDims(
            f"estimated n-space is {estimated.ambient_dim}×{estimated.sub_dim}, "
            f"expected {model.D}×{model.D - model.m}"
        )
    return grassmann_dist(estimated, true_nspace(model))


def nspace_error(estimated: Subspace, model: MixingModel) -> float:
    """n-space error normalized by its maximum √(D−m)·π/2, so it lies in [0, 1]."""
    raw = nspace_error_raw(estimated, model)
    return raw / (np.sqrt(model.D - model.m) * np.pi / 2)


class MdmModel(BaseModel):
    """Per-class means of compressed covariances."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    class_means: Dict[Label, np.ndarray]
    metric: MetricKind
    s_basis: Subspace

    @model_validator(mode="after")
    def _check(self) -> "MdmModel":
        if len(self.class_means) < 2:
            raise ValueError("an MDM model needs at least two classes")
        return self


def _label_kind(label: Label) -> str:
    if isinstance(label, (bool, np.bool_)):
        return "bool"
    if isinstance(label, (int, np.integer)):
        return "int"
    return type(label).__name__


def _plain(label: Label) -> Label:
    return label.item() if isinstance(label, np.generic) else label


def mdm_train(
    covs: Sequence[SymPosDef],
    labels: Sequence[Label],
    s_basis: Subspace,
    metric: MetricKind = MetricKind.AIRM,
    classes: Optional[Sequence[Label]] = None,
) -> MdmModel:
    """
    Class means of QᵀΣQ under the metric-matched mean.

    pyRiemann's MDM fits the class means; each is then finished to the
    residual tolerance of :func:`geossa.spd_core.metric_mean`.

    Args:
        covs: Training covariances
        labels: One label per covariance, all of one type
        s_basis: Stationary subspace Q
        metric: Distance and matching mean
        classes: Expected classes; every one of them must occur in ``labels``

    Raises:
        MixedLabels: Labels (or expected classes) of more than one type
        EmptyClass: An expected class has no training example
        InsufficientData: Fewer than two classes
    """
    if len(covs) != len(labels):
        raise InsufficientData(f"{len(covs)} covariances but {len(labels)} labels")
    labels = [_plain(label) for label in labels]
    expected = None if classes is None else [_plain(label) for label in classes]
    kinds = {_label_kind(label) for label in labels + (expected or [])}
    if len(kinds) > 1:
        raise MixedLabels(f"labels mix types {sorted(kinds)}; give every class a label of one type")
    classes = sorted(set(labels)) if expected is None else sorted(set(expected))
    compressed: Dict[Label, List[np.ndarray]] = {c: [] for c in classes}
    for cov, label in zip(covs, labels):
        if label in compressed:
            compressed[label].append(project_to_s_space(s_basis, cov))
    for label, members in compressed.items():
        if not members:
            raise EmptyClass(f"class {label!r} has no training examples")
    if len(compressed) < 2:
        raise InsufficientData(f"need at least two classes, got {list(compressed)}")

    name = _PYRIEMANN_METRIC[MetricKind(metric)]
    classifier = MDM(metric={"mean": name, "distance": name})
    X = np.stack([cov for members in compressed.values() for cov in members])
    y = np.array([label for label, members in compressed.items() for _ in members])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        classifier.fit(X, y)
    means = {
        _plain(label): metric_mean(compressed[_plain(label)], metric, init=mean)
        for label, mean in zip(classifier.classes_, classifier.covmeans_)
    }
    return MdmModel(class_means=means, metric=MetricKind(metric), s_basis=s_basis)


def mdm_classify(model: MdmModel, cov: SymPosDef) -> Label:
    """Nearest class mean; near-ties (relative 1e-12) go to the lower label."""
    compressed = project_to_s_space(model.s_basis, cov)
    scored = [(distance2(compressed, mean, model.metric), label) for label, mean in sorted(model.class_means.items())]
    best = min(d for d, _ in scored)
    for d, label in scored:
        if d <= best + TIE_RTOL * max(best, 1.0):
            return label
    raise AssertionError("unreachable")


def mdm_accuracy(model: MdmModel, covs: Sequence[SymPosDef], labels: Sequence[Label]) -> float:
    if len(covs) == 0:
        raise InsufficientData("no test covariances")
    hits = sum(mdm_classify(model, cov) == label for cov, label in zip(covs, labels))
    return hits / len(covs)


class ExperimentParams(BaseModel):
    """Toy benchmark settings."""

    model_config = ConfigDict(extra="forbid")

    D: int = Field(19, ge=2)
    m: int = Field(12, ge=1)
    N: int = Field(50, ge=2, description="Epochs per repeat")
    T: int = Field(250, ge=2, description="Samples per epoch")
    repeats: int = Field(25, ge=1)
    methods: List[MethodName] = Field(default_factory=lambda: list(ALL_METHODS))
    seed: int = Field(0, ge=0)
    restarts: int = Field(5, ge=1)
    mixing: MixingKind = MixingKind.UNIFORM
    eig_range: Tuple[float, float] = (0.5, 2.0)
    coupling_scale: Optional[float] = Field(None, ge=0)
    mean_scale: float = Field(1.0, ge=0)
    reference: Reference = Field(Reference.COMPRESSED, description="Reference point of the gaSSA cost")
    overlap: float = Field(0.0, ge=0, lt=1)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    optimizer: OptimizerOptions = Field(default_factory=OptimizerOptions)
    n_jobs: int = Field(1, description="joblib worker processes for the repeats")

    @model_validator(mode="after")
    def _check(self) -> "ExperimentParams":
        if not self.m < self.D:
            raise ValueError(f"need m < D, got D={self.D}, m={self.m}")
        return self


class RunRecord(BaseModel):
    repeat: int
    method: str
    seed: int
    error: Optional[float] = None
    error_raw: Optional[float] = None
    cost: Optional[float] = None
    cost_trace: List[float] = Field(default_factory=list)
    seconds: float = 0.0
    failed: bool = False
    message: Optional[str] = None


class MethodSummary(BaseModel):
    method: str
    mean: Optional[float] = None
    std: Optional[float] = Field(None, description="Sample std; absent with fewer than two values")
    mean_raw: Optional[float] = None
    repeats: int = 0
    failures: int = 0


class ExperimentReport(BaseModel):
    params: ExperimentParams
    records: List[RunRecord] = Field(default_factory=list)
    summaries: List[MethodSummary] = Field(default_factory=list)
    seconds: float = 0.0
    valid: bool = True

    def summary(self, method: str) -> MethodSummary:
        return next(s for s in self.summaries if s.method == method)

    def summary_frame(self) -> pd.DataFrame:
        columns = ["method", "mean", "std", "mean_raw", "repeats", "failures"]
        return pd.DataFrame([s.model_dump() for s in self.summaries], columns=columns)


def _repeat_seeds(seed: int, repeats: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(repeats)
    return [int(child.generate_state(1)[0]) for child in children]


def _fit_method(method: str, covs, epochs, params: ExperimentParams, seed: int) -> Tuple[Subspace, float, List[float]]:
    if method == "ssa":
        result = fit_ssa(
            epochs,
            SsaConfig(m=params.m, restarts=params.restarts, seed=seed, optimizer=params.optimizer),
        )
        return result.n_basis, result.cost, result.cost_trace
    _, metric, mode = method.split("_")
    config = GassaConfig(
        metric=metric,
        whiten=mode == "w",
        m=params.m,
        restarts=params.restarts,
        seed=seed,
        optimizer=params.optimizer,
        reference=params.reference,
    )
    result = fit(covs, config)
    return result.n_space, result.cost, result.cost_trace


def _run_repeat(repeat: int, seed: int, params: ExperimentParams, log_level: str, parent_pid: int) -> List[RunRecord]:
    configure_worker_logging(log_level, parent_pid)
    mixing = MixingParams(
        D=params.D,
        m=params.m,
        N=params.N,
        T=params.T,
        mixing=params.mixing,
        eig_range=params.eig_range,
        coupling_scale=params.coupling_scale,
        mean_scale=params.mean_scale,
        seed=seed,
    )
    records = []
    try:
        model = gen_model(mixing)
        signals = gen_signals(model)
        segments = split_epochs(signals.samples, params.T, params.overlap)
        epochs = [epoch_stats(segment, i, params.estimator) for i, segment in enumerate(segments)]
    except GeossaError as exc:
        logger.warning(f"repeat {repeat}: data generation failed: {exc.category}: {exc.message}")
        message = f"{exc.category}: {exc.message}"
        return [RunRecord(repeat=repeat, method=m, seed=seed, failed=True, message=message) for m in params.methods]
    covs = [e.cov for e in epochs]

    for method in params.methods:
        start = time.perf_counter()
        try:
            n_space, cost, trace = _fit_method(method, covs, epochs, params, seed)
            records.append(
                RunRecord(
                    repeat=repeat,
                    method=method,
                    seed=seed,
                    error=nspace_error(n_space, model),
                    error_raw=nspace_error_raw(n_space, model),
                    cost=cost,
                    cost_trace=trace,
                    seconds=time.perf_counter() - start,
                )
            )
        except GeossaError as exc:
            logger.warning(f"repeat {repeat}: {method} failed: {exc.category}: {exc.message}")
            records.append(
                RunRecord(
                    repeat=repeat,
                    method=method,
                    seed=seed,
                    seconds=time.perf_counter() - start,
                    failed=True,
                    message=f"{exc.category}: {exc.message}",
                )
            )
    return records


def _summarize(method: str, records: List[RunRecord]) -> MethodSummary:
    ok = [r for r in records if r.method == method and not r.failed]
    failures = sum(1 for r in records if r.method == method and r.failed)
    errors = np.array([r.error for r in ok])
    return MethodSummary(
        method=method,
        mean=float(errors.mean()) if len(ok) else None,
        std=float(errors.std(ddof=1)) if len(ok) >= 2 else None,
        mean_raw=float(np.mean([r.error_raw for r in ok])) if ok else None,
        repeats=len(ok),
        failures=failures,
    )


def run_toy_experiment(params: ExperimentParams) -> ExperimentReport:
    """
    Benchmark every requested method on fresh synthetic data per repeat.

    Repeats run in joblib worker processes with seeds spawned from ``params.seed`` and are
    folded in repeat order. Failed fits are excluded from the statistics and
    counted; more than 20% failures marks the report invalid.
    """
    start = time.perf_counter()
    if not params.methods:
        logger.info("no methods requested; returning an empty report")
        return ExperimentReport(params=params)

    logger.info(
        f"toy experiment D={params.D} m={params.m} N={params.N} T={params.T} "
        f"repeats={params.repeats} methods={params.methods}"
    )
    seeds = _repeat_seeds(params.seed, params.repeats)
    level = current_level()
    per_repeat = Parallel(n_jobs=params.n_jobs)(
        delayed(_run_repeat)(repeat, seed, params, level, os.getpid()) for repeat, seed in enumerate(seeds)
    )
    records = [record for batch in per_repeat for record in batch]
    summaries = [_summarize(method, records) for method in params.methods]
    failures = sum(r.failed for r in records)
    valid = failures <= MAX_FAILURE_RATE * len(records)
    if not valid:
        logger.error(f"{failures} of {len(records)} fits failed; report marked invalid")
    for s in summaries:
        logger.info(f"{s.method}: mean={s.mean} std={s.std} repeats={s.repeats} failures={s.failures}")
    return ExperimentReport(
        params=params,
        records=records,
        summaries=summaries,
        seconds=time.perf_counter() - start,
        valid=valid,
    )


def run_toy_sweep(params: ExperimentParams, pairs: Sequence[Tuple[int, int]]) -> Dict[str, ExperimentReport]:
    """Run the toy benchmark for several (D, m) pairs; keys are "D:m"."""
    reports = {}
    for D, m in pairs:
        sweep_params = params.model_copy(update={"D": D, "m": m})
        reports[f"{D}:{m}"] = run_toy_experiment(ExperimentParams.model_validate(sweep_params.model_dump()))
    return reports


class MdmParams(BaseModel):
    """Synthetic two-class classification protocol."""

    model_config = ConfigDict(extra="forbid")

    D: int = Field(10, ge=2)
    m: int = Field(4, ge=1)
    n_train: int = Field(50, ge=1, description="Training trials per class")
    n_test: int = Field(50, ge=1, description="Test trials per class")
    adaptation_fraction: float = Field(0.2, ge=0, lt=1, description="Leading test share used to learn the s-space")
    separation: float = Field(1.0, gt=0, description="AIRM distance between the class s-blocks")
    jitter: float = Field(0.1, ge=0)
    ns_eig_range: Tuple[float, float] = Field((0.1, 10.0), description="Eigenvalue range of the per-trial n-block")
    reference: Reference = Reference.COMPRESSED
    methods: List[MethodName] = Field(default_factory=lambda: list(ALL_METHODS))
    restarts: int = Field(3, ge=1)
    seed: int = Field(0, ge=0)
    optimizer: OptimizerOptions = Field(default_factory=OptimizerOptions)

    @model_validator(mode="after")
    def _check(self) -> "MdmParams":
        if not self.m < self.D:
            raise ValueError(f"need m < D, got D={self.D}, m={self.m}")
        return self


class MdmReport(BaseModel):
    params: MdmParams
    accuracy: Dict[str, Optional[float]]
    oracle_accuracy: float = Field(..., description="Accuracy with the true s-space")


def run_mdm_experiment(params: MdmParams) -> MdmReport:
    """
    Learn the s-space without labels on the training trials plus the first
    part of the test trials, fit MDM class means on the training trials and
    score the remaining test trials.
    """
    data = make_two_class_covs(
        params.D,
        params.m,
        params.n_train + params.n_test,
        params.seed,
        params.separation,
        params.jitter,
        ns_eig_range=params.ns_eig_range,
    )
    n_train = 2 * params.n_train
    train_covs, train_labels = data.covs[:n_train], data.labels[:n_train]
    test_covs, test_labels = data.covs[n_train:], data.labels[n_train:]
    n_adapt = int(round(params.adaptation_fraction * len(test_covs)))
    eval_covs, eval_labels = test_covs[n_adapt:], test_labels[n_adapt:]
    unlabeled = train_covs + test_covs[:n_adapt]

    oracle = mdm_train(train_covs, train_labels, data.s_basis)
    accuracy: Dict[str, Optional[float]] = {}
    for method in params.methods:
        try:
            s_basis, metric = _learn_s_space(method, unlabeled, params)
            model = mdm_train(train_covs, train_labels, s_basis, metric)
            accuracy[method] = mdm_accuracy(model, eval_covs, eval_labels)
        except GeossaError as exc:
            logger.warning(f"MDM {method} failed: {exc.category}: {exc.message}")
            accuracy[method] = None
        logger.info(f"MDM {method}: accuracy={accuracy[method]}")
    return MdmReport(params=params, accuracy=accuracy, oracle_accuracy=mdm_accuracy(oracle, eval_covs, eval_labels))


def _learn_s_space(method: str, covs: List[np.ndarray], params: MdmParams) -> Tuple[Subspace, MetricKind]:
    if method == "ssa":
        # trials carry no means; the length only has to satisfy the full-rank invariant
        epochs = [EpochStats(index=i, mean=np.zeros(params.D), cov=cov, length=params.D + 1) for i, cov in enumerate(covs)]
        result = fit_ssa(epochs, SsaConfig(m=params.m, restarts=params.restarts, seed=params.seed, optimizer=params.optimizer))
        return Subspace.from_matrix(result.projection.T), MetricKind.AIRM
    _, metric, mode = method.split("_")
    config = GassaConfig(
        metric=metric,
        whiten=mode == "w",
        m=params.m,
        restarts=params.restarts,
        seed=params.seed,
        optimizer=params.optimizer,
        reference=params.reference,
    )
    result = fit(covs, config)
    return Subspace.from_matrix(result.s_projection), MetricKind(metric)
