"""
Command-line front end.

    geossa synth  --out DIR                    synthetic signals, truth and covariances
    geossa fit    --input FILE --m M           gaSSA or SSA fit
    geossa eval   --result FILE --truth FILE   n-space error (and MDM accuracy)
    geossa bench                               toy benchmark report

All commands read an optional JSON config (``--config``); flags override its
keys. Failures print ``error: <category>: <message>`` on stderr and exit
with the error's code.
"""
import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import load_settings
from .datagen import EstimatorConfig, MixingParams, gen_model, gen_signals, split_epochs
from .errors import ConfigError, GeossaError, InputNotFound, OrderingViolation, SchemaError
from .evaluation import (
    ExperimentParams,
    ExperimentReport,
    mdm_accuracy,
    mdm_train,
    nspace_error,
    nspace_error_raw,
    run_toy_experiment,
    run_toy_sweep,
)
from .gassa import GassaConfig, GradientMode, Reference, fit
from .log import configure_logging
from .manifold_opt import OptimizerOptions, Subspace
from .serialization import (
    epochs_from_list,
    epochs_to_list,
    fitted_from_dict,
    gassa_result_to_dict,
    is_epoch_list,
    matrix_set_from_list,
    matrix_set_to_list,
    model_from_dict,
    model_to_dict,
    read_json,
    read_signals_csv,
    ssa_result_to_dict,
    write_json,
    write_signals_csv,
)
from .spd_core import MetricKind
from .ssa_baseline import SsaConfig, epoch_stats, fit_ssa


class SynthSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: MixingParams = Field(default_factory=MixingParams)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    overlap: float = Field(0.0, ge=0, lt=1)


class FitSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["gassa", "ssa"] = "gassa"
    metric: MetricKind = MetricKind.AIRM
    whiten: bool = False
    m: Optional[int] = Field(None, ge=1)
    restarts: int = Field(5, ge=1)
    gradient_mode: GradientMode = GradientMode.ANALYTIC
    reference: Reference = Reference.COMPRESSED
    optimizer: OptimizerOptions = Field(default_factory=OptimizerOptions)
    input: Optional[str] = Field(None, description="Covariance-set JSON, epoch-stats JSON or signals CSV")
    epoch_length: Optional[int] = Field(None, ge=2, description="Window length for CSV input")
    overlap: float = Field(0.0, ge=0, lt=1)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    result: Optional[str] = None
    truth: Optional[str] = None
    labels: Optional[str] = Field(None, description="Labeled covariance set for MDM")
    train_fraction: float = Field(0.5, gt=0, lt=1)


class BenchSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentParams = Field(default_factory=ExperimentParams)
    sweep: Optional[List[Tuple[int, int]]] = None
    assert_ordering: bool = False


class RunConfig(BaseModel):
    """One JSON document configuring every command."""

    model_config = ConfigDict(extra="forbid")

    seed: Optional[int] = Field(None, ge=0, description="Master seed for all randomness")
    out: str = Field("out", description="Output directory")
    threads: Optional[int] = Field(None, description="joblib worker cap")
    log_level: Optional[str] = None
    synth: SynthSection = Field(default_factory=SynthSection)
    fit: FitSection = Field(default_factory=FitSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    bench: BenchSection = Field(default_factory=BenchSection)


def _set(document: Dict[str, Any], path: str, value: Any) -> None:
    if value is None:
        return
    *parents, leaf = path.split(".")
    node = document
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config key {key!r} must be an object")
    node[leaf] = value


def _parse_sweep(text: Optional[str]) -> Optional[List[List[int]]]:
    if text is None:
        return None
    try:
        return [[int(part) for part in pair.split(":")] for pair in text.split(",") if pair]
    except ValueError as exc:
        raise ConfigError(f"--sweep expects D:m pairs separated by commas, got {text!r}") from exc


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge the JSON config with command-line overrides and validate once."""
    document: Dict[str, Any] = {}
    if args.config:
        if not Path(args.config).is_file():
            raise InputNotFound(f"no such config file: {args.config}")
        loaded = read_json(args.config)
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        document = loaded

    for path, attr in [("seed", "seed"), ("out", "out"), ("threads", "threads"), ("log_level", "log_level")]:
        _set(document, path, getattr(args, attr, None))
    overrides = {
        "fit.method": "method",
        "fit.metric": "metric",
        "fit.whiten": "whiten",
        "fit.reference": "reference",
        "fit.m": "m",
        "fit.restarts": "restarts",
        "fit.input": "input",
        "fit.epoch_length": "epoch_length",
        "fit.overlap": "overlap",
        "eval.result": "result",
        "eval.truth": "truth",
        "eval.labels": "labels",
        "eval.train_fraction": "train_fraction",
    }
    for path, attr in overrides.items():
        _set(document, path, getattr(args, attr, None))
    _set(document, "bench.sweep", _parse_sweep(getattr(args, "sweep", None)))
    if getattr(args, "assert_ordering", False):
        _set(document, "bench.assert_ordering", True)

    try:
        config = RunConfig.model_validate(document)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(problems) from exc
    return config


def _master_seed(config: RunConfig) -> int:
    return config.seed if config.seed is not None else load_settings().seed


def _threads(config: RunConfig) -> int:
    return config.threads if config.threads is not None else load_settings().threads


def cmd_synth(config: RunConfig) -> int:
    """Write signals.csv, truth.json, covs.json and epochs.json."""
    seed = _master_seed(config)
    section = config.synth
    try:
        params = MixingParams.model_validate({**section.data.model_dump(), "seed": seed})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    model = gen_model(params)
    signals = gen_signals(model)
    segments = split_epochs(signals.samples, params.T, section.overlap)
    epochs = [epoch_stats(segment, i, section.estimator) for i, segment in enumerate(segments)]

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_signals_csv(out / "signals.csv", signals.samples)
    write_json(out / "truth.json", {"model": model_to_dict(model), "epoch_bounds": signals.epoch_bounds, "seed": seed})
    write_json(out / "covs.json", matrix_set_to_list([e.cov for e in epochs]))
    write_json(out / "epochs.json", epochs_to_list(epochs))
    logger.info(f"wrote signals, ground truth and {len(epochs)} epoch covariances to {out}")
    print(f"synth: D={params.D} m={params.m} epochs={len(epochs)} out={out}")
    return 0


def _load_fit_input(section: FitSection):
    """Covariances and, when available, epoch statistics."""
    if section.input is None:
        raise ConfigError("fit needs an input file (--input)")
    path = Path(section.input)
    if not path.is_file():
        raise InputNotFound(f"no such input: {path}")
    if path.suffix.lower() == ".csv":
        if section.epoch_length is None:
            raise ConfigError("CSV input needs --epoch-length")
        samples = read_signals_csv(path)
        segments = split_epochs(samples, section.epoch_length, section.overlap)
        epochs = [epoch_stats(segment, i, section.estimator) for i, segment in enumerate(segments)]
        return [e.cov for e in epochs], epochs
    payload = read_json(path)
    if is_epoch_list(payload):
        epochs = epochs_from_list(payload)
        return [e.cov for e in epochs], epochs
    covs, _ = matrix_set_from_list(payload)
    return covs, None


def cmd_fit(config: RunConfig) -> int:
    section = config.fit
    if section.m is None:
        raise ConfigError("fit needs the stationary dimension (--m)")
    covs, epochs = _load_fit_input(section)
    seed = _master_seed(config)
    threads = _threads(config)

    if section.method == "ssa":
        if epochs is None:
            raise SchemaError("ssa needs epoch means: pass a signals CSV or an epoch-statistics JSON")
        result = fit_ssa(
            epochs,
            SsaConfig(m=section.m, restarts=section.restarts, seed=seed, optimizer=section.optimizer, n_jobs=threads),
        )
        payload = ssa_result_to_dict(result)
    else:
        gassa_config = GassaConfig(
            metric=section.metric,
            whiten=section.whiten,
            m=section.m,
            restarts=section.restarts,
            seed=seed,
            optimizer=section.optimizer,
            gradient_mode=section.gradient_mode,
            reference=section.reference,
            n_jobs=threads,
        )
        result = fit(covs, gassa_config)
        payload = gassa_result_to_dict(result)

    best = min((r for r in result.per_restart if not r.failed), key=lambda r: r.cost)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "result.json", payload)
    logger.info(f"wrote {out / 'result.json'}")
    print(
        f"fit: method={section.method} metric={section.metric.value} whiten={section.whiten} "
        f"cost={result.cost:.6e} iterations={best.iterations} grad_norm={best.grad_norm:.3e}"
    )
    return 0


def cmd_eval(config: RunConfig) -> int:
    section = config.eval
    if section.result is None or section.truth is None:
        raise ConfigError("eval needs --result and --truth")
    fitted = fitted_from_dict(read_json(section.result))
    truth = read_json(section.truth)
    model = model_from_dict(truth["model"] if isinstance(truth, dict) and "model" in truth else truth)
    if fitted.n_space.ambient_dim != model.D or fitted.n_space.sub_dim != model.D - model.m:
        raise SchemaError(
            f"result is for D={fitted.n_space.ambient_dim}, m={fitted.n_space.ambient_dim - fitted.n_space.sub_dim} "
            f"but truth has D={model.D}, m={model.m}"
        )
    report: Dict[str, Any] = {
        "method": fitted.method,
        "nspace_error": nspace_error(fitted.n_space, model),
        "nspace_error_raw": nspace_error_raw(fitted.n_space, model),
    }
    line = f"eval: nspace_error={report['nspace_error']:.6e} raw={report['nspace_error_raw']:.6e}"

    if section.labels is not None:
        covs, labels = matrix_set_from_list(read_json(section.labels))
        if labels is None:
            raise SchemaError("labeled set has no labels")
        n_train = int(round(section.train_fraction * len(covs)))
        s_basis = Subspace.from_matrix(fitted.s_projection)
        mdm = mdm_train(covs[:n_train], labels[:n_train], s_basis, MetricKind(fitted.metric))
        report["mdm_accuracy"] = mdm_accuracy(mdm, covs[n_train:], labels[n_train:])
        line += f" mdm_accuracy={report['mdm_accuracy']:.4f}"

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "eval.json", report)
    print(line)
    return 0


def _check_ordering(report: ExperimentReport) -> None:
    methods = {s.method: s for s in report.summaries}
    ssa = methods.get("ssa")
    if ssa is None or ssa.mean is None:
        return
    for metric in ("airm", "stein"):
        nw = methods.get(f"gassa_{metric}_nw")
        if nw is not None and nw.mean is not None and nw.mean >= ssa.mean:
            raise OrderingViolation(f"gassa_{metric}_nw mean {nw.mean:.6e} is not below ssa mean {ssa.mean:.6e}")


def _write_report(out: Path, suffix: str, report: ExperimentReport) -> None:
    (out / f"report{suffix}.json").write_text(report.model_dump_json(indent=2) + "\n")
    report.summary_frame().to_csv(out / f"summary{suffix}.csv", index=False)


def cmd_bench(config: RunConfig) -> int:
    section = config.bench
    params = section.experiment.model_copy(update={"seed": _master_seed(config), "n_jobs": _threads(config)})
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)

    if section.sweep:
        reports = run_toy_sweep(params, [tuple(pair) for pair in section.sweep])
        for key, report in reports.items():
            _write_report(out, "_" + key.replace(":", "_"), report)
    else:
        reports = {f"{params.D}:{params.m}": run_toy_experiment(params)}
        _write_report(out, "", reports[f"{params.D}:{params.m}"])

    for key, report in reports.items():
        for s in report.summaries:
            std = "n/a" if s.std is None else f"{s.std:.6e}"
            mean = "n/a" if s.mean is None else f"{s.mean:.6e}"
            print(f"bench {key}: {s.method} mean={mean} std={std} repeats={s.repeats} failures={s.failures}")
        if section.assert_ordering:
            _check_ordering(report)
    return 0


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--threads", type=int, help="Worker cap (-1 for all cores)")
    common.add_argument("--log-level", dest="log_level", help="Log level (DEBUG, INFO, ...)")

    parser = argparse.ArgumentParser(prog="geossa", description="Geometry-aware stationary subspace analysis")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("synth", parents=[common], help="Generate synthetic data")

    fit_parser = commands.add_parser("fit", parents=[common], help="Fit gaSSA or SSA")
    fit_parser.add_argument("--input", help="Covariance-set JSON, epoch-stats JSON or signals CSV")
    fit_parser.add_argument("--method", choices=["gassa", "ssa"])
    fit_parser.add_argument("--metric", choices=[k.value for k in MetricKind])
    fit_parser.add_argument("--whiten", action=argparse.BooleanOptionalAction, default=None)
    fit_parser.add_argument("--reference", choices=[r.value for r in Reference], help="Reference point of the gaSSA cost")
    fit_parser.add_argument("--m", type=int, help="Stationary dimension")
    fit_parser.add_argument("--restarts", type=int)
    fit_parser.add_argument("--epoch-length", dest="epoch_length", type=int)
    fit_parser.add_argument("--overlap", type=float)

    eval_parser = commands.add_parser("eval", parents=[common], help="Score a fit against ground truth")
    eval_parser.add_argument("--result", help="Result JSON from fit")
    eval_parser.add_argument("--truth", help="truth.json from synth")
    eval_parser.add_argument("--labels", help="Labeled covariance set for MDM")
    eval_parser.add_argument("--train-fraction", dest="train_fraction", type=float)

    bench_parser = commands.add_parser("bench", parents=[common], help="Run the toy benchmark")
    bench_parser.add_argument("--sweep", help="Comma-separated D:m pairs")
    bench_parser.add_argument("--assert-ordering", dest="assert_ordering", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(load_settings(log_level=args.log_level).log_level)
        config = load_run_config(args)
        if config.log_level:
            configure_logging(config.log_level)
        return COMMANDS[args.command](config)
    except GeossaError as exc:
        print(f"error: {exc.category}: {exc.message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
