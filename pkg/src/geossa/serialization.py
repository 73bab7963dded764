"""
File formats.

Matrices are JSON objects ``{"dim": D, "data": [row-major D·D numbers]}``;
subspaces are ``{"D": D, "m": m, "basis": [row-major D·m numbers]}``. Python's
float repr round-trips finite doubles exactly, so no precision is lost.
Signals are CSV files with a ``ch0,ch1,...`` header and one sample per row.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .datagen import MixingModel
from .errors import InputNotFound, SchemaError
from .gassa import GassaResult
from .manifold_opt import Subspace
from .ssa_baseline import EpochStats, SsaResult

PathLike = Union[str, Path]


def _numbers(values: Any, count: int, what: str) -> np.ndarray:
    if not isinstance(values, list) or len(values) != count:
        raise SchemaError(f"{what} must be a list of {count} numbers")
    try:
        array = np.array(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{what} contains non-numeric entries") from exc
    if not np.all(np.isfinite(array)):
        raise SchemaError(f"{what} contains non-finite entries")
    return array


def _require(payload: Any, keys: Sequence[str], what: str) -> Dict[str, Any]:
    if not isinstance(payload, dict):
        raise SchemaError(f"{what} must be a JSON object")
    missing = [k for k in keys if k not in payload]
    if missing:
        raise SchemaError(f"{what} is missing keys {missing}")
    return payload


def matrix_to_dict(S: np.ndarray) -> Dict[str, Any]:
    S = np.asarray(S, dtype=float)
    return {"dim": int(S.shape[0]), "data": [float(v) for v in S.ravel()]}


def matrix_from_dict(payload: Any) -> np.ndarray:
    payload = _require(payload, ["dim", "data"], "matrix")
    dim = payload["dim"]
    if not isinstance(dim, int) or dim < 1:
        raise SchemaError(f"matrix dim must be a positive integer, got {dim!r}")
    return _numbers(payload["data"], dim * dim, "matrix data").reshape(dim, dim)


def subspace_to_dict(Q: Subspace) -> Dict[str, Any]:
    return {"D": Q.ambient_dim, "m": Q.sub_dim, "basis": [float(v) for v in Q.basis.ravel()]}


def subspace_from_dict(payload: Any) -> Subspace:
    payload = _require(payload, ["D", "m", "basis"], "subspace")
    D, m = payload["D"], payload["m"]
    if not isinstance(D, int) or not isinstance(m, int):
        raise SchemaError("subspace D and m must be integers")
    basis = _numbers(payload["basis"], D * m, "subspace basis").reshape(D, m)
    try:
        return Subspace(basis=basis)
    except ValueError as exc:
        raise SchemaError(f"invalid subspace: {exc}") from exc


def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.is_file():
        raise InputNotFound(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path} is not UTF-8 text") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def write_json(path: PathLike, payload: Any) -> None:
    """Deterministic JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def matrix_set_to_list(matrices: Sequence[np.ndarray], labels: Optional[Sequence[Any]] = None) -> List[Dict[str, Any]]:
    entries = [matrix_to_dict(S) for S in matrices]
    if labels is not None:
        for entry, label in zip(entries, labels):
            entry["label"] = label
    return entries


def matrix_set_from_list(payload: Any) -> Tuple[List[np.ndarray], Optional[List[Any]]]:
    """Matrices and, when every entry carries one, their labels."""
    if not isinstance(payload, list) or not payload:
        raise SchemaError("matrix set must be a non-empty JSON array")
    matrices = [matrix_from_dict(entry) for entry in payload]
    has_label = ["label" in entry for entry in payload]
    if any(has_label) and not all(has_label):
        raise SchemaError("either every matrix or none carries a label")
    labels = [entry["label"] for entry in payload] if all(has_label) else None
    return matrices, labels


def epochs_to_list(epochs: Sequence[EpochStats]) -> List[Dict[str, Any]]:
    return [
        {"index": e.index, "mean": [float(v) for v in e.mean], "cov": matrix_to_dict(e.cov), "length": e.length}
        for e in epochs
    ]


def epochs_from_list(payload: Any) -> List[EpochStats]:
    if not isinstance(payload, list) or not payload:
        raise SchemaError("epoch statistics must be a non-empty JSON array")
    epochs = []
    for entry in payload:
        entry = _require(entry, ["index", "mean", "cov", "length"], "epoch statistics")
        cov = matrix_from_dict(entry["cov"])
        mean = _numbers(entry["mean"], cov.shape[0], "epoch mean")
        epochs.append(EpochStats(index=entry["index"], mean=mean, cov=cov, length=entry["length"]))
    return epochs


def is_epoch_list(payload: Any) -> bool:
    return isinstance(payload, list) and bool(payload) and isinstance(payload[0], dict) and "cov" in payload[0]


def model_to_dict(model: MixingModel) -> Dict[str, Any]:
    return {
        "D": model.D,
        "m": model.m,
        "N": model.epochs,
        "T": model.epoch_len,
        "seed": model.seed,
        "A": [float(v) for v in model.A.ravel()],
        "Lambda_s": [float(v) for v in model.Lambda_s.ravel()],
        "C": [float(v) for v in model.C.ravel()],
        "mu": [float(v) for v in model.mu.ravel()],
        "Lambda_n": [float(v) for v in model.Lambda_n.ravel()],
    }


def model_from_dict(payload: Any) -> MixingModel:
    payload = _require(payload, ["D", "m", "N", "T", "seed", "A", "Lambda_s", "C", "mu", "Lambda_n"], "model")
    D, m, N = payload["D"], payload["m"], payload["N"]
    if not all(isinstance(v, int) for v in (D, m, N)) or not 1 <= m < D or N < 1:
        raise SchemaError(f"model dimensions are invalid: D={D!r}, m={m!r}, N={N!r}")
    n = D - m
    try:
        return MixingModel(
            A=_numbers(payload["A"], D * D, "A").reshape(D, D),
            Lambda_s=_numbers(payload["Lambda_s"], m * m, "Lambda_s").reshape(m, m),
            C=_numbers(payload["C"], N * n * m, "C").reshape(N, n, m),
            mu=_numbers(payload["mu"], N * n, "mu").reshape(N, n),
            Lambda_n=_numbers(payload["Lambda_n"], N * n * n, "Lambda_n").reshape(N, n, n),
            epoch_len=payload["T"],
            seed=payload["seed"],
        )
    except ValueError as exc:
        raise SchemaError(f"invalid model: {exc}") from exc


def write_signals_csv(path: PathLike, samples: np.ndarray) -> None:
    samples = np.asarray(samples, dtype=float)
    frame = pd.DataFrame(samples, columns=[f"ch{j}" for j in range(samples.shape[1])])
    frame.to_csv(path, index=False, float_format="%.17g")


def read_signals_csv(path: PathLike) -> np.ndarray:
    """Samples from CSV; the header row is optional."""
    path = Path(path)
    if not path.is_file():
        raise InputNotFound(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, header=None, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path} is empty") from exc
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path} is not a readable CSV: {exc}") from exc
    first = pd.to_numeric(frame.iloc[0], errors="coerce")
    if first.isna().any():
        frame = frame.iloc[1:]
    try:
        samples = frame.to_numpy(dtype=float)
    except ValueError as exc:
        raise SchemaError(f"{path} contains non-numeric samples") from exc
    if samples.ndim != 2 or samples.shape[0] == 0 or not np.all(np.isfinite(samples)):
        raise SchemaError(f"{path} does not hold a finite sample matrix")
    return samples


def gassa_result_to_dict(result: GassaResult) -> Dict[str, Any]:
    D, m = result.s_projection.shape
    payload = {
        "method": "gassa",
        "D": D,
        "m": m,
        "cost": result.cost,
        "degenerate": result.degenerate,
        "s_basis": subspace_to_dict(result.s_basis),
        "n_basis": subspace_to_dict(result.n_basis),
        "n_space": subspace_to_dict(result.n_space),
        "s_projection": [float(v) for v in result.s_projection.ravel()],
        "per_restart": [r.model_dump(mode="json") for r in result.per_restart],
        "cost_trace": result.cost_trace,
        "config": result.config.model_dump(mode="json"),
        "whitening": None,
    }
    if result.whitening is not None:
        payload["whitening"] = {
            "metric": result.whitening.metric.value,
            "mean": matrix_to_dict(result.whitening.mean),
            "whitener": matrix_to_dict(result.whitening.whitener),
        }
    return payload


def ssa_result_to_dict(result: SsaResult) -> Dict[str, Any]:
    m, D = result.projection.shape
    return {
        "method": "ssa",
        "D": D,
        "m": m,
        "cost": result.cost,
        "n_space": subspace_to_dict(result.n_basis),
        "rotation": [float(v) for v in result.rotation.ravel()],
        "projection": [float(v) for v in result.projection.ravel()],
        "s_projection": [float(v) for v in result.projection.T.ravel()],
        "whitener": matrix_to_dict(result.whitener),
        "global_mean": [float(v) for v in result.global_mean],
        "per_restart": [r.model_dump(mode="json") for r in result.per_restart],
        "cost_trace": result.cost_trace,
        "config": result.config.model_dump(mode="json"),
    }


class FittedSubspaces:
    """What ``eval`` needs from a result file."""

    def __init__(self, method: str, metric: str, n_space: Subspace, s_projection: np.ndarray):
        self.method = method
        self.metric = metric
        self.n_space = n_space
        self.s_projection = s_projection


def fitted_from_dict(payload: Any) -> FittedSubspaces:
    payload = _require(payload, ["method", "D", "m", "n_space", "s_projection"], "result")
    D, m = payload["D"], payload["m"]
    if not isinstance(D, int) or not isinstance(m, int):
        raise SchemaError("result D and m must be integers")
    metric = payload.get("config", {}).get("metric", "airm")
    return FittedSubspaces(
        method=payload["method"],
        metric=metric,
        n_space=subspace_from_dict(payload["n_space"]),
        s_projection=_numbers(payload["s_projection"], D * m, "s_projection").reshape(D, m),
    )
