"""
Stationary subspace analysis with the Kullback-Leibler objective.

Epoch statistics are whitened by the pooled covariance; the projection rows
are then chosen so that every projected epoch is as close as possible to the
standard normal:

    L(Q) = ½ Σ_i [tr(QᵀΣ̃_iQ) − log det(QᵀΣ̃_iQ) + ‖Qᵀμ̃_i‖² − m]

L is invariant to right rotations of Q, so it is minimized over orthonormal
D×m frames with the same restart protocol as :func:`geossa.gassa.fit`.
"""
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from .datagen import EstimatorConfig, estimate_cov
from .errors import AllRestartsFailed, ConfigError, DegenerateSegment, DimMismatch, GeossaError, InsufficientData, NotSpd
from .gassa import RestartRecord
from .manifold_opt import STIEFEL, OptimizerOptions, Subspace, minimize, random_subspace
from .spd_core import as_spd, spd_sqrt_inv_sqrt, symmetrize


class EpochStats(BaseModel):
    """Empirical mean and covariance of one epoch."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    index: int = Field(0, ge=0)
    mean: np.ndarray = Field(..., description="Length-D mean")
    cov: np.ndarray = Field(..., description="D×D covariance")
    length: int = Field(..., ge=1, description="Samples in the epoch")


class SsaConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    m: int = Field(..., ge=1)
    restarts: int = Field(5, ge=1)
    seed: int = Field(0, ge=0)
    optimizer: OptimizerOptions = Field(default_factory=OptimizerOptions)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    n_jobs: int = Field(1)


class SsaResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rotation: np.ndarray = Field(..., description="m×D orthonormal rows acting on whitened data")
    projection: np.ndarray = Field(..., description="m×D s-source extractor rotation·Z")
    n_basis: Subspace = Field(..., description="Estimated non-stationary mixing span, sensor coordinates")
    cost: float
    per_restart: List[RestartRecord]
    whitener: np.ndarray
    global_mean: np.ndarray
    cost_trace: List[float] = Field(default_factory=list)
    config: SsaConfig


def epoch_stats(segment: np.ndarray, index: int = 0, estimator: Optional[EstimatorConfig] = None) -> EpochStats:
    """Mean and covariance of a T×D segment."""
    segment = np.asarray(segment, dtype=float)
    if segment.ndim != 2 or segment.shape[0] < 2:
        raise DegenerateSegment(f"need a T×D segment with T >= 2, got shape {segment.shape}")
    return EpochStats(
        index=index,
        mean=segment.mean(axis=0),
        cov=estimate_cov(segment, estimator),
        length=segment.shape[0],
    )


def pooled_whitener(epochs: Sequence[EpochStats]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Length-weighted global mean, pooled covariance and Z = pooled^{-1/2}.

    The pooled covariance adds the scatter of the epoch means to the average
    epoch covariance, i.e. it is the covariance of the concatenated data.
    """
    if len(epochs) == 0:
        raise InsufficientData("no epochs given")
    dims = {e.cov.shape for e in epochs} | {(e.mean.shape[0],) * 2 for e in epochs}
    if len(dims) != 1:
        raise DimMismatch(f"epochs have mixed dimensions {sorted(dims)}")
    weights = np.array([e.length for e in epochs], dtype=float)
    weights /= weights.sum()
    means = np.stack([e.mean for e in epochs])
    global_mean = weights @ means
    centred = means - global_mean
    pooled = sum(w * (e.cov + np.outer(c, c)) for w, e, c in zip(weights, epochs, centred))
    pooled = as_spd(symmetrize(pooled), "pooled covariance")
    _, whitener = spd_sqrt_inv_sqrt(pooled)
    return global_mean, pooled, whitener


class _SsaObjective:
    def __init__(self, means: np.ndarray, covs: np.ndarray):
        self.means = means
        self.covs = covs

    def _compressed(self, Q: np.ndarray):
        SQ = self.covs @ Q
        A = symmetrize(Q.T @ SQ)
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise NotSpd("compressed epoch covariance is not positive definite") from exc
        return SQ, A, L

    def cost(self, Q) -> float:
        Q = Q.basis if isinstance(Q, Subspace) else np.asarray(Q, dtype=float)
        _, A, L = self._compressed(Q)
        m = Q.shape[1]
        logdets = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
        projected = self.means @ Q
        terms = np.trace(A, axis1=-2, axis2=-1) - logdets + np.sum(projected**2, axis=1) - m
        return float(0.5 * np.sum(terms))

    def egrad(self, Q) -> np.ndarray:
        Q = Q.basis if isinstance(Q, Subspace) else np.asarray(Q, dtype=float)
        SQ, A, _ = self._compressed(Q)
        projected = self.means @ Q
        grad = np.sum(SQ, axis=0) - np.sum(SQ @ np.linalg.inv(A), axis=0)
        return grad + self.means.T @ projected


def _whitened(epochs: Sequence[EpochStats], Z: np.ndarray, global_mean: np.ndarray) -> _SsaObjective:
    means = np.stack([Z @ (e.mean - global_mean) for e in epochs])
    covs = np.stack([symmetrize(Z @ e.cov @ Z) for e in epochs])
    return _SsaObjective(means, covs)


def ssa_cost(B_rows: np.ndarray, epochs: Sequence[EpochStats], Z: Optional[np.ndarray] = None) -> float:
    """
    Summed KL divergence of the projected whitened epochs from N(0, I_m).

    Args:
        B_rows: m×D projection rows acting on whitened data
        epochs: Epoch statistics in sensor coordinates
        Z: Whitener; computed from the pooled statistics when omitted

    Returns:
        Nonnegative cost
    """
    global_mean, _, whitener = pooled_whitener(epochs)
    Z = whitener if Z is None else np.asarray(Z, dtype=float)
    return max(_whitened(epochs, Z, global_mean).cost(np.asarray(B_rows, dtype=float).T), 0.0)


def ssa_egrad(B_rows: np.ndarray, epochs: Sequence[EpochStats], Z: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of :func:`ssa_cost` with respect to B_rows (m×D)."""
    global_mean, _, whitener = pooled_whitener(epochs)
    Z = whitener if Z is None else np.asarray(Z, dtype=float)
    return _whitened(epochs, Z, global_mean).egrad(np.asarray(B_rows, dtype=float).T).T


def _run_restart(objective: _SsaObjective, D: int, m: int, seed: int, opts: OptimizerOptions):
    try:
        q0 = random_subspace(D, m, seed)
        q, cost, stats = minimize(objective.cost, objective.egrad, q0, opts, geometry=STIEFEL)
    except GeossaError as exc:
        logger.warning(f"SSA restart with seed {seed} failed: {exc.category}: {exc.message}")
        return RestartRecord(seed=seed, failed=True, message=f"{exc.category}: {exc.message}"), None, []
    record = RestartRecord(
        seed=seed, cost=cost, grad_norm=stats.grad_norm, iterations=stats.iterations, status=stats.status.value
    )
    return record, q, stats.cost_trace


def fit_ssa(epochs: Sequence[EpochStats], config: SsaConfig) -> SsaResult:
    """
    Fit the KL-based SSA baseline.

    Raises:
        InsufficientData: Fewer than two epochs
        ConfigError: m is not below D
        AllRestartsFailed: No restart produced a solution
    """
    if len(epochs) < 2:
        raise InsufficientData(f"need at least 2 epochs, got {len(epochs)}")
    global_mean, _, Z = pooled_whitener(epochs)
    D = Z.shape[0]
    if not config.m < D:
        raise ConfigError(f"m={config.m} must be smaller than the dimension D={D}")
    objective = _whitened(epochs, Z, global_mean)

    logger.info(f"fitting SSA D={D} m={config.m} N={len(epochs)} restarts={config.restarts}")
    seeds = [config.seed + r for r in range(config.restarts)]
    outcomes = Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(_run_restart)(objective, D, config.m, seed, config.optimizer) for seed in seeds
    )
    succeeded = [(record.cost, index) for index, (record, q, _) in enumerate(outcomes) if q is not None]
    if not succeeded:
        raise AllRestartsFailed(f"all {config.restarts} SSA restarts failed")
    _, best = min(succeeded)
    record, q, trace = outcomes[best]

    rotation = q.basis.T
    pooled_sqrt = np.linalg.inv(Z)
    n_basis = Subspace.from_matrix(pooled_sqrt @ q.complement().basis)
    logger.info(f"best SSA restart seed={record.seed} cost={record.cost:.6e} status={record.status}")
    return SsaResult(
        rotation=rotation,
        projection=rotation @ Z,
        n_basis=n_basis,
        cost=max(record.cost, 0.0),
        per_restart=[r for r, _, _ in outcomes],
        whitener=Z,
        global_mean=global_mean,
        cost_trace=trace,
        config=config,
    )
