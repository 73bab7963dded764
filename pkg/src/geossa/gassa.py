"""
Geometry-aware stationary subspace analysis.

The stationary subspace is the span of Q minimizing

    Σ_i δ²(QᵀΣ_iQ, M(Q))

over the Grassmann manifold, with δ the AIRM or the Stein divergence. The
reference M(Q) is either the compressed global mean QᵀΣ̄Q, Σ̄ being the
metric-matched mean of the whole set, or the metric-matched mean of the
compressed set {QᵀΣ_iQ} itself. Only the latter is zero at the true subspace
when the non-stationary sources are correlated with the stationary ones. In
whitened mode the covariances are first congruenced by Z = Σ̄^{-1/2}, so the
global reference becomes the fixed identity I_m.
"""
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from pyriemann.utils.base import logm
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import AllRestartsFailed, ConfigError, DimMismatch, GeossaError, InsufficientData, NotSpd
from .manifold_opt import OptimizerOptions, Subspace, minimize, random_subspace
from .spd_core import (
    MEAN_MAX_ITER,
    MEAN_TOL,
    MetricKind,
    SymPosDef,
    WhiteningContext,
    as_spd,
    metric_mean,
    spd_sqrt_inv_sqrt,
    symmetrize,
    whiten_set,
)

FD_STEP = 1e-6

Basis = Union[Subspace, np.ndarray]


class GradientMode(str, Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


class Reference(str, Enum):
    """What each compressed covariance is compared with."""

    GLOBAL = "global"
    COMPRESSED = "compressed"


class InitKind(str, Enum):
    SPECTRAL = "spectral"
    RANDOM = "random"


class GassaConfig(BaseModel):
    """Solver settings for one gaSSA fit."""

    model_config = ConfigDict(extra="forbid")

    metric: MetricKind = Field(MetricKind.AIRM, description="Distance on the compressed matrices")
    whiten: bool = Field(False, description="Whiten by the metric mean before optimizing")
    m: int = Field(..., ge=1, description="Dimension of the stationary subspace")
    restarts: int = Field(5, ge=1, description="Independent starts")
    seed: int = Field(0, ge=0, description="Random starts of restart r use seed + r")
    reference: Reference = Field(
        Reference.COMPRESSED, description="Compressed global mean, or mean of the compressed set"
    )
    init: InitKind = Field(
        InitKind.SPECTRAL, description="Restart 0 starts from the least-dispersion directions; the rest are random"
    )
    optimizer: OptimizerOptions = Field(default_factory=OptimizerOptions)
    gradient_mode: GradientMode = Field(GradientMode.ANALYTIC)
    mean_tol: float = Field(MEAN_TOL, gt=0)
    mean_max_iter: int = Field(MEAN_MAX_ITER, ge=1)
    n_jobs: int = Field(1, description="joblib workers for the restarts")


class RestartRecord(BaseModel):
    seed: int
    start: InitKind = InitKind.RANDOM
    cost: Optional[float] = None
    grad_norm: Optional[float] = None
    iterations: int = 0
    status: Optional[str] = None
    failed: bool = False
    message: Optional[str] = None


class GassaResult(BaseModel):
    """
    Outcome of :func:`fit`.

    ``s_basis`` and ``n_basis`` live in the coordinates the optimizer worked
    in (whitened coordinates when ``whitening`` is set). ``s_projection`` and
    ``n_space`` are expressed in sensor coordinates.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    s_basis: Subspace
    n_basis: Subspace
    s_projection: np.ndarray = Field(..., description="D×m; sensor-space samples map to s-sources via xᵀP")
    n_space: Subspace = Field(..., description="Estimated span of the non-stationary mixing columns")
    cost: float
    per_restart: List[RestartRecord]
    whitening: Optional[WhiteningContext] = None
    degenerate: bool = False
    cost_trace: List[float] = Field(default_factory=list)
    config: GassaConfig


def _stack(covs: Union[Sequence[SymPosDef], np.ndarray]) -> np.ndarray:
    if len(covs) == 0:
        raise InsufficientData("no covariance matrices given")
    checked = [as_spd(S, f"covariance {i}") for i, S in enumerate(covs)]
    shapes = {S.shape for S in checked}
    if len(shapes) != 1:
        raise DimMismatch(f"covariances have mixed shapes {sorted(shapes)}")
    return np.stack(checked)


def _basis(Q: Basis) -> np.ndarray:
    return Q.basis if isinstance(Q, Subspace) else np.asarray(Q, dtype=float)


def _batch_cholesky(S: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotSpd(f"{name} is not positive definite") from exc


def _batch_logdet(S: np.ndarray, name: str) -> np.ndarray:
    L = _batch_cholesky(S, name)
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


class _Objective:
    """
    Cost and Euclidean gradient of gaSSA on a validated covariance stack.

    With the compressed-set reference the mean is recomputed at every point.
    It is a stationary point of the cost in M, so the gradient only carries
    the ∂/∂A_i terms.
    """

    def __init__(
        self,
        covs: np.ndarray,
        mean: Optional[np.ndarray],
        metric: MetricKind,
        mode: GradientMode = GradientMode.ANALYTIC,
        reference: Reference = Reference.GLOBAL,
        mean_tol: float = MEAN_TOL,
        mean_max_iter: int = MEAN_MAX_ITER,
    ):
        self.covs = covs
        self.mean = mean
        self.metric = MetricKind(metric)
        self.mode = GradientMode(mode)
        self.reference = Reference(reference)
        self.mean_tol = mean_tol
        self.mean_max_iter = mean_max_iter

    def _check(self, Q: np.ndarray) -> None:
        D = self.covs.shape[-1]
        if Q.ndim != 2 or Q.shape[0] != D or not 1 <= Q.shape[1] < D:
            raise DimMismatch(f"basis shape {Q.shape} does not fit covariances of dimension {D}")

    def _terms(self, Q: np.ndarray) -> Tuple[float, np.ndarray, Optional[np.ndarray], np.ndarray]:
        """Cost, ∂/∂A_i, Σ_i ∂/∂M (None in whitened mode) and the products Σ_iQ."""
        self._check(Q)
        m = Q.shape[1]
        SQ = self.covs @ Q
        A = symmetrize(Q.T @ SQ)
        if self.reference is Reference.COMPRESSED:
            M = metric_mean(list(A), self.metric, self.mean_tol, self.mean_max_iter)
        else:
            M = None if self.mean is None else symmetrize(Q.T @ self.mean @ Q)
        if self.metric is MetricKind.AIRM:
            cost, grad_A, grad_M = self._airm_terms(A, M)
        else:
            cost, grad_A, grad_M = self._stein_terms(A, M, m)
        if self.reference is Reference.COMPRESSED:
            grad_M = None
        return cost, grad_A, grad_M, SQ

    def _airm_terms(self, A: np.ndarray, M: Optional[np.ndarray]):
        if M is None:
            C, L_inv = A, None
        else:
            L = _batch_cholesky(M, "compressed mean")
            L_inv = linalg.solve_triangular(L, np.eye(M.shape[0]), lower=True)
            C = symmetrize(L_inv @ A @ L_inv.T)
        w, U = np.linalg.eigh(C)
        if np.any(w <= 0):
            raise NotSpd("compressed covariance is not positive definite", eigenvalue=float(w.min()))
        log_w = np.log(w)
        V = U if L_inv is None else L_inv.T @ U
        Vt = np.swapaxes(V, -1, -2)
        cost = float(np.sum(log_w**2))
        grad_A = 2.0 * (V * (log_w / w)[:, None, :]) @ Vt
        grad_M = None if M is None else -2.0 * np.sum((V * log_w[:, None, :]) @ Vt, axis=0)
        return cost, grad_A, grad_M

    def _stein_terms(self, A: np.ndarray, M: Optional[np.ndarray], m: int):
        reference = np.eye(m) if M is None else M
        S = A + reference
        cost = float(
            np.sum(_batch_logdet(0.5 * S, "compressed midpoint"))
            - 0.5 * np.sum(_batch_logdet(A, "compressed covariance"))
            - 0.5 * len(A) * float(_batch_logdet(reference, "compressed mean"))
        )
        S_inv = symmetrize(np.linalg.inv(S))
        grad_A = S_inv - 0.5 * symmetrize(np.linalg.inv(A))
        grad_M = None
        if M is not None:
            grad_M = np.sum(S_inv, axis=0) - 0.5 * len(A) * symmetrize(np.linalg.inv(M))
        return cost, grad_A, grad_M

    def cost(self, Q: Basis) -> float:
        return self._terms(_basis(Q))[0]

    def egrad(self, Q: Basis) -> np.ndarray:
        Q = _basis(Q)
        if self.mode is GradientMode.FINITE_DIFFERENCE:
            return self.egrad_fd(Q)
        _, grad_A, grad_M, SQ = self._terms(Q)
        egrad = 2.0 * np.einsum("nij,njk->ik", SQ, grad_A)
        if grad_M is not None:
            egrad += 2.0 * self.mean @ Q @ grad_M
        return egrad

    def egrad_fd(self, Q: Basis) -> np.ndarray:
        """Entrywise central differences of the cost with step 1e-6."""
        Q = _basis(Q)
        grad = np.zeros_like(Q)
        for index in np.ndindex(*Q.shape):
            step = np.zeros_like(Q)
            step[index] = FD_STEP
            grad[index] = (self.cost(Q + step) - self.cost(Q - step)) / (2.0 * FD_STEP)
        return grad


def gassa_cost(
    Q: Basis,
    covs: Sequence[SymPosDef],
    mean: Optional[SymPosDef],
    metric: MetricKind,
    reference: Reference = Reference.GLOBAL,
) -> float:
    """
    Σ_i δ²(QᵀΣ_iQ, QᵀΣ̄Q).

    Args:
        Q: Subspace, or any full-column-rank D×m matrix
        covs: Epoch covariances Σ_i
        mean: Reference Σ̄; ``None`` compares against I_m (whitened mode)
        metric: AIRM or Stein
        reference: ``COMPRESSED`` ignores ``mean`` and compares against the
            metric mean of the compressed set

    Returns:
        Nonnegative cost
    """
    mean = None if mean is None else as_spd(mean, "mean")
    return max(_Objective(_stack(covs), mean, metric, reference=reference).cost(Q), 0.0)


def gassa_egrad(
    Q: Basis,
    covs: Sequence[SymPosDef],
    mean: Optional[SymPosDef],
    metric: MetricKind,
    mode: GradientMode = GradientMode.ANALYTIC,
    reference: Reference = Reference.GLOBAL,
) -> np.ndarray:
    """Euclidean gradient ∂cost/∂Q (D×m), analytic or by central differences."""
    mean = None if mean is None else as_spd(mean, "mean")
    return _Objective(_stack(covs), mean, metric, mode, reference).egrad(Q)


def project_to_s_space(Q: Subspace, cov: SymPosDef) -> SymPosDef:
    """Compressed covariance QᵀΣQ."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (Q.ambient_dim, Q.ambient_dim):
        raise DimMismatch(f"covariance shape {cov.shape} does not match ambient dimension {Q.ambient_dim}")
    return as_spd(symmetrize(Q.basis.T @ cov @ Q.basis), "compressed covariance")


def spectral_start(whitened: Sequence[SymPosDef], m: int) -> Subspace:
    """
    Directions along which a whitened set disperses least.

    The bottom-m eigenvectors of Σ_i log(Σ̃_i)², a quadratic upper bound of
    the whitened AIRM cost.
    """
    logs = logm(np.asarray(whitened, dtype=float))
    _, vectors = np.linalg.eigh(symmetrize(np.einsum("nij,njk->ik", logs, logs)))
    return Subspace.from_matrix(vectors[:, :m])


def _run_restart(
    objective: _Objective, q0: Subspace, record: RestartRecord, opts: OptimizerOptions
) -> Tuple[RestartRecord, Optional[Subspace], List[float]]:
    try:
        q, cost, stats = minimize(objective.cost, objective.egrad, q0, opts)
    except GeossaError as exc:
        logger.warning(f"restart with seed {record.seed} failed: {exc.category}: {exc.message}")
        failed = record.model_copy(update={"failed": True, "message": f"{exc.category}: {exc.message}"})
        return failed, None, []
    done = record.model_copy(
        update={
            "cost": cost,
            "grad_norm": stats.grad_norm,
            "iterations": stats.iterations,
            "status": stats.status.value,
        }
    )
    return done, q, stats.cost_trace


def _starts(
    whitened: np.ndarray, whitener: Optional[np.ndarray], config: GassaConfig
) -> List[Tuple[Subspace, RestartRecord]]:
    """
    Starting points in whitened coordinates, mapped to sensor coordinates
    through ``whitener`` when the optimizer works there.
    """
    D = whitened.shape[-1]
    starts = []
    for r in range(config.restarts):
        seed = config.seed + r
        if r == 0 and config.init is InitKind.SPECTRAL:
            q0, kind = spectral_start(whitened, config.m), InitKind.SPECTRAL
        else:
            q0, kind = random_subspace(D, config.m, seed), InitKind.RANDOM
        if whitener is not None:
            q0 = Subspace.from_matrix(whitener @ q0.basis)
        starts.append((q0, RestartRecord(seed=seed, start=kind)))
    return starts


def _is_degenerate(stack: np.ndarray) -> bool:
    scale = np.linalg.norm(stack[0])
    return bool(np.all(np.linalg.norm(stack - stack[0], axis=(1, 2)) <= 1e-12 * scale))


def fit(covs: Sequence[SymPosDef], config: GassaConfig) -> GassaResult:
    """
    Estimate the stationary subspace from epoch covariances.

    Runs ``config.restarts`` optimizations and keeps the lowest cost (ties go
    to the lower restart index). Starts are drawn in whitened coordinates in
    both modes, so the whitened and unwhitened fits see the same starting
    costs.

    Args:
        covs: At least two D×D epoch covariances
        config: Solver settings

    Returns:
        The fitted result

    Raises:
        InsufficientData: Fewer than two covariances
        ConfigError: m is not below D
        AllRestartsFailed: No restart produced a solution
    """
    stack = _stack(covs)
    N, D = stack.shape[0], stack.shape[-1]
    if N < 2:
        raise InsufficientData(f"need at least 2 covariances, got {N}")
    if not config.m < D:
        raise ConfigError(f"m={config.m} must be smaller than the dimension D={D}")

    whitened, whitening = whiten_set(list(stack), config.metric, config.mean_tol, config.mean_max_iter)
    whitened = np.stack(whitened)
    common = dict(
        metric=config.metric,
        mode=config.gradient_mode,
        reference=config.reference,
        mean_tol=config.mean_tol,
        mean_max_iter=config.mean_max_iter,
    )
    if config.whiten:
        objective = _Objective(whitened, None, **common)
        starts = _starts(whitened, None, config)
    else:
        objective = _Objective(stack, whitening.mean, **common)
        starts = _starts(whitened, whitening.whitener, config)
        whitening = None

    degenerate = _is_degenerate(stack)
    if degenerate:
        logger.warning("all covariances are equal: the data is fully stationary and any subspace is optimal")

    logger.info(
        f"fitting gaSSA metric={config.metric.value} whiten={config.whiten} reference={config.reference.value} "
        f"D={D} m={config.m} N={N} restarts={config.restarts}"
    )
    outcomes = Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(_run_restart)(objective, q0, record, config.optimizer) for q0, record in starts
    )

    succeeded = [(record.cost, index) for index, (record, q, _) in enumerate(outcomes) if q is not None]
    if not succeeded:
        raise AllRestartsFailed(f"all {config.restarts} restarts failed")
    _, best = min(succeeded)
    best_record, s_basis, trace = outcomes[best]

    n_basis = s_basis.complement()
    if whitening is not None:
        s_projection = whitening.whitener @ s_basis.basis
        mean_sqrt, _ = spd_sqrt_inv_sqrt(whitening.mean)
        n_space = Subspace.from_matrix(mean_sqrt @ n_basis.basis)
    else:
        s_projection = np.array(s_basis.basis)
        n_space = n_basis

    logger.info(f"best restart seed={best_record.seed} cost={best_record.cost:.6e} status={best_record.status}")
    return GassaResult(
        s_basis=s_basis,
        n_basis=n_basis,
        s_projection=s_projection,
        n_space=n_space,
        cost=max(best_record.cost, 0.0),
        per_restart=[record for record, _, _ in outcomes],
        whitening=whitening,
        degenerate=degenerate,
        cost_trace=trace,
        config=config,
    )


def transform(result: GassaResult, samples: np.ndarray) -> np.ndarray:
    """Stationary source estimates xᵀP for T×D samples, returned as T×m."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != result.s_projection.shape[0]:
        raise DimMismatch(f"samples of shape {samples.shape} do not have {result.s_projection.shape[0]} channels")
    return samples @ result.s_projection


class Gassa(BaseEstimator):
    """
    Estimator wrapper around :func:`fit` and :func:`transform`.

    ``fit`` takes epoch covariances; ``transform`` takes raw T×D samples.
    """

    def __init__(
        self,
        m: int = 1,
        metric: str = "airm",
        whiten: bool = False,
        restarts: int = 5,
        seed: int = 0,
        gradient_mode: str = "analytic",
        reference: str = "compressed",
        init: str = "spectral",
        n_jobs: int = 1,
    ):
        self.m = m
        self.metric = metric
        self.whiten = whiten
        self.restarts = restarts
        self.seed = seed
        self.gradient_mode = gradient_mode
        self.reference = reference
        self.init = init
        self.n_jobs = n_jobs

    def fit(self, covs: Sequence[SymPosDef], y=None) -> "Gassa":
        config = GassaConfig(
            m=self.m,
            metric=self.metric,
            whiten=self.whiten,
            restarts=self.restarts,
            seed=self.seed,
            gradient_mode=self.gradient_mode,
            reference=self.reference,
            init=self.init,
            n_jobs=self.n_jobs,
        )
        self.result_ = fit(covs, config)
        self.s_projection_ = self.result_.s_projection
        self.n_space_ = self.result_.n_space
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise NotFittedError("Gassa instance is not fitted yet; call fit first")
        return transform(self.result_, X)
