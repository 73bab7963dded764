"""
Geometry of symmetric positive definite (SPD) matrices.

Matrix functions are evaluated through a symmetric eigendecomposition of the
pre-symmetrized input, log-determinants through a Cholesky factor. Inputs
that fail the SPD checks are rejected, never silently regularized; callers
that want a ridge add it explicitly with :func:`add_ridge`. Distances, geodesics
and means are computed by pyRiemann; the means are checked against their
stationarity residuals here.
"""
import warnings
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from pyriemann.utils.base import invsqrtm, logm, sqrtm
from pyriemann.utils.distance import distance_logdet, distance_riemann
from pyriemann.utils.geodesic import geodesic_riemann
from pyriemann.utils.mean import mean_logdet, mean_riemann
from scipy import linalg

from .errors import DimMismatch, NoConvergence, NotSpd, SingularTransform

SymPosDef = npt.NDArray[np.float64]

SYMMETRY_TOL = 1e-10
SPD_FLOOR = 1e-12
COND_CAP = 1e12
MEAN_TOL = 1e-10
MEAN_MAX_ITER = 100
MEAN_ROUND = 5


class MetricKind(str, Enum):
    """Distance used to compare SPD matrices."""

    AIRM = "airm"
    STEIN = "stein"


class SpdEig(NamedTuple):
    """Eigendecomposition of an SPD matrix, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def symmetrize(S: np.ndarray) -> np.ndarray:
    """Return (S + Sᵀ)/2; works on stacks of matrices."""
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def as_spd(S: npt.ArrayLike, name: str = "matrix", check_eigenvalues: bool = True) -> SymPosDef:
    """
    Validate a candidate SPD matrix and return its symmetrized float copy.

    Args:
        S: Square matrix
        name: Label used in error messages
        check_eigenvalues: Also enforce the eigenvalue floor

    Returns:
        Symmetrized matrix

    Raises:
        DimMismatch: If ``S`` is not a square 2-D array
        NotSpd: If ``S`` is non-finite, asymmetric or not positive definite
    """
    S = np.array(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] == 0:
        raise DimMismatch(f"{name} must be a non-empty square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NotSpd(f"{name} has non-finite entries")
    asymmetry = float(np.max(np.abs(S - S.T)))
    if asymmetry > SYMMETRY_TOL * np.linalg.norm(S):
        raise NotSpd(f"{name} is not symmetric (max asymmetry {asymmetry:.3e})")
    S = symmetrize(S)
    if check_eigenvalues:
        spd_eig(S, name=name)
    return S


def spd_eig(S: np.ndarray, name: str = "matrix") -> SpdEig:
    """Eigendecomposition with the SPD floor enforced (λ_min > 1e-12·λ_max)."""
    eigenvalues, eigenvectors = np.linalg.eigh(symmetrize(np.asarray(S, dtype=float)))
    eigenvalues = eigenvalues[::-1]
    eigenvectors = eigenvectors[:, ::-1]
    lam_max, lam_min = eigenvalues[0], eigenvalues[-1]
    if not lam_max > 0 or not lam_min > SPD_FLOOR * lam_max:
        raise NotSpd(f"{name} is not positive definite", eigenvalue=float(lam_min))
    return SpdEig(eigenvalues, eigenvectors)


def _spectral(S: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    eigenvalues, eigenvectors = spd_eig(S)
    return symmetrize((eigenvectors * fn(eigenvalues)) @ eigenvectors.T)


def spd_log(S: SymPosDef) -> np.ndarray:
    """Matrix logarithm of an SPD matrix (a symmetric matrix)."""
    return _spectral(S, np.log)


def spd_exp(S: np.ndarray) -> SymPosDef:
    """Matrix exponential of a symmetric matrix (an SPD matrix)."""
    eigenvalues, eigenvectors = np.linalg.eigh(symmetrize(np.asarray(S, dtype=float)))
    return symmetrize((eigenvectors * np.exp(eigenvalues)) @ eigenvectors.T)


def spd_power(S: SymPosDef, p: float) -> SymPosDef:
    return _spectral(S, lambda w: w**p)


def spd_inv(S: SymPosDef) -> SymPosDef:
    return _spectral(S, np.reciprocal)


def spd_sqrt_inv_sqrt(S: SymPosDef) -> Tuple[SymPosDef, SymPosDef]:
    """Return (S^{1/2}, S^{-1/2}) from a single eigendecomposition."""
    eigenvalues, eigenvectors = spd_eig(S)
    root = np.sqrt(eigenvalues)
    sqrt = symmetrize((eigenvectors * root) @ eigenvectors.T)
    inv_sqrt = symmetrize((eigenvectors / root) @ eigenvectors.T)
    return sqrt, inv_sqrt


def add_ridge(S: np.ndarray, eps: float) -> SymPosDef:
    """Explicit regularization S + ε·I."""
    S = symmetrize(np.asarray(S, dtype=float))
    return S + eps * np.eye(S.shape[0])


def logdet(S: SymPosDef) -> float:
    """log det S from the diagonal of its Cholesky factor."""
    try:
        factor, _ = linalg.cho_factor(S, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NotSpd(f"Cholesky factorization failed: {exc}") from exc
    return float(2.0 * np.sum(np.log(np.diag(factor))))


def _pair(X: SymPosDef, Y: SymPosDef) -> Tuple[SymPosDef, SymPosDef]:
    X = as_spd(X, "X")
    Y = as_spd(Y, "Y")
    if X.shape != Y.shape:
        raise DimMismatch(f"shapes differ: {X.shape} vs {Y.shape}")
    return X, Y


def airm_dist2(X: SymPosDef, Y: SymPosDef) -> float:
    """Squared affine-invariant Riemannian distance ‖log(X^{-1/2} Y X^{-1/2})‖²_F."""
    X, Y = _pair(X, Y)
    return float(distance_riemann(X, Y, squared=True))


def stein_div(X: SymPosDef, Y: SymPosDef) -> float:
    """Stein (Jensen-Bregman log-det) divergence log det((X+Y)/2) − ½ log det(XY)."""
    X, Y = _pair(X, Y)
    return max(float(distance_logdet(X, Y, squared=True)), 0.0)


def logdet_div(X: SymPosDef, Y: SymPosDef) -> float:
    """
    Bregman log-det divergence tr(Y⁻¹X) − log det(Y⁻¹X) − D.

    Asymmetric; twice the KL divergence between N(0, X) and N(0, Y).
    """
    X, Y = _pair(X, Y)
    factor = linalg.cho_factor(Y, lower=True)
    trace = float(np.trace(linalg.cho_solve(factor, X)))
    return max(trace - logdet(X) + logdet(Y) - X.shape[0], 0.0)


def distance2(X: SymPosDef, Y: SymPosDef, metric: MetricKind) -> float:
    """Squared distance under ``metric`` (the Stein divergence is already a square)."""
    if MetricKind(metric) is MetricKind.AIRM:
        return airm_dist2(X, Y)
    return stein_div(X, Y)


def airm_geodesic(X: SymPosDef, Y: SymPosDef, t: float = 0.5) -> SymPosDef:
    """Point X^{1/2}(X^{-1/2} Y X^{-1/2})^t X^{1/2} on the AIRM geodesic from X to Y."""
    X, Y = _pair(X, Y)
    return symmetrize(geodesic_riemann(X, Y, alpha=t))



def congruence(P: npt.ArrayLike, X: SymPosDef) -> SymPosDef:
    """
    Congruence transform PᵀXP.

    Raises:
        SingularTransform: If cond(P) exceeds ``COND_CAP``
        DimMismatch: If P and X do not conform
    """
    P = np.asarray(P, dtype=float)
    X = as_spd(X, check_eigenvalues=False)
    if P.shape != X.shape:
        raise DimMismatch(f"transform shape {P.shape} does not match matrix {X.shape}")
    condition = float(np.linalg.cond(P))
    if not np.isfinite(condition) or condition > COND_CAP:
        raise SingularTransform(condition)
    return symmetrize(P.T @ X @ P)


def _as_set(matrices: Sequence[npt.ArrayLike]) -> List[SymPosDef]:
    if len(matrices) == 0:
        raise DimMismatch("matrix set is empty")
    checked = [as_spd(S, f"matrix {i}") for i, S in enumerate(matrices)]
    shapes = {S.shape for S in checked}
    if len(shapes) != 1:
        raise DimMismatch(f"matrix set has mixed shapes {sorted(shapes)}")
    return checked


def karcher_residual(mean: SymPosDef, matrices: Sequence[SymPosDef]) -> float:
    """‖Σ_i log(M^{-1/2} Σ_i M^{-1/2})‖_F, zero at the Karcher mean."""
    inv_sqrt = invsqrtm(mean)
    return float(np.linalg.norm(logm(inv_sqrt @ np.asarray(matrices) @ inv_sqrt).sum(axis=0)))


def _start(stack: np.ndarray, init: Optional[SymPosDef]) -> SymPosDef:
    if init is None:
        return symmetrize(stack.mean(axis=0))
    init = np.asarray(init, dtype=float)
    if init.shape != stack.shape[1:]:
        raise DimMismatch(f"initial mean is {init.shape}, matrices are {stack.shape[1:]}")
    return as_spd(symmetrize(init), "initial mean")


def _rounds(
    step: Callable[[np.ndarray, int], np.ndarray],
    residual: Callable[[np.ndarray], float],
    start: np.ndarray,
    tol: float,
    max_iter: int,
) -> SymPosDef:
    """
    Drive a pyRiemann mean in warm-started rounds of ``MEAN_ROUND`` iterations
    until ``residual`` drops to ``tol``.
    """
    mean, used = start, 0
    value = residual(mean)
    while value > tol:
        if used >= max_iter:
            raise NoConvergence(used, value)
        n = min(MEAN_ROUND, max_iter - used)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            mean = symmetrize(step(mean, n))
        used += n
        value = residual(mean)
    logger.debug(f"mean converged after {used} iterations (residual {value:.2e})")
    return mean


def karcher_mean(
    matrices: Sequence[SymPosDef],
    tol: float = MEAN_TOL,
    max_iter: int = MEAN_MAX_ITER,
    init: Optional[SymPosDef] = None,
) -> SymPosDef:
    """
    Riemannian (Karcher) mean under the AIRM.

    pyRiemann's gradient iteration, restarted from the current estimate every
    few steps so its step size never decays to nothing, from ``init`` (default:
    the arithmetic mean) until the summed log residual is at most ``tol·N``.

    Raises:
        NoConvergence: If the residual is still above tolerance after ``max_iter`` updates
    """
    stack = np.stack(_as_set(matrices))
    return _rounds(
        lambda mean, n: mean_riemann(stack, tol=tol, maxiter=n, init=mean),
        lambda mean: karcher_residual(mean, stack),
        _start(stack, init),
        tol * len(stack),
        max_iter,
    )


def stein_residual(mean: SymPosDef, matrices: Sequence[SymPosDef]) -> float:
    """
    Scale-free gradient norm of the Stein mean cost at ``mean``.

    Equals ‖I − M^{1/2} R M^{1/2}‖_F with R the average of ((M + Σ_i)/2)^{-1};
    zero at the fixed point M = R⁻¹.
    """
    resolvent = symmetrize(np.linalg.inv(0.5 * (mean + np.asarray(matrices))).mean(axis=0))
    sqrt = sqrtm(mean)
    return float(np.linalg.norm(np.eye(mean.shape[0]) - sqrt @ resolvent @ sqrt))


def stein_mean(
    matrices: Sequence[SymPosDef],
    tol: float = MEAN_TOL,
    max_iter: int = MEAN_MAX_ITER,
    init: Optional[SymPosDef] = None,
) -> SymPosDef:
    """
    Mean under the Stein divergence.

    pyRiemann's fixed-point iteration M ← [mean_i ((M + Σ_i)/2)^{-1}]^{-1}
    from ``init`` or the arithmetic mean, checked against :func:`stein_residual`.

    Raises:
        NoConvergence: If the gradient norm is still above ``tol`` after ``max_iter`` updates
    """
    stack = np.stack(_as_set(matrices))
    start = _start(stack, init)
    # pyRiemann stops on an absolute step; scale it to the set
    step_tol = tol * float(np.linalg.eigvalsh(stack.mean(axis=0))[0])
    return _rounds(
        lambda mean, n: mean_logdet(stack, tol=step_tol, maxiter=n, init=mean),
        lambda mean: stein_residual(mean, stack),
        start,
        tol,
        max_iter,
    )


def metric_mean(
    matrices: Sequence[SymPosDef],
    metric: MetricKind,
    tol: float = MEAN_TOL,
    max_iter: int = MEAN_MAX_ITER,
    init: Optional[SymPosDef] = None,
) -> SymPosDef:
    """Mean matched to ``metric``: Karcher for the AIRM, Stein mean for Stein."""
    if MetricKind(metric) is MetricKind.AIRM:
        return karcher_mean(matrices, tol=tol, max_iter=max_iter, init=init)
    return stein_mean(matrices, tol=tol, max_iter=max_iter, init=init)


class WhiteningContext(BaseModel):
    """Mean of a matrix set and the whitener Z = Σ̄^{-1/2} derived from it."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray = Field(..., description="Per-metric mean Σ̄")
    whitener: np.ndarray = Field(..., description="Z = Σ̄^{-1/2}")
    metric: MetricKind

    @model_validator(mode="after")
    def _check_whitens(self) -> "WhiteningContext":
        residual = self.whitener @ self.mean @ self.whitener.T - np.eye(self.mean.shape[0])
        if np.max(np.abs(residual)) > 1e-8:
            raise ValueError("whitener does not map the mean to the identity")
        return self


def whiten_set(
    matrices: Sequence[SymPosDef],
    metric: MetricKind,
    tol: float = MEAN_TOL,
    max_iter: int = MEAN_MAX_ITER,
) -> Tuple[List[SymPosDef], WhiteningContext]:
    """
    Whiten a set by its metric-matched mean: Σ̃_i = Z Σ_i Zᵀ with Z = Σ̄^{-1/2}.

    Returns:
        Whitened matrices and the context holding Σ̄ and Z
    """
    metric = MetricKind(metric)
    mean = metric_mean(matrices, metric, tol=tol, max_iter=max_iter)
    _, whitener = spd_sqrt_inv_sqrt(mean)
    whitened = [congruence(whitener.T, S) for S in matrices]
    return whitened, WhiteningContext(mean=mean, whitener=whitener, metric=metric)
