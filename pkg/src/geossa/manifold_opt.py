"""
Optimization over the Grassmann manifold G(D, m).

Points are stored as D×m orthonormal bases (:class:`Subspace`), tangent
vectors as horizontal D×m matrices. :func:`minimize` hands the problem to
pymanopt: a Riemannian trust region whose truncated-CG inner solve uses
Hessian-vector products from central differences of the Riemannian
gradient, or steepest descent with backtracking. Steepest descent is also
the fallback when the trust region cannot proceed.
"""
from enum import Enum
from typing import Callable, List, Literal, Optional, Tuple

import numpy as np
import pymanopt
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pymanopt.manifolds import Grassmann, Stiefel
from pymanopt.optimizers import SteepestDescent, TrustRegions
from scipy import linalg

from .errors import BadDims, GeossaError, RankDeficient

ORTHONORMAL_TOL = 1e-10
RANK_TOL = 1e-12

CostFn = Callable[["Subspace"], float]
GradFn = Callable[["Subspace"], np.ndarray]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.flags.writeable = False
    return array


def qr_positive(M: np.ndarray) -> np.ndarray:
    """
    Q factor of a thin QR with the diagonal of R forced positive.

    Raises:
        RankDeficient: If a diagonal entry of R is negligible relative to the largest
    """
    q, r = np.linalg.qr(M)
    diag = np.diag(r)
    scale = np.max(np.abs(diag)) if diag.size else 0.0
    if scale == 0.0 or np.min(np.abs(diag)) <= RANK_TOL * scale:
        raise RankDeficient(f"matrix of shape {M.shape} lost column rank")
    signs = np.where(diag < 0, -1.0, 1.0)
    return q * signs


class Subspace(BaseModel):
    """A point of G(D, m) held as an orthonormal D×m basis."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    basis: np.ndarray = Field(..., description="D×m matrix with orthonormal columns")

    @field_validator("basis", mode="before")
    @classmethod
    def _as_array(cls, value):
        return _frozen(value)

    @model_validator(mode="after")
    def _check_basis(self) -> "Subspace":
        if self.basis.ndim != 2:
            raise ValueError(f"basis must be 2-D, got shape {self.basis.shape}")
        D, m = self.basis.shape
        if not 1 <= m < D:
            raise ValueError(f"need 1 <= m < D, got D={D}, m={m}")
        gram = self.basis.T @ self.basis
        if np.max(np.abs(gram - np.eye(m))) > ORTHONORMAL_TOL:
            raise ValueError("basis columns are not orthonormal")
        return self

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def sub_dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "Subspace":
        """Orthonormal basis of the column span of a full-rank D×m matrix."""
        return cls(basis=qr_positive(np.asarray(M, dtype=float)))

    def complement(self) -> "Subspace":
        """Orthonormal basis of span(basis)^⊥."""
        return Subspace(basis=linalg.null_space(self.basis.T))

    def rotated(self, R: np.ndarray) -> "Subspace":
        """Same span, basis rotated on the right by an orthogonal m×m matrix."""
        return Subspace(basis=self.basis @ R)


class TangentVector(BaseModel):
    """Horizontal tangent vector at a Subspace."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    at: Subspace
    delta: np.ndarray

    @field_validator("delta", mode="before")
    @classmethod
    def _as_array(cls, value):
        return _frozen(value)

    @model_validator(mode="after")
    def _check_horizontal(self) -> "TangentVector":
        if self.delta.shape != self.at.basis.shape:
            raise ValueError(f"delta shape {self.delta.shape} does not match basis {self.at.basis.shape}")
        scale = max(1.0, float(np.linalg.norm(self.delta)))
        if np.max(np.abs(self.at.basis.T @ self.delta)) > ORTHONORMAL_TOL * scale:
            raise ValueError("tangent vector is not horizontal")
        return self

    def norm(self) -> float:
        return float(np.linalg.norm(self.delta))


class _QrGrassmann(Grassmann):
    """pymanopt Grassmann with the positive-diagonal QR retraction."""

    def retraction(self, point, tangent_vector):
        return qr_positive(point + tangent_vector)


class ManifoldKind(str, Enum):
    """Search space of :func:`minimize`."""

    GRASSMANN = "grassmann"
    STIEFEL = "stiefel"

    def manifold(self, D: int, m: int):
        """pymanopt manifold of D×m orthonormal bases."""
        if not 1 <= m < D:
            raise BadDims(f"need 1 <= m < D, got D={D}, m={m}")
        if self is ManifoldKind.STIEFEL:
            return Stiefel(D, m)
        return _QrGrassmann(D, m)


GRASSMANN = ManifoldKind.GRASSMANN
STIEFEL = ManifoldKind.STIEFEL


class OptStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    TRUST_REGION_COLLAPSE = "trust_region_collapse"
    LINE_SEARCH_FAILURE = "line_search_failure"


class OptimizerOptions(BaseModel):
    """Stopping rules and trust-region constants."""

    model_config = ConfigDict(extra="forbid")

    method: Literal["trust_region", "steepest_descent"] = Field(
        "trust_region", description="Second-order trust region or first-order steepest descent"
    )
    max_iter: int = Field(200, ge=0, description="Outer iteration cap")
    grad_tol: float = Field(1e-6, gt=0, description="Riemannian gradient norm at which to stop")
    initial_trust_radius: Optional[float] = Field(None, gt=0, description="Defaults to max/8")
    max_trust_radius: Optional[float] = Field(None, gt=0, description="Defaults to (π/2)·√m")
    min_trust_radius: float = Field(1e-10, gt=0, description="Radius below which the region has collapsed")
    max_inner_iter: Optional[int] = Field(None, ge=1, description="tCG cap, defaults to the manifold dimension")
    use_finite_diff_hessian: bool = Field(
        True, description="FD Hessian-vector products; off means an identity model Hessian"
    )
    rho_prime: float = Field(0.1, gt=0, lt=0.25, description="Step acceptance threshold")
    kappa: float = Field(0.1, gt=0, lt=1, description="tCG linear stopping constant")
    theta: float = Field(1.0, gt=0, description="tCG superlinear stopping exponent")


class OptStats(BaseModel):
    iterations: int
    grad_norm: float
    cost_trace: List[float] = Field(default_factory=list, description="Accepted costs, starting at Q0")
    status: OptStatus
    inner_iterations: int = 0
    fallback_used: bool = False


def _check_shape(Q: Subspace, G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape != Q.basis.shape:
        raise BadDims(f"matrix shape {G.shape} does not match basis {Q.basis.shape}")
    return G


def project_tangent(Q: Subspace, G: np.ndarray) -> TangentVector:
    """Horizontal projection G − Q(QᵀG); turns a Euclidean gradient into the Riemannian one."""
    G = _check_shape(Q, G)
    manifold = GRASSMANN.manifold(Q.ambient_dim, Q.sub_dim)
    return TangentVector(at=Q, delta=manifold.projection(Q.basis, G))


def retract(Q: Subspace, xi: TangentVector) -> Subspace:
    """QR retraction: orthonormal basis of Q + ξ."""
    if xi.at.basis.shape != Q.basis.shape or not np.allclose(xi.at.basis, Q.basis, atol=1e-12):
        raise BadDims("tangent vector is not attached to this subspace")
    manifold = GRASSMANN.manifold(Q.ambient_dim, Q.sub_dim)
    return Subspace(basis=manifold.retraction(Q.basis, xi.delta))


def random_subspace(D: int, m: int, seed: Optional[int] = None) -> Subspace:
    """Uniformly distributed point of G(D, m): orthonormalized D×m Gaussian matrix."""
    if not 1 <= m < D:
        raise BadDims(f"need 1 <= m < D, got D={D}, m={m}")
    rng = np.random.default_rng(seed)
    return Subspace(basis=qr_positive(rng.standard_normal((D, m))))


def principal_angles(Q1: Subspace, Q2: Subspace) -> np.ndarray:
    """Principal angles in radians, descending; accurate for small angles."""
    if Q1.basis.shape != Q2.basis.shape:
        raise BadDims(f"subspaces differ in shape: {Q1.basis.shape} vs {Q2.basis.shape}")
    angles = linalg.subspace_angles(Q1.basis, Q2.basis)
    return np.clip(angles, 0.0, np.pi / 2)


def grassmann_dist(Q1: Subspace, Q2: Subspace) -> float:
    """Geodesic distance √(Σ θ_k²) on G(D, m)."""
    return float(np.linalg.norm(principal_angles(Q1, Q2)))


class _Problem:
    """A cost and its gradient wrapped as a pymanopt problem on one manifold."""

    def __init__(self, cost: CostFn, egrad: GradFn, manifold, m: int, opts: OptimizerOptions):
        self._cost = cost
        self._egrad = egrad
        self.manifold = manifold
        self.fd_step = 1e-5 * (1.0 + np.sqrt(m))
        self.hessian_products = 0

        @pymanopt.function.numpy(manifold)
        def cost_fn(point):
            return self.cost(point)

        @pymanopt.function.numpy(manifold)
        def egrad_fn(point):
            return self.egrad(point)

        @pymanopt.function.numpy(manifold)
        def hess_fn(point, tangent_vector):
            self.hessian_products += 1
            if opts.use_finite_diff_hessian:
                return self.hess_fd(point, tangent_vector)
            return tangent_vector

        self.pymanopt = pymanopt.Problem(manifold, cost_fn, euclidean_gradient=egrad_fn, riemannian_hessian=hess_fn)

    def cost(self, x: np.ndarray) -> float:
        return float(self._cost(Subspace(basis=x)))

    def egrad(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._egrad(Subspace(basis=x)), dtype=float)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.manifold.projection(x, self.egrad(x))

    def hess_fd(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        norm_eta = float(np.linalg.norm(eta))
        if norm_eta == 0.0:
            return np.zeros_like(eta)
        direction = eta / norm_eta
        h = self.fd_step
        project, step = self.manifold.projection, self.manifold.retraction
        g_plus = project(x, self.grad(step(x, h * direction)))
        g_minus = project(x, self.grad(step(x, -h * direction)))
        return (g_plus - g_minus) / (2.0 * h) * norm_eta


def _logged_costs(result) -> List[float]:
    iterations = (getattr(result, "log", None) or {}).get("iterations") or {}
    return [float(c) for c in iterations.get("cost") or []]


def _run(optimizer, problem: _Problem, x0: np.ndarray, **kwargs) -> Tuple[np.ndarray, int, List[float]]:
    result = optimizer.run(problem.pymanopt, initial_point=x0, **kwargs)
    logger.debug(f"{type(optimizer).__name__} stopped: {result.stopping_criterion}")
    return np.asarray(result.point, dtype=float), int(result.iterations), _logged_costs(result)


def _steepest_descent(problem: _Problem, x0: np.ndarray, opts: OptimizerOptions, budget: int):
    optimizer = SteepestDescent(
        max_iterations=budget,
        min_gradient_norm=opts.grad_tol,
        max_time=np.inf,
        max_cost_evaluations=np.iinfo(np.int64).max,
        verbosity=0,
        log_verbosity=1,
    )
    return _run(optimizer, problem, x0)


def _trust_regions(problem: _Problem, x0: np.ndarray, opts: OptimizerOptions):
    m = x0.shape[1]
    delta_bar = opts.max_trust_radius or (np.pi / 2) * np.sqrt(m)
    optimizer = TrustRegions(
        kappa=opts.kappa,
        theta=opts.theta,
        rho_prime=opts.rho_prime,
        max_iterations=opts.max_iter,
        min_gradient_norm=opts.grad_tol,
        max_time=np.inf,
        verbosity=0,
        log_verbosity=1,
    )
    return _run(
        optimizer,
        problem,
        x0,
        maxinner=opts.max_inner_iter or int(problem.manifold.dim),
        Delta_bar=delta_bar,
        Delta0=opts.initial_trust_radius or delta_bar / 8,
    )


def _trace(f0: float, costs: List[float], fx: float) -> List[float]:
    trace = [f0]
    for c in costs + [fx]:
        if c != trace[-1]:
            trace.append(c)
    return trace


def minimize(
    cost: CostFn,
    egrad: GradFn,
    q0: Subspace,
    opts: Optional[OptimizerOptions] = None,
    *,
    geometry: ManifoldKind = GRASSMANN,
) -> Tuple[Subspace, float, OptStats]:
    """
    Minimize a span-dependent cost over G(D, m).

    Args:
        cost: Scalar cost of a Subspace
        egrad: Euclidean gradient ∂cost/∂Q as a D×m matrix
        q0: Starting point
        opts: Solver options
        geometry: Manifold structure; Grassmann unless a Stiefel solve is wanted

    Returns:
        Final point, its cost and solver statistics. The final cost is at
        most cost(q0). Solver trouble is reported in ``OptStats.status``,
        not raised.
    """
    opts = opts or OptimizerOptions()
    problem = _Problem(cost, egrad, geometry.manifold(q0.ambient_dim, q0.sub_dim), q0.sub_dim, opts)

    x0 = np.array(q0.basis)
    f0 = problem.cost(x0)
    if not np.isfinite(f0):
        raise GeossaError(f"cost is not finite at the starting point ({f0})")

    x, iterations, costs, fallback = x0, 0, [], False
    if opts.max_iter > 0:
        if opts.method == "steepest_descent":
            x, iterations, costs = _steepest_descent(problem, x0, opts, opts.max_iter)
        elif (opts.initial_trust_radius or np.inf) < opts.min_trust_radius:
            logger.debug("initial trust radius below the collapse threshold; using steepest descent")
            x, iterations, costs = _steepest_descent(problem, x0, opts, opts.max_iter)
            fallback = True
        else:
            x, iterations, costs = _trust_regions(problem, x0, opts)
            iterations = min(iterations, opts.max_iter)
            grad_norm = float(np.linalg.norm(problem.grad(x)))
            if grad_norm > opts.grad_tol and iterations < opts.max_iter:
                logger.debug(f"trust region stalled at |g|={grad_norm:.3e}; continuing with steepest descent")
                x, extra, more = _steepest_descent(problem, x, opts, opts.max_iter - iterations)
                iterations, costs, fallback = iterations + extra, costs + more, True

    fx = problem.cost(x)
    # accepted trust-region steps may rise by the rho regularization
    if not fx <= f0:
        x, fx = x0, f0
    grad_norm = float(np.linalg.norm(problem.grad(x)))
    iterations = min(iterations, opts.max_iter)
    if grad_norm <= opts.grad_tol:
        status = OptStatus.CONVERGED
    elif iterations >= opts.max_iter:
        status = OptStatus.MAX_ITER
    elif opts.method == "steepest_descent":
        status = OptStatus.LINE_SEARCH_FAILURE
    else:
        status = OptStatus.TRUST_REGION_COLLAPSE

    stats = OptStats(
        iterations=iterations,
        grad_norm=grad_norm,
        cost_trace=_trace(f0, costs, fx),
        status=status,
        inner_iterations=problem.hessian_products,
        fallback_used=fallback,
    )
    logger.debug(f"minimize finished: {status.value} after {iterations} iterations, f={fx:.10e}")
    return Subspace(basis=x), fx, stats
