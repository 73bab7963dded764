"""
Synthetic data with a planted stationary subspace.

The sources split into m stationary and D−m non-stationary channels. The
stationary part is N(0, Λ^s) in every epoch; the non-stationary part is
s^n = C_i s^s + Y^n with Y^n ∼ N(μ_i, Λ^n_i), so epoch i has the source
covariance

    Λ_i = [[Λ^s,      (C_iΛ^s)ᵀ          ],
           [C_iΛ^s,   C_iΛ^sC_iᵀ + Λ^n_i ]]

and observations are mixed as x = A·s.
"""
from enum import Enum
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.covariance import empirical_covariance, ledoit_wolf_shrinkage, shrunk_covariance

from .errors import BadWindow, DegenerateSegment, GenerationFailure, NotSpd
from .manifold_opt import Subspace, qr_positive
from .spd_core import as_spd, spd_exp, spd_sqrt_inv_sqrt, symmetrize

COND_LIMIT = 1e6
MAX_ATTEMPTS = 100

# SeedSequence stream tags
_MODEL_STREAM = 0
_SIGNAL_STREAM = 1


class MixingKind(str, Enum):
    UNIFORM = "uniform"
    ORTHOGONAL = "orthogonal"
    IDENTITY = "identity"


class MixingParams(BaseModel):
    """Generator scales; defaults follow the toy benchmark (D=19, m=12, N=50, T=250)."""

    model_config = ConfigDict(extra="forbid")

    D: int = Field(19, ge=2, description="Number of channels")
    m: int = Field(12, ge=1, description="Number of stationary sources")
    N: int = Field(50, ge=1, description="Number of epochs")
    T: int = Field(250, ge=1, description="Samples per epoch")
    mixing: MixingKind = Field(MixingKind.UNIFORM, description="How A is drawn")
    eig_range: Tuple[float, float] = Field((0.5, 2.0), description="Range of Λ^s and Λ^n_i eigenvalues")
    coupling_scale: Optional[float] = Field(None, ge=0, description="Std of C_i entries, default 1/√m")
    mean_scale: float = Field(1.0, ge=0, description="Std of μ_i entries")
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "MixingParams":
        if not self.m < self.D:
            raise ValueError(f"need m < D, got D={self.D}, m={self.m}")
        low, high = self.eig_range
        if not 0 < low <= high:
            raise ValueError(f"eig_range must satisfy 0 < low <= high, got {self.eig_range}")
        return self


class MixingModel(BaseModel):
    """Ground truth behind a synthetic data set."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    A: np.ndarray = Field(..., description="D×D mixing matrix with unit-norm columns")
    Lambda_s: np.ndarray = Field(..., description="m×m stationary source covariance")
    C: np.ndarray = Field(..., description="N×(D−m)×m couplings")
    mu: np.ndarray = Field(..., description="N×(D−m) non-stationary means")
    Lambda_n: np.ndarray = Field(..., description="N×(D−m)×(D−m) non-stationary covariances")
    epoch_len: int = Field(..., ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "MixingModel":
        D, m = self.A.shape[0], self.Lambda_s.shape[0]
        N = self.C.shape[0]
        if self.A.shape != (D, D) or not 1 <= m < D:
            raise ValueError(f"inconsistent dimensions D={D}, m={m}")
        if self.C.shape != (N, D - m, m) or self.mu.shape != (N, D - m) or self.Lambda_n.shape != (N, D - m, D - m):
            raise ValueError("per-epoch arrays do not match (N, D, m)")
        if not np.allclose(np.linalg.norm(self.A, axis=0), 1.0, atol=1e-12):
            raise ValueError("mixing columns must have unit norm")
        try:
            as_spd(self.Lambda_s, "Lambda_s")
            for i, block in enumerate(self.Lambda_n):
                as_spd(block, f"Lambda_n[{i}]")
        except NotSpd as exc:
            raise ValueError(exc.message) from exc
        return self

    @property
    def D(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.Lambda_s.shape[0]

    @property
    def epochs(self) -> int:
        return self.C.shape[0]


class SignalSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray = Field(..., description="(N·T)×D mixed observations")
    epoch_bounds: List[Tuple[int, int]]
    ground_truth: MixingModel


class EstimatorKind(str, Enum):
    EMPIRICAL = "empirical"
    SHRINKAGE = "shrinkage"


class EstimatorConfig(BaseModel):
    """Covariance estimator for one segment."""

    model_config = ConfigDict(extra="forbid")

    kind: EstimatorKind = Field(EstimatorKind.EMPIRICAL)
    shrinkage: Optional[float] = Field(
        None, ge=0, le=1, description="Fixed intensity toward scaled identity; None picks Ledoit-Wolf"
    )
    unbiased: bool = Field(False, description="Use 1/(T−1) instead of 1/T")


class LabeledCovs(NamedTuple):
    covs: List[np.ndarray]
    labels: List[int]
    s_basis: Subspace
    mixing: np.ndarray


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def gen_mixing(D: int, seed=None, max_attempts: int = MAX_ATTEMPTS, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """
    Uniform [−0.5, 0.5] mixing with unit-norm columns.

    Raises:
        GenerationFailure: If no draw is conditioned below ``cond_limit``
    """
    if D < 2:
        raise GenerationFailure(f"need D >= 2, got {D}")
    rng = _rng(seed)
    for attempt in range(max_attempts):
        A = rng.uniform(-0.5, 0.5, size=(D, D))
        A /= np.linalg.norm(A, axis=0)
        condition = np.linalg.cond(A)
        if condition <= cond_limit:
            return A
        logger.debug(f"mixing draw {attempt} rejected (cond {condition:.2e})")
    raise GenerationFailure(f"no mixing matrix with condition <= {cond_limit:.1e} in {max_attempts} attempts")


def gen_orthogonal(D: int, seed=None) -> np.ndarray:
    """Haar-distributed orthogonal matrix."""
    return qr_positive(_rng(seed).standard_normal((D, D)))


def gen_random_spd(d: int, seed=None, eig_range: Tuple[float, float] = (0.5, 2.0)) -> np.ndarray:
    """BΓBᵀ with B Haar-orthogonal and Γ uniform on ``eig_range``."""
    rng = _rng(seed)
    B = qr_positive(rng.standard_normal((d, d)))
    gamma = rng.uniform(eig_range[0], eig_range[1], size=d)
    return symmetrize((B * gamma) @ B.T)


def gen_model(params: MixingParams) -> MixingModel:
    """Draw A, Λ^s and the per-epoch (C_i, μ_i, Λ^n_i) from one seed."""
    D, m, N = params.D, params.m, params.N
    children = np.random.SeedSequence([params.seed, _MODEL_STREAM]).spawn(N + 2)
    if params.mixing is MixingKind.UNIFORM:
        A = gen_mixing(D, children[0])
    elif params.mixing is MixingKind.ORTHOGONAL:
        A = gen_orthogonal(D, children[0])
    else:
        A = np.eye(D)
    Lambda_s = gen_random_spd(m, children[1], params.eig_range)

    scale = params.coupling_scale if params.coupling_scale is not None else 1.0 / np.sqrt(m)
    C = np.empty((N, D - m, m))
    mu = np.empty((N, D - m))
    Lambda_n = np.empty((N, D - m, D - m))
    for i, child in enumerate(children[2:]):
        rng = _rng(child)
        C[i] = rng.normal(0.0, scale, size=(D - m, m)) if scale > 0 else 0.0
        mu[i] = rng.normal(0.0, params.mean_scale, size=D - m) if params.mean_scale > 0 else 0.0
        Lambda_n[i] = gen_random_spd(D - m, rng, params.eig_range)

    return MixingModel(A=A, Lambda_s=Lambda_s, C=C, mu=mu, Lambda_n=Lambda_n, epoch_len=params.T, seed=params.seed)


def source_cov(model: MixingModel, i: int) -> np.ndarray:
    """Closed-form source covariance of epoch i."""
    if not 0 <= i < model.epochs:
        raise IndexError(f"epoch {i} out of range for {model.epochs} epochs")
    Ls, C = model.Lambda_s, model.C[i]
    cross = C @ Ls
    return symmetrize(np.block([[Ls, cross.T], [cross, cross @ C.T + model.Lambda_n[i]]]))


def mixed_cov(model: MixingModel, i: int) -> np.ndarray:
    """Noise-free observation covariance A·Λ_i·Aᵀ of epoch i."""
    return symmetrize(model.A @ source_cov(model, i) @ model.A.T)


def _epoch_samples(model: MixingModel, i: int, seed: np.random.SeedSequence) -> np.ndarray:
    rng = _rng(seed)
    T, m, D = model.epoch_len, model.m, model.D
    s_s = rng.standard_normal((T, m)) @ np.linalg.cholesky(model.Lambda_s).T
    y_n = model.mu[i] + rng.standard_normal((T, D - m)) @ np.linalg.cholesky(model.Lambda_n[i]).T
    s_n = s_s @ model.C[i].T + y_n
    return np.hstack([s_s, s_n]) @ model.A.T


def gen_signals(model: MixingModel) -> SignalSet:
    """Sample every epoch and stack the mixed observations in time order."""
    seeds = np.random.SeedSequence([model.seed, _SIGNAL_STREAM]).spawn(model.epochs)
    blocks = [_epoch_samples(model, i, seed) for i, seed in enumerate(seeds)]
    T = model.epoch_len
    bounds = [(i * T, (i + 1) * T) for i in range(model.epochs)]
    return SignalSet(samples=np.vstack(blocks), epoch_bounds=bounds, ground_truth=model)


def split_epochs(samples: np.ndarray, T: int, overlap_fraction: float = 0.0) -> List[np.ndarray]:
    """
    Cut samples into windows of length T with stride round(T·(1 − overlap)).

    A trailing partial window is dropped. Windows are views into ``samples``.
    """
    samples = np.asarray(samples)
    n = samples.shape[0]
    if T < 1 or T > n:
        raise BadWindow(f"window length {T} does not fit {n} samples")
    if not 0.0 <= overlap_fraction < 1.0:
        raise BadWindow(f"overlap fraction must be in [0, 1), got {overlap_fraction}")
    stride = max(1, int(round(T * (1.0 - overlap_fraction))))
    count = (n - T) // stride + 1
    return [samples[k * stride : k * stride + T] for k in range(count)]


def estimate_cov(segment: np.ndarray, estimator: Optional[EstimatorConfig] = None) -> np.ndarray:
    """
    Mean-centred covariance of a T×D segment.

    Raises:
        DegenerateSegment: Empirical estimate requested on a rank-deficient segment
    """
    estimator = estimator or EstimatorConfig()
    segment = np.asarray(segment, dtype=float)
    if segment.ndim != 2 or segment.shape[0] < 1:
        raise DegenerateSegment(f"segment must be a non-empty T×D array, got shape {segment.shape}")
    T, D = segment.shape
    cov = empirical_covariance(segment)
    if estimator.unbiased and T > 1:
        cov *= T / (T - 1)

    if estimator.kind is EstimatorKind.EMPIRICAL:
        if T < D + 1:
            raise DegenerateSegment(f"empirical covariance needs T >= D+1 samples, got T={T}, D={D}")
        try:
            return as_spd(cov, "empirical covariance")
        except NotSpd as exc:
            raise DegenerateSegment(f"segment covariance is singular: {exc.message}") from exc

    if np.trace(cov) <= 0:
        # constant segment: the scaled-identity target is zero, so shrink toward ρ·I
        if estimator.shrinkage == 0.0:
            raise DegenerateSegment("constant segment with zero shrinkage")
        return (estimator.shrinkage or 1.0) * np.eye(D)
    if estimator.shrinkage is not None:
        intensity = estimator.shrinkage
    else:
        intensity = float(ledoit_wolf_shrinkage(segment)) if T > 1 else 1.0
    try:
        return as_spd(shrunk_covariance(cov, shrinkage=intensity), "shrunk covariance")
    except NotSpd as exc:
        raise DegenerateSegment(f"shrunk covariance is singular: {exc.message}") from exc


def true_s_projection(model: MixingModel) -> Subspace:
    """Span of the first m rows of A⁻¹, the projection that extracts s^s."""
    return Subspace.from_matrix(np.linalg.inv(model.A)[: model.m].T)


def true_nspace(model: MixingModel) -> Subspace:
    """Span of the non-stationary mixing columns A^n."""
    return Subspace.from_matrix(model.A[:, model.m :])


def make_two_class_covs(
    D: int,
    m: int,
    n_per_class: int,
    seed=None,
    separation: float = 1.0,
    jitter: float = 0.1,
    eig_range: Tuple[float, float] = (0.5, 2.0),
    ns_eig_range: Tuple[float, float] = (0.1, 10.0),
) -> LabeledCovs:
    """
    Two classes of covariances that differ only in their stationary block.

    Class c has s-block Λ^s_c with δ_r(Λ^s_0, Λ^s_1) = ``separation``; each
    trial perturbs its class block by a geodesic step of length ``jitter`` and
    draws a fresh non-stationary part (eigenvalues on ``ns_eig_range``) and
    coupling. The non-stationary spread has to dominate the class separation,
    otherwise an unsupervised s-space estimate drifts towards the class
    contrast. Trials are mixed by a common orthogonal A, so the true s-space
    is A[:, :m].

    Returns:
        Covariances, labels (0/1, interleaved), the s-space and the mixing matrix
    """
    rng = _rng(seed)
    A = qr_positive(rng.standard_normal((D, D)))

    def unit_symmetric(d: int) -> np.ndarray:
        H = symmetrize(rng.standard_normal((d, d)))
        return H / np.linalg.norm(H)

    base = gen_random_spd(m, rng, eig_range)
    sqrt, _ = spd_sqrt_inv_sqrt(base)
    class_blocks = [base, symmetrize(sqrt @ spd_exp(separation * unit_symmetric(m)) @ sqrt)]

    covs, labels = [], []
    for _ in range(n_per_class):
        for label, block in enumerate(class_blocks):
            block_sqrt, _ = spd_sqrt_inv_sqrt(block)
            Ls = symmetrize(block_sqrt @ spd_exp(jitter * unit_symmetric(m)) @ block_sqrt)
            C = rng.normal(0.0, 1.0 / np.sqrt(m), size=(D - m, m))
            Ln = gen_random_spd(D - m, rng, ns_eig_range)
            cross = C @ Ls
            source = np.block([[Ls, cross.T], [cross, cross @ C.T + Ln]])
            covs.append(symmetrize(A @ source @ A.T))
            labels.append(label)
    return LabeledCovs(covs=covs, labels=labels, s_basis=Subspace(basis=A[:, :m]), mixing=A)
