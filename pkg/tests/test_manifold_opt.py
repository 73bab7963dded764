import numpy as np
import pytest
from scipy import stats as sps

from geossa.errors import BadDims, GeossaError, RankDeficient
from geossa.manifold_opt import (
    GRASSMANN,
    STIEFEL,
    OptimizerOptions,
    OptStatus,
    Subspace,
    TangentVector,
    grassmann_dist,
    minimize,
    principal_angles,
    project_tangent,
    qr_positive,
    random_subspace,
    retract,
)
from helpers import random_orthogonal


def _planted_quadratic(D, m, rng):
    """−tr(QᵀMQ) with a unit gap after the m-th eigenvalue; minimized by the top-m eigenvectors."""
    U = random_orthogonal(rng, D)
    eigenvalues = np.concatenate([np.linspace(5.0, 4.0, m), np.linspace(3.0, 1.0, D - m)])
    M = (U * eigenvalues) @ U.T
    truth = Subspace(basis=U[:, :m])

    def cost(Q):
        return -float(np.trace(Q.basis.T @ M @ Q.basis))

    def egrad(Q):
        return -2.0 * M @ Q.basis

    return cost, egrad, truth


def assert_non_increasing(trace):
    slack = 1e-10 * max(1.0, abs(trace[0]))
    assert np.all(np.diff(trace) <= slack)


def test_random_subspace_is_deterministic_and_orthonormal():
    a, b = random_subspace(7, 3, seed=11), random_subspace(7, 3, seed=11)
    np.testing.assert_array_equal(a.basis, b.basis)
    np.testing.assert_allclose(a.basis.T @ a.basis, np.eye(3), atol=1e-12)
    assert not np.allclose(a.basis, random_subspace(7, 3, seed=12).basis)


@pytest.mark.parametrize("D,m", [(3, 3), (3, 0), (2, 5)])
def test_random_subspace_rejects_bad_dims(D, m):
    with pytest.raises(BadDims):
        random_subspace(D, m, seed=0)


def test_subspace_validation():
    with pytest.raises(ValueError):
        Subspace(basis=np.ones((4, 2)))
    with pytest.raises(ValueError):
        Subspace(basis=np.eye(3))
    basis = Subspace(basis=np.eye(4)[:, :2]).basis
    with pytest.raises(ValueError):
        basis[0, 0] = 2.0


def test_qr_positive_rank_deficient():
    M = np.ones((4, 2))
    with pytest.raises(RankDeficient):
        qr_positive(M)
    q = qr_positive(np.array([[-2.0, 0.0], [0.0, 3.0], [0.0, 0.0]]))
    np.testing.assert_allclose(q, np.eye(3)[:, :2])


def test_complement_is_orthogonal():
    Q = random_subspace(6, 2, seed=3)
    complement = Q.complement()
    assert complement.basis.shape == (6, 4)
    np.testing.assert_allclose(Q.basis.T @ complement.basis, 0.0, atol=1e-12)


def test_project_tangent_is_idempotent_and_horizontal(rng):
    Q = random_subspace(8, 3, seed=1)
    G = rng.standard_normal((8, 3))
    xi = project_tangent(Q, G)
    np.testing.assert_allclose(Q.basis.T @ xi.delta, 0.0, atol=1e-12)
    np.testing.assert_allclose(project_tangent(Q, xi.delta).delta, xi.delta, atol=1e-14)
    with pytest.raises(BadDims):
        project_tangent(Q, np.zeros((8, 2)))


def test_tangent_vector_rejects_vertical_directions():
    Q = Subspace(basis=np.eye(4)[:, :2])
    with pytest.raises(ValueError):
        TangentVector(at=Q, delta=np.eye(4)[:, :2])


def test_retract_zero_and_small_step(rng):
    Q = random_subspace(6, 2, seed=5)
    zero = TangentVector(at=Q, delta=np.zeros((6, 2)))
    assert grassmann_dist(retract(Q, zero), Q) <= 1e-12
    xi = project_tangent(Q, 1e-4 * rng.standard_normal((6, 2)))
    moved = retract(Q, xi)
    assert grassmann_dist(moved, Q) == pytest.approx(xi.norm(), rel=1e-3)
    np.testing.assert_allclose(moved.basis.T @ moved.basis, np.eye(2), atol=1e-12)
    other = random_subspace(6, 2, seed=6)
    with pytest.raises(BadDims):
        retract(other, xi)


def test_grassmann_dist_known_values():
    e = np.eye(3)
    assert grassmann_dist(Subspace(basis=e[:, :1]), Subspace(basis=e[:, 1:2])) == pytest.approx(np.pi / 2)
    tilted = Subspace(basis=np.array([[np.cos(0.3)], [np.sin(0.3)], [0.0]]))
    assert grassmann_dist(Subspace(basis=e[:, :1]), tilted) == pytest.approx(0.3, rel=1e-12)


def test_grassmann_dist_ignores_basis_choice(rng):
    Q1, Q2 = random_subspace(7, 3, seed=1), random_subspace(7, 3, seed=2)
    R = random_orthogonal(rng, 3)
    assert grassmann_dist(Q1.rotated(R), Q2) == pytest.approx(grassmann_dist(Q1, Q2), rel=1e-10)
    assert grassmann_dist(Q1, Q1.rotated(R)) <= 1e-7


def test_principal_angles_shape_and_range():
    Q1, Q2 = random_subspace(9, 4, seed=1), random_subspace(9, 4, seed=2)
    angles = principal_angles(Q1, Q2)
    assert angles.shape == (4,)
    assert np.all((angles >= 0) & (angles <= np.pi / 2))
    with pytest.raises(BadDims):
        principal_angles(Q1, random_subspace(9, 3, seed=1))


def test_manifold_dimensions():
    assert GRASSMANN.manifold(10, 3).dim == 21
    assert STIEFEL.manifold(10, 3).dim == 24
    with pytest.raises(BadDims):
        GRASSMANN.manifold(3, 3)


def test_stiefel_projection_is_tangent(rng):
    Q = random_subspace(6, 3, seed=4).basis
    V = STIEFEL.manifold(6, 3).projection(Q, rng.standard_normal((6, 3)))
    skew = Q.T @ V
    np.testing.assert_allclose(skew + skew.T, 0.0, atol=1e-12)


@pytest.mark.parametrize("D,m", [(6, 2), (10, 4)])
def test_trust_region_recovers_planted_subspace(rng, D, m):
    cost, egrad, truth = _planted_quadratic(D, m, rng)
    opts = OptimizerOptions(grad_tol=1e-9, max_iter=500)
    q, fx, stats = minimize(cost, egrad, random_subspace(D, m, seed=0), opts)
    assert stats.status is OptStatus.CONVERGED
    assert grassmann_dist(q, truth) <= 1e-6
    assert fx == pytest.approx(cost(truth), rel=1e-10)
    assert_non_increasing(stats.cost_trace)
    assert stats.cost_trace[0] >= fx
    assert stats.inner_iterations > 0


def test_identity_hessian_still_converges(rng):
    cost, egrad, truth = _planted_quadratic(6, 2, rng)
    opts = OptimizerOptions(grad_tol=1e-6, max_iter=5000, use_finite_diff_hessian=False)
    q, _, stats = minimize(cost, egrad, random_subspace(6, 2, seed=1), opts)
    assert stats.status is OptStatus.CONVERGED
    assert grassmann_dist(q, truth) <= 1e-5


def test_steepest_descent_converges(rng):
    cost, egrad, truth = _planted_quadratic(5, 2, rng)
    opts = OptimizerOptions(method="steepest_descent", grad_tol=1e-8, max_iter=5000)
    q, _, stats = minimize(cost, egrad, random_subspace(5, 2, seed=2), opts)
    assert stats.status is OptStatus.CONVERGED
    assert not stats.fallback_used
    assert grassmann_dist(q, truth) <= 1e-5
    assert_non_increasing(stats.cost_trace)


def test_zero_iterations_returns_start(rng):
    cost, egrad, _ = _planted_quadratic(5, 2, rng)
    q0 = random_subspace(5, 2, seed=3)
    q, fx, stats = minimize(cost, egrad, q0, OptimizerOptions(max_iter=0))
    assert stats.status is OptStatus.MAX_ITER
    assert stats.iterations == 0
    np.testing.assert_array_equal(q.basis, q0.basis)
    assert fx == cost(q0)


def test_collapsed_radius_falls_back_to_steepest_descent(rng):
    cost, egrad, truth = _planted_quadratic(5, 2, rng)
    opts = OptimizerOptions(initial_trust_radius=1e-12, grad_tol=1e-8, max_iter=5000)
    q, _, stats = minimize(cost, egrad, random_subspace(5, 2, seed=4), opts)
    assert stats.fallback_used
    assert stats.status is OptStatus.CONVERGED
    assert grassmann_dist(q, truth) <= 1e-5


def test_non_finite_start_raises():
    with pytest.raises(GeossaError):
        minimize(lambda Q: np.nan, lambda Q: np.zeros_like(Q.basis), random_subspace(4, 2, seed=0))


def test_stiefel_solve_recovers_span(rng):
    cost, egrad, truth = _planted_quadratic(6, 3, rng)
    opts = OptimizerOptions(grad_tol=1e-9, max_iter=500)
    q, _, stats = minimize(cost, egrad, random_subspace(6, 3, seed=7), opts, geometry=STIEFEL)
    assert stats.status is OptStatus.CONVERGED
    assert grassmann_dist(q, truth) <= 1e-6


@pytest.mark.parametrize("size", [1e-3, 1e-4])
def test_retraction_matches_distance_to_third_order(rng, size):
    Q = random_subspace(7, 3, seed=8)
    direction = project_tangent(Q, rng.standard_normal((7, 3))).delta
    xi = TangentVector(at=Q, delta=size * direction / np.linalg.norm(direction))
    assert abs(grassmann_dist(retract(Q, xi), Q) - size) <= size**3


def test_random_subspace_is_uniform_on_the_grassmannian():
    D, m, draws = 6, 2, 1000
    fixed = Subspace(basis=np.eye(D)[:, :m])
    sampled = np.mean([principal_angles(random_subspace(D, m, seed=s), fixed).mean() for s in range(draws)])
    haar = sps.ortho_group.rvs(dim=D, size=draws, random_state=99)
    reference = np.mean([principal_angles(Subspace(basis=U[:, :m]), fixed).mean() for U in haar])
    assert sampled == pytest.approx(reference, rel=0.05)


def test_grassmann_dist_is_a_metric():
    for k in range(100):
        a, b, c = (random_subspace(6, 2, seed=3 * k + j) for j in range(3))
        ab, ba = grassmann_dist(a, b), grassmann_dist(b, a)
        assert ab == pytest.approx(ba, abs=1e-10)
        assert grassmann_dist(a, c) <= ab + grassmann_dist(b, c) + 1e-9


def test_trust_region_reaches_grad_tol_on_random_problems():
    rng = np.random.default_rng(2024)
    converged = 0
    for k in range(100):
        D = int(rng.integers(3, 9))
        m = int(rng.integers(1, D))
        S = rng.standard_normal((D, D))
        M = S @ S.T

        def cost(Q):
            return -float(np.trace(Q.basis.T @ M @ Q.basis))

        def egrad(Q):
            return -2.0 * M @ Q.basis

        opts = OptimizerOptions(grad_tol=1e-6, max_iter=200)
        _, _, stats = minimize(cost, egrad, random_subspace(D, m, seed=k), opts)
        converged += stats.grad_norm <= opts.grad_tol
    assert converged >= 95


def test_endpoint_depends_only_on_the_starting_span(rng):
    cost, egrad, _ = _planted_quadratic(7, 3, rng)
    q0 = random_subspace(7, 3, seed=9)
    opts = OptimizerOptions(grad_tol=1e-10, max_iter=500)
    q_a, f_a, _ = minimize(cost, egrad, q0, opts)
    q_b, f_b, _ = minimize(cost, egrad, q0.rotated(random_orthogonal(rng, 3)), opts)
    assert grassmann_dist(q_a, q_b) <= 1e-8
    assert f_a == pytest.approx(f_b, rel=1e-10)


def test_steepest_descent_budget_is_reported(rng):
    cost, egrad, _ = _planted_quadratic(6, 2, rng)
    opts = OptimizerOptions(method="steepest_descent", grad_tol=1e-12, max_iter=3)
    _, fx, stats = minimize(cost, egrad, random_subspace(6, 2, seed=10), opts)
    assert stats.status is OptStatus.MAX_ITER
    assert stats.iterations <= 3
    assert fx <= stats.cost_trace[0]
