import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, gauss_jordan_solve, ridge_by_gradient_descent
from ridgeproto import tensor as T
from ridgeproto.errors import ContractViolation, DomainError, SingularMatrixError
from ridgeproto.linalg import cholesky, cholesky_solve, ridge_loss, ridge_matrix, ridge_solve
from ridgeproto.tensor import Tape, Tensor


def solve(phi, a, lam):
    return ridge_solve(Tensor(phi), a, Tensor([lam])).data


def test_cholesky_solve_identity(rng):
    r = rng.normal(size=(3, 2))
    np.testing.assert_allclose(cholesky_solve(np.eye(3), r), r, atol=1e-15)


def test_cholesky_solve_diagonal():
    np.testing.assert_allclose(cholesky_solve(np.diag([2.0, 4.0]), [[2.0], [4.0]]), [[1.0], [1.0]])


def test_cholesky_solve_matches_gauss_jordan(rng):
    b = rng.normal(size=(8, 8))
    m = b.T @ b + np.eye(8)
    rhs = rng.normal(size=(8, 3))
    x = cholesky_solve(m, rhs)
    np.testing.assert_allclose(x, gauss_jordan_solve(m, rhs), atol=1e-8)
    assert np.abs(m @ x - rhs).max() <= 1e-6 * np.abs(rhs).max()


def test_cholesky_jitter_rescues_semidefinite():
    v = np.array([[1.0], [2.0], [3.0]])
    m = v @ v.T  # rank one
    lower = cholesky(m)
    assert np.allclose(lower @ lower.T, m, atol=1e-5)


def test_cholesky_gives_up_on_indefinite():
    with pytest.raises(SingularMatrixError):
        cholesky(np.diag([1.0, -1.0]))


def test_ridge_trivial_example():
    w = solve(np.array([[1.0], [0.0]]), np.array([[1.0], [0.0]]), 1.0)
    np.testing.assert_allclose(w, [[0.5, 0.0], [0.0, 0.0]], atol=1e-15)


def test_ridge_tiny_lambda_recovers_phi(rng):
    phi = rng.normal(size=(4, 3))
    np.testing.assert_allclose(solve(phi, np.eye(3), 1e-9), phi, atol=1e-6)


def test_ridge_matches_gradient_descent(rng):
    phi, a = rng.normal(size=(4, 6)), rng.normal(size=(3, 6))
    w = solve(phi, a, 0.7)
    ref = ridge_by_gradient_descent(phi, a, 0.7)
    assert np.linalg.norm(w - ref) / np.linalg.norm(ref) < 1e-5


def test_ridge_errors(rng):
    phi = Tensor(rng.normal(size=(3, 4)))
    with pytest.raises(DomainError):
        ridge_solve(phi, rng.normal(size=(2, 4)), Tensor([0.0]))
    with pytest.raises(DomainError):
        ridge_solve(phi, rng.normal(size=(2, 4)), Tensor([-1.0]))
    with pytest.raises(ContractViolation):
        ridge_solve(phi, rng.normal(size=(2, 5)), Tensor([1.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(1, 12), st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_normal_equation_residual(d, d_a, n, lam, seed):
    g = np.random.default_rng(seed)
    phi, a = g.normal(size=(d, n)), g.normal(size=(d_a, n))
    w = solve(phi, a, lam)
    rhs = phi @ a.T
    assert np.abs(w @ ridge_matrix(a, lam) - rhs).max() <= 1e-6 * max(np.abs(rhs).max(), 1e-300)


def test_ridge_optimality(rng):
    phi, a, lam = rng.normal(size=(5, 7)), rng.normal(size=(4, 7)), 0.3
    w = solve(phi, a, lam)
    best = ridge_loss(phi, a, w, lam)
    for _ in range(20):
        dw = rng.normal(size=w.shape)
        dw *= 1e-3 / np.linalg.norm(dw)
        assert ridge_loss(phi, a, w + dw, lam) >= best


def test_column_pair_permutation_invariance(rng):
    phi, a = rng.normal(size=(6, 10)), rng.normal(size=(4, 10))
    perm = rng.permutation(10)
    np.testing.assert_allclose(solve(phi[:, perm], a[:, perm], 0.5), solve(phi, a, 0.5), atol=1e-9)


def test_lambda_limit(rng):
    phi, a = rng.normal(size=(4, 6)), rng.normal(size=(3, 6))
    w = solve(phi, a, 1e9)
    assert np.abs(w).max() <= 1e-6 * np.abs(phi @ a.T).max()


def test_float32_inputs_solved_in_float64(rng):
    phi, a = rng.normal(size=(4, 6)), rng.normal(size=(3, 6))
    w32 = ridge_solve(Tensor(phi.astype(np.float32)), a, Tensor(np.array([0.7], dtype=np.float32)))
    assert w32.dtype == np.float32
    np.testing.assert_allclose(w32.data, solve(phi.astype(np.float32).astype(np.float64), a, np.float32(0.7)), rtol=1e-6, atol=1e-7)


def test_gradients_wrt_phi_and_lambda(rng):
    phi = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    lam = Tensor([0.8], requires_grad=True)
    a = rng.normal(size=(3, 6))
    r = rng.normal(size=(4, 3))

    def build():
        return T.sum(T.mul(ridge_solve(phi, a, lam), Tensor(r)))

    with Tape() as tape:
        T.backward(build())
    tape.clear()

    def f():
        with T.no_grad():
            return float(build().item())

    for t in (phi, lam):
        n = central_difference(f, t.data)
        assert np.linalg.norm(t.grad - n) / np.linalg.norm(n) < 1e-4
