"""SPD solves and the differentiable closed-form ridge regression.

``ridge_solve`` returns ``W = Phi A^T (A A^T + lam I)^-1``, the minimizer of
``||Phi - W A||^2 + lam ||W||^2``.  All factorizations run in float64 even
when the surrounding graph is float32; the result is cast back.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractViolation, DomainError, SingularMatrixError
from .tensor import Tensor, _make

JITTER_START = 1e-8
JITTER_GROWTH = 10.0
JITTER_TRIES = 3


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``m``, retrying with diagonal jitter.

    On failure ``1e-8 * trace(m) / n`` is added to the diagonal, growing
    tenfold for up to three retries.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation(f"cholesky needs a square matrix, got {m.shape}")
    n = m.shape[0]
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    base = abs(np.trace(m)) / n if n else 0.0
    if base == 0.0:
        base = 1.0
    jitter = JITTER_START * base
    eye = np.eye(n)
    for _ in range(JITTER_TRIES):
        try:
            return np.linalg.cholesky(m + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    raise SingularMatrixError(f"matrix is not positive definite even with jitter {jitter / JITTER_GROWTH:.3g}")


def cholesky_solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``m @ X = rhs`` for symmetric positive-definite ``m``."""
    m = np.asarray(m, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    vector = rhs.ndim == 1
    if vector:
        rhs = rhs[:, None]
    if rhs.ndim != 2 or rhs.shape[0] != m.shape[0]:
        raise ContractViolation(f"rhs shape {rhs.shape} does not match matrix {m.shape}")
    lower = cholesky(m)
    y = solve_triangular(lower, rhs, lower=True, check_finite=False)
    x = solve_triangular(lower.T, y, lower=False, check_finite=False)
    return x[:, 0] if vector else x


def ridge_matrix(attrs: np.ndarray, lam: float) -> np.ndarray:
    a = np.asarray(attrs, dtype=np.float64)
    return a @ a.T + lam * np.eye(a.shape[0])


def ridge_solve(phi: Tensor, attrs: np.ndarray, lam: Tensor) -> Tensor:
    """Closed-form ridge weights mapping attribute columns onto feature columns.

    Args:
        phi: ``d x n`` matrix of embeddings, one column per sample.
        attrs: ``d_a x n`` constant attribute matrix with matched columns.
        lam: size-1 tensor holding the (positive) regularizer.

    Returns:
        ``d x d_a`` tensor ``W``.  The recorded backward rule gives
        ``dL/dPhi = G M^-1 A`` and ``dL/dlam = -<G, W M^-1>`` with
        ``M = A A^T + lam I`` and ``G = dL/dW``.
    """
    if isinstance(attrs, Tensor):
        attrs = attrs.data
    attrs = np.asarray(attrs, dtype=np.float64)
    if phi.ndim != 2 or attrs.ndim != 2:
        raise ContractViolation("ridge_solve expects matrices for phi and attrs")
    if phi.shape[1] != attrs.shape[1] or phi.shape[1] < 1:
        raise ContractViolation(f"phi {phi.shape} and attrs {attrs.shape} need the same nonzero column count")
    if lam.data.size != 1:
        raise ContractViolation("lambda must be a scalar")
    lam_value = float(lam.data.reshape(-1)[0])
    if not lam_value > 0:
        raise DomainError(f"ridge regularizer must be positive, got {lam_value}")

    phi64 = phi.data.astype(np.float64)
    lower = cholesky(ridge_matrix(attrs, lam_value))

    def solve_right(b):
        # b @ M^-1 for symmetric M, via M^-1 b^T
        y = solve_triangular(lower, b.T, lower=True, check_finite=False)
        return solve_triangular(lower.T, y, lower=False, check_finite=False).T

    w64 = solve_right(phi64 @ attrs.T)
    out_dtype = phi.dtype

    def fn(g):
        g64 = g.astype(np.float64)
        gm = solve_right(g64)
        g_phi = (gm @ attrs).astype(phi.dtype) if phi.requires_grad else None
        g_lam = None
        if lam.requires_grad:
            g_lam = np.asarray(-np.sum(gm * w64)).reshape(lam.shape).astype(lam.dtype)
        return (g_phi, g_lam)

    return _make(w64.astype(out_dtype), (phi, lam), fn)


def ridge_loss(phi: np.ndarray, attrs: np.ndarray, w: np.ndarray, lam: float) -> float:
    """Value of ``||Phi - W A||_F^2 + lam ||W||_F^2``."""
    r = phi - w @ attrs
    return float(np.sum(r * r) + lam * np.sum(w * w))
