"""Small dense linear algebra for the theory oracles.

Everything here works on plain float64 numpy arrays at desk scale
(dimension <= MAX_DIM); the emphasis is on verifiable contracts, not
throughput.  Vectors are 1-d arrays, matrices are (d, d) arrays, and
third-derivative tensors are (d, d, d) arrays symmetric under all index
permutations.
"""

from __future__ import annotations

import numpy as np

MAX_DIM = 64

# Symmetry / validation tolerances are relative to Frobenius norms so the
# checks are scale-free.
SYM_RTOL = 1e-10


class ContractViolationError(ValueError):
    """An input violates a documented precondition (shape, symmetry, finiteness)."""


class SingularOperatorError(RuntimeError):
    """The requested solve has no (stable) solution: singular matrix or
    non-positive eigenvalue where positivity is required."""


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ContractViolationError(f"expected non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractViolationError("vector has non-finite entries")
    return v


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ContractViolationError(f"expected square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolationError("matrix has non-finite entries")
    return m


def as_sym_matrix(m, rtol: float = SYM_RTOL) -> np.ndarray:
    m = as_matrix(m)
    scale = np.linalg.norm(m) + 1.0
    if np.linalg.norm(m - m.T) > rtol * scale:
        raise ContractViolationError("matrix is not symmetric within tolerance")
    return 0.5 * (m + m.T)


def as_sym_tensor3(t, rtol: float = SYM_RTOL) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3 or len(set(t.shape)) != 1:
        raise ContractViolationError(f"expected (d,d,d) tensor, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ContractViolationError("tensor has non-finite entries")
    scale = np.linalg.norm(t.ravel()) + 1.0
    for perm in ((0, 2, 1), (1, 0, 2), (2, 1, 0)):
        if np.linalg.norm((t - np.transpose(t, perm)).ravel()) > rtol * scale:
            raise ContractViolationError("tensor is not symmetric under index permutations")
    return t


def eigh_jacobi(a, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with a = V diag(w) V^T, eigenvalues
    ascending.  Converges when the off-diagonal Frobenius mass drops below
    tol relative to the matrix norm.  d is small here, so robustness beats
    speed.
    """
    a = as_sym_matrix(a)
    d = a.shape[0]
    A = a.copy()
    V = np.eye(d)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(d), V
    for _ in range(max_sweeps):
        # off-diagonal Frobenius mass, summed directly (the ||A||^2 - sum of
        # squared diagonals form cancels catastrophically near convergence)
        off = np.sqrt(np.sum((A - np.diag(np.diag(A))) ** 2))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                # classic Jacobi rotation annihilating A[p,q]
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                if tau == 0.0:
                    t = 1.0
                elif abs(tau) > 1e150:  # tau^2 would overflow; asymptotic root
                    t = 0.5 / tau
                else:
                    t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                rot_p = c * V[:, p] - s * V[:, q]
                rot_q = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = rot_p, rot_q
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def solve_lyapunov(h, c) -> np.ndarray:
    """Solve h X + X h = c for symmetric positive-definite h and symmetric c.

    This is the inverse of the operator M -> M h + h M; it is applied to
    gradient-noise covariances when predicting the stationary covariance
    and the stochasticity bias.  Solved by eigendecomposition of h:
    in h's eigenbasis, X_ij = (Q^T c Q)_ij / (lambda_i + lambda_j).
    """
    h = as_sym_matrix(h)
    c = as_sym_matrix(c)
    if h.shape != c.shape:
        raise ContractViolationError("h and c must have matching shapes")
    w, q = eigh_jacobi(h)
    if w[0] <= 0.0:
        raise SingularOperatorError(f"h must be positive definite (min eigenvalue {w[0]:.3e})")
    ct = q.T @ c @ q
    x = ct / (w[:, None] + w[None, :])
    x = q @ x @ q.T
    return 0.5 * (x + x.T)


def contract3(t, m) -> np.ndarray:
    """Contract a symmetric 3-tensor with a symmetric matrix:
    out_i = sum_jk t_ijk m_jk.  Linear in m."""
    t = as_sym_tensor3(t)
    m = as_sym_matrix(m)
    if t.shape[0] != m.shape[0]:
        raise ContractViolationError("tensor and matrix dimensions disagree")
    return np.einsum("ijk,jk->i", t, m)


def matrix_power(m, k: int) -> np.ndarray:
    """k-fold repeated multiplication; k = 0 gives the identity."""
    m = as_matrix(m)
    if k < 0 or int(k) != k:
        raise ContractViolationError("exponent must be a nonnegative integer")
    out = np.eye(m.shape[0])
    for _ in range(int(k)):
        out = m @ out
    return out


def solve_linear(a, b) -> np.ndarray:
    """Solve a x = b by Gaussian elimination with partial pivoting.

    Raises SingularOperatorError when a pivot falls below 1e-12 times the
    matrix scale, which is the numerically-singular regime for the
    well-conditioned systems this package produces.
    """
    a = as_matrix(a).copy()
    b = as_vector(b).copy()
    d = a.shape[0]
    if b.size != d:
        raise ContractViolationError("matrix and vector dimensions disagree")
    scale = np.abs(a).max()
    if scale == 0.0:
        raise SingularOperatorError("zero matrix")
    for k in range(d):
        piv = k + np.argmax(np.abs(a[k:, k]))
        if np.abs(a[piv, k]) < 1e-12 * scale:
            raise SingularOperatorError(f"pivot {a[piv, k]:.3e} below threshold at column {k}")
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        fac = a[k + 1 :, k] / a[k, k]
        a[k + 1 :, k:] -= fac[:, None] * a[k, k:]
        b[k + 1 :] -= fac * b[k]
    x = np.zeros(d)
    for k in range(d - 1, -1, -1):
        x[k] = (b[k] - a[k, k + 1 :] @ x[k + 1 :]) / a[k, k]
    return x


def solve_matrix(a, b) -> np.ndarray:
    """Column-wise solve_linear for a matrix right-hand side."""
    b = as_matrix(b)
    cols = [solve_linear(a, b[:, j]) for j in range(b.shape[1])]
    return np.stack(cols, axis=1)


def spectral_norm_sym(m) -> float:
    """Largest |eigenvalue| of a symmetric matrix."""
    w, _ = eigh_jacobi(as_sym_matrix(m))
    return float(np.max(np.abs(w)))
