"""Deterministic-theory oracles: the round map's fixed point, the exact
integrated-Hessian bias identity, and the first-order heterogeneity bias.

The exact-gradient round map is a Banach contraction for gamma <= 1/(2L),
so it has a unique fixed point theta_bar.  Its displacement from the
global optimum admits an exact representation through integrated Hessians
along the local optimization paths, and a first-order expansion

    theta_bar - theta_opt = gamma (H - 1) / 2 * b_h + O((gamma H)^2),

where b_h couples Hessian dispersion with client gradients at the optimum.
The sign convention of b_h is pinned by brute force on scalar problems
(see the module tests): the expansion above holds as written.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .fedavg import GateViolationError, local_pass_det, round_det
from .problems import Problem

#: Gauss-Legendre nodes/weights on [0, 1] for the integrated Hessians;
#: order 16 puts the quadrature error far below the fixed-point tolerance
#: for the smooth losses in this package.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GL_NODES = (_GL_NODES + 1.0) / 2.0
_GL_WEIGHTS = _GL_WEIGHTS / 2.0


@dataclass(frozen=True)
class FixedPointResult:
    theta_bar: np.ndarray
    residual: float      # ||round_map(theta_bar) - theta_bar||
    iterations: int


def find_fixed_point(problem: Problem, gamma: float, h_local: int,
                     tol: float = 1e-12, max_iter: int = 10_000_000) -> FixedPointResult:
    """Iterate the deterministic round map to its unique fixed point.

    Stops when the step size drops below tol * (1 - rho) with rho the
    per-round contraction factor (1 - gamma mu)^(H/2), so the reported
    residual, not just the last step, is controlled by tol.
    """
    if gamma > 1.0 / (2.0 * problem.lip) * (1 + 1e-12):
        raise GateViolationError("fixed point needs the contraction gate gamma <= 1/(2L)")
    rho = (1.0 - gamma * problem.mu) ** (h_local / 2.0)
    stop = tol * max(1.0 - rho, 1e-15)
    theta = problem.global_optimum.copy()
    for it in range(1, max_iter + 1):
        new = round_det(problem, theta, gamma, h_local)
        step = float(np.linalg.norm(new - theta))
        theta = new
        if step <= stop:
            break
    residual = float(np.linalg.norm(round_det(problem, theta, gamma, h_local) - theta))
    return FixedPointResult(theta, residual, it)


def _integrated_hessian(problem: Problem, c: int, endpoint: np.ndarray,
                        origin: np.ndarray) -> np.ndarray:
    """integral_0^1 hess_c(origin + u (endpoint - origin)) du by quadrature;
    quadratics are exact without it."""
    if problem.family == "quadratic":
        return problem.clients[c].a
    acc = np.zeros((problem.dim, problem.dim))
    for u, w in zip(_GL_NODES, _GL_WEIGHTS):
        acc += w * problem.hess(c, origin + u * (endpoint - origin))
    return acc


def gamma_matrix_bias(problem: Problem, gamma: float, h_local: int,
                      theta_bar: np.ndarray) -> np.ndarray:
    """Exact bias identity evaluated from integrated Hessians.

    Writing J_c^h for the Hessian of client c integrated along the segment
    from the optimum to the h-th local iterate started at theta_bar, and
    F_c^{a:b} for the product of (Id - gamma J_c^l) over l in [a, b) with
    larger l applied on the left, the fixed point satisfies exactly

        theta_bar - theta_opt
            = -(gamma / N) (Id - Fbar)^{-1} sum_c sum_{h=0}^{H-1}
               F_c^{h+1:H} grad_c(theta_opt),

    with Fbar the client average of F_c^{0:H}.  The function returns the
    right-hand side; agreement with theta_bar - theta_opt is a strong
    end-to-end check of the oracles.
    """
    opt = problem.global_optimum
    theta_bar = linalg.as_vector(theta_bar)
    d, n = problem.dim, problem.n_clients
    rhs = np.zeros(d)
    f_bar = np.zeros((d, d))
    for c in range(n):
        iterates = [theta_bar]
        for _ in range(h_local - 1):
            iterates.append(local_pass_det(problem, c, iterates[-1], gamma, 1))
        js = [_integrated_hessian(problem, c, it, opt) for it in iterates]
        grad_c = problem.grad(c, opt)
        # suffix products F_c^{h+1:H}, built from the right
        suffix = np.eye(d)
        acc = suffix @ grad_c          # h = H-1 term (empty product)
        for l in range(h_local - 1, 0, -1):
            suffix = suffix @ (np.eye(d) - gamma * js[l])
            acc += suffix @ grad_c
        full = suffix @ (np.eye(d) - gamma * js[0])
        f_bar += full / n
        rhs += acc
    return linalg.solve_linear(np.eye(d) - f_bar, -gamma * rhs / n)


def bias_bound_det(problem: Problem, gamma: float, h_local: int) -> float:
    """Upper bound gamma (H-1) L Delta_1 / mu on the fixed-point bias."""
    d1, _ = problem.heterogeneity()
    return gamma * (h_local - 1) * problem.lip * d1 / problem.mu


def first_order_bias_h(problem: Problem) -> np.ndarray:
    """Heterogeneity-bias direction

        b_h = (1/N) hess_avg(opt)^{-1} sum_c (hess_c(opt) - hess_avg(opt)) grad_c(opt),

    normalized so that theta_bar - theta_opt = gamma (H-1)/2 * b_h + O((gamma H)^2).
    """
    opt = problem.global_optimum
    h_avg = problem.hess_avg(opt)
    acc = np.zeros(problem.dim)
    for c in range(problem.n_clients):
        acc += (problem.hess(c, opt) - h_avg) @ problem.grad(c, opt)
    return linalg.solve_linear(h_avg, acc / problem.n_clients)
