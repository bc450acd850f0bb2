"""Closed-form and first-order predictions for the stationary law.

Conventions (all verified against brute-force and Monte Carlo oracles in
the test suite; the two first-order terms add):

    stationary_mean - optimum
        =  gamma (H-1)/2 * b_h   (heterogeneity part, exact first order)
        +  gamma / (2N)  * b_s   (stochasticity part)
        +  higher order,

    stationary second moment about the optimum
        =  gamma / N * lyap(hess_avg, noise_cov)  + higher order,

with b_h from the Hessian-dispersion/gradient coupling and

    b_s = - hess_avg(opt)^{-1} third_avg(opt)[ lyap(hess_avg, noise_cov) ].

For quadratic populations the stationary mean is available exactly through
the H-step linearized contraction matrices, which is what anchors the
whole verification chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linalg
from .problems import Problem

SETTINGS = ("deterministic", "quadratic", "homogeneous", "heterogeneous")


class UnsupportedFamilyError(TypeError):
    """Closed form requested for a family it does not cover."""


def _contraction_matrices(problem: Problem, gamma: float, h_local: int):
    """Per-client (Id - gamma hess_c(opt))^H and their average."""
    opt = problem.global_optimum
    eye = np.eye(problem.dim)
    bs = [linalg.matrix_power(eye - gamma * problem.hess(c, opt), h_local)
          for c in range(problem.n_clients)]
    return bs, np.mean(bs, axis=0)


def quadratic_bias(problem: Problem, gamma: float, h_local: int) -> np.ndarray:
    """Exact stationary-mean bias for quadratic populations:

        (Id - Bbar)^{-1} (1/N) sum_c (Id - B_c)(opt_c - opt),

    with B_c = (Id - gamma A_c)^H.  Stochastic-gradient noise enters the
    quadratic dynamics additively, so this equals both the deterministic
    fixed point's bias and the stationary mean's bias.
    """
    if problem.family != "quadratic":
        raise UnsupportedFamilyError("closed-form bias needs a quadratic population")
    if gamma > 1.0 / problem.lip * (1 + 1e-12):
        raise ValueError("quadratic closed form needs gamma <= 1/L")
    opt = problem.global_optimum
    bs, b_bar = _contraction_matrices(problem, gamma, h_local)
    eye = np.eye(problem.dim)
    rhs = np.mean([(eye - b) @ (c.local_opt - opt)
                   for b, c in zip(bs, problem.clients)], axis=0)
    return linalg.solve_linear(eye - b_bar, rhs)


def quadratic_bias_bound(problem: Problem, gamma: float, h_local: int) -> float:
    """gamma (H-1) Delta_2 Delta_1 / (2 mu); the factor-1/2 version is the
    tight one, and it implies the looser bound without the 1/2."""
    d1, d2 = problem.heterogeneity()
    return gamma * (h_local - 1) * d2 * d1 / (2.0 * problem.mu)


def stochastic_bias_b_s(problem: Problem) -> np.ndarray:
    """Stochasticity-bias direction

        b_s = - hess_avg(opt)^{-1} third_avg(opt)[ X ],
        X solves  hess_avg X + X hess_avg = noise_cov(opt),

    normalized so the homogeneous stationary mean satisfies
    mean - opt = gamma/(2N) * b_s + higher order.  Zero for quadratics.
    """
    opt = problem.global_optimum
    h_avg = problem.hess_avg(opt)
    x = linalg.solve_lyapunov(h_avg, problem.noise_cov_at_opt())
    contracted = linalg.contract3(problem.third_avg(opt), x)
    return -linalg.solve_linear(h_avg, contracted)


def predicted_cov(problem: Problem, gamma: float) -> np.ndarray:
    """First-order stationary second moment gamma/N * lyap(hess_avg, noise_cov);
    symmetric PSD, linear in gamma, exactly 1/N in the client count."""
    opt = problem.global_optimum
    x = linalg.solve_lyapunov(problem.hess_avg(opt), problem.noise_cov_at_opt())
    return (gamma / problem.n_clients) * x


@dataclass(frozen=True, eq=False)
class BiasReport:
    setting: str
    bias_het: np.ndarray     # gamma (H-1)/2 * b_h, zeroed when the setting says so
    bias_sto: np.ndarray     # gamma/(2N) * b_s, zeroed when the setting says so
    bias_total: np.ndarray
    cov_pred: np.ndarray
    empirical_bias: Optional[np.ndarray] = None
    residual_norm: Optional[float] = None

    def to_dict(self) -> dict:
        doc = {
            "setting": self.setting,
            "bias_het": self.bias_het.tolist(),
            "bias_sto": self.bias_sto.tolist(),
            "bias_total": self.bias_total.tolist(),
            "cov_pred": self.cov_pred.tolist(),
        }
        if self.empirical_bias is not None:
            doc["empirical_bias"] = self.empirical_bias.tolist()
            doc["residual_norm"] = self.residual_norm
        return doc


def predicted_bias(problem: Problem, gamma: float, h_local: int, setting: str,
                   empirical_bias=None) -> BiasReport:
    """First-order bias decomposition for the requested setting.

    deterministic / quadratic: heterogeneity term only; homogeneous:
    stochasticity term only; heterogeneous: their sum.
    """
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}")
    from .analysis_det import first_order_bias_h

    d = problem.dim
    zero = np.zeros(d)
    het = zero
    sto = zero
    if setting in ("deterministic", "quadratic", "heterogeneous"):
        het = gamma * (h_local - 1) / 2.0 * first_order_bias_h(problem)
    if setting in ("homogeneous", "heterogeneous"):
        sto = gamma / (2.0 * problem.n_clients) * stochastic_bias_b_s(problem)
    if setting == "deterministic":
        cov = np.zeros((d, d))
    else:
        cov = predicted_cov(problem, gamma)
    total = het + sto
    resid = None
    emp = None
    if empirical_bias is not None:
        emp = linalg.as_vector(empirical_bias)
        resid = float(np.linalg.norm(emp - total))
    return BiasReport(setting, het, sto, total, cov, emp, resid)


def rr_limit_prediction(problem: Problem, gamma: float, h_local: int) -> np.ndarray:
    """Exact limit bias of step-size extrapolation on quadratics:
    2 bias(gamma) - bias(2 gamma); first-order terms cancel, leaving
    O((gamma H)^2)."""
    return 2.0 * quadratic_bias(problem, gamma, h_local) \
        - quadratic_bias(problem, 2.0 * gamma, h_local)


def rr_h_limit_prediction(problem: Problem, gamma: float, h_local: int) -> np.ndarray:
    """Exact limit bias of local-step extrapolation on quadratics:
    ((2H-1) bias(gamma, H) - (H-1) bias(gamma, 2H)) / H."""
    if h_local <= 1:
        raise ValueError("h_local must exceed 1 for local-step extrapolation")
    h = h_local
    return ((2.0 * h - 1.0) * quadratic_bias(problem, gamma, h)
            - (h - 1.0) * quadratic_bias(problem, gamma, 2 * h)) / h
