"""Execution engines: deterministic and stochastic FedAvg, SCAFFOLD, and
Richardson-Romberg extrapolation drivers.

One communication round follows the classic recipe: every client starts
from the shared global iterate, takes H local (stochastic) gradient steps
with a common step size, and the server averages the N local endpoints.
With exact gradients the round map is a contraction whose unique fixed
point generally differs from the global optimum; with stochastic gradients
the global iterates form a Markov chain.  Both regimes are exercised by
the analysis modules against closed-form predictions.

All stochastic runs are pure functions of (problem, config): noise flows
from the config seed through counter-keyed substreams per
(chain, round, client), so client execution order is irrelevant and reruns
are bit-identical.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels, linalg
from .problems import ADDITIVE, SINGLE_SAMPLE, Problem
from .rng import RandomStream

ALGORITHMS = ("fedavg", "fedavg_det", "scaffold", "rr_gamma", "rr_h")

#: fraction of final rounds used for tail averaging, matching the
#: "average the last 90% of iterates" evaluation protocol
TAIL_FRACTION = 0.9

CSV_SCHEMA_VERSION = "fedbias-csv/1"


class GateViolationError(ValueError):
    """Step size outside the contraction regime without an explicit override."""


@dataclass(frozen=True)
class RunConfig:
    gamma: float
    h_local: int
    rounds: int
    seed: int
    algorithm: str = "fedavg"
    record_every: int = 1
    allow_large_step: bool = False
    coupled_rr: bool = False   # share noise between the two RR chains

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.h_local < 1:
            raise ValueError("h_local must be a positive integer")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be a positive integer")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded global iterates of one run (always includes rounds 0 and T)."""

    times: np.ndarray     # strictly increasing round indices
    thetas: np.ndarray    # (len(times), d)
    config: RunConfig
    problem_digest: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.thetas):
            raise ValueError("times and thetas length mismatch")
        if len(self.times) and (self.times[0] != 0 or np.any(np.diff(self.times) <= 0)):
            raise ValueError("times must start at 0 and increase strictly")

    def final(self) -> np.ndarray:
        return self.thetas[-1]

    def tail_average(self, frac: float = TAIL_FRACTION) -> np.ndarray:
        """Average of recorded iterates over the trailing `frac` of rounds."""
        start = (1.0 - frac) * self.times[-1]
        sel = self.times >= start
        return self.thetas[sel].mean(axis=0)

    def to_csv(self, path):
        d = self.thetas.shape[1]
        header = "t," + ",".join(f"theta_{j}" for j in range(d))
        lines = [header]
        for t, th in zip(self.times, self.thetas):
            lines.append(f"{int(t)}," + ",".join(f"{v:.17g}" for v in th))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def sidecar(self) -> dict:
        cfg = {k: getattr(self.config, k) for k in
               ("gamma", "h_local", "rounds", "seed", "algorithm", "record_every",
                "allow_large_step", "coupled_rr")}
        return {"csv_schema": CSV_SCHEMA_VERSION, "config": cfg,
                "problem_digest": self.problem_digest, "meta": dict(self.meta)}

    def sidecar_to(self, path):
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh, sort_keys=True, indent=1)
            fh.write("\n")


# ---------------------------------------------------------------------------
# round primitives
# ---------------------------------------------------------------------------

def check_step_gate(problem: Problem, gamma: float, allow: bool = False):
    limit = 1.0 / (2.0 * problem.lip)
    if gamma > limit * (1 + 1e-12):
        msg = f"gamma={gamma:g} exceeds the contraction gate 1/(2L)={limit:g}"
        if not allow:
            raise GateViolationError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)


def theory_gate_warnings(problem: Problem, gamma: float, h_local: int) -> list[str]:
    """Advisory notes attached when theory predictions are being compared.
    The tighter theorem constants are proof artifacts, not run requirements."""
    notes = []
    if gamma * problem.mu * h_local > 1.0:
        notes.append(f"gamma*mu*H = {gamma * problem.mu * h_local:g} > 1; "
                     "first-order expansions degrade")
    if gamma > 1.0 / (8.0 * problem.lip):
        notes.append("gamma above 1/(8L): homogeneous-expansion constants not guaranteed")
    if gamma > 1.0 / (25.0 * problem.lip):
        notes.append("gamma above 1/(25L): heterogeneous-expansion constants not guaranteed")
    return notes


def _endpoints(problem: Problem, thetas: np.ndarray, gamma: float, h_local: int,
               shift: np.ndarray, noise: Optional[np.ndarray] = None,
               idx: Optional[np.ndarray] = None) -> np.ndarray:
    """Dispatch one round of local passes to the backend kernels.

    thetas: (K, d) chain states; noise: (K, N, H, d) pre-transformed additive
    noise; idx: (K, N, H) record choices.  Exactly one of {nothing, noise,
    idx} selects the deterministic / additive / single-sample path.
    """
    p = problem.packed
    if problem.family == "quadratic":
        if idx is not None:
            raise linalg.ContractViolationError("single-sample path needs a logistic family")
        if noise is None:
            return kernels.quad_endpoints_det(thetas, p["a"], p["m"], gamma, h_local, shift)
        return kernels.quad_endpoints_add(thetas, p["a"], p["m"], gamma, h_local, shift, noise)
    args = (p["x"], p["y"], p["reg"], p["margin"], gamma, h_local, shift)
    if noise is not None:
        return kernels.logit_endpoints_add(thetas, *args, noise)
    if idx is not None:
        return kernels.logit_endpoints_single(thetas, *args, idx)
    return kernels.logit_endpoints_det(thetas, *args)


def _zero_shift(problem: Problem, n_chains: int = 1) -> np.ndarray:
    return np.zeros((n_chains, problem.n_clients, problem.dim))


def draw_round_noise(problem: Problem, stream: RandomStream, t: int, h_local: int):
    """Pre-draw one round of randomness from the (chain, t, c) substreams.

    Returns (noise, idx): the additive-noise block (1, N, H, d) already
    transformed by the covariance factors, or the record-index block
    (1, N, H), the other being None.
    """
    n = problem.n_clients
    if problem.noise.kind == ADDITIVE:
        z = np.stack([stream.round_rng(t, c).standard_normal((h_local, problem.dim))
                      for c in range(n)])
        noise = np.einsum("nij,nhj->nhi", problem.noise_factors, z)
        return noise[None], None
    n_rec = problem.packed["y"].shape[1]
    idx = np.stack([stream.round_rng(t, c).integers(0, n_rec, size=h_local)
                    for c in range(n)])
    return None, idx[None]


def local_pass_det(problem: Problem, c: int, theta, gamma: float, h_local: int) -> np.ndarray:
    """H exact-gradient steps of client c from theta."""
    problem._check_client(c)
    theta = linalg.as_vector(theta)
    x = theta.copy()
    for _ in range(h_local):
        x -= gamma * problem.grad(c, x)
    return x


def round_det(problem: Problem, theta, gamma: float, h_local: int) -> np.ndarray:
    """One deterministic communication round: average of the local passes."""
    theta = linalg.as_vector(theta)
    ep = _endpoints(problem, theta[None], gamma, h_local, _zero_shift(problem))
    return ep[0].mean(axis=0)


def local_pass_sto(problem: Problem, c: int, theta, gamma: float, h_local: int,
                   rng: np.random.Generator) -> np.ndarray:
    """H stochastic-gradient steps of client c, consuming the given substream."""
    problem._check_client(c)
    theta = linalg.as_vector(theta)
    x = theta.copy()
    for _ in range(h_local):
        x -= gamma * problem.sample_grad(c, x, rng)
    return x


def round_sto(problem: Problem, theta, gamma: float, h_local: int,
              stream: RandomStream, t: int = 0) -> np.ndarray:
    """One stochastic round at round index t; each client consumes its own
    (chain, t, c) substream, so evaluation order cannot matter."""
    theta = linalg.as_vector(theta)
    noise, idx = draw_round_noise(problem, stream, t, h_local)
    ep = _endpoints(problem, theta[None], gamma, h_local, _zero_shift(problem),
                    noise=noise, idx=idx)
    return ep[0].mean(axis=0)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def _record_grid(rounds: int, every: int) -> np.ndarray:
    grid = list(range(0, rounds + 1, every))
    if grid[-1] != rounds:
        grid.append(rounds)
    return np.asarray(grid, dtype=np.int64)


def run(problem: Problem, config: RunConfig, theta0=None, chain: int = 0) -> Trajectory:
    """Run the configured algorithm; a pure function of (problem, config).

    For the Richardson-Romberg algorithms the returned trajectory is the
    extrapolated one; use run_rr_gamma / run_rr_h for the member runs.
    """
    if config.algorithm == "rr_gamma":
        return run_rr_gamma(problem, config, theta0)[2]
    if config.algorithm == "rr_h":
        return run_rr_h(problem, config, theta0)[2]
    check_step_gate(problem, config.gamma, config.allow_large_step)
    theta = np.zeros(problem.dim) if theta0 is None else linalg.as_vector(theta0).copy()
    if config.algorithm == "scaffold":
        return _run_scaffold_inner(problem, config, theta, chain)
    stochastic = config.algorithm == "fedavg"
    stream = RandomStream(config.seed, chain) if stochastic else None
    grid = _record_grid(config.rounds, config.record_every)
    rec = np.empty((len(grid), problem.dim))
    rec[0] = theta
    shift = _zero_shift(problem)
    pos = 1
    for t in range(config.rounds):
        if stochastic:
            noise, idx = draw_round_noise(problem, stream, t, config.h_local)
        else:
            noise, idx = None, None
        ep = _endpoints(problem, theta[None], config.gamma, config.h_local, shift,
                        noise=noise, idx=idx)
        theta = ep[0].mean(axis=0)
        if pos < len(grid) and t + 1 == grid[pos]:
            rec[pos] = theta
            pos += 1
    return Trajectory(grid, rec, config, problem.digest(),
                      meta={"chain": chain, "backend": kernels.BACKEND})


def run_scaffold(problem: Problem, config: RunConfig, theta0=None, chain: int = 0) -> Trajectory:
    """SCAFFOLD with option-II control variates (no extra gradient passes):
    local steps use the corrected gradient g - c_c + cbar, and after each
    round c_c <- c_c - cbar + (theta_t - theta_c^H) / (gamma H)."""
    check_step_gate(problem, config.gamma, config.allow_large_step)
    theta = np.zeros(problem.dim) if theta0 is None else linalg.as_vector(theta0).copy()
    return _run_scaffold_inner(problem, config, theta, chain)


def _run_scaffold_inner(problem: Problem, config: RunConfig, theta, chain: int) -> Trajectory:
    stochastic = problem.noise.kind == SINGLE_SAMPLE or (
        problem.noise.kind == ADDITIVE and any(np.any(c) for c in problem.noise.covs)
    )
    stream = RandomStream(config.seed, chain)
    n, d = problem.n_clients, problem.dim
    cc = np.zeros((n, d))
    cbar = np.zeros(d)
    grid = _record_grid(config.rounds, config.record_every)
    rec = np.empty((len(grid), d))
    rec[0] = theta
    pos = 1
    gh = config.gamma * config.h_local
    for t in range(config.rounds):
        if stochastic:
            noise, idx = draw_round_noise(problem, stream, t, config.h_local)
        else:
            noise, idx = None, None
        shift = (cbar[None, :] - cc)[None]
        ep = _endpoints(problem, theta[None], config.gamma, config.h_local, shift,
                        noise=noise, idx=idx)[0]
        cc = cc - cbar + (theta[None, :] - ep) / gh
        cbar = cc.mean(axis=0)
        theta = ep.mean(axis=0)
        if pos < len(grid) and t + 1 == grid[pos]:
            rec[pos] = theta
            pos += 1
    meta = {"chain": chain, "backend": kernels.BACKEND,
            "control_variate_update": "option-ii"}
    return Trajectory(grid, rec, config, problem.digest(), meta=meta)


def _extrapolate(tr_a: Trajectory, tr_b: Trajectory, wa: float, wb: float,
                 algorithm: str) -> Trajectory:
    thetas = wa * tr_a.thetas + wb * tr_b.thetas
    cfg = replace(tr_a.config, algorithm=algorithm)
    meta = {"weights": (wa, wb), "members": (tr_a.sidecar()["config"],
                                             tr_b.sidecar()["config"])}
    return Trajectory(tr_a.times.copy(), thetas, cfg, tr_a.problem_digest, meta=meta)


def run_rr_gamma(problem: Problem, config: RunConfig, theta0=None,
                 base_chain: int = 0):
    """Richardson-Romberg in the step size: run at gamma and 2*gamma and
    combine iterates as 2*theta(gamma) - theta(2*gamma), cancelling the
    O(gamma) bias terms.  Noise is independent across the two runs unless
    coupled_rr shares the streams."""
    check_step_gate(problem, 2.0 * config.gamma, config.allow_large_step)
    chain_b = base_chain if config.coupled_rr else base_chain + 1
    cfg_a = replace(config, algorithm="fedavg")
    cfg_b = replace(config, algorithm="fedavg", gamma=2.0 * config.gamma)
    tr_a = run(problem, cfg_a, theta0, chain=base_chain)
    tr_b = run(problem, cfg_b, theta0, chain=chain_b)
    extra = _extrapolate(tr_a, tr_b, 2.0, -1.0, "rr_gamma")
    return tr_a, tr_b, extra


def run_rr_h(problem: Problem, config: RunConfig, theta0=None, base_chain: int = 0):
    """Richardson-Romberg in the number of local steps: combine runs at H
    and 2H local steps with the affine weights ((2H-1)/H, -(H-1)/H), which
    cancel the heterogeneity bias but leave the stochasticity bias.

    Needs H > 1 (at H = 1 there is no heterogeneity bias to cancel and the
    weights degenerate).
    """
    if config.h_local <= 1:
        raise ValueError("h_local must exceed 1 for local-step extrapolation")
    check_step_gate(problem, config.gamma, config.allow_large_step)
    h = config.h_local
    chain_b = base_chain if config.coupled_rr else base_chain + 1
    cfg_a = replace(config, algorithm="fedavg")
    cfg_b = replace(config, algorithm="fedavg", h_local=2 * h)
    tr_a = run(problem, cfg_a, theta0, chain=base_chain)
    tr_b = run(problem, cfg_b, theta0, chain=chain_b)
    extra = _extrapolate(tr_a, tr_b, (2.0 * h - 1.0) / h, -(h - 1.0) / h, "rr_h")
    return tr_a, tr_b, extra
