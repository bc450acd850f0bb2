"""Monte Carlo estimation of the stationary law of the global iterates,
coupled-chain contraction diagnostics, and per-round MSE traces.

Chains are vectorized: an ensemble of K independent chains advances as a
(K, d) state through the same round kernels used by the single-run
engines.  Each chain owns a (chain-id)-keyed substream; randomness is
pre-drawn in blocks of rounds, which is what keeps desk-scale Monte Carlo
(10^7..10^8 draws) cheap.  Standard errors come from between-chain
variation only, so no autocorrelation estimate is needed.

The synchronous-coupling diagnostic runs pairs of chains on shared noise
from distinct starts; the decay of their mean squared distance upper
bounds the squared Wasserstein contraction rate of the round kernel (the
Wasserstein distance itself is never computed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fedavg import RunConfig, _endpoints, check_step_gate, run
from .problems import ADDITIVE, Problem
from .rng import RandomStream

_BUFFER_DOUBLES = 1 << 21   # ~16 MB of pre-drawn noise per block


class _BlockSource:
    """Pre-drawn per-round randomness for an ensemble of chains.

    One sequential substream per (chain, client); draws arrive in blocks of
    rounds but are consumed round by round, with identical values to
    drawing one round at a time.
    """

    def __init__(self, problem: Problem, seed: int, n_chains: int, h_local: int,
                 base_chain: int = 0, chain_stride: int = 1):
        self.problem = problem
        self.h_local = h_local
        self.n_chains = n_chains
        self._gens = [
            [RandomStream(seed, base_chain + chain_stride * k).client_rng(c)
             for c in range(problem.n_clients)]
            for k in range(n_chains)
        ]
        per_round = n_chains * problem.n_clients * h_local * problem.dim
        self._block = max(1, _BUFFER_DOUBLES // max(per_round, 1))
        self._buf = None
        self._pos = 0
        if problem.noise.kind == ADDITIVE:
            self._n_rec = 0
        else:
            self._n_rec = problem.packed["y"].shape[1]

    def _refill(self):
        k, n, h, d = self.n_chains, self.problem.n_clients, self.h_local, self.problem.dim
        b = self._block
        if self.problem.noise.kind == ADDITIVE:
            z = np.empty((k, n, b, h, d))
            for i in range(k):
                for c in range(n):
                    z[i, c] = self._gens[i][c].standard_normal((b, h, d))
            self._buf = np.einsum("nij,knbhj->knbhi", self.problem.noise_factors, z)
        else:
            z = np.empty((k, n, b, h), dtype=np.int64)
            for i in range(k):
                for c in range(n):
                    z[i, c] = self._gens[i][c].integers(0, self._n_rec, size=(b, h))
            self._buf = z
        self._pos = 0

    def next_round(self):
        """(noise, idx) for one round: (K, N, H, d) or (K, N, H)."""
        if self._buf is None or self._pos >= self._block:
            self._refill()
        block = self._buf[:, :, self._pos]
        self._pos += 1
        if self.problem.noise.kind == ADDITIVE:
            return np.ascontiguousarray(block), None
        return None, np.ascontiguousarray(block)


def _ensemble_round(problem: Problem, thetas: np.ndarray, gamma: float, h_local: int,
                    shift: np.ndarray, noise, idx) -> np.ndarray:
    """One round for all chains; returns per-client endpoints (K, N, d)."""
    return _endpoints(problem, thetas, gamma, h_local, shift, noise=noise, idx=idx)


@dataclass(frozen=True, eq=False)
class StationaryEstimate:
    mean: np.ndarray           # average post-burn-in iterate
    cov: np.ndarray            # second moment about the global optimum
    mean_stderr: np.ndarray    # between-chain standard error, per coordinate
    cov_stderr_fro: float      # Frobenius norm of the between-chain cov stderr
    n_effective: float
    burn_in: int
    n_samples: int             # per chain
    n_chains: int
    warnings: tuple = ()


def suggested_burn_in(problem: Problem, gamma: float, h_local: int) -> int:
    """Mixing floor: ten contraction time constants of the round kernel."""
    return int(np.ceil(10.0 / (gamma * problem.mu * h_local)))


def estimate_stationary(problem: Problem, gamma: float, h_local: int,
                        n_chains: int = 32, burn_in: Optional[int] = None,
                        samples_per_chain: int = 2000, seed: int = 0,
                        base_chain: int = 0) -> StationaryEstimate:
    """Estimate the stationary mean and second moment about the optimum.

    Runs n_chains independent chains started at the global optimum (valid
    for any start by uniqueness of the stationary law; starting at the
    optimum shortens transients), discards burn_in rounds, and averages the
    rest.  Standard errors use between-chain variance, which is unbiased
    because the chains are independent.
    """
    check_step_gate(problem, gamma)
    notes = []
    floor = suggested_burn_in(problem, gamma, h_local)
    if burn_in is None:
        burn_in = floor
    elif burn_in < floor:
        notes.append(f"burn_in={burn_in} below the suggested mixing floor {floor}")
    if samples_per_chain < 1 or n_chains < 2:
        raise ValueError("need samples_per_chain >= 1 and n_chains >= 2")
    opt = problem.global_optimum
    d, n = problem.dim, problem.n_clients
    thetas = np.broadcast_to(opt, (n_chains, d)).copy()
    shift = np.zeros((n_chains, n, d))
    source = _BlockSource(problem, seed, n_chains, h_local, base_chain)
    s1 = np.zeros((n_chains, d))
    s2 = np.zeros((n_chains, d, d))
    for t in range(burn_in + samples_per_chain):
        noise, idx = source.next_round()
        ep = _ensemble_round(problem, thetas, gamma, h_local, shift, noise, idx)
        thetas = ep.mean(axis=1)
        if t >= burn_in:
            s1 += thetas
            dev = thetas - opt
            s2 += dev[:, :, None] * dev[:, None, :]
    m_k = s1 / samples_per_chain
    c_k = s2 / samples_per_chain
    mean = m_k.mean(axis=0)
    cov = c_k.mean(axis=0)
    cov = 0.5 * (cov + cov.T)
    if n_chains > 1:
        mean_stderr = m_k.std(axis=0, ddof=1) / np.sqrt(n_chains)
        cov_stderr = c_k.std(axis=0, ddof=1) / np.sqrt(n_chains)
    else:
        mean_stderr = np.zeros(d)
        cov_stderr = np.zeros((d, d))
    # crude integrated-autocorrelation estimate from the between/within ratio
    within = np.mean([np.trace(ck) - np.sum((mk - opt) ** 2) for mk, ck in zip(m_k, c_k)])
    between = np.sum(m_k.var(axis=0, ddof=1))
    if within > 0 and between > 0:
        tau = samples_per_chain * between / within
        n_eff = n_chains * samples_per_chain / max(tau, 1.0)
    else:
        n_eff = float(n_chains * samples_per_chain)
    return StationaryEstimate(mean, cov, mean_stderr, float(np.linalg.norm(cov_stderr)),
                              float(n_eff), int(burn_in), samples_per_chain, n_chains,
                              tuple(notes))


def coupling_decay(problem: Problem, gamma: float, h_local: int,
                   n_pairs: int = 200, rounds: int = 30, seed: int = 0,
                   start_offset: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean squared distance between synchronously coupled chain pairs.

    Pair members start at the optimum and optimum + e_1 and consume
    identical noise; returns rows (t, msd) for t = 0..rounds.  The per-round
    decay factor of msd upper bounds the squared Wasserstein contraction
    factor (1 - gamma mu)^H.
    """
    check_step_gate(problem, gamma)
    opt = problem.global_optimum
    d, n = problem.dim, problem.n_clients
    if start_offset is None:
        start_offset = np.zeros(d)
        start_offset[0] = 1.0
    a = np.broadcast_to(opt, (n_pairs, d)).copy()
    b = a + start_offset
    shift = np.zeros((n_pairs, n, d))
    source = _BlockSource(problem, seed, n_pairs, h_local)
    out = np.empty((rounds + 1, 2))
    out[0] = (0.0, float(np.mean(np.sum((a - b) ** 2, axis=1))))
    for t in range(rounds):
        noise, idx = source.next_round()
        a = _ensemble_round(problem, a, gamma, h_local, shift, noise, idx).mean(axis=1)
        b = _ensemble_round(problem, b, gamma, h_local, shift, noise, idx).mean(axis=1)
        out[t + 1] = (t + 1, float(np.mean(np.sum((a - b) ** 2, axis=1))))
    return out


@dataclass(frozen=True, eq=False)
class MseTrace:
    times: np.ndarray
    mse: np.ndarray          # mean over replicas of ||theta_t - opt||^2
    mse_std: np.ndarray
    mse_avg: np.ndarray      # same for the tail-averaged iterate
    mse_avg_std: np.ndarray
    algorithm: str
    n_replicas: int

    def rows(self):
        for i, t in enumerate(self.times):
            yield (int(t), self.mse[i], self.mse_std[i], self.mse_avg[i],
                   self.mse_avg_std[i])


def _rr_weights(algorithm: str, h_local: int):
    if algorithm == "rr_gamma":
        return 2.0, -1.0
    if h_local <= 1:
        raise ValueError("h_local must exceed 1 for local-step extrapolation")
    return (2.0 * h_local - 1.0) / h_local, -(h_local - 1.0) / h_local


def mse_trace(problem: Problem, config: RunConfig, n_replicas: int = 10,
              seed: Optional[int] = None) -> MseTrace:
    """Per-round MSE against the optimum, averaged over independent replicas.

    Also emits the evaluation-protocol variant: iterate MSE for the first
    10% of rounds, then the MSE of the running average over the last 90%.
    Replica r uses chains (2r, 2r+1) so extrapolation pairs never share
    noise with other replicas.
    """
    seed = config.seed if seed is None else seed
    rounds = config.rounds
    d, n = problem.dim, problem.n_clients
    opt = problem.global_optimum
    alg = config.algorithm

    if alg == "fedavg_det":
        tr = run(problem, config)
        err = np.sum((tr.thetas - opt) ** 2, axis=1)
        avg_err = _tail_avg_errors(tr.times, tr.thetas, opt)
        zeros = np.zeros_like(err)
        return MseTrace(tr.times, err, zeros, avg_err, zeros.copy(), alg, 1)

    check_step_gate(problem, config.gamma if alg != "rr_gamma" else 2 * config.gamma,
                    config.allow_large_step)
    k = n_replicas
    shift = np.zeros((k, n, d))
    theta0 = np.zeros(d)

    def fresh():
        return np.broadcast_to(theta0, (k, d)).copy()

    # replica r owns chains (2r, 2r+1): extrapolation pairs use the second
    # chain unless coupled, when both members replay chain 2r
    if alg in ("fedavg", "scaffold"):
        states = [fresh()]
        gammas, h_locals, weights = [config.gamma], [config.h_local], [1.0]
        bases = [0]
    elif alg in ("rr_gamma", "rr_h"):
        if alg == "rr_h" and config.coupled_rr:
            raise ValueError("coupled streams are not defined for local-step "
                             "extrapolation in the ensemble driver (members "
                             "consume different draw counts per round)")
        wa, wb = _rr_weights(alg, config.h_local)
        if alg == "rr_gamma":
            gammas, h_locals = [config.gamma, 2 * config.gamma], [config.h_local] * 2
        else:
            gammas, h_locals = [config.gamma] * 2, [config.h_local, 2 * config.h_local]
        states = [fresh(), fresh()]
        weights = [wa, wb]
        bases = [0, 0 if config.coupled_rr else 1]
    else:
        raise ValueError(f"unsupported algorithm {alg!r}")
    sources = [_BlockSource(problem, seed, k, h, base_chain=b, chain_stride=2)
               for h, b in zip(h_locals, bases)]

    cc = np.zeros((k, n, d))
    cbar = np.zeros((k, d))

    sq = np.empty((rounds + 1, k))
    sq_avg = np.empty((rounds + 1, k))
    combo = sum(w * s for w, s in zip(weights, states))
    sq[0] = np.sum((combo - opt) ** 2, axis=1)
    sq_avg[0] = sq[0]
    t_avg_start = int(np.ceil(0.1 * rounds))
    avg_sum = np.zeros((k, d))
    avg_cnt = 0
    for t in range(rounds):
        for i, src in enumerate(sources):
            st = states[i]
            noise, idx = src.next_round()
            if alg == "scaffold":
                sshift = cbar[:, None, :] - cc
                ep = _ensemble_round(problem, st, gammas[i], h_locals[i], sshift,
                                     noise, idx)
                cc = cc - cbar[:, None, :] + (st[:, None, :] - ep) / (gammas[i] * h_locals[i])
                cbar = cc.mean(axis=1)
            else:
                ep = _ensemble_round(problem, st, gammas[i], h_locals[i], shift,
                                     noise, idx)
            states[i] = ep.mean(axis=1)
        combo = sum(w * s for w, s in zip(weights, states))
        sq[t + 1] = np.sum((combo - opt) ** 2, axis=1)
        if t + 1 >= t_avg_start:
            avg_sum += combo
            avg_cnt += 1
            sq_avg[t + 1] = np.sum((avg_sum / avg_cnt - opt) ** 2, axis=1)
        else:
            sq_avg[t + 1] = sq[t + 1]
    ddof = 1 if k > 1 else 0
    return MseTrace(
        np.arange(rounds + 1), sq.mean(axis=1), sq.std(axis=1, ddof=ddof),
        sq_avg.mean(axis=1), sq_avg.std(axis=1, ddof=ddof), alg, k,
    )


def _tail_avg_errors(times, thetas, opt, frac_start: float = 0.1):
    t_start = int(np.ceil(frac_start * times[-1]))
    err = np.sum((thetas - opt) ** 2, axis=1)
    out = err.copy()
    acc = np.zeros_like(thetas[0])
    cnt = 0
    for i, t in enumerate(times):
        if t >= t_start:
            acc += thetas[i]
            cnt += 1
            out[i] = np.sum((acc / cnt - opt) ** 2)
    return out
