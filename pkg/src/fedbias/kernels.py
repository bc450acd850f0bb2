"""Hot inner loops of the simulation engines.

Every kernel advances an ensemble of K chains through one communication
round: each of the N clients starts from its chain's global iterate, takes
H local gradient steps, and the kernel returns the (K, N, d) array of
local endpoints (averaging is the caller's job, so SCAFFOLD can reuse the
same kernels).  Randomness is pre-drawn by the caller and passed in as
arrays, which keeps the kernels pure and lets the same noise drive coupled
chains.

Two interchangeable backends are provided:

* loop kernels compiled with numba ``@njit`` (default), and
* vectorized pure-numpy fallbacks.

Selection: set ``FEDBIAS_BACKEND`` to ``numba``, ``numpy``, or ``auto``
(default; numba when importable).  ``scripts/benchmark_backends.py``
compares the two.

The ``shift`` argument is a per-(chain, client) vector added to every
local gradient; FedAvg passes zeros, SCAFFOLD passes its control-variate
correction.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "quad_endpoints_det",
    "quad_endpoints_add",
    "logit_endpoints_det",
    "logit_endpoints_add",
    "logit_endpoints_single",
]


# ---------------------------------------------------------------------------
# loop implementations (numba-compilable, also runnable as plain python)
# ---------------------------------------------------------------------------

def _sigmoid(u):
    if u >= 0.0:
        return 1.0 / (1.0 + np.exp(-u))
    e = np.exp(u)
    return e / (1.0 + e)


def _loop_quad_det(thetas, a, m, gamma, h_local, shift):
    n_chains, dim = thetas.shape
    n_clients = a.shape[0]
    out = np.empty((n_chains, n_clients, dim))
    for k in range(n_chains):
        for c in range(n_clients):
            x = thetas[k].copy()
            for _ in range(h_local):
                g = a[c] @ (x - m[c]) + shift[k, c]
                x = x - gamma * g
            out[k, c] = x
    return out


def _loop_quad_add(thetas, a, m, gamma, h_local, shift, noise):
    n_chains, dim = thetas.shape
    n_clients = a.shape[0]
    out = np.empty((n_chains, n_clients, dim))
    for k in range(n_chains):
        for c in range(n_clients):
            x = thetas[k].copy()
            for h in range(h_local):
                g = a[c] @ (x - m[c]) + noise[k, c, h] + shift[k, c]
                x = x - gamma * g
            out[k, c] = x
    return out


def _loop_logit_det(thetas, xs, ys, reg, margin, gamma, h_local, shift):
    n_chains, dim = thetas.shape
    n_clients, n_rec = ys.shape
    out = np.empty((n_chains, n_clients, dim))
    for k in range(n_chains):
        for c in range(n_clients):
            x = thetas[k].copy()
            for _ in range(h_local):
                g = np.zeros(dim)
                for r in range(n_rec):
                    mg = 0.0
                    for j in range(dim):
                        mg += xs[c, r, j] * x[j]
                    s = _sigmoid(margin - ys[c, r] * mg)
                    coef = -s * ys[c, r] / n_rec
                    for j in range(dim):
                        g[j] += coef * xs[c, r, j]
                x = x - gamma * (g + reg * x + shift[k, c])
            out[k, c] = x
    return out


def _loop_logit_add(thetas, xs, ys, reg, margin, gamma, h_local, shift, noise):
    n_chains, dim = thetas.shape
    n_clients, n_rec = ys.shape
    out = np.empty((n_chains, n_clients, dim))
    for k in range(n_chains):
        for c in range(n_clients):
            x = thetas[k].copy()
            for h in range(h_local):
                g = np.zeros(dim)
                for r in range(n_rec):
                    mg = 0.0
                    for j in range(dim):
                        mg += xs[c, r, j] * x[j]
                    s = _sigmoid(margin - ys[c, r] * mg)
                    coef = -s * ys[c, r] / n_rec
                    for j in range(dim):
                        g[j] += coef * xs[c, r, j]
                x = x - gamma * (g + reg * x + noise[k, c, h] + shift[k, c])
            out[k, c] = x
    return out


def _loop_logit_single(thetas, xs, ys, reg, margin, gamma, h_local, shift, idx):
    n_chains, dim = thetas.shape
    n_clients = ys.shape[0]
    out = np.empty((n_chains, n_clients, dim))
    for k in range(n_chains):
        for c in range(n_clients):
            x = thetas[k].copy()
            for h in range(h_local):
                r = idx[k, c, h]
                mg = 0.0
                for j in range(dim):
                    mg += xs[c, r, j] * x[j]
                s = _sigmoid(margin - ys[c, r] * mg)
                coef = -s * ys[c, r]
                for j in range(dim):
                    x[j] = x[j] - gamma * (coef * xs[c, r, j] + reg * x[j] + shift[k, c, j])
            out[k, c] = x
    return out


# ---------------------------------------------------------------------------
# vectorized numpy fallbacks (same semantics, chains and clients batched)
# ---------------------------------------------------------------------------

def _np_sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _np_quad_det(thetas, a, m, gamma, h_local, shift):
    x = np.broadcast_to(thetas[:, None, :], (thetas.shape[0], a.shape[0], thetas.shape[1])).copy()
    for _ in range(h_local):
        g = np.einsum("cij,kcj->kci", a, x - m[None, :, :]) + shift
        x -= gamma * g
    return x

def _np_quad_add(thetas, a, m, gamma, h_local, shift, noise):
    x = np.broadcast_to(thetas[:, None, :], (thetas.shape[0], a.shape[0], thetas.shape[1])).copy()
    for h in range(h_local):
        g = np.einsum("cij,kcj->kci", a, x - m[None, :, :]) + noise[:, :, h, :] + shift
        x -= gamma * g
    return x


def _np_logit_grad(x, xs, ys, reg, margin):
    # x: (K, N, d);  xs: (N, n, d);  ys: (N, n)  ->  (K, N, d)
    mg = np.einsum("nrd,knd->knr", xs, x)
    s = _np_sigmoid(margin - ys[None, :, :] * mg)
    return -np.einsum("knr,nr,nrd->knd", s, ys, xs) / ys.shape[1] + reg * x


def _np_logit_det(thetas, xs, ys, reg, margin, gamma, h_local, shift):
    x = np.broadcast_to(thetas[:, None, :], (thetas.shape[0], ys.shape[0], thetas.shape[1])).copy()
    for _ in range(h_local):
        x -= gamma * (_np_logit_grad(x, xs, ys, reg, margin) + shift)
    return x


def _np_logit_add(thetas, xs, ys, reg, margin, gamma, h_local, shift, noise):
    x = np.broadcast_to(thetas[:, None, :], (thetas.shape[0], ys.shape[0], thetas.shape[1])).copy()
    for h in range(h_local):
        x -= gamma * (_np_logit_grad(x, xs, ys, reg, margin) + noise[:, :, h, :] + shift)
    return x


def _np_logit_single(thetas, xs, ys, reg, margin, gamma, h_local, shift, idx):
    n_chains, dim = thetas.shape
    n_clients = ys.shape[0]
    x = np.broadcast_to(thetas[:, None, :], (n_chains, n_clients, dim)).copy()
    crange = np.arange(n_clients)
    for h in range(h_local):
        sel = idx[:, :, h]                      # (K, N)
        xr = xs[crange[None, :], sel]           # (K, N, d)
        yr = ys[crange[None, :], sel]           # (K, N)
        mg = np.einsum("knd,knd->kn", xr, x)
        s = _np_sigmoid(margin - yr * mg)
        g = (-s * yr)[:, :, None] * xr + reg * x
        x -= gamma * (g + shift)
    return x


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

def _pick_backend() -> str:
    requested = os.environ.get("FEDBIAS_BACKEND", "auto").lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(f"FEDBIAS_BACKEND must be auto, numba, or numpy (got {requested!r})")
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _pick_backend()

if BACKEND == "numba":
    from numba import njit

    _sigmoid = njit(cache=True)(_sigmoid)
    quad_endpoints_det = njit(cache=True)(_loop_quad_det)
    quad_endpoints_add = njit(cache=True)(_loop_quad_add)
    logit_endpoints_det = njit(cache=True)(_loop_logit_det)
    logit_endpoints_add = njit(cache=True)(_loop_logit_add)
    logit_endpoints_single = njit(cache=True)(_loop_logit_single)
else:
    quad_endpoints_det = _np_quad_det
    quad_endpoints_add = _np_quad_add
    logit_endpoints_det = _np_logit_det
    logit_endpoints_add = _np_logit_add
    logit_endpoints_single = _np_logit_single
