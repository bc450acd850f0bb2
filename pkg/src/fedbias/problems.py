"""Client objective populations with analytic derivative oracles.

Two families are provided, both strongly convex and three times
differentiable:

* quadratic clients  f_c(t) = 1/2 (t - m_c)' A_c (t - m_c), with the exact
  minimizer of the average available in closed form;
* regularized logistic clients with loss
  log(1 + exp(margin - y x' t)) + reg/2 ||t||^2 averaged over the client's
  records (margin defaults to 1, matching the synthetic benchmark loss; a
  zero-margin single-record client gives the softplus-plus-ridge scalar
  test problem).

Gradient noise is either additive Gaussian with a per-client covariance or
"single-sample": the gradient of the loss at one uniformly drawn record
(batch size one), centered automatically since the records average to the
exact gradient.

Problems are immutable after construction and JSON-serializable so that
every CLI run can be reproduced byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import linalg

SCHEMA = "fedbias-problem/1"

ADDITIVE = "additive-gaussian"
SINGLE_SAMPLE = "single-sample"


class NonConvergenceError(RuntimeError):
    """An iterative solve failed to reach tolerance; unreachable under the
    documented invariants, reported with diagnostics when it happens."""


@dataclass(frozen=True, eq=False)
class QuadraticClient:
    a: np.ndarray          # (d, d) symmetric Hessian, eigenvalues in [mu, L]
    local_opt: np.ndarray  # (d,) client minimizer

    def __post_init__(self):
        object.__setattr__(self, "a", linalg.as_sym_matrix(self.a))
        object.__setattr__(self, "local_opt", linalg.as_vector(self.local_opt))
        if self.a.shape[0] != self.local_opt.size:
            raise linalg.ContractViolationError("hessian and minimizer dimensions disagree")


@dataclass(frozen=True, eq=False)
class LogisticClient:
    features: np.ndarray   # (n, d)
    labels: np.ndarray     # (n,) entries in {-1, +1}
    reg: float
    margin: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.size or x.shape[0] == 0:
            raise linalg.ContractViolationError("features must be (n, d) with n matching labels")
        if not np.all(np.isfinite(x)):
            raise linalg.ContractViolationError("features have non-finite entries")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise linalg.ContractViolationError("labels must be +/-1")
        if not self.reg > 0:
            raise linalg.ContractViolationError("reg must be positive (gives strong convexity)")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    kind: str
    covs: Optional[tuple] = None   # per-client (d, d) SPSD, additive-gaussian only

    def __post_init__(self):
        if self.kind not in (ADDITIVE, SINGLE_SAMPLE):
            raise linalg.ContractViolationError(f"unknown noise kind {self.kind!r}")
        if self.kind == ADDITIVE:
            if not self.covs:
                raise linalg.ContractViolationError("additive noise needs per-client covariances")
            covs = tuple(linalg.as_sym_matrix(c) for c in self.covs)
            for c in covs:
                w, _ = linalg.eigh_jacobi(c)
                if w[0] < -1e-10 * (abs(w[-1]) + 1.0):
                    raise linalg.ContractViolationError("noise covariance not PSD")
            object.__setattr__(self, "covs", covs)
        elif self.covs is not None:
            raise linalg.ContractViolationError("single-sample noise takes no covariances")

    @staticmethod
    def additive(covs) -> "NoiseModel":
        return NoiseModel(ADDITIVE, tuple(covs))

    @staticmethod
    def additive_iso(sigma: float, dim: int, n_clients: int) -> "NoiseModel":
        cov = sigma**2 * np.eye(dim)
        return NoiseModel(ADDITIVE, tuple(cov.copy() for _ in range(n_clients)))

    @staticmethod
    def single_sample() -> "NoiseModel":
        return NoiseModel(SINGLE_SAMPLE)


def _stable_sigmoid(u):
    e = np.exp(-np.abs(u))
    return np.where(u >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True, eq=False)
class Problem:
    """A population of N same-family clients plus a gradient-noise model."""

    clients: tuple
    noise: NoiseModel

    def __post_init__(self):
        if len(self.clients) < 1:
            raise linalg.ContractViolationError("need at least one client")
        object.__setattr__(self, "clients", tuple(self.clients))
        kinds = {type(c) for c in self.clients}
        if len(kinds) != 1:
            raise linalg.ContractViolationError("all clients must belong to one family")
        dims = {self._client_dim(c) for c in self.clients}
        if len(dims) != 1:
            raise linalg.ContractViolationError("all clients must share the dimension")
        if self.dim > linalg.MAX_DIM:
            raise linalg.ContractViolationError(
                f"dimension {self.dim} exceeds the desk-scale cap {linalg.MAX_DIM}"
            )
        if self.family == "logistic":
            regs = {c.reg for c in self.clients}
            margins = {c.margin for c in self.clients}
            if len(regs) != 1 or len(margins) != 1:
                raise linalg.ContractViolationError("logistic clients must share reg and margin")
        if self.noise.kind == ADDITIVE and len(self.noise.covs) != len(self.clients):
            raise linalg.ContractViolationError("need one noise covariance per client")
        if self.noise.kind == ADDITIVE and self.noise.covs[0].shape[0] != self.dim:
            raise linalg.ContractViolationError("noise covariance dimension mismatch")
        if self.noise.kind == SINGLE_SAMPLE and self.family != "logistic":
            raise linalg.ContractViolationError("single-sample noise is data-driven (logistic only)")
        if not self.mu > 0:
            raise linalg.ContractViolationError("population is not strongly convex")

    @staticmethod
    def _client_dim(c) -> int:
        return c.a.shape[0] if isinstance(c, QuadraticClient) else c.features.shape[1]

    # -- basic facts ------------------------------------------------------

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self._client_dim(self.clients[0])

    @property
    def family(self) -> str:
        return "quadratic" if isinstance(self.clients[0], QuadraticClient) else "logistic"

    @cached_property
    def mu(self) -> float:
        """Strong-convexity constant shared by every client."""
        if self.family == "quadratic":
            return min(float(linalg.eigh_jacobi(c.a)[0][0]) for c in self.clients)
        return float(self.clients[0].reg)

    @cached_property
    def lip(self) -> float:
        """Smoothness constant of the client objectives: max eigenvalue for
        quadratics, reg + mean ||x||^2 / 4 for logistic losses."""
        if self.family == "quadratic":
            return max(float(linalg.eigh_jacobi(c.a)[0][-1]) for c in self.clients)
        return max(
            float(c.reg + np.mean(np.sum(c.features**2, axis=1)) / 4.0) for c in self.clients
        )

    @cached_property
    def lip_per_sample(self) -> float:
        """Smoothness constant valid for every single-record loss (reg +
        max ||x||^2 / 4); bounds the co-coercivity of per-record gradients."""
        if self.family == "quadratic":
            return self.lip
        return max(
            float(c.reg + np.max(np.sum(c.features**2, axis=1)) / 4.0) for c in self.clients
        )

    @cached_property
    def is_homogeneous(self) -> bool:
        c0 = self.clients[0]
        if self.family == "quadratic":
            return all(
                np.array_equal(c.a, c0.a) and np.array_equal(c.local_opt, c0.local_opt)
                for c in self.clients
            )
        return all(
            np.array_equal(c.features, c0.features) and np.array_equal(c.labels, c0.labels)
            for c in self.clients
        )

    # -- packed arrays consumed by the kernels ----------------------------

    @cached_property
    def packed(self) -> dict:
        if self.family == "quadratic":
            return {
                "a": np.ascontiguousarray([c.a for c in self.clients]),
                "m": np.ascontiguousarray([c.local_opt for c in self.clients]),
            }
        n_rec = {c.features.shape[0] for c in self.clients}
        if len(n_rec) != 1:
            raise linalg.ContractViolationError("kernel path needs equal records per client")
        return {
            "x": np.ascontiguousarray([c.features for c in self.clients]),
            "y": np.ascontiguousarray([c.labels for c in self.clients]),
            "reg": float(self.clients[0].reg),
            "margin": float(self.clients[0].margin),
        }

    @cached_property
    def noise_factors(self) -> Optional[np.ndarray]:
        """Symmetric square roots of the additive covariances, (N, d, d)."""
        if self.noise.kind != ADDITIVE:
            return None
        out = []
        for cov in self.noise.covs:
            w, q = linalg.eigh_jacobi(cov)
            out.append(q @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ q.T)
        return np.ascontiguousarray(out)

    # -- derivative oracles ------------------------------------------------

    def _check_client(self, c: int):
        if not 0 <= c < self.n_clients:
            raise IndexError(f"client index {c} out of range [0, {self.n_clients})")

    def grad(self, c: int, theta) -> np.ndarray:
        self._check_client(c)
        theta = linalg.as_vector(theta)
        cl = self.clients[c]
        if self.family == "quadratic":
            return cl.a @ (theta - cl.local_opt)
        mg = cl.labels * (cl.features @ theta)
        s = _stable_sigmoid(cl.margin - mg)
        return -(s * cl.labels) @ cl.features / cl.labels.size + cl.reg * theta

    def hess(self, c: int, theta) -> np.ndarray:
        self._check_client(c)
        theta = linalg.as_vector(theta)
        cl = self.clients[c]
        if self.family == "quadratic":
            return cl.a.copy()
        mg = cl.labels * (cl.features @ theta)
        s = _stable_sigmoid(cl.margin - mg)
        w = s * (1.0 - s)
        return (cl.features.T * w) @ cl.features / cl.labels.size + cl.reg * np.eye(self.dim)

    def third(self, c: int, theta) -> np.ndarray:
        self._check_client(c)
        theta = linalg.as_vector(theta)
        cl = self.clients[c]
        if self.family == "quadratic":
            return np.zeros((self.dim,) * 3)
        mg = cl.labels * (cl.features @ theta)
        s = _stable_sigmoid(cl.margin - mg)
        w = -cl.labels * s * (1.0 - s) * (1.0 - 2.0 * s)
        return np.einsum("r,ri,rj,rk->ijk", w, cl.features, cl.features, cl.features) / cl.labels.size

    def grad_avg(self, theta) -> np.ndarray:
        return np.mean([self.grad(c, theta) for c in range(self.n_clients)], axis=0)

    def hess_avg(self, theta) -> np.ndarray:
        return np.mean([self.hess(c, theta) for c in range(self.n_clients)], axis=0)

    def third_avg(self, theta) -> np.ndarray:
        return np.mean([self.third(c, theta) for c in range(self.n_clients)], axis=0)

    def loss(self, c: int, theta) -> float:
        self._check_client(c)
        theta = linalg.as_vector(theta)
        cl = self.clients[c]
        if self.family == "quadratic":
            diff = theta - cl.local_opt
            return 0.5 * float(diff @ cl.a @ diff)
        u = cl.margin - cl.labels * (cl.features @ theta)
        # log(1 + e^u) computed stably
        sp = np.where(u > 0, u + np.log1p(np.exp(-np.abs(u))), np.log1p(np.exp(-np.abs(u))))
        return float(np.mean(sp) + 0.5 * cl.reg * (theta @ theta))

    # -- stochastic gradients ----------------------------------------------

    def sample_grad(self, c: int, theta, rng: np.random.Generator) -> np.ndarray:
        """One stochastic gradient; expectation over the stream equals grad."""
        self._check_client(c)
        theta = linalg.as_vector(theta)
        if self.noise.kind == ADDITIVE:
            z = rng.standard_normal(self.dim)
            return self.grad(c, theta) + self.noise_factors[c] @ z
        cl = self.clients[c]
        r = int(rng.integers(0, cl.labels.size))
        return self.record_grad(c, r, theta)

    def record_grad(self, c: int, r: int, theta) -> np.ndarray:
        """Gradient of the single-record loss (including the ridge term)."""
        cl = self.clients[c]
        x, y = cl.features[r], cl.labels[r]
        s = float(_stable_sigmoid(cl.margin - y * (x @ theta)))
        return -s * y * x + cl.reg * np.asarray(theta, dtype=np.float64)

    # -- population-level quantities ---------------------------------------

    @cached_property
    def global_optimum(self) -> np.ndarray:
        """Minimizer of the average objective.

        Quadratics solve the normal equations exactly; logistic problems run
        full-gradient descent with step 1/L down to ||grad|| <= 1e-12, which
        strong convexity guarantees to terminate.
        """
        if self.family == "quadratic":
            a_sum = np.sum([c.a for c in self.clients], axis=0)
            rhs = np.sum([c.a @ c.local_opt for c in self.clients], axis=0)
            return linalg.solve_linear(a_sum, rhs)
        theta = np.zeros(self.dim)
        step = 1.0 / self.lip
        for _ in range(10_000_000):
            g = self.grad_avg(theta)
            if np.linalg.norm(g) <= 1e-12:
                return theta
            theta = theta - step * g
        raise NonConvergenceError(
            f"global optimum unresolved after 1e7 iterations (||grad||={np.linalg.norm(g):.3e})"
        )

    def heterogeneity(self) -> tuple[float, float]:
        """(delta1, delta2): root mean squared gradient / Hessian dispersion
        across clients at the global optimum (spectral norm for Hessians)."""
        opt = self.global_optimum
        grads = [self.grad(c, opt) for c in range(self.n_clients)]
        g_mean = np.mean(grads, axis=0)
        d1 = float(np.sqrt(np.mean([np.sum((g - g_mean) ** 2) for g in grads])))
        hs = [self.hess(c, opt) for c in range(self.n_clients)]
        h_mean = np.mean(hs, axis=0)
        d2 = float(np.sqrt(np.mean([linalg.spectral_norm_sym(h - h_mean) ** 2 for h in hs])))
        return d1, d2

    def noise_cov_at_opt(self) -> np.ndarray:
        """Average covariance of the centered stochastic gradients at the
        optimum; additive models analytically, single-sample by exact
        enumeration over each client's records."""
        if self.noise.kind == ADDITIVE:
            return np.mean(self.noise.covs, axis=0)
        opt = self.global_optimum
        acc = np.zeros((self.dim, self.dim))
        for c in range(self.n_clients):
            cl = self.clients[c]
            g_exact = self.grad(c, opt)
            for r in range(cl.labels.size):
                eps = self.record_grad(c, r, opt) - g_exact
                acc += np.outer(eps, eps) / cl.labels.size
        return acc / self.n_clients

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        doc = {"schema": SCHEMA, "family": self.family, "n_clients": self.n_clients,
               "dim": self.dim}
        if self.family == "quadratic":
            doc["clients"] = [
                {"a": c.a.tolist(), "local_opt": c.local_opt.tolist()} for c in self.clients
            ]
        else:
            doc["clients"] = [
                {"features": c.features.tolist(), "labels": c.labels.tolist(),
                 "reg": c.reg, "margin": c.margin}
                for c in self.clients
            ]
        doc["noise"] = {
            "kind": self.noise.kind,
            "covs": [c.tolist() for c in self.noise.covs] if self.noise.covs else None,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "Problem":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA:
            raise linalg.ContractViolationError(f"unknown problem schema {doc.get('schema')!r}")
        if doc["family"] == "quadratic":
            clients = tuple(
                QuadraticClient(np.array(c["a"]), np.array(c["local_opt"]))
                for c in doc["clients"]
            )
        else:
            clients = tuple(
                LogisticClient(np.array(c["features"]), np.array(c["labels"]),
                               c["reg"], c.get("margin", 1.0))
                for c in doc["clients"]
            )
        covs = doc["noise"]["covs"]
        noise = NoiseModel(doc["noise"]["kind"],
                           tuple(np.array(c) for c in covs) if covs is not None else None)
        return Problem(clients, noise)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# synthetic dataset generators
# ---------------------------------------------------------------------------

def _blob_records(rng: np.random.Generator, n_total: int, centers, std: float):
    """Two labelled Gaussian blobs in the plane, plus an intercept feature."""
    half = n_total // 2
    counts = (half, n_total - half)
    xs, ys = [], []
    for blob, count in enumerate(counts):
        pts = rng.normal(loc=centers[blob], scale=std, size=(count, 2))
        xs.append(pts)
        ys.append(np.full(count, 1.0 if blob == 0 else -1.0))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(n_total)
    x, y = x[perm], y[perm]
    return np.column_stack([x, np.ones(n_total)]), y


# Benchmark-generator constants.  Calibrated (not taken from any source) so
# that at the benchmark budget (gamma=0.01, N=10, T*H=10^4, 10 replicas) the
# noisy dataset's floors are dominated by stochasticity bias and the
# heterogeneous dataset's by heterogeneity bias, with the step-size
# extrapolation still inside its working regime (gamma*H*L <~ 0.7) at H=100.
N_CLIENTS_SYNTH = 10
REG_SYNTH = 0.1
NOISY_CENTER = 2.0
NOISY_STD = 5.0
HET_CENTER = 1.2
HET_STD = 0.25


def gen_synthetic_noisy(seed: int, n_per_client: int = 1000, *,
                        center: float = NOISY_CENTER, std: float = NOISY_STD,
                        reg: float = REG_SYNTH) -> Problem:
    """Homogeneous-in-distribution logistic benchmark: two wide blobs
    (centers (+/-center, 0), heavy overlap) split uniformly across 10
    clients, so gradients are very noisy but clients look alike."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6E6F697379)))
    x, y = _blob_records(rng, N_CLIENTS_SYNTH * n_per_client,
                         centers=((center, 0.0), (-center, 0.0)), std=std)
    clients = tuple(
        LogisticClient(x[c * n_per_client : (c + 1) * n_per_client],
                       y[c * n_per_client : (c + 1) * n_per_client], reg)
        for c in range(N_CLIENTS_SYNTH)
    )
    return Problem(clients, NoiseModel.single_sample())


def gen_synthetic_heterogeneous(seed: int, n_per_client: int = 1000, *,
                                center: float = HET_CENTER, std: float = HET_STD,
                                reg: float = REG_SYNTH) -> Problem:
    """Heterogeneous logistic benchmark: two tight blobs (centers
    (+/-center, 0)); clients 0-4 get clean records, clients 5-9 get copies
    of the same records with labels shuffled, so data is clean but client
    optima disagree."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x686574)))
    x, y = _blob_records(rng, 5 * n_per_client,
                         centers=((center, 0.0), (-center, 0.0)), std=std)
    clients = []
    for c in range(5):
        sl = slice(c * n_per_client, (c + 1) * n_per_client)
        clients.append(LogisticClient(x[sl], y[sl], reg))
    for c in range(5):
        sl = slice(c * n_per_client, (c + 1) * n_per_client)
        clients.append(LogisticClient(x[sl], rng.permutation(y[sl]), reg))
    return Problem(tuple(clients), NoiseModel.single_sample())


def gen_random_quadratic(seed: int, dim: int, n_clients: int,
                         eig_range=(0.5, 2.5), opt_scale: float = 1.0) -> Problem:
    """Random well-conditioned heterogeneous quadratic population with
    isotropic unit additive noise (callers usually replace the noise)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x71756164)))
    clients = []
    for _ in range(n_clients):
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        lam = rng.uniform(*eig_range, size=dim)
        clients.append(QuadraticClient(q @ np.diag(lam) @ q.T,
                                       rng.uniform(-opt_scale, opt_scale, size=dim)))
    return Problem(tuple(clients), NoiseModel.additive_iso(1.0, dim, n_clients))


def softplus_problem(mu: float = 0.5, sigma: float = 0.5, n_clients: int = 1) -> Problem:
    """Homogeneous 1-d softplus + ridge population: f(t) = log(1+e^t) + mu/2 t^2
    with additive noise of variance sigma^2.  The one non-quadratic problem
    whose stochasticity bias has a closed scalar form."""
    client = LogisticClient(np.array([[1.0]]), np.array([-1.0]), reg=mu, margin=0.0)
    return Problem(tuple(client for _ in range(n_clients)),
                   NoiseModel.additive_iso(sigma, 1, n_clients))
