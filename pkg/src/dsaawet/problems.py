"""Local functions, noisy observation generators and root oracles.

Each problem draws its randomness with :meth:`Problem.draw` (one call per agent
per step, from that agent's own stream) and turns the draws into observations
with a single vectorized kernel, :meth:`Problem.observe_rows`. The per-agent
:meth:`Problem.observe` and the batched :meth:`Problem.observe_all` both go
through that kernel, so they agree bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .schedules import PowerSchedule


class ProblemError(ValueError):
    pass


class Problem:
    """Root-seeking problem ``f = (1/N) sum_i f_i`` observed through noise."""

    l: int
    n_agents: int
    unbiased: bool = True
    root_distance_is_proxy: bool = False

    def draw(self, i: int, k: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def observe_rows(self, idx: np.ndarray, X: np.ndarray, k: int, draws: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def true_local(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, i: int, x, k: int, rng: np.random.Generator) -> np.ndarray:
        x = self._check_x(x)
        d = self.draw(i, k, rng)
        return self.observe_rows(np.array([i]), x[None, :], k, d[None, :])[0]

    def observe_all(self, X: np.ndarray, k: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.n_agents, self.l):
            raise ProblemError(f"state shape {X.shape} does not match (N, l) = ({self.n_agents}, {self.l})")
        draws = np.stack([self.draw(i, k, rng) for i, rng in enumerate(rngs)])
        return self.observe_rows(np.arange(self.n_agents), X, k, draws)

    def true_local_rows(self, idx: np.ndarray, X: np.ndarray) -> np.ndarray:
        """``f_{idx[r]}(X[r])`` for every row ``r``."""
        return np.stack([self.true_local(int(i), x) for i, x in zip(idx, np.asarray(X, dtype=float))])

    def true_local_all(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.true_local_rows(np.arange(X.shape[0]), X)

    def true_mean(self, x) -> np.ndarray:
        x = self._check_x(x)
        return np.mean([self.true_local(i, x) for i in range(self.n_agents)], axis=0)

    def root_distance(self, x) -> float | None:
        return None

    def target(self, x) -> np.ndarray | None:
        """Root that per-agent consensus error is measured against, if known."""
        return None

    def lyapunov(self, x) -> float | None:
        return None

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.l,):
            raise ProblemError(f"expected a vector of dimension {self.l}, got shape {x.shape}")
        return x


# -- distributed PCA -----------------------------------------------------------

def sample_observation(u, x) -> np.ndarray:
    """``A x - (x^T A x) x`` with ``A = u^T u`` for a ``p x d`` sample block ``u``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    x = np.asarray(x, dtype=float)
    a = u.T @ u
    ax = a @ x
    return ax - (x @ ax) * x


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    lam, v = np.linalg.eigh(a)
    return v * np.sqrt(np.clip(lam, 0.0, None))


def _check_psd(a: np.ndarray, what: str, tol: float = 1e-10) -> None:
    if not np.allclose(a, a.T, atol=tol, rtol=0):
        raise ProblemError(f"{what} is not symmetric")
    lam_min = np.linalg.eigvalsh(a)[0]
    if lam_min < -tol * max(1.0, np.abs(a).max()):
        raise ProblemError(f"{what} is not positive semidefinite (min eigenvalue {lam_min:.3g})")


def random_covariance(d: int, rng: np.random.Generator, gap_ratio: float = 1.2, scale: float = 1.0,
                      max_tries: int = 1000) -> np.ndarray:
    """Seeded Wishart-type covariance whose top eigenvalue beats the second by ``gap_ratio``."""
    for _ in range(max_tries):
        g = rng.standard_normal((d, 2 * d))
        a = scale * (g @ g.T) / (2 * d)
        a = 0.5 * (a + a.T)
        lam = np.linalg.eigvalsh(a)
        if d == 1 or lam[-1] >= gap_ratio * lam[-2]:
            return a
    raise ProblemError(f"no covariance with gap ratio {gap_ratio} after {max_tries} draws")


def split_covariance(a: np.ndarray, n_agents: int, rng: np.random.Generator,
                     strength: float = 0.5) -> np.ndarray:
    """Per-agent ``A_i = A + s * D_i`` with ``sum_i D_i = 0`` and every ``A_i`` PSD.

    ``strength`` in [0, 1] is the fraction of the largest ``s`` that the
    eigenvalue bound ``lambda_min(A) / max_i ||D_i||`` certifies as safe.
    """
    d = a.shape[0]
    g = rng.standard_normal((n_agents, d, d))
    c = g @ g.transpose(0, 2, 1) / d
    dev = c - c.mean(axis=0)
    dev = 0.5 * (dev + dev.transpose(0, 2, 1))
    spread = max(np.linalg.norm(m, 2) for m in dev) if n_agents > 1 else 0.0
    lam_min = np.linalg.eigvalsh(a)[0]
    if spread == 0.0 or lam_min <= 0:
        return np.repeat(a[None], n_agents, axis=0)
    s = strength * lam_min / spread
    return a[None] + s * dev


class PcaProblem(Problem):
    """Top eigenvector of ``A = (1/N) sum_i A_i`` as the nonzero root of
    ``f_i(x) = A_i x - (x^T A_i x) x``. Agent samples are single rows
    ``u ~ N(0, A_i)``, so the sample matrix is ``u^T u``.
    """

    def __init__(self, cov, n_agents: int, agent_covs=None, lyapunov_tol: float = 1e-12,
                 require_simple_top: bool = True):
        a = np.asarray(cov, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ProblemError("covariance must be square")
        _check_psd(a, "covariance")
        self.cov = a
        self.l = self.d = a.shape[0]
        self.n_agents = int(n_agents)
        if agent_covs is None:
            agent_covs = np.repeat(a[None], self.n_agents, axis=0)
        agent_covs = np.asarray(agent_covs, dtype=float)
        if agent_covs.shape != (self.n_agents, self.d, self.d):
            raise ProblemError("agent covariances must have shape (N, d, d)")
        for i, ai in enumerate(agent_covs):
            _check_psd(ai, f"A_{i}")
        if not np.allclose(agent_covs.mean(axis=0), a, atol=1e-10, rtol=0):
            raise ProblemError("agent covariances do not average to the covariance")
        self.agent_covs = agent_covs
        self._roots = np.stack([_psd_sqrt(ai) for ai in agent_covs])
        lam, v = np.linalg.eigh(a)
        self.top_simple = self.d == 1 or bool(lam[-1] > lam[-2] * (1 + 1e-9))
        if require_simple_top and not self.top_simple:
            # otherwise u0 is one arbitrary vector of the top eigenspace
            raise ProblemError("largest eigenvalue of the covariance is not simple")
        u0 = v[:, -1]
        # fix the sign convention: first nonzero component positive
        if u0[np.flatnonzero(np.abs(u0) > 1e-12)[0]] < 0:
            u0 = -u0
        self.eigenvalues = lam[::-1]
        self.u0 = u0
        self.lyapunov_tol = lyapunov_tol

    def draw(self, i, k, rng):
        return rng.standard_normal(self.d)

    def observe_rows(self, idx, X, k, draws):
        u = (self._roots[idx] * draws[:, None, :]).sum(axis=-1)
        s = (u * X).sum(axis=-1)
        return s[:, None] * u - (s * s)[:, None] * X

    def true_local(self, i, x):
        x = self._check_x(x)
        ax = self.agent_covs[i] @ x
        return ax - (x @ ax) * x

    def true_local_rows(self, idx, X):
        X = np.asarray(X, dtype=float)
        ax = np.einsum("nij,nj->ni", self.agent_covs[idx], X)
        return ax - (X * ax).sum(axis=-1)[:, None] * X

    def root_distance(self, x):
        x = self._check_x(x)
        return float(min(np.linalg.norm(x), np.linalg.norm(x - self.u0), np.linalg.norm(x + self.u0)))

    def target(self, x):
        x = self._check_x(x)
        return self.u0 if np.linalg.norm(x - self.u0) <= np.linalg.norm(x + self.u0) else -self.u0

    def lyapunov(self, x):
        x = self._check_x(x)
        q = float(x @ self.cov @ x)
        if q <= self.lyapunov_tol:
            return None
        with np.errstate(over="ignore"):
            return float(np.exp(x @ x) / q)


def example1_pca(n_agents: int = 1000, dim: int = 9, matrix_seed: int = 0, mode: str = "homogeneous",
                 heterogeneity: float = 0.5, gap_ratio: float = 1.2, scale: float = 1.0) -> PcaProblem:
    rng = np.random.default_rng(matrix_seed)
    a = random_covariance(dim, rng, gap_ratio=gap_ratio, scale=scale)
    if mode == "homogeneous":
        covs = None
    elif mode == "heterogeneous":
        covs = split_covariance(a, n_agents, rng, strength=heterogeneity)
    else:
        raise ProblemError(f"unknown PCA mode {mode!r}")
    return PcaProblem(a, n_agents, covs)


# -- gradient-free (randomized Kiefer-Wolfowitz) optimization ------------------

@dataclass(frozen=True)
class Term:
    """One separable cost term acting on coordinate ``dim``.

    ``power``: ``coef * (x[dim] - center) ** power``;
    ``sin``:   ``coef * sin(freq * x[dim] + phase)``.
    """

    kind: str
    dim: int
    coef: float
    center: float = 0.0
    power: int = 2
    freq: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("power", "sin"):
            raise ProblemError(f"unknown cost term kind {self.kind!r}")
        if self.kind == "power" and (self.power < 0 or int(self.power) != self.power):
            raise ProblemError("power terms need a nonnegative integer exponent")

    def value(self, x: np.ndarray) -> float:
        t = x[self.dim]
        if self.kind == "power":
            return self.coef * (t - self.center) ** self.power
        return self.coef * math.sin(self.freq * t + self.phase)

    def derivative(self, x: np.ndarray) -> float:
        t = x[self.dim]
        if self.kind == "power":
            if self.power == 0:
                return 0.0
            return self.coef * self.power * (t - self.center) ** (self.power - 1)
        return self.coef * self.freq * math.cos(self.freq * t + self.phase)


@dataclass(frozen=True)
class SeparableCost:
    dim: int
    terms: tuple[Term, ...]

    def __post_init__(self):
        for t in self.terms:
            if not 0 <= t.dim < self.dim:
                raise ProblemError(f"term acts on coordinate {t.dim}, cost has dimension {self.dim}")

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(sum(t.value(x) for t in self.terms))

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.zeros(self.dim)
        for t in self.terms:
            g[t.dim] += t.derivative(x)
        return g


def kw_estimate(cost, x, alpha: float, delta, xi_plus: float = 0.0, xi_minus: float = 0.0) -> np.ndarray:
    """Two-sided randomized difference along ``delta``: an estimate of ``-grad c(x)``."""
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    up = cost(x + alpha * delta) + xi_plus
    down = cost(x - alpha * delta) + xi_minus
    return -(up - down) / (2.0 * alpha) * delta


def rademacher(rng: np.random.Generator, size) -> np.ndarray:
    return 2.0 * rng.integers(0, 2, size=size) - 1.0


class KwProblem(Problem):
    """Minimize ``sum_i c_i`` from noisy cost evaluations; ``f_i = -grad c_i``."""

    unbiased = False

    def __init__(self, costs: Sequence[SeparableCost], alpha: PowerSchedule, noise_std: float = 1.0,
                 minimum=None):
        if not costs:
            raise ProblemError("need at least one cost")
        dims = {c.dim for c in costs}
        if len(dims) != 1:
            raise ProblemError("all local costs must share a dimension")
        self.costs = tuple(costs)
        self.l = dims.pop()
        self.n_agents = len(self.costs)
        self.alpha = alpha
        if noise_std < 0:
            raise ProblemError("noise_std must be >= 0")
        self.noise_std = float(noise_std)
        self.minimum = None if minimum is None else self._check_x(minimum)
        self.root_distance_is_proxy = self.minimum is None

    def draw(self, i, k, rng):
        delta = rademacher(rng, self.l)
        xi = rng.standard_normal(2) * self.noise_std
        return np.concatenate([delta, xi])

    def observe_rows(self, idx, X, k, draws):
        a = self.alpha(k)
        if not a > 0:
            raise ProblemError(f"alpha_{k} must be positive")
        out = np.empty_like(X, dtype=float)
        for r, i in enumerate(idx):
            delta, (xp, xm) = draws[r, : self.l], draws[r, self.l:]
            out[r] = kw_estimate(self.costs[i], X[r], a, delta, xp, xm)
        return out

    def observe_with_delta(self, i, x, k, rng):
        """Observation together with the Rademacher direction it used."""
        x = self._check_x(x)
        d = self.draw(i, k, rng)
        obs = self.observe_rows(np.array([i]), x[None, :], k, d[None, :])[0]
        return obs, d[: self.l].copy()

    def true_local(self, i, x):
        return -self.costs[i].grad(self._check_x(x))

    def gradient(self, x) -> np.ndarray:
        x = self._check_x(x)
        return sum(c.grad(x) for c in self.costs)

    def root_distance(self, x):
        x = self._check_x(x)
        if self.minimum is not None:
            return float(np.linalg.norm(x - self.minimum))
        return float(np.linalg.norm(self.gradient(x) / self.n_agents))

    def target(self, x):
        return self.minimum


def example2_costs(alpha: PowerSchedule | None = None, noise_std: float = 1.0) -> KwProblem:
    """Three agents on the plane; the summed cost is minimized at (2, 1)."""
    P = lambda dim, coef, center=0.0, power=2: Term("power", dim, coef, center=center, power=power)
    S = lambda dim, coef: Term("sin", dim, coef)
    l1 = SeparableCost(2, (P(0, 1.0), P(1, 1.0), S(0, 10.0)))
    l2 = SeparableCost(2, (P(0, 1.0, 4.0), P(1, 1.0, 1.0), S(0, -10.0)))
    l3 = SeparableCost(2, (P(0, 0.01, 2.0, 4), P(1, 1.0, 2.0)))
    if alpha is None:
        alpha = PowerSchedule(1.0, 1.0, 0.2)
    return KwProblem([l1, l2, l3], alpha, noise_std=noise_std, minimum=[2.0, 1.0])


# -- synthetic linear ------------------------------------------------------------

class LinearProblem(Problem):
    """``f_i(x) = -H_i (x - root)`` plus iid Gaussian observation noise."""

    def __init__(self, h, root, noise_std: float = 0.0):
        h = np.asarray(h, dtype=float)
        if h.ndim != 3 or h.shape[1] != h.shape[2]:
            raise ProblemError("h must have shape (N, l, l)")
        self.h = h
        self.n_agents, self.l = h.shape[0], h.shape[1]
        self.root = self._check_x(root)
        self.noise_std = float(noise_std)

    def draw(self, i, k, rng):
        return rng.standard_normal(self.l)

    def observe_rows(self, idx, X, k, draws):
        f = -(self.h[idx] * (X - self.root)[:, None, :]).sum(axis=-1)
        return f + self.noise_std * draws

    def true_local(self, i, x):
        x = self._check_x(x)
        return -(self.h[i] * (x - self.root)[None, :]).sum(axis=-1)

    def true_local_rows(self, idx, X):
        X = np.asarray(X, dtype=float)
        return -(self.h[idx] * (X - self.root)[:, None, :]).sum(axis=-1)

    def root_distance(self, x):
        return float(np.linalg.norm(self._check_x(x) - self.root))

    def target(self, x):
        return self.root


def synthetic_linear_problem(n_agents: int, dim: int, seed: int = 0, noise_std: float = 0.1,
                             root=None, h=None) -> LinearProblem:
    rng = np.random.default_rng(seed)
    if h is None:
        g = rng.standard_normal((n_agents, dim, dim))
        h = g @ g.transpose(0, 2, 1) / dim + 0.1 * np.eye(dim)
    if root is None:
        root = rng.standard_normal(dim)
    return LinearProblem(h, root, noise_std)
