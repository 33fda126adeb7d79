"""Synchronous distributed stochastic approximation with expanding truncations.

One step, for every agent ``i`` and all reads from the pre-step snapshot:

1. ``sigma_hat_i`` = max truncation count over in-neighbours (self included);
2. a lagging agent (``sigma_i < sigma_hat_i``) proposes ``x*``; otherwise it
   proposes the weighted neighbour average, with neighbours whose count is
   behind ``sigma_hat_i`` replaced by ``x*``, plus ``gamma_k * O_i``;
3. a proposal with norm strictly above ``M[sigma_hat_i]`` is reset to ``x*``
   and the count becomes ``sigma_hat_i + 1``; otherwise it is kept and the
   count becomes ``sigma_hat_i``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

from . import streams
from .metrics import MetricsRecord, make_record, row_norms
from .problems import Problem
from .schedules import Bounds
from .topology import TopologySchedule, neighbors


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AlgorithmConfig:
    x_star: np.ndarray
    gamma: Callable[[int], float]
    bounds: Bounds
    horizon: int
    seed: int = 0
    record_every: int = 1
    full_trace: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x_star", np.asarray(self.x_star, dtype=float).reshape(-1))

    @property
    def l(self) -> int:
        return self.x_star.size

    def gammas(self) -> np.ndarray:
        return np.array([self.gamma(k) for k in range(self.horizon)], dtype=float)

    def validate(self) -> list[str]:
        errs = []
        if self.horizon < 0:
            errs.append("horizon must be >= 0")
        if self.record_every < 1:
            errs.append("record_every must be >= 1")
        m0 = self.bounds(0)
        if not m0 >= np.linalg.norm(self.x_star):
            errs.append(f"M_0 = {m0:g} is below ||x*|| = {np.linalg.norm(self.x_star):g}")
        for m in range(64):
            if not self.bounds(m + 1) > self.bounds(m) and np.isfinite(self.bounds(m)):
                errs.append(f"truncation bounds are not strictly increasing at m={m}")
                break
        g = self.gammas()
        if g.size and not np.all(g > 0):
            errs.append(f"step size is not positive at k={int(np.argmin(g > 0))}")
        return errs


class AgentState(NamedTuple):
    x: np.ndarray
    sigma: int


@dataclass
class NetworkState:
    x: np.ndarray      # (N, l) estimates
    sigma: np.ndarray  # (N,) truncation counts
    k: int = 0

    @classmethod
    def initial(cls, x0) -> "NetworkState":
        x0 = np.array(x0, dtype=float)
        if x0.ndim != 2:
            raise ConfigError("initial state must be an (N, l) array")
        return cls(x0, np.zeros(x0.shape[0], dtype=np.int64), 0)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def sigma_max(self) -> int:
        return int(self.sigma.max())

    def agent(self, i: int) -> AgentState:
        return AgentState(self.x[i], int(self.sigma[i]))

    def copy(self) -> "NetworkState":
        return NetworkState(self.x.copy(), self.sigma.copy(), self.k)


@dataclass(frozen=True)
class TruncationEvent:
    step: int
    agent: int
    kind: str  # "own_overflow" | "peer_lag"
    sigma_before: int
    sigma_hat: int
    sigma_after: int

    def as_dict(self) -> dict:
        return {"step": self.step, "agent": self.agent, "kind": self.kind,
                "sigma_before": self.sigma_before, "sigma_hat": self.sigma_hat,
                "sigma_after": self.sigma_after}


class NumericOverflow(RuntimeError):
    pass


# -- per-agent operations (reference path) -------------------------------------

def max_consensus_sigma(state: NetworkState, w, i: int) -> int:
    return int(max(state.sigma[j] for j in neighbors(w, i)))


def candidate_update(state: NetworkState, w, i: int, obs, gamma_k: float, x_star,
                     sigma_hat: int | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    obs = np.asarray(obs, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if obs.shape != x_star.shape:
        raise ConfigError(f"observation dimension {obs.shape} does not match l={x_star.size}")
    if sigma_hat is None:
        sigma_hat = max_consensus_sigma(state, w, i)
    if state.sigma[i] < sigma_hat:
        return x_star.copy()
    acc = np.zeros_like(x_star)
    for j in sorted(neighbors(w, i)):
        y = state.x[j] if state.sigma[j] == sigma_hat else x_star
        acc += w[i, j] * y
    return acc + gamma_k * obs


def truncate(x_prime, sigma_hat: int, config: AlgorithmConfig):
    """Returns ``(x_next, sigma_next, overflowed)``; ties at the bound are kept."""
    x_prime = np.asarray(x_prime, dtype=float)
    if row_norms(x_prime) <= config.bounds(sigma_hat):
        return x_prime, sigma_hat, False
    return config.x_star.copy(), sigma_hat + 1, True


def _events(k_next: int, sigma, sigma_hat, over) -> list[TruncationEvent]:
    out = []
    lag = np.flatnonzero(sigma < sigma_hat)
    for i in lag:
        out.append(TruncationEvent(k_next, int(i), "peer_lag", int(sigma[i]), int(sigma_hat[i]), int(sigma_hat[i])))
    for i in np.flatnonzero(over):
        out.append(TruncationEvent(k_next, int(i), "own_overflow", int(sigma[i]), int(sigma_hat[i]),
                                   int(sigma_hat[i]) + 1))
    out.sort(key=lambda e: e.agent)
    return out


def step_reference(state: NetworkState, w, obs: np.ndarray, gamma_k: float, config: AlgorithmConfig,
                   order: Sequence[int] | None = None):
    """Agent-by-agent update in the given ``order``; every read uses the snapshot."""
    snap = state.copy()
    n = snap.n
    order = range(n) if order is None else order
    x_new = np.empty_like(snap.x)
    sigma_new = np.empty_like(snap.sigma)
    sigma_hat = np.empty_like(snap.sigma)
    over = np.zeros(n, dtype=bool)
    for i in order:
        sigma_hat[i] = max_consensus_sigma(snap, w, i)
        xp = candidate_update(snap, w, i, obs[i], gamma_k, config.x_star, int(sigma_hat[i]))
        x_new[i], sigma_new[i], over[i] = truncate(xp, int(sigma_hat[i]), config)
    events = _events(snap.k + 1, snap.sigma, sigma_hat, over)
    return NetworkState(x_new, sigma_new, snap.k + 1), events


# -- vectorized kernel ------------------------------------------------------------

def advance(X: np.ndarray, sigma: np.ndarray, w: sparse.csr_matrix, obs: np.ndarray, gamma_k: float,
            x_star: np.ndarray, bounds: Bounds):
    """One synchronous step on arrays. Returns ``(X_next, sigma_next, sigma_hat, overflowed)``.

    Neighbour sums run over CSR entries in column order, the same order as
    :func:`candidate_update`, so both paths round identically.
    """
    indptr, indices, data = w.indptr, w.indices, w.data
    n = X.shape[0]
    nb = sigma[indices]
    sigma_hat = np.maximum.reduceat(nb, indptr[:-1])
    if sigma.min() == sigma.max():
        xp = w @ X + gamma_k * obs
    else:
        rows = np.repeat(np.arange(n), np.diff(indptr))
        keep = nb == sigma_hat[rows]
        Y = np.where(keep[:, None], X[indices], x_star[None, :])
        entry_map = sparse.csr_matrix((data, np.arange(indices.size), indptr), shape=(n, indices.size))
        xp = entry_map @ Y + gamma_k * obs
        xp[sigma < sigma_hat] = x_star
    over = ~(row_norms(xp) <= bounds.many(sigma_hat))
    X_next = np.where(over[:, None], x_star[None, :], xp)
    return X_next, sigma_hat + over, sigma_hat, over


def step(state: NetworkState, schedule: TopologySchedule, problem: Problem, config: AlgorithmConfig,
         rngs: Sequence[np.random.Generator], gamma_k: float | None = None):
    """Draw every agent's observation at its pre-step estimate, then update all agents."""
    k = state.k
    if k >= config.horizon:
        raise ConfigError(f"step index {k} is at or past the horizon {config.horizon}")
    obs = problem.observe_all(state.x, k, rngs)
    if gamma_k is None:
        gamma_k = config.gamma(k)
    X, sig, sig_hat, over = advance(state.x, state.sigma, schedule.sparse(k), obs, gamma_k,
                                    config.x_star, config.bounds)
    events = _events(k + 1, state.sigma, sig_hat, over) if (over.any() or (state.sigma < sig_hat).any()) else []
    return NetworkState(X, sig, k + 1), events, obs


# -- full runs ----------------------------------------------------------------------

@dataclass
class Trajectory:
    """Every-step record needed by the post-hoc lemma checks."""

    x: np.ndarray      # (K+1, N, l)
    sigma: np.ndarray  # (K+1, N)
    obs: np.ndarray    # (K, N, l), obs[k] is O_{k+1} drawn at x[k]
    gammas: np.ndarray  # (K,)
    x_star: np.ndarray

    @property
    def steps(self) -> int:
        return self.obs.shape[0]


@dataclass
class RunResult:
    algo: str
    records: list[MetricsRecord]
    events: list[TruncationEvent]
    final: NetworkState
    horizon: int
    trace: Trajectory | None = None
    overflow_step: int | None = None
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)


class _Recorder:
    def __init__(self, n, l, horizon, full_trace, x0, sigma0):
        self.full = full_trace
        if full_trace:
            self.x = np.empty((horizon + 1, n, l))
            self.sigma = np.empty((horizon + 1, n), dtype=np.int64)
            self.obs = np.empty((horizon, n, l))
            self.x[0], self.sigma[0] = x0, sigma0

    def push(self, k_next, X, sigma, obs):
        if self.full:
            self.x[k_next], self.sigma[k_next], self.obs[k_next - 1] = X, sigma, obs

    def trajectory(self, upto, gammas, x_star):
        if not self.full:
            return None
        return Trajectory(self.x[: upto + 1].copy(), self.sigma[: upto + 1].copy(), self.obs[:upto].copy(),
                          gammas[:upto].copy(), x_star.copy())


def run(problem: Problem, schedule: TopologySchedule, config: AlgorithmConfig, x0,
        algo: str = "dsaawet") -> RunResult:
    """Run ``config.horizon`` steps from ``x0`` with the per-agent streams of ``config.seed``."""
    errs = config.validate()
    if errs:
        raise ConfigError("; ".join(errs))
    state = NetworkState.initial(x0)
    n, l = state.x.shape
    if n != problem.n_agents or n != schedule.n:
        raise ConfigError(f"agent counts disagree: state {n}, problem {problem.n_agents}, topology {schedule.n}")
    if l != problem.l or l != config.l:
        raise ConfigError(f"dimensions disagree: state {l}, problem {problem.l}, x* {config.l}")
    rngs = streams.agent_streams(config.seed, n)
    gammas = config.gammas()
    t0 = time.perf_counter()
    rec = _Recorder(n, l, config.horizon, config.full_trace, state.x, state.sigma)
    records = [make_record(0, algo, state.x, state.sigma, problem, 0)]
    events: list[TruncationEvent] = []
    overflow_step = None
    while state.k < config.horizon:
        k = state.k
        new, evs, obs = step(state, schedule, problem, config, rngs, gammas[k])
        if not np.all(np.isfinite(new.x)):
            overflow_step = k + 1
            break
        state = new
        events.extend(evs)
        rec.push(state.k, state.x, state.sigma, obs)
        if state.k % config.record_every == 0 or state.k == config.horizon:
            records.append(make_record(state.k, algo, state.x, state.sigma, problem, len(events)))
    return RunResult(
        algo=algo,
        records=records,
        events=events,
        final=state,
        horizon=config.horizon,
        trace=rec.trajectory(state.k, gammas, config.x_star),
        overflow_step=overflow_step,
        wall_time=time.perf_counter() - t0,
    )


def saawet_reference(problem: Problem, x0, config: AlgorithmConfig, rng: np.random.Generator):
    """Single-agent SAAWET written directly, for the N = 1 equivalence check."""
    x = np.array(x0, dtype=float).reshape(-1)
    sigma = 0
    xs, sigmas = [x.copy()], [0]
    for k in range(config.horizon):
        xp = x + config.gamma(k) * problem.observe(0, x, k, rng)
        if row_norms(xp) > config.bounds(sigma):
            x, sigma = config.x_star.copy(), sigma + 1
        else:
            x = xp
        xs.append(x.copy())
        sigmas.append(sigma)
    return np.array(xs), np.array(sigmas)
