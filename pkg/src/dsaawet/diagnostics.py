"""Post-hoc analysis of recorded trajectories.

The checks here replay structural facts about the truncation mechanism
against a full every-step :class:`~dsaawet.engine.Trajectory`:

* the auxiliary ("pinned") sequences and the global-truncation recursion they
  satisfy;
* the propagation bound on truncation counts along shortest paths of the
  union graph;
* weighted noise partial sums, as a finite-horizon stand-in for summability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import TruncationEvent, Trajectory
from .metrics import MetricsRecord, disagreement_norm, row_norms  # noqa: F401  (re-exported)
from .problems import Problem
from .schedules import Bounds
from .topology import EdgeSet, TopologySchedule, neighbors, shortest_path_lengths

INF = math.inf
REL_TOL = 1e-9
ABS_TOL = 1e-12


@dataclass
class Violation:
    check: str
    k: int
    agent: int | None
    detail: str
    data: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"check": self.check, "k": self.k, "agent": self.agent, "detail": self.detail, **self.data}


# -- truncation bookkeeping ------------------------------------------------------------

@dataclass
class TruncationTrace:
    """First-passage times of truncation counts.

    ``tau_agent[(i, m)]`` is the first step at which agent ``i`` holds count
    exactly ``m``; ``tau[m]`` the first step at which any agent does;
    ``tau_tilde[(i, m)] = min(tau_agent[(i, m)], tau[m + 1])``. Missing keys
    (never observed within the horizon) read as infinity.
    """

    sigma: np.ndarray
    events: list[TruncationEvent]
    tau_agent: dict
    tau: dict

    @classmethod
    def from_sigma(cls, sigma, events=None) -> "TruncationTrace":
        sigma = np.asarray(sigma, dtype=np.int64)
        tau_agent = {}
        for i in range(sigma.shape[1]):
            vals, first = np.unique(sigma[:, i], return_index=True)
            for m, k in zip(vals, first):
                tau_agent[(i, int(m))] = int(k)
        tau = {}
        for (i, m), k in tau_agent.items():
            tau[m] = min(tau.get(m, INF), k)
        return cls(sigma, list(events or []), tau_agent, tau)

    @property
    def n(self) -> int:
        return self.sigma.shape[1]

    @property
    def steps(self) -> int:
        return self.sigma.shape[0] - 1

    def tau_of(self, m: int):
        return self.tau.get(m, INF)

    def tau_i(self, i: int, m: int):
        return self.tau_agent.get((i, m), INF)

    def tau_tilde(self, i: int, m: int):
        return min(self.tau_i(i, m), self.tau_of(m + 1))

    def per_agent_events(self) -> dict[int, list[TruncationEvent]]:
        out: dict[int, list[TruncationEvent]] = {i: [] for i in range(self.n)}
        for e in self.events:
            out[e.agent].append(e)
        return out


@dataclass
class Cessation:
    sigma_final: int
    last_event_step: int | None
    still_truncating: bool


def detect_truncation_cessation(events, horizon: int, sigma_final: int | None = None,
                                tail_fraction: float = 0.1) -> Cessation:
    last = max((e.step for e in events), default=None)
    if sigma_final is None:
        sigma_final = max((e.sigma_after for e in events), default=0)
    still = last is not None and last > (1.0 - tail_fraction) * horizon
    return Cessation(int(sigma_final), last, bool(still))


# -- auxiliary sequences ---------------------------------------------------------------------

@dataclass
class AuxiliaryTrajectory:
    x: np.ndarray    # (K+1, N, l)
    eps: np.ndarray  # (K, N, l)
    pinned: np.ndarray  # (K+1, N) True where x~ is held at x*
    sigma_global: np.ndarray  # (K+1,)


def _local_all(problem: Problem, X: np.ndarray) -> np.ndarray:
    """``f_i`` applied row-wise to an ``(..., N, l)`` stack of network states."""
    n, l = X.shape[-2:]
    flat = X.reshape(-1, n, l)
    idx = np.tile(np.arange(n), flat.shape[0])
    return problem.true_local_rows(idx, flat.reshape(-1, l)).reshape(X.shape)


def build_auxiliary_sequences(traj: Trajectory, trace: TruncationTrace, problem: Problem) -> AuxiliaryTrajectory:
    """Pin ``x~_{i,k}`` at ``x*`` (and ``eps~ = -f_i(x*)``) while ``tau_m <= k < tau~_{i,m}``;
    follow the real iterate and noise while ``tau~_{i,m} <= k < tau_{m+1}``.
    """
    if traj.obs.shape[0] != trace.steps:
        raise ValueError("trajectory is missing observation records")
    K, n = trace.steps, trace.n
    sig_g = trace.sigma.max(axis=1)
    top = int(sig_g.max()) + 2
    tau = np.array([trace.tau_of(m) for m in range(top)], dtype=float)
    tau_tilde = np.array([[trace.tau_tilde(i, m) for i in range(n)] for m in range(top)], dtype=float)
    ks = np.arange(K + 1, dtype=float)
    lo, hi = tau[sig_g], tau[sig_g + 1]
    if not np.all((lo <= ks) & (ks < hi)):
        raise AssertionError("global truncation count does not sit in its first-passage interval")
    tt = tau_tilde[sig_g]  # (K+1, N)
    pinned = (lo[:, None] <= ks[:, None]) & (ks[:, None] < tt)
    tracking = (tt <= ks[:, None]) & (ks[:, None] < hi[:, None])
    if np.any(pinned == tracking):
        k, i = np.argwhere(pinned == tracking)[0]
        raise AssertionError(f"(k={k}, i={i}) is not assigned by exactly one case")
    x_star = traj.x_star
    xt = np.where(pinned[:, :, None], x_star[None, None, :], traj.x)
    f_star = problem.true_local_all(np.broadcast_to(x_star, (n, x_star.size)))
    real = traj.obs - _local_all(problem, traj.x[:-1])
    eps = np.where(pinned[:-1, :, None], -f_star[None], real)
    return AuxiliaryTrajectory(xt, eps, pinned, sig_g)


def _close(a, b, rel=REL_TOL, abs_=ABS_TOL) -> np.ndarray:
    return np.abs(a - b) <= abs_ + rel * np.maximum(np.abs(a), np.abs(b))


def check_lemma41(aux: AuxiliaryTrajectory, schedule: TopologySchedule, gammas, bounds: Bounds,
                  problem: Problem, x_star, rel: float = REL_TOL, abs_: float = ABS_TOL) -> list[Violation]:
    """Replay the global-truncation recursion on the auxiliary sequences.

    ``x^_{i,k+1} = sum_j w_ij(k) x~_{j,k} + gamma_k (f_i(x~_{i,k}) + eps~_{i,k+1})``;
    if any ``||x^_{j,k+1}|| > M_{sigma_k}`` every agent resets to ``x*`` and
    the global count increments, otherwise ``x~_{k+1} = x^_{k+1}``.
    """
    x_star = np.asarray(x_star, dtype=float)
    out: list[Violation] = []
    K = aux.eps.shape[0]
    innov = _local_all(problem, aux.x[:-1]) + aux.eps
    for k in range(K):
        xhat = schedule.matrix(k) @ aux.x[k] + gammas[k] * innov[k]
        m = int(aux.sigma_global[k])
        over = bool(np.any(~(row_norms(xhat) <= bounds(m))))
        exp_sigma = m + int(over)
        if exp_sigma != int(aux.sigma_global[k + 1]):
            out.append(Violation("lemma41", k + 1, None, "global truncation count mismatch",
                                 {"expected": exp_sigma, "actual": int(aux.sigma_global[k + 1])}))
        expected = np.broadcast_to(x_star, xhat.shape) if over else xhat
        ok = _close(expected, aux.x[k + 1], rel, abs_).all(axis=1)
        for i in np.flatnonzero(~ok):
            out.append(Violation("lemma41", k + 1, int(i), "auxiliary state mismatch",
                                 {"expected": expected[i].tolist(), "actual": aux.x[k + 1, i].tolist()}))
    return out


def explain_lemma41_violation(v: Violation, traj: Trajectory, schedule: TopologySchedule) -> bool:
    """True when a state mismatch at step ``k+1`` comes from a lagging agent ``i``
    that, at step ``k``, gained an in-neighbour which already held the current
    global count at step ``k-1`` but was not its in-neighbour then.

    The recursion argument bounds neighbours at ``k`` through the max-consensus
    step at ``k-1``, which only covers the neighbour set at ``k-1``; under a
    switching topology these differ and the pinned/real sequences can split.
    """
    if v.agent is None:
        return False
    k, i = v.k - 1, v.agent
    sig = traj.sigma
    m = int(sig[k].max())
    if k < 1 or sig[k, i] >= m:
        return False
    now = neighbors(schedule.matrix(k), i)
    before = neighbors(schedule.matrix(k - 1), i)
    return any(sig[k - 1, j] >= m and j not in before for j in now)


def check_lemma42(trace: TruncationTrace, g_inf: EdgeSet, b_window: int, max_report: int = 50) -> list[Violation]:
    """Counts propagate along the union graph:
    ``sigma_{j, k + B d_ij} >= sigma_{i,k}`` and ``tau~_{j,m} <= tau_m + B D``.
    """
    d = shortest_path_lengths(g_inf)
    D = int(d.max())
    sig = trace.sigma
    K, n = trace.steps, trace.n
    out: list[Violation] = []
    for i in range(n):
        for j in range(n):
            shift = b_window * int(d[i, j])
            if shift > K:
                continue
            bad = np.flatnonzero(sig[shift:, j] < sig[: K + 1 - shift, i])
            for k in bad[:max_report]:
                out.append(Violation("lemma42_propagation", int(k), j,
                                     f"sigma[{j}] at {int(k) + shift} below sigma[{i}] at {int(k)}",
                                     {"source": i, "shift": shift}))
    for m in sorted(trace.tau):
        if m < 1:
            continue
        bound = trace.tau_of(m) + b_window * D
        for j in range(n):
            tt = trace.tau_tilde(j, m)
            if tt == INF and bound > K:
                continue  # not decidable inside the recorded horizon
            if tt > bound:
                out.append(Violation("lemma42_gap", int(trace.tau_of(m)), j,
                                     f"tau~[{j},{m}] = {tt} exceeds tau_{m} + B*D = {bound}",
                                     {"m": m}))
    return out


# -- noise diagnostics -------------------------------------------------------------------------

@dataclass
class PartialSums:
    sums: np.ndarray   # (K, N, l) running sums of gamma_m eps_{i,m+1} 1[||x_{i,m}|| <= K]
    norms: np.ndarray  # (K, N)

    def tail_fluctuation(self, fraction: float = 0.25) -> np.ndarray:
        """Per agent: ``max_{k in tail} ||P_k - P_{k0}||`` over the final ``fraction`` of steps."""
        K = self.sums.shape[0]
        k0 = max(0, int(K * (1.0 - fraction)) - 1)
        return row_norms(self.sums[k0:] - self.sums[k0][None]).max(axis=0)


def noise_partial_sum_diag(traj: Trajectory, problem: Problem, radius: float) -> PartialSums | None:
    """Weighted-noise partial sums with ``eps = O - f_i(x)``; None if ``f_i`` is unavailable."""
    try:
        eps = traj.obs - _local_all(problem, traj.x[:-1])
    except NotImplementedError:
        return None
    inside = row_norms(traj.x[:-1]) <= radius
    terms = traj.gammas[:, None, None] * eps * inside[:, :, None]
    sums = np.cumsum(terms, axis=0)
    return PartialSums(sums, row_norms(sums))


def mean_update_residual(traj: Trajectory, k: int) -> float:
    """``||xbar_{k+1} - xbar_k - gamma_k mean_i O_{i,k+1}||``; zero when no agent reset at step k."""
    lhs = traj.x[k + 1].mean(axis=0) - traj.x[k].mean(axis=0)
    return float(np.linalg.norm(lhs - traj.gammas[k] * traj.obs[k].mean(axis=0)))
