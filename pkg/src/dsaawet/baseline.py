"""Untruncated distributed stochastic approximation, for side-by-side comparison.

Each agent takes the plain consensus-plus-innovation step
``x_i <- sum_j w_ij x_j + gamma_k O_i`` with no truncation counts and no
resets. It consumes the same per-agent streams as the truncated engine, so
paired runs see identical noise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import streams
from .engine import AlgorithmConfig, ConfigError, NetworkState, RunResult, _Recorder, run
from .metrics import make_record, row_norms
from .problems import Problem
from .topology import TopologySchedule

OVERFLOW_THRESHOLD = 1e300


@dataclass
class BaselineState:
    x: np.ndarray
    k: int = 0
    overflowed: bool = False
    first_overflow_step: int | None = None


def baseline_step(state: BaselineState, w, problem: Problem, gamma_k: float, rngs) -> BaselineState:
    if state.overflowed:
        raise ConfigError("baseline state has overflowed and is frozen")
    obs = problem.observe_all(state.x, state.k, rngs)
    return _advance(state, w, obs, gamma_k)


def _advance(state: BaselineState, w, obs, gamma_k) -> BaselineState:
    with np.errstate(over="ignore", invalid="ignore"):
        x = w @ state.x + gamma_k * obs
        bad = not np.all(np.isfinite(x)) or row_norms(x).max() > OVERFLOW_THRESHOLD
    if bad:
        return BaselineState(state.x, state.k, True, state.k + 1)
    return BaselineState(x, state.k + 1)


def run_baseline(problem: Problem, schedule: TopologySchedule, config: AlgorithmConfig, x0) -> RunResult:
    state = BaselineState(np.array(x0, dtype=float))
    n, l = state.x.shape
    if n != problem.n_agents or n != schedule.n or l != problem.l:
        raise ConfigError("baseline: problem, topology and initial state disagree in shape")
    rngs = streams.agent_streams(config.seed, n)
    gammas = config.gammas()
    zeros = np.zeros(n, dtype=np.int64)
    t0 = time.perf_counter()
    rec = _Recorder(n, l, config.horizon, config.full_trace, state.x, zeros)
    records = [make_record(0, "baseline", state.x, zeros, problem, 0)]
    while state.k < config.horizon:
        k = state.k
        with np.errstate(over="ignore", invalid="ignore"):
            obs = problem.observe_all(state.x, k, rngs)
        state = _advance(state, schedule.sparse(k), obs, gammas[k])
        if state.overflowed:
            break
        rec.push(state.k, state.x, zeros, obs)
        if state.k % config.record_every == 0 or state.k == config.horizon:
            records.append(make_record(state.k, "baseline", state.x, zeros, problem, 0))
    return RunResult(
        algo="baseline",
        records=records,
        events=[],
        final=NetworkState(state.x, zeros, state.k),
        horizon=config.horizon,
        trace=rec.trajectory(state.k, gammas, config.x_star),
        overflow_step=state.first_overflow_step,
        wall_time=time.perf_counter() - t0,
    )


def compare(problem: Problem, schedule: TopologySchedule, config: AlgorithmConfig, x0):
    """Truncated and untruncated runs from the same seed: ``(dsaawet, baseline)``."""
    return run(problem, schedule, config, x0), run_baseline(problem, schedule, config, x0)
