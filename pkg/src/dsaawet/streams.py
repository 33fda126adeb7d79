"""Seed-derived independent random substreams.

Every stream is addressed by a fixed spawn key under the master seed, so
agent ``i``'s noise sequence does not depend on the number of agents, on the
record cadence, or on which algorithm variant consumes it.
"""

from __future__ import annotations

import numpy as np

_INIT, _AGENT, _TOPOLOGY, _PROBLEM = 0, 1, 2, 3


def _stream(seed: int, key: tuple[int, ...]) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def agent_streams(seed: int, n_agents: int) -> list[np.random.Generator]:
    return [_stream(seed, (_AGENT, i)) for i in range(n_agents)]


def init_stream(seed: int) -> np.random.Generator:
    return _stream(seed, (_INIT,))


def topology_stream(seed: int) -> np.random.Generator:
    return _stream(seed, (_TOPOLOGY,))


def problem_stream(seed: int) -> np.random.Generator:
    return _stream(seed, (_PROBLEM,))
