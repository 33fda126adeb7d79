"""Switching communication graphs and their product-matrix behaviour.

Matrices follow the convention ``w[i, j] = weight agent i places on agent j``,
so a positive entry ``w[i, j]`` is the directed edge ``(j, i)``: information
flows from ``j`` to ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

DEFAULT_TOL = 1e-9
# d_m values below this are treated as exact averaging
DECAY_NOISE_FLOOR = 1e-13


class TopologyError(ValueError):
    """Structurally invalid topology input."""


def _square(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise TopologyError(f"adjacency matrix must be square, got shape {w.shape}")
    return w


@dataclass
class StochasticityReport:
    row_deviation: np.ndarray
    col_deviation: np.ndarray
    min_entry: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(
            np.all(self.row_deviation <= self.tol)
            and np.all(self.col_deviation <= self.tol)
            and self.min_entry >= -self.tol
        )


def validate_doubly_stochastic(w, tol: float = DEFAULT_TOL) -> StochasticityReport:
    w = _square(w)
    if tol <= 0:
        raise ValueError("tol must be positive")
    return StochasticityReport(
        row_deviation=np.abs(w.sum(axis=1) - 1.0),
        col_deviation=np.abs(w.sum(axis=0) - 1.0),
        min_entry=float(w.min()) if w.size else 0.0,
        tol=tol,
    )


def min_positive_entry(w) -> float:
    w = _square(w)
    pos = w[w > 0]
    if pos.size == 0:
        raise TopologyError("matrix has no positive entry")
    return float(pos.min())


def neighbors(w, i: int) -> set[int]:
    """In-neighbours ``{j : w[i, j] > 0}`` of agent ``i``."""
    w = _square(w)
    n = w.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"agent index {i} out of range for n={n}")
    return {int(j) for j in np.flatnonzero(w[i] > 0)}


@dataclass(frozen=True)
class EdgeSet:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    @classmethod
    def from_matrix(cls, w) -> "EdgeSet":
        w = _square(w)
        rows, cols = np.nonzero(w > 0)
        return cls(w.shape[0], frozenset((int(j), int(i)) for i, j in zip(rows, cols)))

    def __or__(self, other: "EdgeSet") -> "EdgeSet":
        if self.n != other.n:
            raise TopologyError("edge sets over different agent counts")
        return EdgeSet(self.n, self.edges | other.edges)

    def __contains__(self, edge) -> bool:
        return tuple(edge) in self.edges

    def __len__(self) -> int:
        return len(self.edges)

    def flow_graph(self) -> sparse.csr_matrix:
        """Sparse graph with ``g[j, i] = 1`` for every edge ``(j, i)``."""
        if not self.edges:
            return sparse.csr_matrix((self.n, self.n))
        src, dst = zip(*self.edges)
        data = np.ones(len(src))
        return sparse.csr_matrix((data, (src, dst)), shape=(self.n, self.n))


def is_strongly_connected(edges: EdgeSet) -> bool:
    # one forward traversal plus one traversal of the transpose from node 0
    if edges.n <= 1:
        return True
    g = edges.flow_graph()
    fwd = csgraph.breadth_first_order(g, 0, directed=True, return_predecessors=False)
    if fwd.size != edges.n:
        return False
    back = csgraph.breadth_first_order(g.T.tocsr(), 0, directed=True, return_predecessors=False)
    return back.size == edges.n


def shortest_path_lengths(edges: EdgeSet) -> np.ndarray:
    """All-pairs hop counts ``d[i, j]`` of the shortest directed path i -> j."""
    d = csgraph.shortest_path(edges.flow_graph(), method="D", directed=True, unweighted=True)
    if not np.all(np.isfinite(d)):
        raise TopologyError("graph is not strongly connected; path lengths undefined")
    return d.astype(np.int64)


class TopologySchedule:
    """Deterministic sequence of weighted digraphs ``W(k)``, ``k >= 0``.

    Periodic schedules store one period of matrices; ``W(k) = matrices[k % period]``.
    Aperiodic schedules supply ``generator(k)`` instead.
    """

    def __init__(
        self,
        matrices: Sequence | None = None,
        *,
        generator: Callable[[int], np.ndarray] | None = None,
        eta: float | None = None,
        b_window: int = 1,
        name: str = "explicit",
    ):
        if (matrices is None) == (generator is None):
            raise TopologyError("give exactly one of matrices or generator")
        if b_window < 1:
            raise TopologyError("b_window must be >= 1")
        self.name = name
        self.b_window = int(b_window)
        self._generator = generator
        if matrices is not None:
            mats = tuple(_square(m).copy() for m in matrices)
            if not mats:
                raise TopologyError("periodic schedule needs at least one matrix")
            n = mats[0].shape[0]
            if any(m.shape != (n, n) for m in mats):
                raise TopologyError("all matrices in a schedule must share a shape")
            for m in mats:
                m.setflags(write=False)
            self._matrices = mats
            self._sparse = tuple(sparse.csr_matrix(m) for m in mats)
            for s in self._sparse:
                s.sort_indices()
            self.n = n
        else:
            self._matrices = None
            self._sparse = None
            self.n = _square(generator(0)).shape[0]
        if eta is None:
            if generator is not None:
                raise TopologyError("generator schedules must declare eta")
            eta = min(min_positive_entry(m) for m in self._matrices)
        if not 0 < eta <= 1:
            raise TopologyError(f"eta must lie in (0, 1], got {eta}")
        self.eta = float(eta)

    @property
    def period(self) -> int | None:
        return None if self._matrices is None else len(self._matrices)

    @property
    def periodic(self) -> bool:
        return self._matrices is not None

    def matrix(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError("step index must be >= 0")
        if self._matrices is not None:
            return self._matrices[k % len(self._matrices)]
        return _square(self._generator(k))

    __call__ = matrix

    def sparse(self, k: int) -> sparse.csr_matrix:
        if self._sparse is not None:
            return self._sparse[k % len(self._sparse)]
        s = sparse.csr_matrix(self.matrix(k))
        s.sort_indices()
        return s

    def __repr__(self) -> str:
        return f"TopologySchedule(name={self.name!r}, n={self.n}, period={self.period}, B={self.b_window})"


def union_edge_set(schedule: TopologySchedule, k_start: int, k_end: int) -> EdgeSet:
    if k_start > k_end:
        raise ValueError("k_start must be <= k_end")
    if schedule.periodic and k_end - k_start + 1 > schedule.period:
        ks: Iterable[int] = range(k_start, k_start + schedule.period)
    else:
        ks = range(k_start, k_end + 1)
    out = EdgeSet(schedule.n)
    for k in ks:
        out = out | EdgeSet.from_matrix(schedule.matrix(k))
    return out


@dataclass
class A4Report:
    doubly_stochastic: bool
    eta_bound: bool
    strongly_connected: bool
    b_connected: bool
    empirical: bool
    span: tuple[int, int]
    messages: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.doubly_stochastic and self.eta_bound and self.strongly_connected and self.b_connected

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "doubly_stochastic": self.doubly_stochastic,
            "eta_bound": self.eta_bound,
            "strongly_connected": self.strongly_connected,
            "b_connected": self.b_connected,
            "scope": "empirical up to horizon" if self.empirical else "exact (one period)",
            "span": list(self.span),
            "messages": list(self.messages),
        }


def verify_a4(schedule: TopologySchedule, horizon: int = 0, tol: float = DEFAULT_TOL) -> A4Report:
    """Check the four connectivity/weight conditions on a schedule.

    Periodic schedules are checked exactly over one period (windows wrap
    around). Aperiodic ones are scanned over ``[0, horizon]`` only.
    """
    msgs: list[str] = []
    if schedule.periodic:
        ks = range(schedule.period)
        empirical = False
    else:
        ks = range(max(horizon, 0) + 1)
        empirical = True

    ds_ok = eta_ok = True
    for k in ks:
        w = schedule.matrix(k)
        rep = validate_doubly_stochastic(w, tol)
        if not rep.passed:
            ds_ok = False
            msgs.append(f"W({k}) is not doubly stochastic (max row dev {rep.row_deviation.max():.3g}, "
                        f"max col dev {rep.col_deviation.max():.3g}, min entry {rep.min_entry:.3g})")
        if np.any(np.diag(w) <= 0):
            eta_ok = False
            msgs.append(f"W({k}) is missing a self-loop")
        if min_positive_entry(w) < schedule.eta - tol:
            eta_ok = False
            msgs.append(f"W({k}) has a positive entry below eta={schedule.eta:.6g}")

    k_lo, k_hi = ks[0], ks[-1]
    e_inf = union_edge_set(schedule, k_lo, k_hi)
    sc_ok = is_strongly_connected(e_inf)
    if not sc_ok:
        msgs.append("union graph is not strongly connected")

    b = schedule.b_window
    if schedule.periodic:
        starts = range(schedule.period)
    else:
        starts = range(0, max(k_hi - b + 2, 1))
    b_ok = True
    for s in starts:
        win = union_edge_set(schedule, s, s + b - 1)
        missing = e_inf.edges - win.edges
        if missing:
            b_ok = False
            msgs.append(f"window [{s}, {s + b - 1}] misses {len(missing)} persistent edge(s)")
            break
    return A4Report(ds_ok, eta_ok, sc_ok, b_ok, empirical, (k_lo, k_hi), msgs)


def transition_product(schedule: TopologySchedule, k: int, s: int) -> np.ndarray:
    """``W(k) W(k-1) ... W(s)``; the empty product ``k = s - 1`` is the identity."""
    if k < s - 1:
        raise ValueError(f"transition_product needs k >= s - 1, got k={k}, s={s}")
    phi = np.eye(schedule.n)
    for t in range(s, k + 1):
        phi = schedule.matrix(t) @ phi
    return phi


@dataclass
class DecayFit:
    c: float
    rho: float
    distances: np.ndarray
    residuals: np.ndarray
    zero_decay: bool = False


def estimate_decay(schedule: TopologySchedule, s: int, max_len: int) -> DecayFit:
    """Fit ``||Phi(s+m-1, s) - 11^T/N||_2 ~ c * rho**m`` for ``m = 1..max_len``."""
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    n = schedule.n
    avg = np.full((n, n), 1.0 / n)
    phi = np.eye(n)
    d = np.empty(max_len)
    for m in range(1, max_len + 1):
        phi = schedule.matrix(s + m - 1) @ phi
        d[m - 1] = np.linalg.norm(phi - avg, 2)
    m_idx = np.arange(1, max_len + 1)
    keep = d > DECAY_NOISE_FLOOR
    if keep.sum() < 2:
        return DecayFit(0.0, float("nan"), d, np.zeros(max_len), zero_decay=True)
    slope, intercept = np.polyfit(m_idx[keep], np.log(d[keep]), 1)
    c, rho = float(np.exp(intercept)), float(np.exp(slope))
    return DecayFit(c, rho, d, d - c * rho ** m_idx)


# -- built-in schedule constructors ------------------------------------------

def metropolis_weights(adj: np.ndarray) -> np.ndarray:
    """Symmetric Metropolis-Hastings weights for an undirected 0/1 adjacency."""
    adj = np.asarray(adj, dtype=bool)
    np.fill_diagonal(adj, False)
    deg = adj.sum(axis=1)
    w = np.zeros(adj.shape)
    i, j = np.nonzero(adj)
    w[i, j] = 1.0 / (1.0 + np.maximum(deg[i], deg[j]))
    w[np.diag_indices_from(w)] = 1.0 - w.sum(axis=1)
    return w


def random_connected_graph(n: int, rng: np.random.Generator, edge_prob: float | None = None) -> np.ndarray:
    """Random spanning tree plus Erdos-Renyi extra edges; undirected 0/1 matrix."""
    adj = np.zeros((n, n), dtype=bool)
    if n <= 1:
        return adj
    order = rng.permutation(n)
    for t in range(1, n):
        a, b = order[t], order[rng.integers(0, t)]
        adj[a, b] = adj[b, a] = True
    p = min(1.0, 2.0 / n) if edge_prob is None else edge_prob
    extra = np.triu(rng.random((n, n)) < p, k=1)
    adj |= extra | extra.T
    np.fill_diagonal(adj, False)
    return adj


def static_metropolis(n: int, seed: int = 0, edge_prob: float | None = None) -> TopologySchedule:
    rng = np.random.default_rng(seed)
    w = metropolis_weights(random_connected_graph(n, rng, edge_prob))
    return TopologySchedule([w], b_window=1, name="static_metropolis")


def directed_ring(n: int) -> TopologySchedule:
    w = np.zeros((n, n))
    if n == 1:
        w[0, 0] = 1.0
    else:
        for i in range(n):
            w[i, i] += 0.5
            w[i, (i - 1) % n] += 0.5
    return TopologySchedule([w], b_window=1, name="ring")


def complete_uniform(n: int) -> TopologySchedule:
    return TopologySchedule([np.full((n, n), 1.0 / n)], b_window=1, name="complete")


def example1_blocks(n: int, seed: int = 0, edge_prob: float | None = None) -> TopologySchedule:
    """Three-phase block pattern: W1 on the first half, W2 on the second, then
    pairwise half/half averaging of agent ``i`` with ``i + n/2``.

    Step ``k`` uses phase ``k mod 3`` with 1 -> W1 block, 2 -> W2 block, 0 -> mixing.
    """
    if n < 2 or n % 2:
        raise TopologyError("example1_blocks needs an even agent count >= 2")
    h = n // 2
    rng = np.random.default_rng(seed)
    w1 = metropolis_weights(random_connected_graph(h, rng, edge_prob))
    w2 = metropolis_weights(random_connected_graph(h, rng, edge_prob))
    eye = np.eye(h)
    first = np.block([[w1, np.zeros((h, h))], [np.zeros((h, h)), eye]])
    second = np.block([[eye, np.zeros((h, h))], [np.zeros((h, h)), w2]])
    mix = np.block([[0.5 * eye, 0.5 * eye], [0.5 * eye, 0.5 * eye]])
    return TopologySchedule([mix, first, second], b_window=3, name="example1_blocks")
