from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def row_norms(X: np.ndarray) -> np.ndarray:
    # one norm routine for every path that compares against a bound
    X = np.asarray(X, dtype=float)
    return np.sqrt((X * X).sum(axis=-1))


def disagreement_norm(X, l: int | None = None) -> float:
    """``||(I - 11^T/N) (x) I_l  X||`` without forming the projector.

    ``X`` is either an ``(N, l)`` array or the stacked ``N*l`` vector (then
    ``l`` is required).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        if l is None or l <= 0 or X.size % l:
            raise ValueError(f"stacked vector of length {X.size} is not divisible by l={l}")
        X = X.reshape(-1, l)
    dev = X - X.mean(axis=0)
    return float(np.sqrt((dev * dev).sum()))


@dataclass
class MetricsRecord:
    k: int
    algo: str
    disagreement: float
    avg_estimate: np.ndarray
    root_distance: float | None
    sigma_max: int
    sigma_min: int
    trunc_events_cum: int
    lyapunov: float | None = None
    consensus_error: float | None = None
    max_agent_norm: float = 0.0


def make_record(k: int, algo: str, X: np.ndarray, sigma, problem, events_cum: int) -> MetricsRecord:
    # diverging baseline states may overflow here; inf is the honest value to report
    with np.errstate(over="ignore", invalid="ignore"):
        avg = X.mean(axis=0)
        finite = bool(np.all(np.isfinite(avg)))
        target = problem.target(avg) if finite else None
        ce = None
        if target is not None:
            ce = float(row_norms(X - target).mean())
        sigma = np.asarray(sigma)
        return MetricsRecord(
            k=k,
            algo=algo,
            disagreement=disagreement_norm(X),
            avg_estimate=avg.copy(),
            root_distance=problem.root_distance(avg) if finite else None,
            sigma_max=int(sigma.max()),
            sigma_min=int(sigma.min()),
            trunc_events_cum=int(events_cum),
            lyapunov=problem.lyapunov(avg) if finite else None,
            consensus_error=ce,
            max_agent_norm=float(row_norms(X).max()),
        )
