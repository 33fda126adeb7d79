"""Closed-form step-size and truncation-bound families.

Step indices start at ``k = 0``; the shipped presets use ``c = 1`` so that
``a / (k + 1)`` reproduces the textbook ``a / k`` sequence started at one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PowerSchedule:
    """``a / (k + c) ** p``."""

    a: float
    c: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("schedule scale a must be positive")
        if self.c <= 0:
            raise ValueError("schedule offset c must be positive so the k=0 term is finite")

    def __call__(self, k: int) -> float:
        return self.a / (k + self.c) ** self.p

    def values(self, horizon: int) -> np.ndarray:
        # same scalar expression as __call__, so array and scalar paths agree bitwise
        return np.array([self(k) for k in range(horizon)], dtype=float)


class Bounds:
    """Truncation bounds ``m -> M_m``; evaluated lazily, saturating at +inf."""

    def __call__(self, m: int) -> float:
        raise NotImplementedError

    def many(self, ms: np.ndarray) -> np.ndarray:
        ms = np.asarray(ms)
        lo = ms.min()
        if lo == ms.max():
            return np.full(ms.shape, self(int(lo)), dtype=float)
        uniq, inv = np.unique(ms, return_inverse=True)
        vals = np.array([self(int(m)) for m in uniq], dtype=float)
        return vals[inv].reshape(np.shape(ms))


@dataclass(frozen=True)
class GeometricBounds(Bounds):
    """``M_m = m0 * ratio ** m``."""

    m0: float
    ratio: float = 2.0

    def __post_init__(self):
        if self.m0 <= 0 or self.ratio <= 1:
            raise ValueError("geometric bounds need m0 > 0 and ratio > 1")

    def __call__(self, m: int) -> float:
        try:
            return self.m0 * self.ratio ** m
        except OverflowError:
            return math.inf


@dataclass(frozen=True)
class LinearBounds(Bounds):
    """``M_m = m0 + m * step``."""

    m0: float
    step: float = 1.0

    def __post_init__(self):
        if self.m0 <= 0 or self.step <= 0:
            raise ValueError("linear bounds need m0 > 0 and step > 0")

    def __call__(self, m: int) -> float:
        return self.m0 + m * self.step


@dataclass(frozen=True)
class NoBounds(Bounds):
    """``M_m = +inf``: truncation never fires. Test-only escape hatch."""

    def __call__(self, m: int) -> float:
        return math.inf
