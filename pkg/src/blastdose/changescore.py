"""Individualized online change scores for feature streams.

Each feature observation ``f(n)`` is first averaged over the most recent
observations, then z-scored against recursively tracked first and second
moments::

    z(n)  = (f(n) - m1(n)) / sqrt(m2(n) - m1(n)**2 + 1 / n)
    zs(n) = alpha * z(n) + (1 - alpha) * zs(n - 1),   zs(0) = 0

The moments are exponentially weighted with decay ``beta`` and bias-corrected
(divided by ``1 - beta**n``), so the first observation is its own mean and the
weighting approaches a plain exponential filter once n >> 1 / (1 - beta).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import RejectedInput

ALPHA = 1e-4
MOMENT_DECAY = 0.999
WINDOW_EOG = 20
WINDOW_MOTION = 30


@dataclass
class FeatureStream:
    """Timestamped observations of one feature; ``values`` is (n,) or (n, components)."""

    name: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.timestamps) != len(self.values):
            raise RejectedInput("timestamps and values differ in length")

    def __len__(self):
        return len(self.timestamps)


@dataclass
class ChangeTracker:
    alpha: float = ALPHA
    moment_decay: float = MOMENT_DECAY
    n: int = 0
    zs: float = 0.0
    _shift: float = 0.0
    _s1: float = 0.0
    _s2: float = 0.0

    def _norm(self):
        return 1.0 - self.moment_decay ** self.n

    @property
    def m1(self) -> float:
        return self._shift + self._s1 / self._norm() if self.n else 0.0

    @property
    def m2(self) -> float:
        if not self.n:
            return 0.0
        c1, c2 = self._s1 / self._norm(), self._s2 / self._norm()
        return c2 + 2 * self._shift * c1 + self._shift ** 2

    def update(self, f: float) -> tuple[float, float]:
        """Consume one observation; returns ``(z_instant, z_smoothed)``."""
        if not math.isfinite(f):
            raise RejectedInput(f"non-finite feature value {f}")
        if self.n == 0:
            self._shift = f
        g = f - self._shift
        b = self.moment_decay
        self.n += 1
        self._s1 = b * self._s1 + (1 - b) * g
        self._s2 = b * self._s2 + (1 - b) * g * g
        c1, c2 = self._s1 / self._norm(), self._s2 / self._norm()
        var = max(c2 - c1 * c1, 0.0)
        z = (g - c1) / math.sqrt(var + 1.0 / self.n)
        self.zs = self.alpha * z + (1 - self.alpha) * self.zs
        return z, self.zs


@dataclass
class ScoreSeries:
    name: str
    timestamps: np.ndarray
    raw_feature: np.ndarray
    running_mean: np.ndarray
    z_instant: np.ndarray
    z_smoothed: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.timestamps)


def running_mean(stream: FeatureStream, window_count: int) -> FeatureStream:
    """Mean of up to ``window_count`` most recent values, current one included."""
    if window_count < 1:
        raise RejectedInput("window_count must be >= 1")
    v = stream.values
    if len(v) == 0:
        return FeatureStream(stream.name, stream.timestamps.copy(), v.copy())
    c = np.concatenate([np.zeros((1,) + v.shape[1:]), np.cumsum(v, axis=0)])
    hi = np.arange(1, len(v) + 1)
    lo = np.maximum(hi - window_count, 0)
    counts = (hi - lo).reshape((-1,) + (1,) * (v.ndim - 1))
    return FeatureStream(stream.name, stream.timestamps.copy(), (c[hi] - c[lo]) / counts)


def change_scores(f: np.ndarray, alpha: float = ALPHA, moment_decay: float = MOMENT_DECAY):
    """Vectorized z_instant / z_smoothed along axis 0 (same recursion as ChangeTracker)."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] == 0:
        return f.copy(), f.copy()
    if not np.all(np.isfinite(f)):
        raise RejectedInput("non-finite feature values")
    g = f - f[:1]
    b = moment_decay
    n = np.arange(1, f.shape[0] + 1, dtype=float).reshape((-1,) + (1,) * (f.ndim - 1))
    norm = 1.0 - b ** n
    c1 = lfilter([1 - b], [1, -b], g, axis=0) / norm
    c2 = lfilter([1 - b], [1, -b], g * g, axis=0) / norm
    var = np.maximum(c2 - c1 * c1, 0.0)
    z = (g - c1) / np.sqrt(var + 1.0 / n)
    zs = lfilter([alpha], [1, -(1 - alpha)], z, axis=0)
    return z, zs


def score_stream(stream: FeatureStream, window_count: int, alpha: float = ALPHA,
                 moment_decay: float = MOMENT_DECAY) -> ScoreSeries:
    if np.any(np.diff(stream.timestamps) < 0):
        raise RejectedInput("feature stream must be time-sorted")
    rm = running_mean(stream, window_count)
    z, zs = change_scores(rm.values, alpha, moment_decay)
    return ScoreSeries(stream.name, stream.timestamps.copy(), stream.values.copy(), rm.values, z, zs)
