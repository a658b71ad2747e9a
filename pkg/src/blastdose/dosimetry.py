"""Per-event overpressure metrics and accumulating exposure measures."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .errors import RejectedInput
from .sigcore import SampledSignal

P_REF_PA = 20e-6
PA_PER_PSI = 6894.757293168  # 1 lbf (0.45359237 kg * 9.80665 m/s^2) per (0.0254 m)^2
EIGHT_HOURS_S = 8 * 3600.0
DEFAULT_THRESHOLDS_DB = (140.0, 145.0, 150.0, 155.0, 160.0, 165.0, 170.0)
TRIGGER_DB = 140.0
ARTIFACT_CORR_THRESHOLD = 0.7
ARTIFACT_LAG_S = 1e-3
MAX_SESSION_ARTIFACTS = 20
CLIP_FRACTION = 0.95
# Full-scale ranges of the two microphones; the low-gain channel reaches 185 dB.
HIGH_GAIN_FULL_SCALE_PA = 2000.0
LOW_GAIN_FULL_SCALE_PA = 35566.0


class MetricKind(str, enum.Enum):
    BLAST_COUNT = "BlastCount"
    CUM_PEAK_PRESSURE = "CumPeakPressure"
    TOTAL_POSITIVE_IMPULSE = "TotalPositiveImpulse"
    LZEQ8HR = "LZeq8hr"


METRICS = tuple(MetricKind)


def pa_to_dbspl(p: float) -> float:
    if not p > 0:
        raise RejectedInput(f"pressure must be positive, got {p}")
    return 20.0 * math.log10(p / P_REF_PA)


def dbspl_to_pa(level: float) -> float:
    return P_REF_PA * 10.0 ** (level / 20.0)


def dbspl_to_psi(level: float) -> float:
    return dbspl_to_pa(level) / PA_PER_PSI


def psi_to_pa(psi: float) -> float:
    return psi * PA_PER_PSI


@dataclass
class BlastEvent:
    event_time: float
    low_gain_channel: SampledSignal
    high_gain_channel: SampledSignal
    low_gain_full_scale_pa: float = LOW_GAIN_FULL_SCALE_PA
    high_gain_full_scale_pa: float = HIGH_GAIN_FULL_SCALE_PA

    def __post_init__(self):
        lo, hi = self.low_gain_channel, self.high_gain_channel
        if lo.sample_rate_hz != hi.sample_rate_hz or len(lo) != len(hi):
            raise RejectedInput("event channels must share rate and length")
        if lo.sample_rate_hz < 8000:
            raise RejectedInput("event sample rate must be at least 8 kHz")


@dataclass
class EventMetrics:
    event_time: float
    peak_pressure_psi: float
    peak_level_db_spl: float
    positive_impulse_psi_ms: float
    exposure_pa2s: float
    is_artifact: bool
    artifact_score: float

    def to_dict(self):
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for k, v in self.__dict__.items()}


def select_channel(e: BlastEvent) -> SampledSignal:
    """High-gain channel unless it approaches full scale."""
    hi = e.high_gain_channel.samples
    if hi.size and np.max(np.abs(hi)) > CLIP_FRACTION * e.high_gain_full_scale_pa:
        return e.low_gain_channel
    return e.high_gain_channel


def positive_phase_impulse(p: np.ndarray, rate_hz: float) -> tuple[float, float]:
    """Peak overpressure (Pa) and the impulse (Pa*s) of the positive phase holding it."""
    if p.size == 0:
        return 0.0, 0.0
    k = int(np.argmax(p))
    peak = float(p[k])
    if peak <= 0:
        return 0.0, 0.0
    neg = np.flatnonzero(p[:k] <= 0)
    start = neg[-1] + 1 if neg.size else 0
    neg = np.flatnonzero(p[k:] <= 0)
    stop = k + neg[0] if neg.size else len(p)
    seg = p[start:stop]
    if len(seg) == 1:
        return peak, peak / rate_hz
    return peak, float(trapezoid(seg, dx=1.0 / rate_hz))


def artifact_score(e: BlastEvent, max_lag_s: float = ARTIFACT_LAG_S) -> float:
    """Maximum normalized cross-correlation of the two channels within +/- max_lag_s."""
    a = e.low_gain_channel.samples
    b = e.high_gain_channel.samples
    if len(a) != len(b):
        raise RejectedInput("channels must be equal length")
    ea, eb = np.linalg.norm(a), np.linalg.norm(b)
    if ea == 0 or eb == 0:
        return 0.0
    a = a / ea
    b = b / eb
    max_lag = int(round(max_lag_s * e.low_gain_channel.sample_rate_hz))
    n = len(a)
    best = -1.0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            v = float(np.dot(a[lag:], b[:n - lag]))
        else:
            v = float(np.dot(a[:n + lag], b[-lag:]))
        best = max(best, v)
    return float(np.clip(best, -1.0, 1.0))


def event_metrics(e: BlastEvent) -> EventMetrics:
    ch = select_channel(e)
    p = ch.samples
    if p.size == 0:
        raise RejectedInput("empty event channels")
    peak_pa, impulse_pas = positive_phase_impulse(p, ch.sample_rate_hz)
    score = artifact_score(e)
    peak_psi = peak_pa / PA_PER_PSI
    level = pa_to_dbspl(peak_pa) if peak_pa > 0 else -math.inf
    return EventMetrics(
        event_time=e.event_time,
        peak_pressure_psi=peak_psi,
        peak_level_db_spl=level,
        positive_impulse_psi_ms=impulse_pas / PA_PER_PSI * 1e3,
        exposure_pa2s=float(np.sum(p ** 2) / ch.sample_rate_hz),
        is_artifact=score < ARTIFACT_CORR_THRESHOLD,
        artifact_score=score,
    )


@dataclass
class ContinuousLevel:
    """A device LZeq log entry: equivalent level over [time - duration, time]."""

    time: float
    leq_db: float
    duration_s: float

    @property
    def exposure_pa2s(self):
        return P_REF_PA ** 2 * 10.0 ** (self.leq_db / 10.0) * self.duration_s


def lzeq8hr(exposure_pa2s: float) -> float:
    if exposure_pa2s <= 0:
        return -math.inf
    return 10.0 * math.log10(exposure_pa2s / (P_REF_PA ** 2 * EIGHT_HOURS_S))


@dataclass
class DoseSeries:
    metric_kind: MetricKind
    threshold_db_spl: float
    timestamps: np.ndarray
    cumulative_values: np.ndarray

    @property
    def empty_value(self):
        return -math.inf if self.metric_kind == MetricKind.LZEQ8HR else 0.0

    @property
    def final(self) -> float:
        return float(self.cumulative_values[-1]) if len(self.cumulative_values) else self.empty_value

    def value_at(self, t):
        """Value of the most recent dose sample at or before each time in ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.timestamps, t, side="right") - 1
        vals = np.concatenate([[self.empty_value], self.cumulative_values])
        return vals[idx + 1]


def _check_sorted(times):
    if np.any(np.diff(times) < 0):
        raise RejectedInput("events must be time-sorted")


def accumulate_dose(events, kind, threshold_db: float, levels=()) -> DoseSeries:
    """Running exposure measure over non-artifact events (and optional continuous levels).

    Events below ``threshold_db`` contribute nothing. LZeq8hr additionally
    integrates the continuous-level log regardless of threshold.
    """
    kind = MetricKind(kind)
    events = [e for e in events if not e.is_artifact]
    ev_t = np.array([e.event_time for e in events], dtype=float)
    _check_sorted(ev_t)
    q = np.array([e.peak_level_db_spl >= threshold_db for e in events], dtype=bool)
    if kind == MetricKind.BLAST_COUNT:
        inc = q.astype(float)
    elif kind == MetricKind.CUM_PEAK_PRESSURE:
        inc = np.where(q, [e.peak_pressure_psi for e in events], 0.0) if events else np.zeros(0)
    elif kind == MetricKind.TOTAL_POSITIVE_IMPULSE:
        inc = np.where(q, [e.positive_impulse_psi_ms for e in events], 0.0) if events else np.zeros(0)
    else:
        inc = np.where(q, [e.exposure_pa2s for e in events], 0.0) if events else np.zeros(0)
        if levels:
            lv_t = np.array([lv.time for lv in levels], dtype=float)
            _check_sorted(lv_t)
            lv_e = np.array([lv.exposure_pa2s for lv in levels])
            t_all = np.concatenate([ev_t, lv_t])
            e_all = np.concatenate([inc, lv_e])
            order = np.argsort(t_all, kind="stable")
            ev_t, inc = t_all[order], e_all[order]
        energy = np.cumsum(inc)
        vals = np.array([lzeq8hr(x) for x in energy])
        return DoseSeries(kind, threshold_db, ev_t, vals)
    return DoseSeries(kind, threshold_db, ev_t, np.cumsum(inc))


@dataclass
class SessionDose:
    session_id: str
    subject_id: str
    totals: dict = field(default_factory=dict)  # (MetricKind, threshold) -> value
    artifact_count: int = 0
    discarded: bool = False
    start_time: float | None = None
    end_time: float | None = None

    def total(self, kind, threshold_db):
        return self.totals[(MetricKind(kind), float(threshold_db))]

    @property
    def duration_s(self):
        if self.start_time is None or self.end_time is None:
            return float("nan")
        return self.end_time - self.start_time


def session_series(events, thresholds=DEFAULT_THRESHOLDS_DB, levels=()):
    """All accumulating series of a session keyed by (metric, threshold)."""
    return {(k, float(t)): accumulate_dose(events, k, t, levels)
            for k in METRICS for t in thresholds}


def session_summary(events, thresholds=DEFAULT_THRESHOLDS_DB, session_id="", subject_id="",
                    levels=(), start_time=None, end_time=None) -> SessionDose:
    events = sorted(events, key=lambda e: e.event_time)
    n_art = sum(1 for e in events if e.is_artifact)
    series = session_series(events, thresholds, levels)
    return SessionDose(
        session_id=session_id,
        subject_id=subject_id,
        totals={key: s.final for key, s in series.items()},
        artifact_count=n_art,
        discarded=n_art > MAX_SESSION_ARTIFACTS,
        start_time=start_time,
        end_time=end_time,
    )
