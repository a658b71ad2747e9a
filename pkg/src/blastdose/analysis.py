"""Rank correlations, dose-response sweeps, ablation, feature directions and trend tests."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dosimetry import DEFAULT_THRESHOLDS_DB, METRICS, MetricKind
from .errors import RejectedInput, UndefinedResult
from .riskmodel import fuse_sessions

log = logging.getLogger(__name__)

EXACT_BELOW = 8
TREND_ALPHA = 1e-3
ABLATION_SETS = {
    "Accel": ("gait", "balance"),
    "1 EOG": ("blink",),
    "2 EOG": ("blink", "saccade"),
    "Accel+1 EOG": ("gait", "balance", "blink"),
    "Accel+2 EOG": ("gait", "balance", "blink", "saccade"),
}
DEFAULT_TARGET = (MetricKind.BLAST_COUNT, 160.0)


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    n: int
    p_value: float


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    return float(np.dot(a, b) / math.sqrt(np.dot(a, a) * np.dot(b, b)))


def spearman(x, y) -> CorrelationResult:
    """Pearson correlation of mid-ranks.

    The p-value is two-sided: t approximation with n - 2 degrees of freedom,
    or an exact permutation count below 8 points.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y):
        raise RejectedInput("inputs differ in length")
    n = len(x)
    if n < 3:
        raise RejectedInput("need at least 3 pairs")
    rx, ry = stats.rankdata(x), stats.rankdata(y)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise UndefinedResult("zero rank variance")
    rho = float(np.clip(_pearson(rx, ry), -1.0, 1.0))
    if n < EXACT_BELOW:
        ref = abs(rho) - 1e-12
        hits = sum(abs(_pearson(rx, ry[list(p)])) >= ref for p in itertools.permutations(range(n)))
        p = hits / math.factorial(n)
    elif abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1 - rho * rho))
        p = float(2 * stats.t.sf(abs(t), n - 2))
    return CorrelationResult(rho, n, float(min(max(p, 0.0), 1.0)))


def _dose_lookup(doses):
    return doses if isinstance(doses, dict) else {d.session_id: d for d in doses}


def _matched(scores_by_id, doses):
    doses = _dose_lookup(doses)
    ids = sorted(s for s in scores_by_id if s in doses and not doses[s].discarded)
    dropped = sorted(set(scores_by_id) - set(ids))
    if dropped:
        log.warning("%d scored sessions without usable dose dropped", len(dropped))
    return ids, doses


@dataclass
class SweepResult:
    metrics: tuple
    thresholds: tuple
    rho: np.ndarray
    p_value: np.ndarray
    n: int
    duration_baseline_rho: float
    errors: dict = field(default_factory=dict)

    def cell(self, metric, threshold_db) -> float:
        return float(self.rho[self.metrics.index(MetricKind(metric)), self.thresholds.index(float(threshold_db))])

    def rows(self):
        for i, m in enumerate(self.metrics):
            for j, t in enumerate(self.thresholds):
                yield {"threshold_db": t, "metric": m.value, "rho": float(self.rho[i, j]),
                       "p_value": float(self.p_value[i, j]), "n": self.n}


def max_scores(scores) -> dict:
    return {s.session_id: s.max_score for s in scores if len(s.scores)}


def dose_response_sweep(fused_scores, doses, thresholds=DEFAULT_THRESHOLDS_DB, duration_scores=None,
                        baseline=DEFAULT_TARGET) -> SweepResult:
    """Spearman of the per-session maximum fused score against every dose total.

    The duration baseline correlates the maximum score of a model trained on
    elapsed exposure time with the ``baseline`` (metric, threshold) total.
    """
    mx = max_scores(fused_scores)
    ids, doses = _matched(mx, doses)
    if len(ids) < 3:
        raise RejectedInput("need at least 3 matched sessions")
    thresholds = tuple(float(t) for t in thresholds)
    rho = np.full((len(METRICS), len(thresholds)), np.nan)
    pv = np.full_like(rho, np.nan)
    errors = {}
    s = [mx[i] for i in ids]
    for a, m in enumerate(METRICS):
        for b, t in enumerate(thresholds):
            # -inf LZeq (no qualifying events) ranks lowest, as intended
            vals = [doses[i].total(m, t) for i in ids]
            try:
                r = spearman(s, vals)
                rho[a, b], pv[a, b] = r.rho, r.p_value
            except UndefinedResult as e:
                errors[(m.value, t)] = str(e)
    base = float("nan")
    if duration_scores is not None:
        dm = max_scores(duration_scores)
        bid = [i for i in ids if i in dm]
        try:
            base = spearman([dm[i] for i in bid], [doses[i].total(*baseline) for i in bid]).rho
        except (UndefinedResult, RejectedInput) as e:
            errors[("duration", baseline[1])] = str(e)
    return SweepResult(tuple(METRICS), thresholds, rho, pv, len(ids), base, errors)


def metric_similarity(doses, threshold_db: float) -> np.ndarray:
    """4 x 4 Spearman table among the cumulative totals at one threshold."""
    doses = [d for d in _dose_lookup(doses).values() if not d.discarded]
    if len(doses) < 3:
        raise RejectedInput("need at least 3 sessions")
    cols = [np.array([d.total(m, threshold_db) for d in doses], dtype=float) for m in METRICS]
    k = len(cols)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = spearman(cols[i], cols[j]).rho
    return out


def ablation(session_scores, doses, modality_sets=None, target=DEFAULT_TARGET, rule="series") -> dict:
    """Fused correlation per sensor configuration; a session counts only if it has every modality of the set."""
    modality_sets = modality_sets or ABLATION_SETS
    out = {}
    for name, mods in modality_sets.items():
        fused = fuse_sessions(session_scores, rule=rule, min_modalities=len(mods), modalities=set(mods))
        mx = max_scores(fused)
        ids, d = _matched(mx, doses)
        if len(ids) < 3:
            out[name] = None
            continue
        try:
            out[name] = spearman([mx[i] for i in ids], [d[i].total(*target) for i in ids])
        except UndefinedResult:
            out[name] = None
    return out


def feature_direction(pairs) -> dict:
    """Pooled Spearman of feature change score against accumulating dose.

    ``pairs`` maps a feature name to a list of (change_scores, dose_values)
    arrays, one pair per session; all time points are pooled.
    """
    out = {}
    for name, items in pairs.items():
        z = np.concatenate([np.asarray(a, float) for a, _ in items]) if items else np.zeros(0)
        d = np.concatenate([np.asarray(b, float) for _, b in items]) if items else np.zeros(0)
        out[name] = spearman(z, d)
    return out


@dataclass(frozen=True)
class TrendResult:
    slope: float
    intercept: float
    p_value: float
    stderr: float
    flagged: bool


def anam_trend(times_days, reaction_ms, alpha: float = TREND_ALPHA) -> TrendResult:
    """OLS slope (ms/day) with a two-sided t test; flagged when significant and positive."""
    t = np.asarray(times_days, dtype=float)
    y = np.asarray(reaction_ms, dtype=float)
    if len(t) != len(y) or len(t) < 5:
        raise RejectedInput("need at least 5 paired points")
    if np.ptp(t) == 0:
        raise RejectedInput("times are constant")
    r = stats.linregress(t, y)
    p = float(r.pvalue) if np.isfinite(r.pvalue) else 0.0
    return TrendResult(float(r.slope), float(r.intercept), p, float(r.stderr), bool(p < alpha and r.slope > 0))


def outer_fence(values, k: float = 3.0) -> float:
    """Q3 + k * IQR."""
    q1, q3 = np.percentile(np.asarray(values, dtype=float), [25, 75])
    return float(q3 + k * (q3 - q1))


@dataclass
class CrossingRow:
    session_id: str
    subject_id: str
    level: float
    crossing_time: float | None
    elapsed_h: float | None
    doses: dict

    @property
    def crossed(self) -> bool:
        return self.crossing_time is not None


def case_study_report(fused_scores, dose_series, level: float, thresholds=(160.0,), start_times=None) -> list:
    """First time each session's fused score exceeds ``level`` and the dose reached by then.

    ``dose_series`` maps session id to a dict keyed by (MetricKind, threshold)
    of DoseSeries. Sessions that never cross get a row with no crossing.
    """
    rows = []
    for s in sorted(fused_scores, key=lambda s: s.session_id):
        series = dose_series[s.session_id]
        above = np.flatnonzero(np.asarray(s.scores) > level)
        t0 = (start_times or {}).get(s.session_id, float(s.timestamps[0]) if len(s.timestamps) else 0.0)
        if above.size == 0:
            rows.append(CrossingRow(s.session_id, s.subject_id, level, None, None, {}))
            continue
        tc = float(s.timestamps[above[0]])
        doses = {(m.value, float(t)): float(series[(m, float(t))].value_at(tc)) for m in METRICS for t in thresholds}
        rows.append(CrossingRow(s.session_id, s.subject_id, level, tc, (tc - t0) / 3600.0, doses))
    return rows
