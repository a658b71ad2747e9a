"""In-memory orchestration from raw session signals to held-out fused scores."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .changescore import WINDOW_EOG, WINDOW_MOTION, FeatureStream, score_stream
from .dosimetry import DEFAULT_THRESHOLDS_DB, MetricKind, event_metrics, session_series, session_summary
from .eogfeat import extract_eog_features
from .motionfeat import MIN_FRAMES, extract_session_features
from .riskmodel import (
    GaitPcaTransform, ModalityObservations, fuse_sessions, gait_change_scores, loso_evaluate, risk_scores,
)

log = logging.getLogger(__name__)

MODALITIES = ("gait", "balance", "blink", "saccade")
FUSED_DEFAULT = ("gait", "balance", "blink")
LABEL_METRIC = (MetricKind.BLAST_COUNT, 140.0)
DIRECTION_THRESHOLD_DB = 160.0
GAIT_DIRECTION_INDEX = 9  # rank-10 eigenvalue of the first delay scale
DURATION_GRID_S = 60.0
WINDOWS = {"gait": WINDOW_MOTION, "balance": WINDOW_MOTION, "blink": WINDOW_EOG, "saccade": WINDOW_EOG}


@dataclass
class SessionRecord:
    session_id: str
    subject_id: str
    start_time: float
    end_time: float
    metrics: list = field(repr=False)
    dose: object = field(repr=False)
    series: dict = field(repr=False)
    streams: dict = field(repr=False)
    scores: dict = field(repr=False)
    gait_frames_total: int = 0

    @property
    def discarded(self) -> bool:
        return self.dose.discarded

    def dose_at(self, t, kind, threshold_db):
        return self.series[(MetricKind(kind), float(threshold_db))].value_at(t)


def direction_stream(stream: FeatureStream, index: int = GAIT_DIRECTION_INDEX) -> FeatureStream:
    v = np.asarray(stream.values)
    col = v[:, index] if v.ndim == 2 and len(v) else np.zeros(0)
    return FeatureStream(f"{stream.name}[{index}]", stream.timestamps, col)


def process_signals(session_id, subject_id, events, veog, heog, accel, start_time, end_time,
                    thresholds=DEFAULT_THRESHOLDS_DB) -> SessionRecord:
    """Dosimetry, feature extraction and per-feature change scores for one session."""
    metrics = sorted((event_metrics(e) for e in events), key=lambda m: m.event_time)
    dose = session_summary(metrics, thresholds, session_id, subject_id, start_time=start_time, end_time=end_time)
    series = session_series(metrics, thresholds)
    blink, sacc = extract_eog_features(veog, heog)
    motion = extract_session_features(accel)
    streams = {"blink": blink, "balance": motion.balance, "gait": motion.gait}
    if sacc is not None:
        streams["saccade"] = sacc
    scores = {}
    for name in ("blink", "balance", "saccade"):
        if name in streams and len(streams[name]):
            scores[name] = score_stream(streams[name], WINDOWS[name])
    if len(motion.gait):
        scores["gait_direction"] = score_stream(direction_stream(motion.gait), WINDOW_MOTION)
    return SessionRecord(session_id, subject_id, start_time, end_time, metrics, dose, series, streams, scores,
                         motion.gait_frames_total)


def process_session(data, thresholds=DEFAULT_THRESHOLDS_DB) -> SessionRecord:
    """Run :func:`process_signals` on a synthetic :class:`SessionData`."""
    p = data.plan
    return process_signals(p.session_id, p.subject_id, data.events, data.veog, data.heog, data.accel,
                           p.start_time, p.start_time + p.duration_s, thresholds)


def observations(records, modality: str, label=LABEL_METRIC) -> list:
    """Per-session training observations; gait carries raw TDE spectra for the fold-local PCA."""
    out = []
    for r in records:
        if r.discarded:
            continue
        if modality == "duration":
            t = r.start_time + DURATION_GRID_S * np.arange(int((r.end_time - r.start_time) // DURATION_GRID_S) + 1)
            feats = (t - r.start_time) / 3600.0
        elif modality == "gait":
            s = r.streams.get("gait")
            if s is None or len(s) < MIN_FRAMES:
                continue
            t, feats = s.timestamps, s.values
        else:
            sc = r.scores.get(modality)
            if sc is None:
                continue
            t, feats = sc.timestamps, sc.z_smoothed
            if modality == "balance" and len(t) < MIN_FRAMES:
                continue
        out.append(ModalityObservations(r.session_id, r.subject_id, t, feats, r.dose_at(t, *label), r.start_time))
    return out


@dataclass
class CohortResult:
    loso: dict
    fused: list
    records: list = field(repr=False)

    def session_scores(self, modalities=None):
        out = []
        for name, res in self.loso.items():
            if name == "duration" or (modalities is not None and name not in modalities):
                continue
            out.extend(res.scores)
        return out

    def fuse(self, modalities=FUSED_DEFAULT, min_modalities=2, rule="series"):
        return fuse_sessions(self.session_scores(modalities), rule=rule, min_modalities=min_modalities,
                             modalities=modalities)


def evaluate_cohort(records, modalities=MODALITIES, seed: int = 0, max_train: int = 3000,
                    fused=FUSED_DEFAULT, rule="series", duration_baseline: bool = True) -> CohortResult:
    loso = {}
    for m in modalities:
        obs = observations(records, m)
        if len({o.subject_id for o in obs}) < 2:
            log.warning("%s: fewer than two subjects, skipped", m)
            continue
        tf = GaitPcaTransform if m == "gait" else None
        loso[m] = loso_evaluate(obs, m, transform=tf, seed=seed, max_train=max_train)
    if duration_baseline:
        loso["duration"] = loso_evaluate(observations(records, "duration"), "duration", seed=seed,
                                         max_train=max_train)
    res = CohortResult(loso, [], list(records))
    res.fused = res.fuse(fused, rule=rule)
    return res


def model_features(model, obs: ModalityObservations, modality: str) -> np.ndarray:
    """Model inputs for one session; gait is projected with the fold's PCA then change-scored."""
    if modality == "gait":
        return gait_change_scores(model.pca, obs.timestamps, obs.features, WINDOW_MOTION)
    return obs.features


def score_with_model(model, obs: ModalityObservations, modality: str) -> np.ndarray:
    return risk_scores(model, model_features(model, obs, modality))
