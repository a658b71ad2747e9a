"""Synthetic sessions with known dose-physiology coupling.

Physiology drifts as ``sign * gain * susceptibility * log(1 + N(t))`` where
N(t) counts non-artifact events at or above the subject's coupling threshold.
Drift is expressed in units of each feature's per-observation variability.
A designated case-study subject additionally steps sharply once N reaches a
configured count.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter

from .dosimetry import HIGH_GAIN_FULL_SCALE_PA, LOW_GAIN_FULL_SCALE_PA, PA_PER_PSI, BlastEvent, dbspl_to_pa
from .errors import RejectedInput
from .sigcore import SampledSignal

EVENT_RATE_HZ = 50_000.0
EVENT_SAMPLES = 2048
EVENT_PRETRIGGER = 256
SACCADE_BLINK_GAP_S = 0.6
EOG_RATE_HZ = 500.0
ACCEL_RATE_HZ = 100.0
GRAVITY = 9.81
BASE_EPOCH = 1_700_000_000.0
FEATURES = ("gait", "balance", "blink", "saccade")
DEFAULT_SIGNS = {"gait": -1.0, "balance": 1.0, "blink": -1.0, "saccade": -1.0}
# mean supra-trigger event counts per session in 5 dB bands starting at 140 dB; last band is >= 170
BAND_EDGES_DB = (140.0, 145.0, 150.0, 155.0, 160.0, 165.0, 170.0, 175.0)
BAND_MEANS = (10.0, 8.0, 7.0, 6.0, 6.0, 5.0, 1.0)


def friedlander(peak_pa: float, t_d_ms: float, rate_hz: float = EVENT_RATE_HZ,
                n_samples: int | None = None) -> SampledSignal:
    """p(t) = P (1 - t/t_d) exp(-t/t_d) on [0, 5 t_d], zero afterwards."""
    if not peak_pa > 0 or not t_d_ms > 0:
        raise RejectedInput("peak and t_d must be positive")
    td = t_d_ms * 1e-3
    n_wave = int(math.floor(5 * td * rate_hz)) + 1
    n = max(n_wave, n_samples or 0)
    t = np.arange(n) / rate_hz
    p = peak_pa * (1 - t / td) * np.exp(-t / td)
    p[n_wave:] = 0.0
    return SampledSignal(p, rate_hz)


@dataclass
class SubjectProfile:
    subject_id: str
    susceptibility: float = 1.0
    coupling_threshold_db: float = 160.0
    feature_signs: dict = field(default_factory=lambda: dict(DEFAULT_SIGNS))
    case_study: bool = False
    case_count: int = 11
    case_jump: float = 0.0
    blink_sigma_ms: float = 46.0
    step_period_s: float = 0.52

    def __post_init__(self):
        if self.susceptibility < 0:
            raise RejectedInput("susceptibility must be >= 0")


@dataclass
class SessionPlan:
    session_id: str
    subject_id: str
    start_time: float
    duration_s: float
    event_times: list
    event_levels_db: list
    event_td_ms: list
    artifact_times: list
    activity: list  # (start_s, stop_s, "gait" | "lm") relative to session start
    blink_period_s: float = 2.5
    blink_period_jitter_s: float = 1.5
    saccades: bool = False
    saccade_interval_s: float = 6.0
    eog_artifacts: list = field(default_factory=list)  # (start_s, length_s)
    noise: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if any(t < 0 or t > self.duration_s for t in list(self.event_times) + list(self.artifact_times)):
            raise RejectedInput("events must lie within the session")


@dataclass
class CohortConfig:
    n_subjects: int = 28
    sessions_per_subject: int = 3
    extra_session_subjects: int = 7
    seed: int = 0
    susceptibility_median: float = 1.0
    susceptibility_spread: float = 0.1
    coupling_threshold_db: float = 160.0
    case_subject: int | None = 12
    case_count: int = 11
    case_jump: float = 12.0
    case_susceptibility: float = 1.0
    case_duration_h: tuple = (2.2, 2.6)
    case_supra_events: tuple = (20, 24)
    duration_h: tuple = (1.15, 1.6)
    band_means: tuple = BAND_MEANS
    band_dispersion: float = 4.0
    drill_gap_min: tuple = (8.0, 15.0)
    drill_size_max: int = 3
    saccade_fraction: float = 0.4
    artifacts_per_session: float = 2.0
    eog_artifacts_per_hour: float = 2.0
    gains: dict = field(default_factory=lambda: {"gait": 1.5, "balance": 1.0, "blink": 0.8, "saccade": 0.5})
    feature_cv: dict = field(default_factory=lambda: {"gait": 0.03, "balance": 0.03, "blink": 0.03, "saccade": 0.03})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("case_duration_h", "case_supra_events", "duration_h", "band_means", "drill_gap_min"):
            if k in d and d[k] is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SessionData:
    plan: SessionPlan
    profile: SubjectProfile
    events: list
    veog: SampledSignal
    heog: SampledSignal | None
    accel: SampledSignal
    truth: dict

    @property
    def session_id(self):
        return self.plan.session_id

    @property
    def subject_id(self):
        return self.plan.subject_id


def _session_rng(master_seed: int, index: int):
    return np.random.default_rng([int(master_seed), int(index)])


def supra_count(plan: SessionPlan, threshold_db: float, t_rel) -> np.ndarray:
    """True count of events at or above ``threshold_db`` up to each relative time."""
    et = np.asarray(plan.event_times, dtype=float)
    lv = np.asarray(plan.event_levels_db, dtype=float)
    sel = np.sort(et[lv >= threshold_db])
    return np.searchsorted(sel, np.asarray(t_rel, dtype=float), side="right")


def drift_units(profile: SubjectProfile, plan: SessionPlan, t_rel) -> np.ndarray:
    """Unsigned drift in per-observation variability units at relative times."""
    n = supra_count(plan, profile.coupling_threshold_db, t_rel)
    d = profile.susceptibility * np.log1p(n)
    if profile.case_study and profile.case_jump:
        d = d + profile.case_jump * (n >= profile.case_count)
    return d


# --- blast events ------------------------------------------------------------

def _event_record(rng, level_db, td_ms, t_abs, artifact=False):
    peak = dbspl_to_pa(level_db)
    wave = friedlander(peak, td_ms, EVENT_RATE_HZ, EVENT_SAMPLES - EVENT_PRETRIGGER).samples
    wave = np.concatenate([np.zeros(EVENT_PRETRIGGER), wave])[:EVENT_SAMPLES]
    if artifact:
        # mechanical knock on one channel, unrelated noise on the other
        lo = peak * 0.3 * rng.standard_normal(EVENT_SAMPLES)
        hi = np.zeros(EVENT_SAMPLES)
        k = EVENT_PRETRIGGER + rng.integers(0, 200)
        hi[k:k + 40] = peak * np.exp(-np.arange(40) / 8.0) * np.sign(rng.standard_normal(40))
        hi += 5.0 * rng.standard_normal(EVENT_SAMPLES)
    else:
        lo = wave + 5.0 * rng.standard_normal(EVENT_SAMPLES)
        hi = wave + 0.3 * rng.standard_normal(EVENT_SAMPLES)
    lo = np.clip(lo, -LOW_GAIN_FULL_SCALE_PA, LOW_GAIN_FULL_SCALE_PA)
    hi = np.clip(hi, -HIGH_GAIN_FULL_SCALE_PA, HIGH_GAIN_FULL_SCALE_PA)
    return BlastEvent(t_abs, SampledSignal(lo, EVENT_RATE_HZ, t_abs), SampledSignal(hi, EVENT_RATE_HZ, t_abs))


def _friedlander_energy(peak_pa, td_ms):
    # energy of the clean sampled waveform; the instantaneous rise makes the
    # sampled sum exceed the continuous integral by about P^2 dt / 2
    w = friedlander(peak_pa, td_ms, EVENT_RATE_HZ).samples
    return float(np.sum(w * w) / EVENT_RATE_HZ)


# --- EOG ---------------------------------------------------------------------

def _clear_of(times, t, gap):
    """``t`` if no event in ``times`` lies within ``gap``, else the midpoint of its gap, or None."""
    j = int(np.searchsorted(times, t))
    prev = times[j - 1] if j > 0 else -np.inf
    nxt = times[j] if j < len(times) else np.inf
    if t - prev >= gap and nxt - t >= gap:
        return t
    if np.isfinite(prev) and np.isfinite(nxt) and nxt - prev >= 2 * gap:
        return float(0.5 * (prev + nxt))
    return None


def _gen_eog(rng, profile, plan, cv):
    n = int(round(plan.duration_s * EOG_RATE_HZ))
    noise = plan.noise.get("eog", 0.05)
    v = noise * rng.standard_normal(n)
    # slow wander, removed by the 0.1 Hz high-pass but present in the raw signal
    v += lfilter([0.002], [1, -0.998], rng.standard_normal(n)) * 0.5
    times = []
    t = rng.uniform(0.5, 2.0)
    while t < plan.duration_s - 1.0:
        times.append(t)
        t += plan.blink_period_s + rng.exponential(plan.blink_period_jitter_s)
    times = np.array(times)
    sign = profile.feature_signs.get("blink", -1.0)
    d = drift_units(profile, plan, times)
    sig = profile.blink_sigma_ms * 1e-3 * np.exp(cv["blink"] * (rng.standard_normal(len(times)) + sign * d * plan.noise.get("blink_gain", 0.5)))
    amp = rng.uniform(0.9, 1.1, len(times))
    half = int(0.5 * EOG_RATE_HZ)
    for tb, s, a in zip(times, sig, amp):
        c = int(round(tb * EOG_RATE_HZ))
        lo, hi = max(c - half, 0), min(c + half, n)
        tt = (np.arange(lo, hi) / EOG_RATE_HZ) - tb
        v[lo:hi] += a * np.exp(-0.5 * (tt / s) ** 2)
    h = None
    sacc_t, sacc_a = [], []
    if plan.saccades:
        h = noise * rng.standard_normal(n)
        h += lfilter([0.002], [1, -0.998], rng.standard_normal(n)) * 0.5
        s_sign = profile.feature_signs.get("saccade", -1.0)
        gaze = np.zeros(n)  # per-sample gaze increments, integrated below
        t = rng.uniform(1.0, 3.0)
        pos = 0.0
        while t < plan.duration_s - 2.0:
            eps = rng.standard_normal()
            # the detectors assume separated events: keep saccades clear of blink lobes
            ts = _clear_of(times, t, SACCADE_BLINK_GAP_S)
            if ts is not None and ts < plan.duration_s - 2.0:
                k = int(round(ts * EOG_RATE_HZ))
                dd = drift_units(profile, plan, [ts])[0]
                a = 1.5 * math.exp(cv["saccade"] * (eps + s_sign * dd * plan.noise.get("saccade_gain", 0.5)))
                # gaze jumps away and back so position stays bounded
                step = a if pos <= 0 else -a
                pos += step
                gaze[k:k + 15] += step / 15.0
                sacc_t.append(ts)
                sacc_a.append(a)
            t += plan.saccade_interval_s * rng.uniform(0.5, 1.5)
        gaze = np.cumsum(gaze)
        h += gaze
        v += 0.3 * gaze
    mask_true = np.zeros(n, dtype=bool)
    for start, length in plan.eog_artifacts:
        a, b = int(start * EOG_RATE_HZ), min(int((start + length) * EOG_RATE_HZ), n)
        v[a:b] += 10 * rng.standard_normal(b - a)
        if h is not None:
            h[a:b] += 10 * rng.standard_normal(b - a)
        mask_true[a:b] = True
    t0 = plan.start_time
    truth = {"blink_times": (times + t0).tolist(), "blink_sigma_ms": (sig * 1e3).tolist(),
             "saccade_times": (np.array(sacc_t) + t0).tolist(), "saccade_amplitudes": sacc_a}
    return (SampledSignal(v, EOG_RATE_HZ, t0), None if h is None else SampledSignal(h, EOG_RATE_HZ, t0), truth)


# --- accelerometry -------------------------------------------------------------

def _gait_segment(rng, n, period, noise_sd, t0_s):
    t = (np.arange(n) / ACCEL_RATE_HZ) + t0_s
    phase = 2 * np.pi * t / period + np.cumsum(rng.standard_normal(n)) * 0.01
    x = 0.8 * np.sin(phase) + 0.2 * np.sin(2 * phase + 0.4)
    y = 0.4 * np.sin(phase + 1.2) + 0.15 * np.sin(2 * phase)
    z = GRAVITY + 0.9 * np.cos(2 * phase) + 0.3 * np.cos(phase + 0.3)
    acc = np.stack([x, y, z], axis=1)
    return acc + noise_sd[:, None] * rng.standard_normal((n, 3))


def _lm_segment(rng, n, hf_fraction, total_var=0.004):
    # pink-ish sway plus white high-frequency tremor at matched total variance
    lowf = lfilter([1.0], [1, -0.97], rng.standard_normal((n, 3)), axis=0)
    lowf /= max(lowf.std(), 1e-12)
    white = rng.standard_normal((n, 3))
    hf = np.clip(hf_fraction, 0.0, 0.95)[:, None]
    mix = np.sqrt(1 - hf) * lowf + np.sqrt(hf) * white
    acc = np.sqrt(total_var) * mix
    acc[:, 2] += GRAVITY
    return acc


def _gen_accel(rng, profile, plan, cv):
    n = int(round(plan.duration_s * ACCEL_RATE_HZ))
    acc = np.zeros((n, 3))
    acc[:, 2] = GRAVITY
    g_sign = profile.feature_signs.get("gait", -1.0)
    b_sign = profile.feature_signs.get("balance", 1.0)
    g_gain = plan.noise.get("gait_gain", 0.5)
    b_gain = plan.noise.get("balance_gain", 0.5)
    frame = int(5 * ACCEL_RATE_HZ)
    for start, stop, kind in plan.activity:
        a, b = int(start * ACCEL_RATE_HZ), min(int(stop * ACCEL_RATE_HZ), n)
        if b <= a:
            continue
        m = b - a
        # per-frame variability of the modulated quantity, constant within a frame
        nf = (m + frame - 1) // frame
        t_mid = start + (np.arange(nf) + 0.5) * 5.0
        d = drift_units(profile, plan, t_mid)
        if kind == "gait":
            lvl = 0.15 * np.exp(cv["gait"] * (rng.standard_normal(nf) + g_sign * d * g_gain))
            acc[a:b] = _gait_segment(rng, m, profile.step_period_s, np.repeat(lvl, frame)[:m], start)
        else:
            hf = 0.3 * np.exp(cv["balance"] * (rng.standard_normal(nf) + b_sign * d * b_gain))
            acc[a:b] = _lm_segment(rng, m, np.repeat(hf, frame)[:m])
    return SampledSignal(acc, ACCEL_RATE_HZ, plan.start_time)


def _activity_schedule(rng, duration_s):
    out, t = [], 0.0
    kind = "lm" if rng.random() < 0.5 else "gait"
    while t < duration_s:
        length = rng.uniform(60, 240) if kind == "gait" else rng.uniform(90, 360)
        out.append((t, min(t + length, duration_s), kind))
        t += length
        kind = "lm" if kind == "gait" else "gait"
    return out


def gen_session(profile: SubjectProfile, plan: SessionPlan, cv=None) -> SessionData:
    """Synthesize blast events, EOG and accelerometry for one planned session."""
    cv = cv or CohortConfig().feature_cv
    rng = np.random.default_rng(plan.seed)
    events, truth_events = [], []
    t0 = plan.start_time
    marks = [(t, lv, td, False) for t, lv, td in zip(plan.event_times, plan.event_levels_db, plan.event_td_ms)]
    marks += [(t, float(rng.uniform(142, 165)), 2.0, True) for t in plan.artifact_times]
    for t, lv, td, art in sorted(marks, key=lambda m: m[0]):
        events.append(_event_record(rng, lv, td, t0 + t, artifact=art))
        peak = dbspl_to_pa(lv)
        truth_events.append({"time": t0 + t, "level_db": lv, "t_d_ms": td, "artifact": art,
                             "peak_psi": peak / PA_PER_PSI, "impulse_psi_ms": peak * td * math.exp(-1) / PA_PER_PSI,
                             "exposure_pa2s": _friedlander_energy(peak, td)})
    veog, heog, eog_truth = _gen_eog(rng, profile, plan, cv)
    accel = _gen_accel(rng, profile, plan, cv)
    grid = np.arange(0.0, plan.duration_s, 60.0)
    truth = {
        "session_id": plan.session_id,
        "subject_id": plan.subject_id,
        "susceptibility": profile.susceptibility,
        "case_study": profile.case_study,
        "events": truth_events,
        "supra_count_grid": {"t": (grid + t0).tolist(),
                             "count": supra_count(plan, profile.coupling_threshold_db, grid).tolist(),
                             "drift": drift_units(profile, plan, grid).tolist()},
        **eog_truth,
    }
    return SessionData(plan, profile, events, veog, heog, accel, truth)


# --- cohort planning -----------------------------------------------------------

def _drill_times(rng, n, duration_s, gap_min, drill_max, t_start=120.0):
    """Supra-threshold events in bursts of 1..drill_max separated by gap_min minutes."""
    out = []
    t = t_start + rng.uniform(0, 300)
    while len(out) < n:
        size = int(rng.integers(1, drill_max + 1))
        for j in range(min(size, n - len(out))):
            out.append(t + 20.0 * j + rng.uniform(0, 10))
        t += 60.0 * rng.uniform(*gap_min)
    out = np.array(out)
    if out.size and out[-1] > duration_s - 60:
        # compress the schedule to fit; keeps ordering and relative spacing
        out = t_start + (out - t_start) * (duration_s - 60 - t_start) / (out[-1] - t_start + 1e-9)
    return out.tolist()


def _band_counts(rng, means, dispersion):
    # independent negative-binomial counts per band
    out = []
    for m in means:
        p = dispersion / (dispersion + m)
        out.append(int(rng.negative_binomial(dispersion, p)))
    return out


def plan_session(rng, cfg: CohortConfig, profile: SubjectProfile, session_id: str, start_time: float,
                 seed: int, saccades: bool) -> SessionPlan:
    if profile.case_study:
        duration = 3600.0 * rng.uniform(*cfg.case_duration_h)
    else:
        duration = 3600.0 * rng.uniform(*cfg.duration_h)
    counts = _band_counts(rng, cfg.band_means, cfg.band_dispersion)
    thr = profile.coupling_threshold_db
    if profile.case_study:
        n_supra = int(rng.integers(cfg.case_supra_events[0], cfg.case_supra_events[1] + 1))
        supra_bands = [i for i, lo in enumerate(BAND_EDGES_DB[:-1]) if lo >= thr]
        share = np.array([cfg.band_means[i] for i in supra_bands])
        alloc = rng.multinomial(n_supra, share / share.sum())
        for i, c in zip(supra_bands, alloc):
            counts[i] = int(c)
    times, levels = [], []
    supra_levels, sub_levels = [], []
    for i, c in enumerate(counts):
        lo, hi = BAND_EDGES_DB[i], BAND_EDGES_DB[i + 1]
        # keep clear of band edges so measured levels land in the same band
        lv = rng.uniform(lo + 0.2, hi - 0.2, c).tolist()
        (supra_levels if lo >= thr else sub_levels).extend(lv)
    rng.shuffle(supra_levels)
    supra_t = _drill_times(rng, len(supra_levels), duration, cfg.drill_gap_min, cfg.drill_size_max)
    sub_t = np.sort(rng.uniform(60.0, duration - 60.0, len(sub_levels))).tolist()
    times = supra_t + sub_t
    levels = supra_levels + sub_levels
    order = np.argsort(times, kind="stable")
    times = [float(times[i]) for i in order]
    levels = [float(levels[i]) for i in order]
    td_session = float(np.exp(rng.uniform(np.log(1.0), np.log(4.0))))
    tds = (td_session * np.exp(0.1 * rng.standard_normal(len(times)))).tolist()
    n_art = int(rng.poisson(cfg.artifacts_per_session))
    art_t = np.sort(rng.uniform(30.0, duration - 30.0, n_art)).tolist()
    n_eog_art = int(rng.poisson(cfg.eog_artifacts_per_hour * duration / 3600.0))
    eog_art = [(float(rng.uniform(60.0, duration - 60.0)), float(rng.uniform(2.0, 8.0))) for _ in range(n_eog_art)]
    noise = {f"{k}_gain": float(v) for k, v in cfg.gains.items()}
    return SessionPlan(session_id, profile.subject_id, start_time, duration, times, levels, tds, art_t,
                       _activity_schedule(rng, duration), saccades=saccades, eog_artifacts=eog_art,
                       noise=noise, seed=seed)


def cohort_profiles(cfg: CohortConfig) -> list:
    rng = np.random.default_rng([cfg.seed, 7919])
    out = []
    for i in range(cfg.n_subjects):
        case = cfg.case_subject is not None and i == cfg.case_subject
        if cfg.susceptibility_median == 0:
            s = 0.0
        elif case:
            s = cfg.case_susceptibility
        else:
            s = float(cfg.susceptibility_median * np.exp(cfg.susceptibility_spread * rng.standard_normal()))
        out.append(SubjectProfile(
            subject_id=f"S{i + 1:02d}", susceptibility=s, coupling_threshold_db=cfg.coupling_threshold_db,
            case_study=case, case_count=cfg.case_count, case_jump=cfg.case_jump if case else 0.0,
            blink_sigma_ms=float(rng.uniform(42.0, 50.0)), step_period_s=float(rng.uniform(0.45, 0.6)),
        ))
    return out


def cohort_plans(cfg: CohortConfig, profiles=None, seed_offset: int = 0) -> list:
    """(profile, plan) pairs for every session of the cohort, in session order."""
    if cfg.n_subjects < 3:
        raise RejectedInput("a cohort needs at least 3 subjects")
    profiles = profiles or cohort_profiles(cfg)
    out, idx = [], 0
    for i, prof in enumerate(profiles):
        n_sess = cfg.sessions_per_subject + (1 if i < cfg.extra_session_subjects else 0)
        for j in range(n_sess):
            rng = _session_rng(cfg.seed + seed_offset, idx)
            sid = f"{prof.subject_id}-{j + 1:02d}"
            start = BASE_EPOCH + 86400.0 * (j * 30 + i)
            sacc = bool(rng.random() < cfg.saccade_fraction)
            plan = plan_session(rng, cfg, prof, sid, start, int(rng.integers(2 ** 31)), sacc)
            out.append((prof, plan))
            idx += 1
    return out


def gen_cohort(cfg: CohortConfig, seed_offset: int = 0):
    """Yield SessionData for every planned session (generated lazily to bound memory)."""
    for prof, plan in cohort_plans(cfg, seed_offset=seed_offset):
        yield gen_session(prof, plan, cfg.feature_cv)
