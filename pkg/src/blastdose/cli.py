"""Command-line pipeline with artifacts staged on disk between subcommands."""
from __future__ import annotations

import functools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import click
import numpy as np

from . import io
from .analysis import (
    ablation, anam_trend, case_study_report, dose_response_sweep, feature_direction, metric_similarity,
    outer_fence,
)
from .changescore import score_stream
from .dosimetry import DEFAULT_THRESHOLDS_DB, METRICS, MetricKind, SessionDose, event_metrics, session_series, session_summary
from .eogfeat import extract_eog_features
from .errors import MissingArtifact, RejectedInput, RejectedTrainingSet, UndefinedResult
from .motionfeat import extract_session_features
from .pipeline import (
    FUSED_DEFAULT, MODALITIES, WINDOWS, SessionRecord, direction_stream, observations, score_with_model,
)
from .riskmodel import GaitPcaTransform, SessionScore, StaircaseModel, fuse_sessions, loso_evaluate
from .sigcore import SampledSignal
from .synth import CohortConfig, cohort_plans, gen_session

log = logging.getLogger("blastdose")

ENV_ROOT = "BLASTDOSE_OUT"
DEFAULT_ROOT = "blastdose-out"
STAGES = ("simulate", "dose", "features", "change", "train", "score", "fuse", "correlate", "report")


@dataclass
class RunConfig:
    thresholds: tuple = DEFAULT_THRESHOLDS_DB
    modalities: tuple = MODALITIES
    fused_modalities: tuple = FUSED_DEFAULT
    fusion: str = "series"
    min_modalities: int = 2
    seed: int = 0
    min_session_hours: float = 1.0
    min_frames: int = 25
    max_train: int = 3000
    label_metric: str = "BlastCount"
    label_threshold_db: float = 140.0
    target_metric: str = "BlastCount"
    target_threshold_db: float = 160.0
    crossing_level: float | None = None
    crossing_fence_k: float = 3.0
    cohort: dict = field(default_factory=dict)

    def validate(self):
        t = [float(x) for x in self.thresholds]
        if not t or t != sorted(t):
            raise RejectedInput("thresholds must be sorted ascending")
        self.thresholds = tuple(t)
        if self.fusion not in ("series", "maxima"):
            raise RejectedInput(f"unknown fusion rule {self.fusion!r}")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise RejectedInput(f"unknown modalities {sorted(unknown)}")
        self.modalities = tuple(self.modalities)
        self.fused_modalities = tuple(self.fused_modalities)
        MetricKind(self.label_metric)
        MetricKind(self.target_metric)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def load(cls, path=None, **overrides):
        d = {}
        if path:
            d = json.loads(Path(path).read_text())
            names = {f.name for f in fields(cls)}
            bad = set(d) - names
            if bad:
                raise RejectedInput(f"unknown config keys {sorted(bad)}")
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**d).validate()


# --- helpers -------------------------------------------------------------------

def _map(fn, items, jobs):
    """Ordered map; process-parallel when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


def _sessions(root) -> list:
    d = io.require_stage(root, "simulate") / "sessions"
    return sorted(p for p in d.iterdir() if (p / "manifest.json").exists())


def _totals_dict(dose: SessionDose):
    return [[k.value, t, v] for (k, t), v in sorted(dose.totals.items(), key=lambda kv: (kv[0][0].value, kv[0][1]))]


def _dose_from_json(d) -> SessionDose:
    totals = {(MetricKind(k), float(t)): float(v) for k, t, v in d["totals"]}
    return SessionDose(d["session_id"], d["subject_id"], totals, d["artifact_count"], d["discarded"],
                       d["start_time"], d["end_time"])


def _load_doses(root) -> dict:
    d = io.require_stage(root, "dose")
    return {p.stem: _dose_from_json(io.read_json(p)) for p in sorted(d.glob("*.json")) if p.name != "manifest.json"}


def _load_records(root, cfg: RunConfig, need_change=True) -> list:
    dose_dir = io.require_stage(root, "dose")
    feat_dir = io.require_stage(root, "features")
    change_dir = io.require_stage(root, "change") if need_change else None
    out = []
    for sid, dose in _load_doses(root).items():
        series = io.read_dose_series(dose_dir / f"{sid}.csv")
        streams = {p.stem: io.read_feature_stream(p) for p in sorted((feat_dir / sid).glob("*.csv"))}
        scores = {}
        if change_dir is not None:
            scores = {p.stem: io.read_score_series(p) for p in sorted((change_dir / sid).glob("*.csv"))}
        out.append(SessionRecord(sid, dose.subject_id, dose.start_time, dose.end_time, [], dose, series,
                                 streams, scores))
    return out


def _label(cfg):
    return (MetricKind(cfg.label_metric), float(cfg.label_threshold_db))


def _target(cfg):
    return (MetricKind(cfg.target_metric), float(cfg.target_threshold_db))


def _read_scores(path, modality) -> list:
    _, rows = io.read_csv(path)
    grouped: dict = {}
    for sid, subj, t, v in rows:
        grouped.setdefault((sid, subj), []).append((float(t), float(v)))
    return [SessionScore(sid, subj, modality, np.array([a for a, _ in v]), np.array([b for _, b in v]))
            for (sid, subj), v in sorted(grouped.items())]


def _write_scores(path, scores):
    io.write_csv(path, ["session_id", "subject_id", "timestamp", "score"],
                 ((s.session_id, s.subject_id, t, v) for s in scores for t, v in zip(s.timestamps, s.scores)))


def _outputs(d):
    return sorted(p for p in Path(d).rglob("*") if p.is_file() and p.name != "manifest.json")


def _inputs(*dirs):
    return [p for d in dirs for p in _outputs(d)]


# --- per-session workers (module level so they pickle) ---------------------------

def _simulate_one(args):
    prof, plan, cv, out = args
    data = gen_session(prof, plan, cv)
    d = Path(out) / plan.session_id
    files = []
    for i, e in enumerate(data.events):
        name = f"events/e{i:04d}.wav"
        io.write_event_wav(d / name, e)
        files.append(name)
    eog = data.veog.samples if data.heog is None else np.stack([data.veog.samples, data.heog.samples], axis=1)
    io.write_signal(d / "eog.f32", SampledSignal(eog, data.veog.sample_rate_hz, data.veog.start_time),
                    ["veog"] if data.heog is None else ["veog", "heog"])
    io.write_signal(d / "accel.f32", data.accel, ["ax", "ay", "az"])
    io.write_json(d / "truth.json", data.truth)
    io.write_json(d / "manifest.json", {
        "session_id": plan.session_id, "subject_id": plan.subject_id, "start_time": plan.start_time,
        "end_time": plan.start_time + plan.duration_s, "event_files": files,
        "event_times": [e.event_time for e in data.events], "eog": "eog.f32", "accel": "accel.f32",
    })
    return plan.session_id


def _dose_one(args):
    sdir, out, thresholds = args
    man, events = io.read_session_events(sdir)
    metrics = sorted((event_metrics(e) for e in events), key=lambda m: m.event_time)
    dose = session_summary(metrics, thresholds, man["session_id"], man["subject_id"],
                           start_time=man["start_time"], end_time=man["end_time"])
    io.write_dose_series(Path(out) / f"{dose.session_id}.csv", session_series(metrics, thresholds))
    io.write_json(Path(out) / f"{dose.session_id}.json", {
        "session_id": dose.session_id, "subject_id": dose.subject_id, "artifact_count": dose.artifact_count,
        "discarded": dose.discarded, "start_time": dose.start_time, "end_time": dose.end_time,
        "totals": _totals_dict(dose), "events": [m.to_dict() for m in metrics],
    })
    return dose.session_id


def _load_signal(path):
    return io.read_signal(path) if Path(path).suffix != ".csv" else io.read_signal_csv(path)


def _features_one(args):
    sdir, out = args
    sdir = Path(sdir)
    man = io.read_json(sdir / "manifest.json")
    eog, chans = _load_signal(sdir / man["eog"])
    x = np.asarray(eog.samples)
    veog = SampledSignal(x[:, 0] if x.ndim == 2 else x, eog.sample_rate_hz, eog.start_time)
    heog = SampledSignal(x[:, 1], eog.sample_rate_hz, eog.start_time) if x.ndim == 2 and x.shape[1] > 1 else None
    accel, _ = _load_signal(sdir / man["accel"])
    blink, sacc = extract_eog_features(veog, heog)
    motion = extract_session_features(accel)
    d = Path(out) / man["session_id"]
    io.write_feature_stream(d / "blink.csv", blink)
    if sacc is not None:
        io.write_feature_stream(d / "saccade.csv", sacc)
    io.write_feature_stream(d / "balance.csv", motion.balance)
    io.write_feature_stream(d / "gait.csv", motion.gait, "gait")
    io.write_json(d / "info.json", {"gait_frames_total": motion.gait_frames_total,
                                    "gait_frames_passed": motion.gait_frames_passed})
    return man["session_id"]


def _change_one(args):
    fdir, out = args
    fdir = Path(fdir)
    d = Path(out) / fdir.name
    for name in ("blink", "saccade", "balance"):
        p = fdir / f"{name}.csv"
        if p.exists():
            s = io.read_feature_stream(p)
            if len(s):
                io.write_score_series(d / f"{name}.csv", score_stream(s, WINDOWS[name]), name)
    g = io.read_feature_stream(fdir / "gait.csv")
    if len(g):
        io.write_score_series(d / "gait_direction.csv", score_stream(direction_stream(g), WINDOWS["gait"]), "gait")
    d.mkdir(parents=True, exist_ok=True)
    return fdir.name


# --- click wiring ----------------------------------------------------------------

def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except MissingArtifact as e:
            raise click.ClickException(str(e)) from e
        except (RejectedInput, RejectedTrainingSet, UndefinedResult) as e:
            raise click.ClickException(f"{type(e).__name__}: {e}") from e
    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="RunConfig JSON.")
@click.option("--out", "out_root", envvar=ENV_ROOT, default=DEFAULT_ROOT, show_default=True,
              type=click.Path(file_okay=False), help=f"Output root (env {ENV_ROOT}).")
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(1), help="Worker processes.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--threshold-db", "thresholds", type=float, multiple=True, help="Dose threshold (repeatable).")
@click.option("--fusion", type=click.Choice(["series", "maxima"]), default=None)
@click.option("-v", "--verbose", count=True)
@click.pass_context
def cli(ctx, config_path, out_root, jobs, seed, thresholds, fusion, verbose):
    """Blast dose and physiological change-score pipeline."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(config_path, seed=seed, thresholds=tuple(thresholds) or None, fusion=fusion)
    except (RejectedInput, TypeError, ValueError) as e:
        raise click.ClickException(f"invalid config: {e}") from e
    ctx.obj = {"cfg": cfg, "root": Path(out_root), "jobs": jobs}


def _ctx(ctx):
    return ctx.obj["cfg"], ctx.obj["root"], ctx.obj["jobs"]


@cli.command()
@click.pass_context
@_guard
def simulate(ctx):
    """Generate a synthetic cohort (events, EOG, accelerometry, truth ledger)."""
    cfg, root, jobs = _ctx(ctx)
    cc = CohortConfig.from_dict({**cfg.cohort, "seed": cfg.seed})
    out = root / "simulate"
    sess = out / "sessions"
    sess.mkdir(parents=True, exist_ok=True)
    pairs = cohort_plans(cc)
    ids = _map(_simulate_one, [(p, pl, cc.feature_cv, str(sess)) for p, pl in pairs], jobs)
    io.write_json(out / "cohort.json", cc.to_dict())
    io.write_manifest(out, "simulate", cfg.to_dict(), outputs=_outputs(out))
    click.echo(f"simulate: {len(ids)} sessions -> {sess}")


@cli.command()
@click.option("--input", "input_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Dataset root holding sessions/ (default: simulate output).")
@click.pass_context
@_guard
def dose(ctx, input_dir):
    """Event waveforms -> per-session dose series and totals."""
    cfg, root, jobs = _ctx(ctx)
    if input_dir is None:
        sessions = _sessions(root)
    else:
        sessions = sorted(p for p in (Path(input_dir) / "sessions").iterdir() if (p / "manifest.json").exists())
    if not sessions:
        raise MissingArtifact(str(Path(input_dir or root / "simulate") / "sessions"), "simulate")
    out = root / "dose"
    out.mkdir(parents=True, exist_ok=True)
    ids = _map(_dose_one, [(str(s), str(out), cfg.thresholds) for s in sessions], jobs)
    doses = _load_doses_dir(out)
    io.write_csv(out / "summary.csv", ["session_id", "subject_id", "artifact_count", "discarded", "metric",
                                       "threshold_db", "total"],
                 ((d.session_id, d.subject_id, d.artifact_count, int(d.discarded), k, t, v)
                  for d in doses.values() for k, t, v in _totals_dict(d)))
    io.write_manifest(out, "dose", cfg.to_dict(), inputs=[s / "manifest.json" for s in sessions],
                      outputs=_outputs(out))
    click.echo(f"dose: {len(ids)} sessions, {sum(d.discarded for d in doses.values())} discarded")


def _load_doses_dir(d):
    return {p.stem: _dose_from_json(io.read_json(p)) for p in sorted(Path(d).glob("*.json")) if p.name != "manifest.json"}


@cli.command()
@click.pass_context
@_guard
def features(ctx):
    """Raw EOG and accelerometry -> blink, saccade, gait and balance feature streams."""
    cfg, root, jobs = _ctx(ctx)
    sessions = _sessions(root)
    out = root / "features"
    out.mkdir(parents=True, exist_ok=True)
    ids = _map(_features_one, [(str(s), str(out)) for s in sessions], jobs)
    io.write_manifest(out, "features", cfg.to_dict(), inputs=[s / "manifest.json" for s in sessions],
                      outputs=_outputs(out))
    click.echo(f"features: {len(ids)} sessions")


@cli.command()
@click.pass_context
@_guard
def change(ctx):
    """Feature streams -> change-score series."""
    cfg, root, jobs = _ctx(ctx)
    fdir = io.require_stage(root, "features")
    out = root / "change"
    out.mkdir(parents=True, exist_ok=True)
    dirs = sorted(p for p in fdir.iterdir() if p.is_dir())
    _map(_change_one, [(str(d), str(out)) for d in dirs], jobs)
    io.write_manifest(out, "change", cfg.to_dict(), inputs=_inputs(fdir), outputs=_outputs(out))
    click.echo(f"change: {len(dirs)} sessions")


def _obs_for(records, cfg, modality):
    obs = observations(records, modality, _label(cfg))
    if modality in ("gait", "balance"):
        obs = [o for o in obs if len(o.timestamps) >= cfg.min_frames]
    return obs


@cli.command()
@click.pass_context
@_guard
def train(ctx):
    """Leave-one-subject-out staircase models per modality (plus the duration baseline)."""
    cfg, root, _ = _ctx(ctx)
    records = _load_records(root, cfg)
    out = root / "train"
    out.mkdir(parents=True, exist_ok=True)
    summary, skipped = {}, {}
    (out / "skipped.json").unlink(missing_ok=True)
    for m in list(cfg.modalities) + ["duration"]:
        obs = _obs_for(records, cfg, m)
        if len({o.subject_id for o in obs}) < 2:
            log.warning("%s: fewer than two subjects; no models", m)
            continue
        try:
            res = loso_evaluate(obs, m, transform=GaitPcaTransform if m == "gait" else None, seed=cfg.seed,
                                max_train=cfg.max_train, min_span_s=3600.0 * cfg.min_session_hours)
        except RejectedTrainingSet as e:
            # one starved modality should not sink the others
            log.warning("%s: no models: %s", m, e)
            skipped[m] = str(e)
            continue
        for subj, model in sorted(res.models.items()):
            io.write_json(out / "models" / m / f"{subj}.json", model.to_dict())
        leak = res.leakage()
        summary[m] = {"folds": [{"test_subject": f.test_subject, "test_sessions": f.test_sessions,
                                 "train_sessions": f.train_sessions} for f in res.folds],
                      "excluded": res.excluded, "leakage": {k: [list(x) for x in v] for k, v in leak.items()}}
    io.write_json(out / "folds.json", summary)
    if skipped:
        io.write_json(out / "skipped.json", skipped)
    io.write_manifest(out, "train", cfg.to_dict(), inputs=_inputs(root / "dose", root / "change"),
                      outputs=_outputs(out))
    click.echo("train: " + ", ".join(f"{m} ({len(v['folds'])} folds)" for m, v in summary.items()))


@cli.command()
@click.pass_context
@_guard
def score(ctx):
    """Score every held-out session with its fold's model."""
    cfg, root, _ = _ctx(ctx)
    tdir = io.require_stage(root, "train")
    folds = io.read_json(tdir / "folds.json", "train")
    records = _load_records(root, cfg)
    out = root / "score"
    out.mkdir(parents=True, exist_ok=True)
    for m, info in folds.items():
        by_id = {o.session_id: o for o in _obs_for(records, cfg, m)}
        scores = []
        for f in info["folds"]:
            model = StaircaseModel.from_dict(io.read_json(tdir / "models" / m / f"{f['test_subject']}.json", "train"))
            for sid in f["test_sessions"]:
                o = by_id[sid]
                scores.append(SessionScore(sid, o.subject_id, m, o.timestamps, score_with_model(model, o, m)))
        scores.sort(key=lambda s: s.session_id)
        _write_scores(out / f"{m}.csv", scores)
    io.write_manifest(out, "score", cfg.to_dict(), inputs=_inputs(tdir), outputs=_outputs(out))
    click.echo(f"score: {', '.join(sorted(folds))}")


def _load_scores(root, modalities=None) -> list:
    sdir = io.require_stage(root, "score")
    out = []
    for p in sorted(sdir.glob("*.csv")):
        if p.stem == "duration" or (modalities is not None and p.stem not in modalities):
            continue
        out.extend(_read_scores(p, p.stem))
    return out


@cli.command()
@click.pass_context
@_guard
def fuse(ctx):
    """Average modality scores into one fused score series per session."""
    cfg, root, _ = _ctx(ctx)
    scores = _load_scores(root, cfg.fused_modalities)
    fused = fuse_sessions(scores, rule=cfg.fusion, min_modalities=cfg.min_modalities,
                          modalities=set(cfg.fused_modalities))
    out = root / "fuse"
    _write_scores(out / "fused.csv", fused)
    io.write_csv(out / "maxima.csv", ["session_id", "subject_id", "max_score"],
                 ((s.session_id, s.subject_id, s.max_score) for s in fused))
    io.write_manifest(out, "fuse", cfg.to_dict(), inputs=_inputs(root / "score"), outputs=_outputs(out))
    click.echo(f"fuse: {len(fused)} sessions ({cfg.fusion})")


@cli.command()
@click.option("--anam", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV (subject_id, day, reaction_ms) for reaction-time trend tests.")
@click.pass_context
@_guard
def correlate(ctx, anam):
    """Dose-response sweep, metric similarity, ablation, feature directions and trends."""
    cfg, root, _ = _ctx(ctx)
    fdir = io.require_stage(root, "fuse")
    fused = _read_scores(fdir / "fused.csv", "fused")
    doses = _load_doses(root)
    sdir = io.require_stage(root, "score")
    duration = _read_scores(sdir / "duration.csv", "duration") if (sdir / "duration.csv").exists() else None
    out = root / "correlate"
    sw = dose_response_sweep(fused, doses, cfg.thresholds, duration, _target(cfg))
    io.write_csv(out / "sweep.csv", ["threshold_db", "metric", "rho", "p_value", "n"],
                 ((r["threshold_db"], r["metric"], r["rho"], r["p_value"], r["n"]) for r in sw.rows()))
    io.write_csv(out / "duration_baseline.csv", ["metric", "threshold_db", "rho"],
                 [(cfg.target_metric, cfg.target_threshold_db, sw.duration_baseline_rho)])
    rows = []
    for t in cfg.thresholds:
        try:
            tab = metric_similarity(doses, t)
        except (UndefinedResult, RejectedInput) as e:
            log.warning("similarity at %s dB undefined: %s", t, e)
            continue
        rows.extend((t, a.value, b.value, tab[i, j]) for i, a in enumerate(METRICS) for j, b in enumerate(METRICS))
    io.write_csv(out / "similarity.csv", ["threshold_db", "metric_a", "metric_b", "rho"], rows)
    ab = ablation(_load_scores(root), doses, target=_target(cfg), rule=cfg.fusion)
    io.write_csv(out / "ablation.csv", ["configuration", "rho", "p_value", "n"],
                 ((k, *(("unavailable", "", "") if v is None else (v.rho, v.p_value, v.n))) for k, v in ab.items()))
    records = _load_records(root, cfg)
    pairs = {}
    for name, key in (("gait_rank10_scale1", "gait_direction"), ("path_length", "balance"),
                      ("blink_duration", "blink"), ("saccade_amplitude", "saccade")):
        items = [(r.scores[key].z_smoothed, r.dose_at(r.scores[key].timestamps, *_direction_target(cfg)))
                 for r in records if key in r.scores and not r.discarded]
        if items:
            pairs[name] = items
    dirs = {}
    for name, items in pairs.items():
        try:
            dirs[name] = feature_direction({name: items})[name]
        except (UndefinedResult, RejectedInput) as e:
            log.warning("direction %s undefined: %s", name, e)
    io.write_csv(out / "direction.csv", ["feature", "rho", "p_value", "n"],
                 ((k, v.rho, v.p_value, v.n) for k, v in dirs.items()))
    if anam:
        _, arows = io.read_csv(anam)
        by: dict = {}
        for subj, day, rt in arows:
            by.setdefault(subj, []).append((float(day), float(rt)))
        trows = []
        for subj, pts in sorted(by.items()):
            try:
                tr = anam_trend([a for a, _ in pts], [b for _, b in pts])
                trows.append((subj, tr.slope, tr.p_value, int(tr.flagged)))
            except RejectedInput as e:
                log.warning("trend for %s skipped: %s", subj, e)
        io.write_csv(out / "trend.csv", ["subject_id", "slope_ms_per_day", "p_value", "flagged"], trows)
    io.write_manifest(out, "correlate", cfg.to_dict(), inputs=_inputs(fdir, root / "dose"), outputs=_outputs(out))
    best = np.nanargmax(sw.rho[0]) if np.isfinite(sw.rho[0]).any() else None
    click.echo(f"correlate: n={sw.n}" + (f", BlastCount peak at {sw.thresholds[best]:g} dB (rho={sw.rho[0, best]:.2f})"
                                        if best is not None else ""))


def _direction_target(cfg):
    return (MetricKind.BLAST_COUNT, float(cfg.target_threshold_db))


def crossing_levels(fused, cfg) -> dict:
    """Per-subject detection level: fixed, or an outer fence over the other subjects' session maxima."""
    subjects = sorted({s.subject_id for s in fused})
    if cfg.crossing_level is not None:
        return {s: float(cfg.crossing_level) for s in subjects}
    out = {}
    for subj in subjects:
        others = [s.max_score for s in fused if s.subject_id != subj]
        out[subj] = outer_fence(others, cfg.crossing_fence_k) if len(others) >= 4 else float("inf")
    return out


@cli.command()
@click.pass_context
@_guard
def report(ctx):
    """CSV and SVG analogs of the dose-response figure, crossing plot and tables."""
    cfg, root, _ = _ctx(ctx)
    cdir = io.require_stage(root, "correlate")
    fdir = io.require_stage(root, "fuse")
    dose_dir = io.require_stage(root, "dose")
    out = root / "report"
    _, sweep = io.read_csv(cdir / "sweep.csv")
    io.write_csv(out / "fig4.csv", ["threshold_db", "metric", "rho"], ((r[0], r[1], r[2]) for r in sweep))
    curves: dict = {}
    for t, m, rho, *_ in sweep:
        curves.setdefault(m, ([], []))
        curves[m][0].append(float(t))
        curves[m][1].append(float(rho))
    io.svg_lines(out / "fig4.svg", curves, "Dose-response correlation vs threshold", "threshold (dB SPL)", "rho")
    for src, dst in (("similarity.csv", "table1.csv"), ("ablation.csv", "table2.csv"), ("direction.csv", "table3.csv")):
        header, rows = io.read_csv(cdir / src)
        io.write_csv(out / dst, header, rows)
    fused = _read_scores(fdir / "fused.csv", "fused")
    levels = crossing_levels(fused, cfg)
    series = {s.session_id: io.read_dose_series(dose_dir / f"{s.session_id}.csv") for s in fused}
    rows, plot = [], {}
    thr = float(cfg.target_threshold_db)
    starts = {sid: d.start_time for sid, d in _load_doses(root).items()}
    for s in fused:
        r = case_study_report([s], series, levels[s.subject_id], thresholds=(thr,), start_times=starts)[0]
        cells = [r.doses.get((m.value, thr), "") for m in METRICS]
        rows.append((r.session_id, r.subject_id, r.level, int(r.crossed), "" if r.crossing_time is None else r.crossing_time,
                     "" if r.elapsed_h is None else r.elapsed_h, *cells))
        if r.crossed:
            x = series[s.session_id][(MetricKind.BLAST_COUNT, thr)].value_at(s.timestamps)
            plot[s.session_id] = (x, s.scores)
    io.write_csv(out / "fig3_crossings.csv", ["session_id", "subject_id", "level", "crossed", "crossing_time",
                                              "elapsed_h", *[f"{m.value}@{thr:g}" for m in METRICS]], rows)
    io.svg_lines(out / "fig3.svg", plot, "Fused score vs cumulative count (crossing sessions)",
                 f"BlastCount >= {thr:g} dB", "fused score")
    io.write_manifest(out, "report", cfg.to_dict(), inputs=_inputs(cdir, fdir), outputs=_outputs(out))
    click.echo(f"report: {sum(r[3] for r in rows)} crossing sessions -> {out}")


@cli.command("run")
@click.option("--from", "start", type=click.Choice(STAGES), default="simulate", show_default=True)
@click.pass_context
def run_all(ctx, start):
    """Run every stage from ``--from`` onwards."""
    for name in STAGES[STAGES.index(start):]:
        ctx.invoke(cli.commands[name])


def main():
    cli(prog_name="blastdose")


if __name__ == "__main__":
    main()
