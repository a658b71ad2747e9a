"""On-disk formats: event files, signal binaries with sidecars, CSV tables, manifests, SVG."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .changescore import FeatureStream, ScoreSeries
from .dosimetry import HIGH_GAIN_FULL_SCALE_PA, LOW_GAIN_FULL_SCALE_PA, BlastEvent
from .errors import MissingArtifact, RejectedInput
from .sigcore import SampledSignal



def _fmt(v):
    # shortest repr that round-trips exactly; epoch timestamps need all 17 digits
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(str(path))
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


def read_json(path, stage=None):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(str(path), stage)
    return json.loads(path.read_text())


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- signals -----------------------------------------------------------------

def write_signal(path, sig: SampledSignal, channels):
    """float32 little-endian samples plus a sidecar JSON (rate, channels, start epoch)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.asarray(sig.samples, dtype="<f4").tofile(path)
    write_json(path.with_suffix(".json"), {"rate_hz": sig.sample_rate_hz, "channels": list(channels),
                                           "start_epoch": sig.start_time, "n_samples": len(sig)})


def read_signal(path) -> tuple[SampledSignal, list]:
    path = Path(path)
    meta = read_json(path.with_suffix(".json"))
    if not path.exists():
        raise MissingArtifact(str(path))
    data = np.fromfile(path, dtype="<f4").astype(float)
    k = len(meta["channels"])
    if data.size != meta["n_samples"] * k:
        raise RejectedInput(f"{path}: sample count does not match sidecar")
    data = data.reshape(-1, k) if k > 1 else data
    return SampledSignal(data, float(meta["rate_hz"]), float(meta["start_epoch"])), meta["channels"]


def read_signal_csv(path, rate_hz=None, start_epoch=0.0) -> tuple[SampledSignal, list]:
    """CSV with a time_s column followed by one column per channel."""
    header, rows = read_csv(path)
    if not rows:
        raise RejectedInput(f"{path}: no samples")
    arr = np.array(rows, dtype=float)
    t = arr[:, 0]
    rate = rate_hz or (len(t) - 1) / (t[-1] - t[0])
    data = arr[:, 1:] if arr.shape[1] > 2 else arr[:, 1]
    return SampledSignal(data, float(rate), start_epoch + float(t[0])), header[1:]


def write_event_wav(path, e: BlastEvent):
    """2-channel float32 WAV (low gain, high gain) in pascals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.stack([e.low_gain_channel.samples, e.high_gain_channel.samples], axis=1).astype("<f4")
    rate = int(round(e.low_gain_channel.sample_rate_hz))
    # the stdlib wave module only writes PCM headers; write IEEE float (format 3) by hand
    raw = data.tobytes()
    fmt = (b"fmt " + (16).to_bytes(4, "little") + (3).to_bytes(2, "little") + (2).to_bytes(2, "little")
           + rate.to_bytes(4, "little") + (rate * 8).to_bytes(4, "little") + (8).to_bytes(2, "little")
           + (32).to_bytes(2, "little"))
    body = b"WAVE" + fmt + b"data" + len(raw).to_bytes(4, "little") + raw
    path.write_bytes(b"RIFF" + len(body).to_bytes(4, "little") + body)


def read_event_wav(path, event_time: float) -> BlastEvent:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(str(path))
    b = path.read_bytes()
    if b[:4] != b"RIFF" or b[8:12] != b"WAVE":
        raise RejectedInput(f"{path}: not a WAV file")
    pos, fmt, data = 12, None, None
    while pos + 8 <= len(b):
        cid, size = b[pos:pos + 4], int.from_bytes(b[pos + 4:pos + 8], "little")
        chunk = b[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = chunk
        elif cid == b"data":
            data = chunk
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise RejectedInput(f"{path}: missing fmt or data chunk")
    tag, nch, rate, bits = (int.from_bytes(fmt[0:2], "little"), int.from_bytes(fmt[2:4], "little"),
                            int.from_bytes(fmt[4:8], "little"), int.from_bytes(fmt[14:16], "little"))
    if nch != 2:
        raise RejectedInput(f"{path}: expected 2 channels, got {nch}")
    if tag == 3 and bits == 32:
        arr = np.frombuffer(data, dtype="<f4").astype(float)
    elif tag == 1 and bits == 16:
        # integer PCM is normalized to each channel's full scale: (low gain, high gain)
        fs = np.array([LOW_GAIN_FULL_SCALE_PA, HIGH_GAIN_FULL_SCALE_PA])
        arr = np.frombuffer(data, dtype="<i2").astype(float).reshape(-1, 2) / 32768.0 * fs
    else:
        raise RejectedInput(f"{path}: unsupported sample format {tag}/{bits}")
    arr = arr.reshape(-1, 2)
    return BlastEvent(event_time, SampledSignal(arr[:, 0], float(rate), event_time),
                      SampledSignal(arr[:, 1], float(rate), event_time))


def read_event_csv(path, event_time: float) -> BlastEvent:
    sig, _ = read_signal_csv(path)
    x = np.atleast_2d(sig.samples)
    if x.ndim != 2 or x.shape[1] != 2:
        raise RejectedInput(f"{path}: expected time_s, ch1_pa, ch2_pa")
    return BlastEvent(event_time, SampledSignal(x[:, 0], sig.sample_rate_hz, event_time),
                      SampledSignal(x[:, 1], sig.sample_rate_hz, event_time))


def read_session_events(session_dir) -> tuple[dict, list]:
    """Session manifest plus its events, in manifest order."""
    session_dir = Path(session_dir)
    man = read_json(session_dir / "manifest.json")
    events = []
    for name, t in zip(man["event_files"], man["event_times"]):
        p = session_dir / name
        events.append(read_event_wav(p, float(t)) if p.suffix.lower() == ".wav" else read_event_csv(p, float(t)))
    return man, events


# --- tables ------------------------------------------------------------------

def write_feature_stream(path, stream: FeatureStream, modality=None):
    v = np.asarray(stream.values)
    if v.ndim == 2:
        rows = ((t, modality or stream.name, j, x) for t, row in zip(stream.timestamps, v) for j, x in enumerate(row))
        write_csv(path, ["timestamp", "modality", "component_index", "value"], rows)
    else:
        write_csv(path, ["timestamp", "feature_name", "value"],
                  ((t, stream.name, x) for t, x in zip(stream.timestamps, v)))


def read_feature_stream(path) -> FeatureStream:
    header, rows = read_csv(path)
    if not rows:
        return FeatureStream(Path(path).stem, np.zeros(0), np.zeros(0))
    name = rows[0][1]
    if header[2] == "component_index":
        t = np.array([float(r[0]) for r in rows])
        j = np.array([int(r[2]) for r in rows])
        x = np.array([float(r[3]) for r in rows])
        k = int(j.max()) + 1
        return FeatureStream(name, t[::k], x.reshape(-1, k))
    return FeatureStream(name, [float(r[0]) for r in rows], [float(r[2]) for r in rows])


def write_score_series(path, s: ScoreSeries, modality: str):
    z = np.asarray(s.z_smoothed)
    cols = [s.raw_feature, s.running_mean, s.z_instant, s.z_smoothed]
    if z.ndim == 2:
        rows = ((t, f"{modality}[{j}]", *(c[i, j] for c in cols))
                for i, t in enumerate(s.timestamps) for j in range(z.shape[1]))
    else:
        rows = ((t, modality, *(c[i] for c in cols)) for i, t in enumerate(s.timestamps))
    write_csv(path, ["timestamp", "modality", "raw", "mean", "z", "z_smoothed"], rows)


def read_score_series(path) -> ScoreSeries:
    header, rows = read_csv(path)
    name = rows[0][1] if rows else Path(path).stem
    arr = np.array([[float(r[0])] + [float(x) for x in r[2:]] for r in rows]).reshape(-1, 5)
    return ScoreSeries(name, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])


def write_dose_series(path, series: dict):
    rows = []
    for (kind, thr), s in sorted(series.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        rows.extend((t, kind.value, thr, v) for t, v in zip(s.timestamps, s.cumulative_values))
    write_csv(path, ["timestamp", "metric", "threshold_db", "value"], rows)


def read_dose_series(path) -> dict:
    from .dosimetry import DoseSeries, MetricKind
    _, rows = read_csv(path)
    grouped: dict = {}
    for r in rows:
        grouped.setdefault((MetricKind(r[1]), float(r[2])), []).append((float(r[0]), float(r[3])))
    return {k: DoseSeries(k[0], k[1], np.array([a for a, _ in v]), np.array([b for _, b in v]))
            for k, v in grouped.items()}


# --- manifests and plots -------------------------------------------------------

def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=_json_default).encode()).hexdigest()


def write_manifest(out_dir, stage: str, cfg: dict, inputs=(), outputs=()):
    """Stage manifest: config hash, versions and content digests of inputs and outputs."""
    import scipy

    from . import __version__
    out_dir = Path(out_dir)
    rel = lambda p: os.path.relpath(p, out_dir.parent)  # noqa: E731
    write_json(out_dir / "manifest.json", {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "config": cfg,
        "versions": {"blastdose": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "inputs": {rel(p): file_digest(p) for p in sorted(map(str, inputs))},
        "outputs": {rel(p): file_digest(p) for p in sorted(map(str, outputs))},
    })


def require_stage(root, stage: str) -> Path:
    """Directory of a completed upstream stage, or MissingArtifact naming it."""
    d = Path(root) / stage
    if not (d / "manifest.json").exists():
        raise MissingArtifact(str(d / "manifest.json"), stage)
    return d


def svg_lines(path, series: dict, title="", xlabel="", ylabel="", width=640, height=400):
    """Minimal SVG line plot; ``series`` maps a label to (x, y) sequences."""
    pad = 50
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.zeros(1)
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[ok].min(), xs[ok].max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (ys[ok].min(), ys[ok].max()) if ok.any() else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    sx = lambda v: pad + (v - x0) / (x1 - x0) * (width - 2 * pad)  # noqa: E731
    sy = lambda v: height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)  # noqa: E731
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle">{title}</text>',
             f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
             f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" text-anchor="middle">{ylabel}</text>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for i, (label, (x, y)) in enumerate(series.items()):
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y) if np.isfinite(a) and np.isfinite(b))
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 5}" y="{pad + 15 * i}" fill="{c}" font-size="11">{label}</text>')
    parts.append("</svg>")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(parts) + "\n")
