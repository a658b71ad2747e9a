import json

import numpy as np
import pytest

from blastdose import io
from blastdose.changescore import FeatureStream, score_stream
from blastdose.dosimetry import BlastEvent, MetricKind, event_metrics, session_series
from blastdose.errors import MissingArtifact, RejectedInput
from blastdose.sigcore import SampledSignal
from blastdose.synth import friedlander


def test_csv_floats_round_trip_exactly(tmp_path):
    vals = [1.7e9 + 0.123456789, 1 / 3, -0.0, float("inf"), float("-inf")]
    io.write_csv(tmp_path / "a.csv", ["x"], [[v] for v in vals])
    _, rows = io.read_csv(tmp_path / "a.csv")
    assert [float(r[0]) for r in rows] == vals


def test_missing_csv(tmp_path):
    with pytest.raises(MissingArtifact):
        io.read_csv(tmp_path / "nope.csv")


def test_missing_artifact_names_stage(tmp_path):
    with pytest.raises(MissingArtifact, match="blastdose fuse"):
        io.require_stage(tmp_path, "fuse")


def test_signal_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal((500, 3)).astype(np.float32).astype(float)
    io.write_signal(tmp_path / "s.f32", SampledSignal(x, 100.0, 1.7e9 + 0.5), ["ax", "ay", "az"])
    sig, chans = io.read_signal(tmp_path / "s.f32")
    assert chans == ["ax", "ay", "az"]
    assert np.array_equal(sig.samples, x)
    assert sig.sample_rate_hz == 100.0 and sig.start_time == 1.7e9 + 0.5


def test_signal_sidecar_mismatch(tmp_path):
    io.write_signal(tmp_path / "s.f32", SampledSignal(np.zeros(10), 10.0), ["v"])
    meta = json.loads((tmp_path / "s.json").read_text())
    meta["n_samples"] = 11
    (tmp_path / "s.json").write_text(json.dumps(meta))
    with pytest.raises(RejectedInput):
        io.read_signal(tmp_path / "s.f32")


def test_signal_csv(tmp_path):
    t = np.arange(5) / 500.0
    io.write_csv(tmp_path / "e.csv", ["time_s", "veog_mv", "heog_mv"], zip(t, t * 2, t * 3))
    sig, chans = io.read_signal_csv(tmp_path / "e.csv")
    assert chans == ["veog_mv", "heog_mv"]
    assert sig.sample_rate_hz == pytest.approx(500.0)
    assert np.allclose(sig.samples[:, 1], t * 3)


def _event(t=100.0):
    hi = friedlander(800.0, 2.0).samples
    lo = hi + np.random.default_rng(1).normal(0, 5.0, len(hi))
    return BlastEvent(t, SampledSignal(np.clip(lo, -35566, 35566), 50_000.0, t),
                      SampledSignal(np.clip(hi, -2000, 2000), 50_000.0, t))


def test_event_wav_preserves_metrics(tmp_path):
    e = _event()
    io.write_event_wav(tmp_path / "e.wav", e)
    back = io.read_event_wav(tmp_path / "e.wav", e.event_time)
    a, b = event_metrics(e), event_metrics(back)
    assert b.peak_level_db_spl == pytest.approx(a.peak_level_db_spl, abs=1e-5)
    assert b.positive_impulse_psi_ms == pytest.approx(a.positive_impulse_psi_ms, rel=1e-5)
    assert b.is_artifact == a.is_artifact


def test_event_wav_pcm16_scaled_to_pascals(tmp_path):
    n = 64
    pcm = np.zeros((n, 2), dtype="<i2")
    pcm[0] = [16384, 16384]
    raw = pcm.tobytes()
    rate = 50_000
    fmt = (b"fmt " + (16).to_bytes(4, "little") + (1).to_bytes(2, "little") + (2).to_bytes(2, "little")
           + rate.to_bytes(4, "little") + (rate * 4).to_bytes(4, "little") + (4).to_bytes(2, "little")
           + (16).to_bytes(2, "little"))
    body = b"WAVE" + fmt + b"data" + len(raw).to_bytes(4, "little") + raw
    (tmp_path / "p.wav").write_bytes(b"RIFF" + len(body).to_bytes(4, "little") + body)
    e = io.read_event_wav(tmp_path / "p.wav", 0.0)
    assert e.low_gain_channel.samples[0] == pytest.approx(35566 / 2)
    assert e.high_gain_channel.samples[0] == pytest.approx(1000.0)


def test_not_a_wav(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"hello world, not riff")
    with pytest.raises(RejectedInput):
        io.read_event_wav(tmp_path / "x.wav", 0.0)


def test_session_events_in_manifest_order(tmp_path):
    for i, t in enumerate((5.0, 9.0)):
        io.write_event_wav(tmp_path / f"events/e{i}.wav", _event(t))
    io.write_json(tmp_path / "manifest.json", {"event_files": ["events/e0.wav", "events/e1.wav"],
                                               "event_times": [5.0, 9.0]})
    _, events = io.read_session_events(tmp_path)
    assert [e.event_time for e in events] == [5.0, 9.0]


@pytest.mark.parametrize("shape", [(40,), (40, 3)])
def test_feature_stream_round_trip(tmp_path, shape):
    rng = np.random.default_rng(2)
    s = FeatureStream("f", 1.7e9 + np.cumsum(rng.uniform(1, 5, 40)), rng.standard_normal(shape))
    io.write_feature_stream(tmp_path / "f.csv", s, "gait")
    back = io.read_feature_stream(tmp_path / "f.csv")
    assert np.array_equal(back.timestamps, s.timestamps)
    assert np.array_equal(back.values, s.values)


def test_empty_feature_stream(tmp_path):
    io.write_feature_stream(tmp_path / "f.csv", FeatureStream("f", [], []))
    assert len(io.read_feature_stream(tmp_path / "f.csv")) == 0


def test_score_series_round_trip(tmp_path):
    s = score_stream(FeatureStream("b", np.arange(50.0), np.random.default_rng(3).standard_normal(50)), 30)
    io.write_score_series(tmp_path / "s.csv", s, "blink")
    back = io.read_score_series(tmp_path / "s.csv")
    for f in ("timestamps", "raw_feature", "running_mean", "z_instant", "z_smoothed"):
        assert np.array_equal(getattr(back, f), getattr(s, f))


def test_dose_series_round_trip(tmp_path):
    metrics = [event_metrics(_event(t)) for t in (10.0, 20.0)]
    series = session_series(metrics, (140.0, 160.0))
    io.write_dose_series(tmp_path / "d.csv", series)
    back = io.read_dose_series(tmp_path / "d.csv")
    assert set(back) == set(series)
    k = (MetricKind.BLAST_COUNT, 140.0)
    assert np.array_equal(back[k].cumulative_values, series[k].cumulative_values)


def test_manifest_digests(tmp_path):
    out = tmp_path / "stage"
    io.write_csv(out / "a.csv", ["x"], [[1]])
    io.write_manifest(out, "stage", {"b": 1, "a": 2}, outputs=[out / "a.csv"])
    m = io.read_json(out / "manifest.json")
    assert m["config_hash"] == io.config_hash({"a": 2, "b": 1})
    assert m["outputs"] == {"stage/a.csv": io.file_digest(out / "a.csv")}
    assert io.require_stage(tmp_path, "stage") == out


def test_svg_is_wellformed(tmp_path):
    import xml.etree.ElementTree as ET
    io.svg_lines(tmp_path / "p.svg", {"a": ([0, 1, 2], [0, 1, 4]), "b": ([0, 2], [float("nan"), 1])}, "t")
    root = ET.parse(tmp_path / "p.svg").getroot()
    assert root.tag.endswith("svg")
