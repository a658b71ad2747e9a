import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blastdose.errors import RejectedInput, RejectedTrainingSet
from blastdose.riskmodel import (
    STAIRCASE_PERCENTILES, Gmm, ModalityObservations, Partition, SessionScore, StaircaseModel,
    fit_gmm, fuse_sessions, loso_evaluate, make_folds, risk_score, risk_scores, train_staircase,
)


def _unit_model():
    g_hi = Gmm(np.array([1.0]), np.array([[1.0]]), np.array([[1.0]]))
    g_lo = Gmm(np.array([1.0]), np.array([[-1.0]]), np.array([[1.0]]))
    return StaircaseModel([Partition(50.0, 0.0, g_hi, g_lo)])


class TestGmm:
    def test_too_few_points(self):
        with pytest.raises(RejectedInput):
            fit_gmm(np.zeros((10, 2)), k=5)

    def test_tight_cluster(self):
        rng = np.random.default_rng(0)
        sigma = 1e-2
        X = 3.0 + sigma * rng.standard_normal((400, 2))
        g = fit_gmm(X, 5, seed=1)
        assert np.all(np.abs(g.means - 3.0) < 3 * sigma)
        assert abs(g.weights.sum() - 1) < 1e-9
        assert np.all(g.variances >= g.regularization)

    def test_two_cluster_recovery(self):
        rng = np.random.default_rng(2)
        X = np.concatenate([rng.normal(10.0, 1.0, 500), rng.normal(30.0, 1.0, 500)])[:, None]
        g = fit_gmm(X, 2, seed=3)
        got = np.sort(g.means[:, 0])
        assert got == pytest.approx([10.0, 30.0], rel=0.05)

    def test_monotone_em(self):
        for s in range(20):
            rng = np.random.default_rng(s)
            X = rng.standard_normal((300, 3)) * rng.uniform(0.5, 3, 3) + rng.integers(0, 3, (300, 1))
            tr = np.array(fit_gmm(X, 5, seed=s).log_likelihood_trace)
            assert np.all(np.diff(tr) >= -1e-9 * np.abs(tr[:-1]))

    def test_deterministic(self):
        X = np.random.default_rng(5).standard_normal((200, 2))
        a, b = fit_gmm(X, 5, seed=9), fit_gmm(X, 5, seed=9)
        assert np.array_equal(a.means, b.means) and np.array_equal(a.variances, b.variances)


class TestStaircase:
    def test_thresholds_uniform(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(0, 1, 2000)
        X = rng.standard_normal((2000, 1))
        m = train_staircase(X, y, seed=0)
        assert [p.percentile for p in m.partitions] == list(STAIRCASE_PERCENTILES)
        thr = np.array([p.threshold for p in m.partitions])
        assert np.allclose(thr, np.array(STAIRCASE_PERCENTILES) / 100, atol=0.03)
        assert np.all(np.diff(thr) >= 0)

    def test_identical_features_score_zero(self):
        y = np.arange(300, dtype=float)
        X = np.ones((300, 2)) + 1e-9 * (np.arange(600).reshape(300, 2) % 2)
        m = train_staircase(X, y, seed=0)
        assert np.allclose(risk_scores(m, X[:10]), 0.0, atol=1e-6)

    def test_feature_tracks_label(self):
        rng = np.random.default_rng(1)
        y = rng.uniform(0, 10, 1500)
        X = (y + 0.3 * rng.standard_normal(1500))[:, None]
        m = train_staircase(X, y, seed=0)
        for p in m.partitions:
            hi = p.higher.weights @ p.higher.means[:, 0]
            lo = p.lower.weights @ p.lower.means[:, 0]
            assert hi > lo
        s = risk_scores(m, np.array([[1.0], [9.0]]))
        assert s[1] > s[0]

    def test_too_few_distinct_labels(self):
        with pytest.raises(RejectedTrainingSet):
            train_staircase(np.zeros((100, 1)), np.arange(100) % 7)

    def test_serialization_roundtrip(self):
        rng = np.random.default_rng(3)
        y = rng.uniform(0, 1, 600)
        m = train_staircase(rng.standard_normal((600, 2)), y)
        m.feature_mean, m.feature_scale = np.zeros(2), np.ones(2)
        back = StaircaseModel.from_dict(json.loads(json.dumps(m.to_dict())))
        x = rng.standard_normal((5, 2))
        assert np.array_equal(risk_scores(m, x), risk_scores(back, x))


class TestRiskScore:
    def test_closed_form(self):
        m = _unit_model()
        assert risk_score(m, [0.0]) == pytest.approx(0.0, abs=1e-9)
        assert risk_score(m, [1.0]) == pytest.approx(2.0, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(RejectedInput):
            risk_score(_unit_model(), [0.0, 1.0])

    def test_extreme_input_finite(self):
        assert math.isfinite(risk_score(_unit_model(), [1e6]))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_antisymmetry(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.uniform(0, 1, 400)
        X = rng.standard_normal((400, 2)) + y[:, None]
        m = train_staircase(X, y, seed=seed)
        x = rng.standard_normal((20, 2)) * 3
        assert np.array_equal(risk_scores(m.swapped(), x), -risk_scores(m, x))


def _cohort(n_subj=3, n_sess=2, n_obs=80, span=4000.0, rng=None):
    rng = rng or np.random.default_rng(0)
    out = []
    for s in range(n_subj):
        for j in range(n_sess):
            t = np.linspace(0, span, n_obs)
            y = np.cumsum(rng.integers(0, 3, n_obs)).astype(float)
            x = 0.05 * y + 0.2 * rng.standard_normal(n_obs)
            out.append(ModalityObservations(f"S{s}-{j}", f"S{s}", t, x, y))
    return out


class TestLoso:
    def test_folds_and_audit(self):
        res = loso_evaluate(_cohort(), "blink", seed=1)
        assert len(res.folds) == 3
        assert all(v == [] for v in res.leakage().values())
        for f in res.folds:
            assert all(subj != f.test_subject for _, subj in res.train_identities[f.test_subject])
        assert len(res.scores) == 6

    def test_single_subject_rejected(self):
        with pytest.raises(RejectedInput):
            make_folds(_cohort(n_subj=1))

    def test_short_sessions_excluded(self):
        obs = _cohort(n_subj=3)
        obs.append(ModalityObservations("short", "S0", np.linspace(0, 1000, 50), np.zeros(50), np.arange(50.0)))
        res = loso_evaluate(obs, "blink")
        assert res.excluded == ["short"]
        assert "short" not in {s.session_id for s in res.scores}

    def test_deterministic(self):
        a = loso_evaluate(_cohort(), "blink", seed=4)
        b = loso_evaluate(_cohort(), "blink", seed=4)
        for x, y in zip(a.scores, b.scores):
            assert np.array_equal(x.scores, y.scores)


def _score(sid, mod, t, v, subj="A"):
    return SessionScore(sid, subj, mod, np.asarray(t, float), np.asarray(v, float))


class TestFusion:
    def test_identical_series(self):
        t = np.arange(0, 600, 60.0)
        v = np.sin(t / 100)
        fused = fuse_sessions([_score("s", "a", t, v), _score("s", "b", t, v)])
        assert np.allclose(fused[0].scores, v)

    def test_opposite_series(self):
        t = np.arange(0, 600, 60.0)
        v = np.cos(t)
        fused = fuse_sessions([_score("s", "a", t, v), _score("s", "b", t, -v)])
        assert np.allclose(fused[0].scores, 0.0)

    def test_three_maxima(self):
        t = np.arange(0, 300, 60.0)
        ss = [_score("s", m, t, np.where(t == 120, h, 0.0)) for m, h in zip("abc", (1.0, 2.0, 3.0))]
        assert fuse_sessions(ss)[0].max_score == pytest.approx(2.0)
        assert fuse_sessions(ss, rule="maxima")[0].max_score == pytest.approx(2.0)

    def test_single_modality_excluded(self):
        assert fuse_sessions([_score("s", "a", [0.0], [1.0])]) == []

    def test_carry_forward(self):
        a = _score("s", "a", [0.0, 30.0, 90.0], [1.0, 2.0, 3.0])
        b = _score("s", "b", [0.0, 120.0], [0.0, 0.0])
        f = fuse_sessions([a, b])[0]
        assert np.allclose(f.timestamps, [0.0, 60.0, 120.0])
        assert np.allclose(f.scores, [0.5, 1.0, 1.5])
