"""GMM staircase regression, leave-one-subject-out evaluation and score fusion."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import RejectedInput, RejectedTrainingSet

log = logging.getLogger(__name__)

STAIRCASE_PERCENTILES = (12.5, 25.0, 37.5, 50.0, 62.5, 75.0, 87.5)
N_COMPONENTS = 5
REGULARIZATION = 1e-6
MODEL_VERSION = "blastdose-staircase/1"


@dataclass
class Gmm:
    """Diagonal-covariance Gaussian mixture."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    regularization: float = REGULARIZATION
    log_likelihood_trace: list = field(default_factory=list, repr=False)

    @property
    def k(self):
        return len(self.weights)

    def component_logpdf(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        prec = 1.0 / self.variances
        mp = self.means * prec
        quad = (X * X) @ prec.T - 2.0 * X @ mp.T + (self.means * mp).sum(axis=1)[None]
        quad = np.maximum(quad, 0.0)
        return -0.5 * (quad + np.log(2 * np.pi * self.variances).sum(axis=1)[None])

    def logpdf(self, X):
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(self.component_logpdf(X) + logw[None], axis=1)

    def to_dict(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist(), "regularization": self.regularization}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["weights"], float), np.asarray(d["means"], float),
                   np.asarray(d["variances"], float), float(d["regularization"]))


def _lse_rows(a):
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def fit_gmm(X, k: int = N_COMPONENTS, seed: int = 0, regularization: float = REGULARIZATION,
            max_iter: int = 200, tol: float = 1e-6) -> Gmm:
    """EM fit of a diagonal GMM with k-means++ seeding.

    Variances are floored at ``regularization``. Iteration stops when the
    relative log-likelihood gain drops below ``tol`` or after ``max_iter``
    M-steps; the per-iteration total log-likelihood is kept in
    ``log_likelihood_trace``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < k * (d + 2):
        raise RejectedInput(f"need at least {k * (d + 2)} points for k={k}, d={d}; got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    labels = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    global_var = np.maximum(X.var(axis=0), regularization)
    means = np.empty((k, d))
    variances = np.empty((k, d))
    weights = np.empty(k)
    for j in range(k):
        pts = X[labels == j]
        weights[j] = max(len(pts), 1)
        means[j] = pts.mean(axis=0) if len(pts) else centers[j]
        variances[j] = np.maximum(pts.var(axis=0), regularization) if len(pts) > 1 else global_var
    weights /= weights.sum()
    gmm = Gmm(weights, means, variances, regularization)

    trace = []
    for _ in range(max_iter + 1):
        with np.errstate(divide="ignore"):
            logp = gmm.component_logpdf(X) + np.log(gmm.weights)[None]
        ll_i = _lse_rows(logp)
        ll = float(ll_i.sum())
        if trace and abs(ll - trace[-1]) <= tol * abs(trace[-1]):
            trace.append(ll)
            break
        trace.append(ll)
        if len(trace) > max_iter:
            break
        resp = np.exp(logp - ll_i[:, None])
        nk = resp.sum(axis=0)
        live = nk > 1e-10
        w = nk / n
        mu = gmm.means.copy()
        var = gmm.variances.copy()
        rl = resp[:, live]
        mu[live] = (rl.T @ X) / nk[live, None]
        ex2 = (rl.T @ (X * X)) / nk[live, None]
        var[live] = np.maximum(ex2 - mu[live] ** 2, regularization)
        gmm = Gmm(w, mu, var, regularization)
    gmm.log_likelihood_trace = trace
    return gmm


@dataclass
class Partition:
    percentile: float
    threshold: float
    higher: Gmm
    lower: Gmm


@dataclass
class StaircaseModel:
    partitions: list
    modality: str = ""
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    pca: object = None
    meta: dict = field(default_factory=dict)

    def standardize(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.feature_mean is None:
            return X
        return (X - self.feature_mean) / self.feature_scale

    def swapped(self) -> "StaircaseModel":
        parts = [Partition(p.percentile, p.threshold, p.lower, p.higher) for p in self.partitions]
        return StaircaseModel(parts, self.modality, self.feature_mean, self.feature_scale, self.pca, dict(self.meta))

    def to_dict(self):
        return {
            "version": MODEL_VERSION,
            "modality": self.modality,
            "feature_mean": None if self.feature_mean is None else self.feature_mean.tolist(),
            "feature_scale": None if self.feature_scale is None else self.feature_scale.tolist(),
            "pca": None if self.pca is None else self.pca.to_dict(),
            "meta": self.meta,
            "partitions": [{"percentile": p.percentile, "threshold": p.threshold,
                            "higher": p.higher.to_dict(), "lower": p.lower.to_dict()}
                           for p in self.partitions],
        }

    @classmethod
    def from_dict(cls, d):
        from .sigcore import PcaProjector
        if d.get("version") != MODEL_VERSION:
            raise RejectedInput(f"unsupported model version {d.get('version')!r}")
        parts = [Partition(p["percentile"], p["threshold"], Gmm.from_dict(p["higher"]), Gmm.from_dict(p["lower"]))
                 for p in d["partitions"]]
        arr = lambda v: None if v is None else np.asarray(v, float)
        pca = None if d.get("pca") is None else PcaProjector.from_dict(d["pca"])
        return cls(parts, d.get("modality", ""), arr(d.get("feature_mean")), arr(d.get("feature_scale")),
                   pca, d.get("meta", {}))


def train_staircase(X, labels, percentiles=STAIRCASE_PERCENTILES, k: int = N_COMPONENTS,
                    seed: int = 0, modality: str = "") -> StaircaseModel:
    """One higher/lower GMM pair per label-percentile threshold.

    Observations with label >= threshold form the higher class. When ties at
    the threshold would leave the lower class empty, the split falls back to
    label > threshold.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float)
    if len(y) != len(X):
        raise RejectedTrainingSet("features and labels differ in length")
    if len(np.unique(y)) <= len(percentiles):
        raise RejectedTrainingSet(f"labels must span more than {len(percentiles)} distinct values")
    parts = []
    for i, p in enumerate(percentiles):
        thr = float(np.percentile(y, p))
        hi = y >= thr
        if hi.all():
            hi = y > thr
        if hi.all() or not hi.any():
            raise RejectedTrainingSet(f"empty class at percentile {p}")
        try:
            g_hi = fit_gmm(X[hi], k, seed=seed + 2 * i)
            g_lo = fit_gmm(X[~hi], k, seed=seed + 2 * i + 1)
        except RejectedInput as exc:
            raise RejectedTrainingSet(f"percentile {p}: {exc}") from exc
        parts.append(Partition(p, thr, g_hi, g_lo))
    return StaircaseModel(parts, modality)


def risk_scores(model: StaircaseModel, X) -> np.ndarray:
    """Log ratio of summed ensemble likelihoods, higher minus lower."""
    Z = model.standardize(X)
    hi = np.stack([p.higher.logpdf(Z) for p in model.partitions])
    lo = np.stack([p.lower.logpdf(Z) for p in model.partitions])
    return logsumexp(hi, axis=0) - logsumexp(lo, axis=0)


def risk_score(model: StaircaseModel, x) -> float:
    x = np.asarray(x, dtype=float)
    expected = model.partitions[0].higher.means.shape[1]
    if x.reshape(-1).shape[0] != expected:
        raise RejectedInput(f"feature dimension {x.size} != model dimension {expected}")
    return float(risk_scores(model, x.reshape(1, -1))[0])


@dataclass
class SessionScore:
    session_id: str
    subject_id: str
    modality: str
    timestamps: np.ndarray
    scores: np.ndarray

    @property
    def max_score(self) -> float:
        return float(np.max(self.scores)) if len(self.scores) else float("nan")


@dataclass
class FoldAssignment:
    test_subject: str
    train_subjects: list
    test_sessions: list
    train_sessions: list


def make_folds(sessions) -> list:
    """One fold per subject; ``sessions`` is a list of objects with session_id/subject_id."""
    subjects = sorted({s.subject_id for s in sessions})
    if len(subjects) < 2:
        raise RejectedInput("leave-one-subject-out needs at least two subjects")
    folds = []
    for subj in subjects:
        test = [s.session_id for s in sessions if s.subject_id == subj]
        train = [s.session_id for s in sessions if s.subject_id != subj]
        folds.append(FoldAssignment(subj, [x for x in subjects if x != subj], test, train))
    return folds


def fold_seed(base_seed: int, fold_index: int, modality: str) -> int:
    return (base_seed * 1_000_003 + (fold_index ^ zlib.crc32(modality.encode()))) % (2 ** 31)


@dataclass
class ModalityObservations:
    """Feature observations of one session and modality with time-aligned exposure labels."""

    session_id: str
    subject_id: str
    timestamps: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    start_time: float | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        f = np.asarray(self.features, dtype=float)
        self.features = f[:, None] if f.ndim == 1 else f
        self.labels = np.asarray(self.labels, dtype=float)
        if not (len(self.timestamps) == len(self.features) == len(self.labels)):
            raise RejectedInput("timestamps, features and labels differ in length")

    @property
    def span_s(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) if len(self.timestamps) > 1 else 0.0


def gait_change_scores(projector, timestamps, raw, window_count: int = 30) -> np.ndarray:
    """Whitened PCA scores of raw TDE spectra, change-scored per component.

    Whitening by the training eigenvalues keeps every component's variance
    far above the 1/w(n) floor of the change score; minor components of the
    eigenspectra otherwise sit near 1e-3 and their z values collapse.
    """
    from .changescore import FeatureStream, score_stream
    from .sigcore import pca_project
    proj = np.atleast_2d(pca_project(projector, raw))
    if projector.eigenvalues is not None:
        ev = np.asarray(projector.eigenvalues)[:proj.shape[1]]
        proj = proj / np.sqrt(np.where(ev > 0, ev, 1.0))
    return score_stream(FeatureStream("gait", timestamps, proj), window_count).z_smoothed


class GaitPcaTransform:
    """Fold-local PCA of raw TDE eigenspectra followed by per-component change scores."""

    def __init__(self, n_components: int = 20, window_count: int = 30, max_fit_rows: int = 20000):
        self.n_components = n_components
        self.window_count = window_count
        self.max_fit_rows = max_fit_rows
        self.projector = None

    def fit(self, train_obs, rng):
        from .sigcore import pca_fit
        X = np.concatenate([o.features for o in train_obs])
        if len(X) > self.max_fit_rows:
            X = X[np.sort(rng.choice(len(X), self.max_fit_rows, replace=False))]
        self.projector = pca_fit(X, self.n_components)
        return self

    def __call__(self, obs):
        return gait_change_scores(self.projector, obs.timestamps, obs.features, self.window_count)


@dataclass
class LosoResult:
    modality: str
    scores: list
    folds: list
    excluded: list
    models: dict = field(default_factory=dict, repr=False)
    train_identities: dict = field(default_factory=dict, repr=False)

    def leakage(self) -> dict:
        """Per test subject, any training observation owned by that subject (should be empty)."""
        return {f.test_subject: sorted(s for s in self.train_identities.get(f.test_subject, ())
                                       if s[1] == f.test_subject)
                for f in self.folds}


def include_session(o: ModalityObservations, min_span_s: float = 3600.0, min_count: int = 0) -> bool:
    return len(o.timestamps) >= max(min_count, 1) and o.span_s >= min_span_s


def _finite_labels(y):
    y = np.asarray(y, dtype=float)
    bad = ~np.isfinite(y)
    if bad.any():
        fin = y[~bad]
        y = y.copy()
        y[bad] = fin.min() if fin.size else 0.0
    return y


def loso_evaluate(observations, modality: str, transform=None, seed: int = 0,
                  max_train: int = 3000, min_span_s: float = 3600.0, min_count: int = 0,
                  percentiles=STAIRCASE_PERCENTILES, k: int = N_COMPONENTS) -> LosoResult:
    """Leave-one-subject-out training and scoring of one modality.

    ``transform`` is an optional factory returning an object with
    ``fit(train_obs, rng)`` and ``__call__(obs) -> features``; it is fit on
    training folds only. Features are standardized with training statistics.
    """
    obs = [o for o in observations if len(o.timestamps)]
    kept = [o for o in obs if include_session(o, min_span_s, min_count)]
    excluded = sorted(o.session_id for o in obs if not include_session(o, min_span_s, min_count))
    if excluded:
        log.info("%s: %d sessions excluded by inclusion rule", modality, len(excluded))
    folds = make_folds(kept)
    by_id = {o.session_id: o for o in kept}
    scores, models, identities = [], {}, {}
    for fi, fold in enumerate(folds):
        rng = np.random.default_rng(fold_seed(seed, fi, modality))
        train = [by_id[s] for s in fold.train_sessions]
        test = [by_id[s] for s in fold.test_sessions]
        tf = None
        if transform is not None:
            tf = transform().fit(train, rng)
            feats = {o.session_id: tf(o) for o in train + test}
        else:
            feats = {o.session_id: o.features for o in train + test}
        X = np.concatenate([feats[o.session_id] for o in train])
        y = _finite_labels(np.concatenate([o.labels for o in train]))
        ident = [(o.session_id, o.subject_id, i) for o in train for i in range(len(o.timestamps))]
        if len(X) > max_train:
            pick = np.sort(rng.choice(len(X), max_train, replace=False))
            X, y = X[pick], y[pick]
            ident = [ident[i] for i in pick]
        identities[fold.test_subject] = {(s, subj) for s, subj, _ in ident}
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        model = train_staircase((X - mu) / sd, y, percentiles, k, seed=int(rng.integers(2 ** 31)),
                                modality=modality)
        model.feature_mean, model.feature_scale = mu, sd
        model.pca = getattr(tf, "projector", None)
        model.meta = {"test_subject": fold.test_subject, "fold": fi}
        models[fold.test_subject] = model
        for o in test:
            scores.append(SessionScore(o.session_id, o.subject_id, modality, o.timestamps.copy(),
                                       risk_scores(model, feats[o.session_id])))
    scores.sort(key=lambda s: s.session_id)
    return LosoResult(modality, scores, folds, excluded, models, identities)


def fuse_sessions(scores, rule: str = "series", min_modalities: int = 2, grid_s: float = 60.0,
                  modalities=None) -> list:
    """Average per-modality session scores into one fused score per session.

    ``rule="series"`` resamples every modality onto a common grid (last
    observation carried forward) and averages pointwise; ``rule="maxima"``
    averages the per-modality maxima. Sessions with fewer than
    ``min_modalities`` modalities are left out.
    """
    by_session: dict = {}
    for s in scores:
        if modalities is not None and s.modality not in modalities:
            continue
        if len(s.scores) == 0:
            continue
        by_session.setdefault(s.session_id, []).append(s)
    fused = []
    for sid in sorted(by_session):
        group = sorted(by_session[sid], key=lambda s: s.modality)
        if len(group) < min_modalities:
            continue
        name = "+".join(s.modality for s in group)
        if rule == "maxima":
            val = float(np.mean([s.max_score for s in group]))
            t_end = max(float(s.timestamps[-1]) for s in group)
            fused.append(SessionScore(sid, group[0].subject_id, name, np.array([t_end]), np.array([val])))
            continue
        if rule != "series":
            raise RejectedInput(f"unknown fusion rule {rule!r}")
        t0 = min(float(s.timestamps[0]) for s in group)
        t1 = max(float(s.timestamps[-1]) for s in group)
        grid = t0 + grid_s * np.arange(int(np.floor((t1 - t0) / grid_s)) + 1)
        total = np.zeros(len(grid))
        count = np.zeros(len(grid))
        for s in group:
            idx = np.searchsorted(s.timestamps, grid, side="right") - 1
            ok = idx >= 0
            total[ok] += s.scores[idx[ok]]
            count[ok] += 1
        keep = count > 0
        fused.append(SessionScore(sid, group[0].subject_id, name, grid[keep], total[keep] / count[keep]))
    return fused
