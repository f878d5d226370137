"""Cosine scoring and verification metrics.

Threshold semantics throughout: a trial is accepted iff ``score >= t``.
Operating points are taken at every distinct score plus ``t = +inf``
(accept nothing), so the sweep runs from (P_fa, P_miss) = (1, 0) to (0, 1).
"""
from dataclasses import dataclass

import numpy as np

from .geometry import cosine, normalize_rows


@dataclass(eq=False)
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray | None  # bool, True = target; None when unknown
    pairs: list[tuple[str, str]] | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != self.scores.shape:
                raise ValueError("scores and labels differ in length")
        if self.pairs is not None and len(self.pairs) != len(self.scores):
            raise ValueError("scores and pairs differ in length")

    def __len__(self):
        return len(self.scores)

    def __eq__(self, other):
        if not isinstance(other, ScoreSet):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            np.array_equal(self.scores, other.scores)
            and same_labels
            and self.pairs == other.pairs
        )


@dataclass(frozen=True)
class DcfConfig:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_target < 1.0:
            raise ValueError(f"p_target must be in (0, 1), got {self.p_target}")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")


@dataclass(frozen=True)
class DetCurve:
    thresholds: np.ndarray  # increasing; last entry is +inf
    p_fa: np.ndarray
    p_miss: np.ndarray

    def __iter__(self):
        return iter(zip(self.p_fa.tolist(), self.p_miss.tolist()))

    def __len__(self):
        return len(self.thresholds)


def score_trials(embeddings, trials):
    """Cosine score per trial, in trial order."""
    values = []
    for t in trials:
        for u in (t.utt_a, t.utt_b):
            if u not in embeddings:
                raise KeyError(f"no embedding for utterance {u!r}")
        values.append(cosine(embeddings[t.utt_a], embeddings[t.utt_b]))
    return ScoreSet(
        np.array(values, dtype=np.float64),
        np.array([t.target for t in trials], dtype=bool),
        [(t.utt_a, t.utt_b) for t in trials],
    )


def _split(s):
    if s.labels is None:
        raise ValueError("score set has no labels")
    tar = np.sort(s.scores[s.labels])
    non = np.sort(s.scores[~s.labels])
    if tar.size == 0 or non.size == 0:
        raise ValueError("need at least one target and one nontarget score")
    return tar, non


def det_points(s):
    tar, non = _split(s)
    thresholds = np.append(np.unique(s.scores), np.inf)
    p_miss = np.searchsorted(tar, thresholds, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    return DetCurve(thresholds, p_fa, p_miss)


def eer(s):
    """Equal error rate, interpolating linearly between the two DET points
    that bracket the P_miss = P_fa crossing."""
    det = det_points(s)
    return _crossing(det.p_fa, det.p_miss)


def _crossing(p_fa, p_miss):
    diff = p_miss - p_fa
    k = int(np.argmax(diff >= 0.0))  # diff runs from -1 up to +1
    if diff[k] == 0.0:
        return float(p_miss[k])
    fa0, fa1, mi0, mi1 = p_fa[k - 1], p_fa[k], p_miss[k - 1], p_miss[k]
    t = (fa0 - mi0) / ((mi1 - mi0) - (fa1 - fa0))
    return float(mi0 + t * (mi1 - mi0))


def min_dcf(s, cfg=DcfConfig()):
    """Minimum (unnormalized) detection cost over all thresholds."""
    det = det_points(s)
    cost = cfg.c_miss * det.p_miss * cfg.p_target + cfg.c_fa * det.p_fa * (1.0 - cfg.p_target)
    return float(cost.min())


def between_class_variance(embeddings, class_labels):
    """Between-class angular variance of the per-class mean embeddings,
    weighted by class size."""
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(class_labels)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    C = classes.size
    if C < 2:
        raise ValueError("need at least 2 classes")
    means = np.zeros((C, X.shape[1]))
    np.add.at(means, inverse, X)
    means /= counts[:, None]
    unit, _ = normalize_rows(means)
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    off = 1.0 - cos
    np.fill_diagonal(off, 0.0)
    return float(np.sum(counts * off.sum(axis=1)) / (X.shape[0] * (C - 1)))


def nontarget_stats(s):
    """Mean and unbiased std of the nontarget scores."""
    if s.labels is None:
        raise ValueError("score set has no labels")
    non = s.scores[~s.labels]
    if non.size < 2:
        raise ValueError("need at least 2 nontarget scores")
    return float(non.mean()), float(non.std(ddof=1))


def format_report(eer_value, mindcf, sb, nt_mean, nt_std):
    """One-line metric report; ``sb=None`` leaves the S_b field out."""
    sb_field = "" if sb is None else f" sb={sb:.6g}"
    return (
        f"eer={eer_value:.6g} mindcf={mindcf:.6g}{sb_field} "
        f"nontarget_mean={nt_mean:.6g} nontarget_std={nt_std:.6g}"
    )


def format_det(det):
    return "".join(
        f"{t!r} {fa!r} {mi!r}\n"
        for t, fa, mi in zip(det.thresholds.tolist(), det.p_fa.tolist(), det.p_miss.tolist())
    )
