"""ROC, AUC and EER for bonafide-vs-fake scores, plus the text report.

Bonafide is the positive class; a higher score means "more bonafide".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from phonograph.phoneme import BONAFIDE, FAKE


def _as_binary(label):
    if label in (BONAFIDE, 1, True):
        return 1
    if label in (FAKE, 0, False):
        return 0
    raise ValueError(f"unknown class label {label!r}")


@dataclass
class ScoreSet:
    entries: list  # (sample_id, score, label)

    def __post_init__(self):
        self.entries = [(str(i), float(s), _as_binary(lab)) for i, s, lab in self.entries]
        if not all(np.isfinite(s) for _, s, _ in self.entries):
            raise ValueError("scores must be finite")

    @classmethod
    def from_arrays(cls, scores, labels, ids=None):
        ids = ids if ids is not None else range(len(scores))
        return cls(list(zip(ids, scores, labels)))

    @property
    def scores(self):
        return np.array([s for _, s, _ in self.entries])

    @property
    def labels(self):
        return np.array([y for _, _, y in self.entries], dtype=np.int64)

    def __len__(self):
        return len(self.entries)


def _arrays(scores):
    if not isinstance(scores, ScoreSet):
        scores = ScoreSet(scores)
    s, y = scores.scores, scores.labels
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC metrics need at least one bonafide and one fake sample")
    return s, y, n_pos, n_neg


def roc(scores):
    """Operating points (threshold, FPR, TPR) for "score >= threshold".

    Thresholds run from +inf (nothing accepted) down through every
    distinct score, so FPR and TPR are non-decreasing along the list.
    """
    s, y, n_pos, n_neg = _arrays(scores)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    points = [(np.inf, 0.0, 0.0)]
    points += [(float(s_sorted[k]), fp[k] / n_neg, tp[k] / n_pos) for k in last]
    return points


def auc(scores) -> float:
    """Trapezoidal area under the ROC curve (ties count one half)."""
    pts = roc(scores)
    fpr = np.array([p[1] for p in pts])
    tpr = np.array([p[2] for p in pts])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def eer(scores) -> float:
    """Rate where FPR equals FNR, linearly interpolated between the bracketing points."""
    pts = roc(scores)
    fpr = np.array([p[1] for p in pts])
    fnr = 1.0 - np.array([p[2] for p in pts])
    return float(interpolated_crossing(fpr, fnr))


def interpolated_crossing(fpr, fnr):
    diff = fpr - fnr
    k = int(np.argmax(diff >= 0))
    if diff[k] == 0 or k == 0:
        return fpr[k]
    d0, d1 = diff[k - 1], diff[k]
    t = -d0 / (d1 - d0)
    return fpr[k - 1] + t * (fpr[k] - fpr[k - 1])


def report(results) -> str:
    """Plain-text table of AUC / EER (%) per split.

    ``results`` maps split name to a ScoreSet.
    """
    lines = [f"{'split':<10} {'n':>5}  AUC / EER (%)"]
    for name, scores in results.items():
        lines.append(f"{name:<10} {len(scores):>5}  {100 * auc(scores):6.2f} / {100 * eer(scores):6.2f}")
    return "\n".join(lines) + "\n"
