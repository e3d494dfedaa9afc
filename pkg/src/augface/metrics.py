"""Verification and identification metrics.

Conventions: a pair is accepted when ``score >= threshold``. The TAR at a
target FAR uses the smallest threshold, swept over the union of all scores,
whose impostor acceptance is at most the target. CMC ranks break ties
pessimistically. EER interpolates linearly between bracketing sweep points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FARS = (0.01, 0.001)
RANKS = (1, 5, 10)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # ascending, ends with +inf
    far: np.ndarray
    tar: np.ndarray


def _nonempty(name, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError(f"{name} scores are empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} scores must be finite")
    return x


def _accept_rate(sorted_scores, thresholds):
    # fraction of scores >= each threshold
    n = len(sorted_scores)
    return (n - np.searchsorted(sorted_scores, thresholds, side="left")) / n


def roc(genuine, impostor) -> RocCurve:
    g = np.sort(_nonempty("genuine", genuine))
    i = np.sort(_nonempty("impostor", impostor))
    thr = np.append(np.unique(np.concatenate([g, i])), np.inf)
    return RocCurve(thr, _accept_rate(i, thr), _accept_rate(g, thr))


def tar_at_far(curve: RocCurve, far: float) -> float:
    ok = np.flatnonzero(curve.far <= far)
    # far is nonincreasing in threshold and 0 at +inf, so ok is a suffix
    return float(curve.tar[ok[0]])


def cmc_ranks(scores, probe_labels, gallery_labels) -> np.ndarray:
    """Pessimistic rank of the correct gallery entry for every probe.

    With several gallery entries of the probe's subject, the best-scoring one
    counts as the correct match.
    """
    S = np.asarray(scores, dtype=np.float64)
    probe_labels = np.asarray(probe_labels)
    gallery_labels = np.asarray(gallery_labels)
    if S.shape != (len(probe_labels), len(gallery_labels)):
        raise ValueError("score matrix shape does not match the label lists")
    ranks = np.empty(len(probe_labels), dtype=np.int64)
    for k, lab in enumerate(probe_labels):
        correct = gallery_labels == lab
        if not correct.any():
            raise ValueError(f"probe subject {lab!r} is absent from the gallery")
        best = S[k, correct].max()
        ranks[k] = 1 + np.count_nonzero(S[k, ~correct] >= best)
    return ranks


def cmc(scores, probe_labels, gallery_labels, ks=RANKS) -> dict[int, float]:
    ranks = cmc_ranks(scores, probe_labels, gallery_labels)
    return {int(k): float(np.mean(ranks <= k)) for k in ks}


def eer(genuine, impostor) -> float:
    """Equal error rate from the threshold sweep, linearly interpolated."""
    g = np.sort(_nonempty("genuine", genuine))
    i = np.sort(_nonempty("impostor", impostor))
    thr = np.concatenate([[-np.inf], np.unique(np.concatenate([g, i])), [np.inf]])
    far = _accept_rate(i, thr)
    frr = 1.0 - _accept_rate(g, thr)
    d = far - frr  # +1 at -inf, -1 at +inf, nonincreasing
    k = int(np.flatnonzero(d <= 0)[0])
    if d[k] == 0:
        return float(far[k])
    # cross between k-1 and k
    a = d[k - 1] / (d[k - 1] - d[k])
    return float(far[k - 1] + a * (far[k] - far[k - 1]))


def best_threshold(scores, labels) -> float:
    """Threshold maximising accuracy; candidates are midpoints of sorted scores."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    u = np.unique(s)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    gs, ims = np.sort(s[y]), np.sort(s[~y])
    correct = _accept_rate(gs, cands) * len(gs) + (1.0 - _accept_rate(ims, cands)) * len(ims)
    return float(cands[int(np.argmax(correct))])


def fold_accuracy(scores, labels, folds) -> float:
    """Mean accuracy over folds, each fold thresholded on the remaining folds."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    f = np.asarray(folds)
    ids = np.unique(f)
    if len(ids) < 2:
        raise ValueError("accuracy needs at least 2 folds")
    accs = []
    for fold in ids:
        test = f == fold
        if y[test].all() or not y[test].any():
            raise ValueError(f"fold {fold} contains a single class")
        thr = best_threshold(s[~test], y[~test])
        accs.append(np.mean((s[test] >= thr) == y[test]))
    return float(np.mean(accs))


def eer_and_accuracy(scores, labels, folds) -> tuple[float, float]:
    """``(100% - EER, mean fold accuracy)``, both as fractions in [0, 1]."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    return 1.0 - eer(s[y], s[~y]), fold_accuracy(s, y, folds)
