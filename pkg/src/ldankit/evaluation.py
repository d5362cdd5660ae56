"""Evaluation protocols: lighting-condition classification, verification
ROC under Euclidean and Q distances, and prediction throughput."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .errors import DegenerateLightingError, FoldConstructionError, InsufficientRecordsError, InvalidInputError
from .sh_core import euclidean_distance, q_distance

TOPK = (1, 2, 3)
REFERENCE_CPU_IMAGES_PER_SEC = 390.0
REFERENCE_SIRFS_SECONDS_PER_IMAGE = 47.0


@dataclass
class EvalReport:
    top1: tuple
    top2: tuple
    top3: tuple
    per_fold: dict
    fold_seed: int = 0

    def to_dict(self):
        return asdict(self)


def stratified_folds(conditions, folds, seed):
    """Assign every record to one of ``folds`` held-out sets, stratified by
    condition.  Returns an int array of fold ids."""
    conditions = np.asarray(conditions)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(conditions), dtype=np.int64)
    for c in np.unique(conditions):
        idx = np.flatnonzero(conditions == c)
        if len(idx) < folds:
            raise FoldConstructionError(
                f"condition {int(c)} has {len(idx)} records, fewer than {folds} folds"
            )
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = np.arange(len(idx)) % folds
    return fold_of


def rank_conditions(points, means, mean_ids):
    """Condition ids sorted nearest first per point; ties go to the lower id."""
    d = np.linalg.norm(points[:, None, :] - means[None, :, :], axis=2)
    # lexsort: last key primary
    order = np.lexsort((np.broadcast_to(mean_ids, d.shape), d), axis=1)
    return mean_ids[order]


def classify_conditions(preds, condition_ids, folds=10, seed=0) -> EvalReport:
    """Nearest-mean classification of predicted lighting into conditions.

    Each fold holds out a stratified tenth, computes per-condition means
    from the rest and scores top-k hits on the held-out records.
    """
    preds = np.asarray(preds, dtype=np.float64)
    cond = np.asarray(condition_ids, dtype=np.int64)
    if preds.ndim != 2 or len(preds) != len(cond):
        raise InvalidInputError("preds must be (N, D) aligned with condition_ids")
    if folds < 2:
        raise InvalidInputError("folds must be >= 2")
    fold_of = stratified_folds(cond, folds, seed)
    ids = np.unique(cond)
    per = {f"top{k}": [] for k in TOPK}
    for f in range(folds):
        train, test = fold_of != f, fold_of == f
        means = np.stack([preds[train & (cond == c)].mean(axis=0) for c in ids])
        ranked = rank_conditions(preds[test], means, ids)
        truth = cond[test][:, None]
        for k in TOPK:
            hit = np.any(ranked[:, :k] == truth, axis=1)
            per[f"top{k}"].append(100.0 * float(hit.mean()))
    stats = {k: (float(np.mean(v)), float(np.std(v))) for k, v in per.items()}
    return EvalReport(stats["top1"], stats["top2"], stats["top3"], per, seed)


def verification_pairs(condition_ids, n_pairs, rng):
    """Balanced same/different-condition record pairs, all distinct.

    Returns ``(i, j, same)`` arrays with ``i < j``.
    """
    cond = np.asarray(condition_ids, dtype=np.int64)
    if n_pairs < 2 or n_pairs % 2:
        raise InvalidInputError("n_pairs must be an even number >= 2")
    half = n_pairs // 2
    ids, counts = np.unique(cond, return_counts=True)
    if len(ids) < 2 or np.any(counts < 2):
        raise InsufficientRecordsError("need at least 2 records for each of at least 2 conditions")
    n = len(cond)
    n_same = int(np.sum(counts * (counts - 1) // 2))
    n_diff = n * (n - 1) // 2 - n_same
    if half > n_same or half > n_diff:
        raise InsufficientRecordsError(
            f"{half} pairs per class requested but only {n_same} same / {n_diff} different exist"
        )
    ii, jj = np.triu_indices(n, k=1)
    same_mask = cond[ii] == cond[jj]
    same_idx = np.flatnonzero(same_mask)
    diff_idx = np.flatnonzero(~same_mask)
    pick_s = rng.choice(same_idx, size=half, replace=False)
    pick_d = rng.choice(diff_idx, size=half, replace=False)
    pick = np.concatenate([pick_s, pick_d])
    same = np.concatenate([np.ones(half, bool), np.zeros(half, bool)])
    return ii[pick], jj[pick], same


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float
    distance: str = "euclidean"
    n_excluded: int = 0

    def to_dict(self):
        return {
            "distance": self.distance,
            "auc": self.auc,
            "n_excluded": self.n_excluded,
            "n_points": int(len(self.thresholds)),
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold", "fpr", "tpr"])
            for t, fp, tp in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(fp)), repr(float(tp))])


def roc_from_scores(distances, same):
    """ROC for "same if distance <= t", sweeping t over observed distances.

    Tied distances move together, so the trapezoidal area equals the
    Mann-Whitney statistic with ties counted as one half.
    """
    d = np.asarray(distances, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    n_pos, n_neg = int(same.sum()), int((~same).sum())
    if n_pos == 0 or n_neg == 0:
        raise InsufficientRecordsError("ROC needs both positive and negative pairs")
    order = np.argsort(d, kind="mergesort")
    d_sorted, s_sorted = d[order], same[order]
    tp = np.cumsum(s_sorted)
    fp = np.cumsum(~s_sorted)
    last = np.r_[np.flatnonzero(np.diff(d_sorted)), len(d_sorted) - 1]
    thresholds = np.r_[-np.inf, d_sorted[last]]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    auc = float(trapezoid(tpr, fpr))
    return thresholds, tpr, fpr, auc


def _pair_distance(a, b, distance):
    if distance == "euclidean":
        return euclidean_distance(a, b)
    # per channel on unprojected SH9, averaged
    return float(np.mean([q_distance(a[c], b[c]) for c in range(a.shape[0])]))


def roc(values, pairs, distance="euclidean") -> RocCurve:
    """``values``: (N, 18) predictions for euclidean, (N, 3, 9) unprojected
    SH for q_measure.  ``pairs`` is ``(i, j, same)``.  Pairs whose Q
    distance is undefined are dropped and counted in ``n_excluded``."""
    if distance not in ("euclidean", "q_measure"):
        raise InvalidInputError(f"unknown distance {distance!r}")
    values = np.asarray(values, dtype=np.float64)
    if distance == "q_measure" and (values.ndim != 3 or values.shape[2] != 9):
        raise InvalidInputError("q_measure needs (N, channels, 9) SH coefficients")
    ii, jj, same = pairs
    dists, keep = [], []
    for k, (i, j) in enumerate(zip(ii, jj)):
        try:
            dists.append(_pair_distance(values[i], values[j], distance))
            keep.append(k)
        except DegenerateLightingError:
            pass
    keep = np.asarray(keep, dtype=np.int64)
    th, tpr, fpr, auc = roc_from_scores(np.asarray(dists), np.asarray(same)[keep])
    return RocCurve(th, tpr, fpr, auc, distance, int(len(ii) - len(keep)))


def rank_auc(distances, same):
    """Brute-force AUC: fraction of (positive, negative) pairs with the
    positive strictly closer, ties counting one half."""
    d = np.asarray(distances, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    pos, neg = d[same], d[~same]
    cmp = pos[:, None] - neg[None, :]
    return float(((cmp < 0).sum() + 0.5 * (cmp == 0).sum()) / cmp.size)


def runtime_bench(predict_fn, images, n_images=256, repeats=3):
    """Steady-state images/sec of ``predict_fn`` over ``n_images`` inputs
    tiled from ``images``; one warmup call is excluded."""
    images = np.asarray(images)
    if len(images) == 0 or n_images < 1:
        raise InvalidInputError("runtime_bench needs images and n_images >= 1")
    reps = int(np.ceil(n_images / len(images)))
    batch = np.concatenate([images] * reps)[:n_images]
    predict_fn(batch[: min(len(batch), 32)])
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        predict_fn(batch)
        best = min(best, time.perf_counter() - t0)
    return n_images / best


@dataclass
class BenchReport:
    images_per_sec: dict
    n_images: int
    reference_cpu_images_per_sec: float = REFERENCE_CPU_IMAGES_PER_SEC
    reference_sirfs_seconds_per_image: float = REFERENCE_SIRFS_SECONDS_PER_IMAGE
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
