"""Membership-inference metrics: ROC, AUC, ASR and TPR at a fixed FPR.

Scores come with an orientation: ``low_is_member`` (losses, t-errors,
distances) or ``high_is_member`` (confidences, neighbor counts). Internally
everything is converted to a member-oriented score where larger means
"more likely a member". Tied scores form a single ROC vertex.
"""
from __future__ import annotations

import csv
import json
import math
from fractions import Fraction
import warnings
from dataclasses import dataclass, field

import numpy as np

ORIENTATIONS = ("low_is_member", "high_is_member")
DEFAULT_FPR_LEVELS = (0.01, 0.001)


class InsufficientHoldoutWarning(UserWarning):
    """Too few hold-out samples to resolve the requested FPR level."""


def _prepare(scores, labels, orientation):
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 (hold-out) or 1 (member)")
    n_mem = int(np.sum(labels == 1))
    n_hold = labels.size - n_mem
    if n_mem == 0 or n_hold == 0:
        raise ValueError("both member and hold-out samples are required")
    if np.any(np.isnan(scores)):
        raise ValueError("scores contain NaN")
    oriented = -scores if orientation == "low_is_member" else scores
    return oriented, labels.astype(int), n_mem, n_hold


def _roc_counts(scores, labels, orientation):
    """Cumulative (false positive, true positive) counts per distinct threshold."""
    s, y, n_mem, n_hold = _prepare(scores, labels, orientation)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of every tie group
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp = np.concatenate([[0], tp[ends]])
    fp = np.concatenate([[0], fp[ends]])
    return fp, tp, n_mem, n_hold, s[ends]


def roc_curve(scores, labels, orientation: str = "low_is_member") -> np.ndarray:
    """ROC vertices as an ``(m, 2)`` array of ``(fpr, tpr)`` from (0, 0) to (1, 1).

    One candidate vertex per tie group; interior vertices collinear with both
    neighbours are dropped, so separable scores give exactly three points.
    """
    fp, tp, n_mem, n_hold, _ = _roc_counts(scores, labels, orientation)
    # exact integer cross product of consecutive segments
    dfp, dtp = np.diff(fp), np.diff(tp)
    bend = dfp[:-1] * dtp[1:] - dtp[:-1] * dfp[1:] != 0
    keep = np.concatenate([[True], bend, [True]])
    return np.stack([fp[keep] / n_hold, tp[keep] / n_mem], axis=1)


def auc(scores, labels, orientation: str = "low_is_member") -> float:
    """Mann-Whitney AUC; member/hold-out ties count one half."""
    s, y, n_mem, n_hold = _prepare(scores, labels, orientation)
    hold = np.sort(s[y == 0])
    mem = s[y == 1]
    below = np.searchsorted(hold, mem, side="left")
    tied = np.searchsorted(hold, mem, side="right") - below
    twice_u = int(np.sum(2 * below + tied))
    return twice_u / (2 * n_mem * n_hold)


def roc_trapezoid_area(roc: np.ndarray) -> float:
    fpr, tpr = roc[:, 0], roc[:, 1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def best_threshold(scores, labels, orientation: str = "low_is_member"):
    """Balanced-accuracy-maximizing threshold and the accuracy it attains.

    Returns ``(tau, asr)`` in the caller's score units. For ``low_is_member``
    a sample is predicted member iff ``score <= tau``; for ``high_is_member``
    iff ``score >= tau``. ``tau`` is a midpoint between adjacent distinct
    scores, or +/-inf at the extremes. The first maximizer in order of
    increasing predicted-member count wins.
    """
    fp, tp, n_mem, n_hold, vals = _roc_counts(scores, labels, orientation)
    tn = n_hold - fp
    # integer numerator of the balanced accuracy; one division keeps it exact
    num = tp * n_hold + tn * n_mem
    i = int(np.argmax(num))
    # vals are member-oriented group values in decreasing order; vertex i
    # predicts member for the first i groups.
    if i == 0:
        cut = math.inf
    elif i == len(vals):
        cut = -math.inf
    else:
        cut = 0.5 * (vals[i - 1] + vals[i])
    tau = -cut if orientation == "low_is_member" else cut
    return float(tau), int(num[i]) / (2 * n_mem * n_hold)


def asr(scores, labels, orientation: str = "low_is_member") -> float:
    """Attack success rate: best balanced accuracy over all thresholds."""
    return best_threshold(scores, labels, orientation)[1]


def tpr_at_fpr(scores, labels, orientation: str = "low_is_member",
               fpr_level: float = 0.01) -> float:
    """Largest TPR on the step ROC among vertices with FPR <= ``fpr_level``.

    Warns with :class:`InsufficientHoldoutWarning` when fewer than one
    hold-out sample fits under the level, in which case the value comes from
    the zero-FPR vertex.
    """
    if not 0 < fpr_level < 1:
        raise ValueError("fpr_level must lie in (0, 1)")
    fp, tp, n_mem, n_hold, _ = _roc_counts(scores, labels, orientation)
    # exact false-positive budget; the level is read as the decimal it prints as
    budget = math.floor(Fraction(repr(float(fpr_level))) * n_hold)
    if budget < 1:
        warnings.warn(f"{n_hold} hold-out samples cannot resolve FPR {fpr_level}; "
                      "reporting the zero-FPR value", InsufficientHoldoutWarning,
                      stacklevel=2)
    ok = fp <= budget
    return float(np.max(tp[ok]) / n_mem)


@dataclass
class AttackReport:
    attack_name: str
    orientation: str
    sample_ids: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    asr: float
    auc: float
    tpr_at_fpr: dict
    roc_points: np.ndarray
    threshold: float
    seed: int | None = None
    t: int | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, attack_name, orientation, sample_ids, scores, labels,
                    fpr_levels=DEFAULT_FPR_LEVELS, threshold=None, seed=None, t=None):
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels).astype(int)
        tau, best = best_threshold(scores, labels, orientation)
        if threshold is not None:
            tau = float(threshold)
            pred = scores <= tau if orientation == "low_is_member" else scores >= tau
            best = 0.5 * (np.mean(pred[labels == 1]) + np.mean(~pred[labels == 0]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InsufficientHoldoutWarning)
            tprs = {lvl: tpr_at_fpr(scores, labels, orientation, lvl) for lvl in fpr_levels}
        return cls(attack_name, orientation, np.asarray(sample_ids), scores, labels,
                   float(best), auc(scores, labels, orientation), tprs,
                   roc_curve(scores, labels, orientation), tau, seed, t)

    def flipped(self) -> "AttackReport":
        other = ORIENTATIONS[1 - ORIENTATIONS.index(self.orientation)]
        return AttackReport.from_scores(self.attack_name, other, self.sample_ids,
                                        self.scores, self.labels,
                                        tuple(self.tpr_at_fpr), seed=self.seed, t=self.t)

    def predictions(self) -> np.ndarray:
        if self.orientation == "low_is_member":
            return (self.scores <= self.threshold).astype(int)
        return (self.scores >= self.threshold).astype(int)

    def metrics_dict(self) -> dict:
        return {"attack": self.attack_name, "seed": self.seed, "asr": self.asr,
                "auc": self.auc,
                "tpr_at_fpr": {format_level(k): v for k, v in self.tpr_at_fpr.items()}}

    def write_metrics_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metrics_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_roc_csv(self, path) -> None:
        write_roc_csv(path, self.roc_points)


def format_level(level: float) -> str:
    return repr(float(level))


def write_roc_csv(path, roc_points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "log10_fpr"])
        for fpr, tpr in roc_points:
            log_fpr = repr(math.log10(fpr)) if fpr > 0 else "-inf"
            w.writerow([repr(float(fpr)), repr(float(tpr)), log_fpr])


def _summary(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(np.mean(v)), "median": float(np.median(v)),
            "min": float(np.min(v)), "max": float(np.max(v)),
            "spread": float(np.max(v) - np.min(v))}


def aggregate_trials(reports) -> dict:
    """Per-metric mean/median/min/max/spread across trials of one attack.

    Accepts :class:`AttackReport` objects or metrics dicts as written by
    :meth:`AttackReport.metrics_dict`.
    """
    rows = [r.metrics_dict() if isinstance(r, AttackReport) else r for r in reports]
    if not rows:
        raise ValueError("no reports to aggregate")
    names = {r["attack"] for r in rows}
    if len(names) != 1:
        raise ValueError(f"cannot aggregate mixed attacks: {sorted(names)}")
    levels = sorted({k for r in rows for k in r["tpr_at_fpr"]}, key=float)
    return {
        "attack": names.pop(),
        "trials": len(rows),
        "asr": _summary([r["asr"] for r in rows]),
        "auc": _summary([r["auc"] for r in rows]),
        "tpr_at_fpr": {lvl: _summary([r["tpr_at_fpr"][lvl] for r in rows]) for lvl in levels},
    }
