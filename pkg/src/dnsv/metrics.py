"""Detection metrics over scored trial lists: EER, normalized minDCF, DET points.

Convention: higher score means more likely target. At threshold ``t`` a
target is missed when ``score < t`` and a nontarget is falsely accepted
when ``score >= t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, FormatError, MetricUndefined

DEFAULT_OPERATING_POINTS = (0.01, 0.001)


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_target < 1:
            raise DomainError("p_target must be in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise DomainError("costs must be positive")


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise MetricUndefined("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise MetricUndefined("scores must be finite")
    tar, non = scores[labels], scores[~labels]
    if tar.size == 0 or non.size == 0:
        raise MetricUndefined("need at least one target and one nontarget trial")
    return tar, non


def error_rates(scores, labels):
    """Miss and false-alarm rates at every candidate threshold.

    Thresholds are ``-inf``, each distinct score in ascending order, then
    ``+inf``. Returns ``(thresholds, p_miss, p_fa)``.
    """
    tar, non = _split(scores, labels)
    thr = np.unique(np.concatenate([tar, non]))
    thresholds = np.concatenate([[-np.inf], thr, [np.inf]])
    tar_sorted, non_sorted = np.sort(tar), np.sort(non)
    p_miss = np.searchsorted(tar_sorted, thresholds, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(non_sorted, thresholds, side="left") / non.size
    return thresholds, p_miss, p_fa


def compute_eer(scores, labels):
    """Equal error rate and the threshold where it is reached.

    The crossing of the miss and false-alarm curves is located between two
    adjacent thresholds and the rate is linearly interpolated there.
    """
    thresholds, p_miss, p_fa = error_rates(scores, labels)
    diff = p_fa - p_miss
    k = int(np.argmax(diff <= 0))
    d0, d1 = diff[k - 1], diff[k]
    w = d0 / (d0 - d1)
    eer = p_miss[k - 1] + w * (p_miss[k] - p_miss[k - 1])
    threshold = thresholds[k] if np.isfinite(thresholds[k]) else thresholds[k - 1]
    return float(eer), float(threshold)


def compute_min_dcf(scores, labels, params: DcfParams | None = None):
    """Minimum normalized detection cost and its threshold."""
    params = params or DcfParams()
    thresholds, p_miss, p_fa = error_rates(scores, labels)
    p = params.p_target
    dcf = params.c_miss * p_miss * p + params.c_fa * p_fa * (1.0 - p)
    norm = min(params.c_miss * p, params.c_fa * (1.0 - p))
    i = int(np.argmin(dcf))
    return float(dcf[i] / norm), float(thresholds[i])


def det_points(scores, labels):
    """(P_fa, P_miss) staircase from (1, 0) at -inf to (0, 1) at +inf."""
    _, p_miss, p_fa = error_rates(scores, labels)
    return [(float(a), float(b)) for a, b in zip(p_fa, p_miss)]


def alpha_lower_bound(p: float, C: int) -> float:
    """Smallest normalization radius for which ``C`` classes can reach
    posterior ``p``: ``ln(p (C - 2) / (1 - p))``."""
    if not 0 < p < 1:
        raise DomainError("p must be in (0, 1)")
    if int(C) != C or C < 3:
        raise DomainError("C must be an integer >= 3")
    return math.log(p * (C - 2) / (1.0 - p))


def evaluate(scores, labels, dcf_params=None) -> dict:
    if dcf_params is None:
        dcf_params = [DcfParams(p) for p in DEFAULT_OPERATING_POINTS]
    labels = np.asarray(labels).astype(bool)
    eer, eer_thr = compute_eer(scores, labels)
    dcfs = []
    for prm in dcf_params:
        value, thr = compute_min_dcf(scores, labels, prm)
        dcfs.append({"p_target": prm.p_target, "c_miss": prm.c_miss, "c_fa": prm.c_fa,
                     "value": value, "threshold": thr})
    return {"eer": eer, "eer_threshold": eer_thr, "min_dcf": dcfs,
            "n_target": int(labels.sum()), "n_nontarget": int((~labels).sum())}


# ---------------------------------------------------------------------------
# Files

def read_trials(path) -> list:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise FormatError(f"{path}:{n}: expected '<0|1> <utt_a> <utt_b>'")
            trials.append((int(parts[0]), parts[1], parts[2]))
    if not trials:
        raise FormatError(f"{path}: empty trial list")
    return trials


def write_trials(path, trials) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label, a, b in trials:
            fh.write(f"{int(label)} {a} {b}\n")


def read_scores(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FormatError(f"{path}:{n}: expected '<utt_a> <utt_b> <score>'")
            out.append((parts[0], parts[1], float(parts[2])))
    return out


def write_scores(path, scores) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, s in scores:
            fh.write(f"{a} {b} {format(float(s), '.17g')}\n")


def align_scores(trials, scores):
    """Match scores to trials by (utt_a, utt_b); returns (scores, labels) arrays."""
    table = {(a, b): s for a, b, s in scores}
    out, labels = [], []
    for label, a, b in trials:
        key = (a, b) if (a, b) in table else (b, a)
        if key not in table:
            raise FormatError(f"no score for trial {a} {b}")
        out.append(table[key])
        labels.append(label)
    return np.asarray(out, dtype=np.float64), np.asarray(labels, dtype=bool)


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_det(path, points) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# p_fa p_miss\n")
        for pfa, pmiss in points:
            fh.write(f"{pfa:.17g} {pmiss:.17g}\n")
