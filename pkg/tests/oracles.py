"""Brute-force references for the detection metrics (plain Python loops)."""

import math


def _rates(tar, non, t):
    miss = sum(1 for s in tar if s < t) / len(tar)
    fa = sum(1 for s in non if s >= t) / len(non)
    return miss, fa


def _sweep(scores, labels):
    tar = [s for s, l in zip(scores, labels) if l]
    non = [s for s, l in zip(scores, labels) if not l]
    cands = [-math.inf] + sorted(set(scores)) + [math.inf]
    return cands, [_rates(tar, non, t) for t in cands]


def brute_eer(scores, labels):
    cands, rates = _sweep(scores, labels)
    for k in range(1, len(cands)):
        m1, f1 = rates[k]
        if m1 >= f1:
            m0, f0 = rates[k - 1]
            gap0, gap1 = f0 - m0, f1 - m1
            return m0 + gap0 / (gap0 - gap1) * (m1 - m0)
    raise AssertionError("no crossing")


def brute_min_dcf(scores, labels, p, c_miss=1.0, c_fa=1.0):
    _, rates = _sweep(scores, labels)
    norm = min(c_miss * p, c_fa * (1 - p))
    return min((c_miss * m * p + c_fa * f * (1 - p)) / norm for m, f in rates)


def dcf_at(scores, labels, t, p, c_miss=1.0, c_fa=1.0):
    tar = [s for s, l in zip(scores, labels) if l]
    non = [s for s, l in zip(scores, labels) if not l]
    m, f = _rates(tar, non, t)
    return (c_miss * m * p + c_fa * f * (1 - p)) / min(c_miss * p, c_fa * (1 - p))
