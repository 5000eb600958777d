"""Pairwise scoring back-ends: inner product, cosine and two-covariance PLDA."""

from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateNorm, FormatError, ModelDegenerate, TrainingDataError

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
EIG_FLOOR = 1e-10
PLDA_MAGIC = b"PLDA1"


def length_normalize(v):
    """Scale a vector (or each row of a matrix) to unit Euclidean length."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateNorm("cannot length-normalize a (near) zero vector")
    return v / norms


def inner_product(a, b):
    return float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))


def cosine(a, b):
    return float(np.clip(inner_product(length_normalize(a), length_normalize(b)), -1.0, 1.0))


def inner_product_rows(A, B):
    return np.einsum("ij,ij->i", np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64))


def cosine_rows(A, B):
    return np.clip(inner_product_rows(length_normalize(A), length_normalize(B)), -1.0, 1.0)


# ---------------------------------------------------------------------------
# PLDA

@dataclass
class PldaModel:
    """Two-covariance model: speaker y ~ N(mean, between), x ~ N(y, within)."""

    mean: np.ndarray
    between: np.ndarray
    within: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        d = self.mean.size
        self.between = np.asarray(self.between, dtype=np.float64).reshape(d, d)
        self.within = np.asarray(self.within, dtype=np.float64).reshape(d, d)

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_bytes(self) -> bytes:
        return b"".join([PLDA_MAGIC, struct.pack("<I", self.dim),
                         self.mean.astype("<f8").tobytes(),
                         self.between.astype("<f8").tobytes(),
                         self.within.astype("<f8").tobytes()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "PldaModel":
        if not data.startswith(PLDA_MAGIC):
            raise FormatError("not a PLDA1 file")
        off = len(PLDA_MAGIC)
        if len(data) < off + 4:
            raise FormatError("truncated PLDA1 header")
        (d,) = struct.unpack_from("<I", data, off)
        off += 4
        need = off + 8 * (d + 2 * d * d)
        if len(data) != need:
            raise FormatError(f"PLDA1 file has {len(data)} bytes, expected {need}")
        arr = np.frombuffer(data, dtype="<f8", offset=off)
        return cls(arr[:d].copy(), arr[d:d + d * d].copy(), arr[d + d * d:].copy())

    def save(self, path, sidecar: bool = True) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        if sidecar:
            summary = {
                "format": "PLDA1", "dim": self.dim,
                "between_eigenvalues": np.linalg.eigvalsh(self.between)[::-1].tolist(),
                "within_eigenvalues": np.linalg.eigvalsh(self.within)[::-1].tolist(),
            }
            with open(f"{path}.json", "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2)
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "PldaModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _sym(a):
    return 0.5 * (a + a.T)


def floor_covariance(cov, floor=EIG_FLOOR):
    """Lift the spectrum of ``cov`` so its smallest eigenvalue is at least
    ``max(floor, 1e-8 * trace/D)``; returns ``(cov, floored)``."""
    cov = _sym(cov)
    lam_min = np.linalg.eigvalsh(cov)[0]
    if lam_min >= floor:
        return cov, False
    target = max(10 * floor, 1e-8 * np.trace(cov) / cov.shape[0])
    return cov + (target - lam_min) * np.eye(cov.shape[0]), True


def _group(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    groups = {}
    for i, lab in enumerate(y):
        groups.setdefault(lab, []).append(i)
    # Deterministic accumulation order, independent of input ordering of speakers.
    keys = sorted(groups, key=str)
    return [X[np.sort(groups[k])] for k in keys]


def _spk_stats(groups, mean):
    ns = np.array([g.shape[0] for g in groups], dtype=np.float64)
    xbar = np.stack([g.mean(axis=0) for g in groups])
    scatter = sum((g - g.mean(axis=0)).T @ (g - g.mean(axis=0)) for g in groups)
    return ns, xbar - mean, scatter


def plda_log_likelihood(groups, model: PldaModel) -> float:
    """Total marginal log-likelihood of grouped data under the model.

    Per speaker with n observations the stacked vector has covariance
    ``I (x) W + 11' (x) B``; along the all-ones direction this is ``W + nB``
    and orthogonally ``W`` (n - 1 times), which gives a closed form.
    """
    d = model.dim
    W, B = model.within, model.between
    sign_w, logdet_w = np.linalg.slogdet(W)
    if sign_w <= 0:
        raise ModelDegenerate("within-class covariance is not positive definite")
    W_inv = np.linalg.inv(W)
    total = 0.0
    for g in groups:
        n = g.shape[0]
        xbar = g.mean(axis=0)
        centered = g - xbar
        c = W + n * B
        sign_c, logdet_c = np.linalg.slogdet(c)
        if sign_c <= 0:
            raise ModelDegenerate("W + nB is not positive definite")
        r = xbar - model.mean
        quad = np.sum((centered @ W_inv) * centered) + n * r @ np.linalg.solve(c, r)
        total += -0.5 * (n * d * np.log(2 * np.pi) + (n - 1) * logdet_w + logdet_c + quad)
    return float(total)


def plda_train(X, y, iters: int = 20, return_history: bool = False):
    """Fit a two-covariance PLDA by EM with the mean fixed at the global mean.

    Initialization uses the between/within scatter of the speaker means. Each
    EM step computes the exact posterior of every speaker variable given its
    n_i observations, so unbalanced speakers are handled without
    approximation.
    """
    X = check_array(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] != y.shape[0]:
        raise TrainingDataError("X and y differ in length")
    groups = _group(X, y)
    if len(groups) < 2:
        raise TrainingDataError("PLDA needs at least two speakers")
    if max(g.shape[0] for g in groups) < 2:
        raise TrainingDataError("PLDA needs at least one speaker with two or more utterances")

    d = X.shape[1]
    mean = X.mean(axis=0)
    n_total = X.shape[0]
    ns, rbar, scatter = _spk_stats(groups, mean)
    B = _sym(rbar.T @ rbar / len(groups))
    W = _sym(scatter / n_total)
    W, floored = floor_covariance(W)
    B, _ = floor_covariance(B, EIG_FLOOR)
    warned = False
    if floored:
        warnings.warn("within-class covariance is singular; flooring applied", RuntimeWarning)
        warned = True

    model = PldaModel(mean, B, W)
    history = [plda_log_likelihood(groups, model)]
    for _ in range(iters):
        W_inv = np.linalg.inv(W)
        B_inv = np.linalg.inv(B)
        acc_b = np.zeros((d, d))
        acc_w = np.zeros((d, d))
        for g, n, r in zip(groups, ns, rbar):
            post_cov = np.linalg.inv(B_inv + n * W_inv)
            post_mean = post_cov @ (W_inv @ (n * r))  # relative to global mean
            acc_b += np.outer(post_mean, post_mean) + post_cov
            diff = g - mean - post_mean
            acc_w += diff.T @ diff + n * post_cov
        B = _sym(acc_b / len(groups))
        W = _sym(acc_w / n_total)
        B, _ = floor_covariance(B, EIG_FLOOR)
        W, floored = floor_covariance(W)
        if floored and not warned:
            warnings.warn("within-class covariance is singular; flooring applied", RuntimeWarning)
            warned = True
        model = PldaModel(mean, B, W)
        history.append(plda_log_likelihood(groups, model))
    log.debug("PLDA EM log-likelihood %s", history)
    return (model, history) if return_history else model


class _Scorer:
    """Precomputed quadratic form for the PLDA log-likelihood ratio.

    LLR(a, b) = 0.5 a'Qa + 0.5 b'Qb + a'Pb + const on mean-removed inputs.
    """

    def __init__(self, model: PldaModel):
        tot = model.between + model.within
        B = model.between
        try:
            np.linalg.cholesky(tot)
            tot_inv = np.linalg.inv(tot)
            schur = _sym(tot - B @ tot_inv @ B)
            np.linalg.cholesky(schur)
        except np.linalg.LinAlgError as exc:
            raise ModelDegenerate("PLDA joint covariance is not positive definite") from exc
        schur_inv = np.linalg.inv(schur)
        self.mean = model.mean
        self.Q = tot_inv - schur_inv
        self.P = tot_inv @ B @ schur_inv
        _, logdet_tot = np.linalg.slogdet(tot)
        _, logdet_schur = np.linalg.slogdet(schur)
        # log|[[T, B], [B, T]]| = log|T| + log|T - B T^-1 B|
        self.const = 0.5 * (logdet_tot - logdet_schur)

    def __call__(self, A, Bm):
        A = np.atleast_2d(A) - self.mean
        Bm = np.atleast_2d(Bm) - self.mean
        qa = np.einsum("ij,jk,ik->i", A, self.Q, A)
        qb = np.einsum("ij,jk,ik->i", Bm, self.Q, Bm)
        cross = 0.5 * (np.einsum("ij,jk,ik->i", A, self.P, Bm) + np.einsum("ij,jk,ik->i", Bm, self.P, A))
        return 0.5 * qa + 0.5 * qb + cross + self.const


def plda_score(model: PldaModel, a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != model.dim or b.size != model.dim:
        raise ModelDegenerate(f"expected {model.dim}-dim inputs")
    return float(_Scorer(model)(a, b)[0])


def plda_score_rows(model: PldaModel, A, B):
    return _Scorer(model)(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64))


class PLDA(BaseEstimator):
    """Estimator wrapper: ``fit(X, y)`` on embeddings with speaker labels,
    ``score_pairs(A, B)`` returns per-row log-likelihood ratios.

    ``l2norm=True`` centers on the training mean and length-normalizes every
    vector before fitting and scoring.
    """

    def __init__(self, n_iter=20, l2norm=False):
        self.n_iter = n_iter
        self.l2norm = l2norm

    def _prep(self, X):
        X = check_array(X, dtype=np.float64)
        if self.l2norm:
            X = length_normalize(X - self.center_)
        return X

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        self.center_ = X.mean(axis=0) if self.l2norm else np.zeros(X.shape[1])
        self.n_features_in_ = X.shape[1]
        self.model_, self.log_likelihood_ = plda_train(self._prep(X), y, self.n_iter,
                                                       return_history=True)
        return self

    def score_pairs(self, A, B):
        check_is_fitted(self, "model_")
        return plda_score_rows(self.model_, self._prep(A), self._prep(B))
