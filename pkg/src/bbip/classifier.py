"""Reduced-rank linear discriminant analysis over the observed DoFs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import StatisticsError
from .trajectory import Demonstration

SCATTER_RIDGE = 1e-6


def _canonical_sign(V: np.ndarray) -> np.ndarray:
    """Unit-norm columns with the first nonzero entry positive."""
    V = V / np.linalg.norm(V, axis=0)
    for j in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, j]) > 1e-14)
        if nz.size and V[nz[0], j] < 0:
            V[:, j] = -V[:, j]
    return V


def softmax(scores: np.ndarray) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    with np.errstate(over="ignore"):  # s - max may reach -inf, which exp maps to 0
        e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class LdaClassifier:
    """Projection onto ``k = |C| - 1`` discriminant directions plus linear class scores.

    ``coef[c] = cov_inv @ class_means[c]`` and
    ``intercept[c] = -0.5 * class_means[c] @ cov_inv @ class_means[c] + log(priors[c])``;
    :meth:`discriminants` recomputes both from the stored statistics.
    """

    classes: tuple[str, ...]
    projection: np.ndarray  # |D_o| x k
    eigenvalues: np.ndarray  # k, descending
    class_means: np.ndarray  # |C| x k
    covariance: np.ndarray  # k x k, pooled within-class in projected space
    covariance_inverse: np.ndarray
    priors: np.ndarray
    coef: np.ndarray  # |C| x k
    intercept: np.ndarray  # |C|

    @property
    def rank(self) -> int:
        return self.projection.shape[1]

    def project(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.projection

    def discriminants(self) -> tuple[np.ndarray, np.ndarray]:
        coef = self.class_means @ self.covariance_inverse
        quad = np.einsum("ck,ck->c", coef, self.class_means)
        return coef, -0.5 * quad + np.log(self.priors)

    def scores(self, y) -> np.ndarray:
        """Linear discriminant scores; works on one frame or a stack of frames."""
        y = np.asarray(getattr(y, "values", y), dtype=float)
        return self.project(y) @ self.coef.T + self.intercept

    def posterior(self, y) -> np.ndarray:
        """Class probabilities for an observed-DoF frame (softmax of the scores)."""
        y = np.asarray(getattr(y, "values", y), dtype=float)
        if y.shape[-1] != self.projection.shape[0]:
            raise ValueError(f"frame has {y.shape[-1]} values, classifier expects {self.projection.shape[0]}")
        return softmax(self.scores(y))

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "projection": self.projection.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "class_means": self.class_means.tolist(),
            "covariance": self.covariance.tolist(),
            "covariance_inverse": self.covariance_inverse.tolist(),
            "priors": self.priors.tolist(),
            "coef": self.coef.tolist(),
            "intercept": self.intercept.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LdaClassifier":
        k = len(d["eigenvalues"])
        def mat(key, rows):
            return np.array(d[key], dtype=float).reshape(rows, k)
        C = len(d["classes"])
        return cls(
            classes=tuple(d["classes"]),
            projection=mat("projection", -1),
            eigenvalues=np.array(d["eigenvalues"], dtype=float),
            class_means=mat("class_means", C),
            covariance=mat("covariance", k),
            covariance_inverse=mat("covariance_inverse", k),
            priors=np.array(d["priors"], dtype=float),
            coef=mat("coef", C),
            intercept=np.array(d["intercept"], dtype=float),
        )


def scatter_matrices(samples: Sequence[np.ndarray], priors: np.ndarray):
    """Within, total and between scatter for per-class sample matrices.

    ``samples[c]`` is ``|D_o| x N_c`` (columns are frames). Covariances are
    normalized by the sample count. Returns ``(S_W, S_T, S_B)``.
    """
    S_W = sum(p * np.cov(M, bias=True) for p, M in zip(priors, samples))
    S_T = np.cov(np.hstack(samples), bias=True)
    S_W = np.atleast_2d(S_W)
    S_T = np.atleast_2d(S_T)
    return S_W, S_T, S_T - S_W


def regularize_scatter(S_W: np.ndarray, scale: float = SCATTER_RIDGE) -> np.ndarray:
    p = S_W.shape[0]
    ridge = scale * np.trace(S_W) / p
    if not ridge > 0:
        ridge = scale
    return S_W + ridge * np.eye(p)


def fit_lda(demos: Sequence[Demonstration], classes: Sequence[str] | None = None,
            ridge: float = SCATTER_RIDGE) -> LdaClassifier:
    """Fit the classifier on labelled demonstrations.

    Frames of every demonstration of a class are pooled. Class priors are
    proportional to the number of demonstrations per class.
    """
    by_class: dict[str, list[Demonstration]] = {}
    for d in demos:
        if d.class_label is None:
            raise StatisticsError("every demonstration needs a class label to fit the classifier")
        by_class.setdefault(d.class_label, []).append(d)
    if classes is None:
        classes = list(by_class)
    classes = tuple(classes)
    if set(classes) != set(by_class):
        raise StatisticsError(f"class list {classes} does not match labels {sorted(by_class)}")
    if len(classes) < 2:
        raise StatisticsError("discriminant analysis needs at least 2 classes")

    samples = [np.hstack([d.observed for d in by_class[c]]) for c in classes]
    for c, M in zip(classes, samples):
        if M.shape[1] < 2:
            raise StatisticsError(f"class {c!r} has fewer than 2 frames")
    counts = np.array([len(by_class[c]) for c in classes], dtype=float)
    priors = counts / counts.sum()

    S_W, _, S_B = scatter_matrices(samples, priors)
    S_W_reg = regularize_scatter(S_W, ridge)
    k = len(classes) - 1
    if k > S_W.shape[0]:
        raise StatisticsError(f"{len(classes)} classes need at least {k} observed DoFs")

    evals, evecs = scipy.linalg.eigh(S_B, S_W_reg)
    order = np.argsort(evals)[::-1][:k]
    W_k = _canonical_sign(evecs[:, order])

    means = np.vstack([M.mean(axis=1) for M in samples]) @ W_k
    cov = W_k.T @ S_W_reg @ W_k
    cov = 0.5 * (cov + cov.T)
    cov_inv = np.linalg.inv(cov)
    cov_inv = 0.5 * (cov_inv + cov_inv.T)

    clf = LdaClassifier(classes, W_k, evals[order], means, cov, cov_inv, priors,
                        np.zeros((len(classes), k)), np.zeros(len(classes)))
    coef, intercept = clf.discriminants()
    object.__setattr__(clf, "coef", coef)
    object.__setattr__(clf, "intercept", intercept)
    return clf


def smooth_posterior(previous: np.ndarray, current: np.ndarray, half_life: float) -> np.ndarray:
    """Exponentially smooth a posterior stream; ``half_life`` is in frames."""
    alpha = 1.0 - 0.5 ** (1.0 / half_life)
    p = (1.0 - alpha) * previous + alpha * current
    return p / p.sum()
