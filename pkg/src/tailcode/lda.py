"""Shrinkage linear discriminant analysis over bit-probability vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIAG_FLOOR = 1e-6


@dataclass
class LdaModel:
    classes: np.ndarray  # class labels, ascending
    class_means: np.ndarray  # (classes, dims)
    pooled_covariance: np.ndarray  # regularized, (dims, dims)
    class_priors: np.ndarray
    weights: np.ndarray  # Sigma^-1 mu_c, (classes, dims)
    biases: np.ndarray  # -1/2 mu_c' Sigma^-1 mu_c + ln pi_c
    shrinkage: float = 0.05

    @property
    def dims(self) -> int:
        return int(self.class_means.shape[1])

    def discriminants(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dims:
            raise ValueError(f"expected {self.dims} features, got {x.shape[1]}")
        return x @ self.weights.T + self.biases

    def param_count(self) -> int:
        c, d = self.class_means.shape
        return c * d + d * d + c

    def ops_per_query(self) -> int:
        # one multiply-add per weight, one bias add, softmax as exp + add + divide
        c, d = self.class_means.shape
        return 2 * c * d + c + 3 * c

    def to_dict(self) -> dict:
        return {
            "classes": self.classes.tolist(),
            "means": self.class_means.tolist(),
            "covariance": self.pooled_covariance.tolist(),
            "priors": self.class_priors.tolist(),
            "shrinkage": self.shrinkage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LdaModel":
        return _assemble(np.asarray(d["classes"]), np.asarray(d["means"], dtype=np.float64),
                         np.asarray(d["covariance"], dtype=np.float64),
                         np.asarray(d["priors"], dtype=np.float64), float(d["shrinkage"]))


def _assemble(classes, means, cov, priors, shrinkage) -> LdaModel:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "pooled covariance is singular; refit with shrinkage > 0") from None
    # Sigma^-1 mu via two triangular solves
    z = np.linalg.solve(chol, means.T)
    w = np.linalg.solve(chol.T, z).T
    b = -0.5 * np.einsum("cd,cd->c", means, w) + np.log(priors)
    return LdaModel(classes, means, cov, priors, w, b, shrinkage)


def fit_lda(features, class_labels, shrinkage: float = 0.05, priors: str = "empirical") -> LdaModel:
    """Fit means, a shrunk pooled within-class covariance and class priors.

    The covariance is ``(1-s) S + s diag(S)`` with an absolute floor of
    ``1e-6`` on its diagonal, ``S`` the maximum-likelihood pooled estimate.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(class_labels).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("features must be (samples, dims) with one label per sample")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must be in [0, 1]")
    classes, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise ValueError("need at least two classes")
    means = np.zeros((classes.size, x.shape[1]))
    np.add.at(means, inverse, x)
    means /= counts[:, None]
    centered = x - means[inverse]
    s = centered.T @ centered / x.shape[0]
    cov = (1.0 - shrinkage) * s + shrinkage * np.diag(np.diag(s))
    idx = np.diag_indices_from(cov)
    cov[idx] = np.maximum(cov[idx], DIAG_FLOOR)
    if priors == "empirical":
        pri = counts / counts.sum()
    elif priors == "uniform":
        pri = np.full(classes.size, 1.0 / classes.size)
    else:
        raise ValueError(f"priors must be 'empirical' or 'uniform', got {priors!r}")
    return _assemble(classes, means, cov, pri, shrinkage)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def lda_class_scores(model: LdaModel, x) -> np.ndarray:
    """Posterior class probabilities (softmax of the discriminants).

    A single vector gives a 1-D result; a matrix gives one row per sample.
    """
    single = np.ndim(x) == 1
    out = softmax(model.discriminants(x))
    return out[0] if single else out
