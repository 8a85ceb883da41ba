"""Shrinkage, weighted singular value thresholding and exponential weights."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class SvdFactors(NamedTuple):
    """Thin SVD ``M = left @ diag(singulars) @ right.T``."""

    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray


def shrink(A, mu: float):
    """Soft thresholding: sign(a) * max(|a| - mu, 0), elementwise."""
    if mu < 0:
        raise ValueError("shrinkage threshold must be nonnegative")
    A = np.asarray(A, dtype=float)
    return np.sign(A) * np.maximum(np.abs(A) - mu, 0.0)


def thin_svd(M: np.ndarray) -> SvdFactors:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise np.linalg.LinAlgError("SVD of a matrix with non-finite entries")
    A, s, Bt = np.linalg.svd(M, full_matrices=False)
    return SvdFactors(A, s, Bt.T)


def compute_weights(singulars, sigma_scale: float) -> np.ndarray:
    """w_i = exp(-s_i^2 / sigma^2).

    Large singular values get weights near 0 and are barely shrunk; small
    ones get weights near 1.
    """
    if sigma_scale <= 0:
        raise ValueError("sigma_scale must be positive")
    s = np.asarray(singulars, dtype=float)
    if np.any(s < 0):
        raise ValueError("singular values must be nonnegative")
    return np.exp(-(s**2) / sigma_scale**2)


def weighted_svt(M: np.ndarray, weights, tau: float) -> tuple[np.ndarray, SvdFactors]:
    """Threshold the i-th singular value of ``M`` by ``weights[i] * tau``.

    ``weights[0]`` pairs with the largest singular value. This is the exact
    proximal map of ``tau * sum_i w_i sigma_i(X)`` when the weights are
    nondecreasing. Returns the thresholded matrix and the SVD of ``M``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    factors = thin_svd(M)
    r = factors.singulars.size
    w = np.asarray(weights, dtype=float)
    if w.size < r:
        raise ValueError(f"need at least {r} weights, got {w.size}")
    kept = np.maximum(factors.singulars - w[:r] * tau, 0.0)
    out = (factors.left * kept) @ factors.right.T
    return out, factors


def weighted_nuclear_norm(M: np.ndarray, weights) -> float:
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    w = np.asarray(weights, dtype=float)
    if w.size < s.size:
        raise ValueError(f"need at least {s.size} weights, got {w.size}")
    return float(np.dot(w[: s.size], s))
