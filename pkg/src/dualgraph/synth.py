"""Synthetic videos with a known low-rank + sparse decomposition.

Backgrounds are sums of separable raised-cosine patterns; the foreground is
a rectangle of constant intensity offset moving along a trajectory. Noise
comes from ``numpy.random.default_rng(seed)`` (PCG64), so a seed fixes the
output bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .video_io import VideoMatrix


def linear_trajectory(start: tuple[int, int], velocity: tuple[int, int], m: int) -> list[tuple[int, int]]:
    """Top-left (row, col) positions start + j * velocity for j = 0..m-1."""
    return [(start[0] + j * velocity[0], start[1] + j * velocity[1]) for j in range(m)]


@dataclass(frozen=True)
class SynthSpec:
    n1: int = 40
    n2: int = 40
    m: int = 12
    bg_rank: int = 2
    object_size: tuple[int, int] = (6, 6)
    trajectory: tuple[tuple[int, int], ...] | None = None
    object_intensity_delta: float = 0.5
    outlier_fraction: float = 0.01
    outlier_magnitude: float = 0.8
    rng_seed: int = 0
    temporal_ripple: float = 0.01
    # per-component amplitudes; component 0 carries the mean level
    bg_amplitudes: tuple[float, ...] = field(default=(0.55, 0.2))

    def resolved_trajectory(self) -> list[tuple[int, int]]:
        if self.trajectory is not None:
            return [tuple(p) for p in self.trajectory]
        h, w = self.object_size
        start = ((self.n1 - h) // 2, 2)
        return linear_trajectory(start, (0, 2), self.m)


def _raised_cosine(length: int, freq: float, phase: float) -> np.ndarray:
    x = np.arange(length) / max(length - 1, 1)
    return 0.5 * (1.0 - np.cos(2 * np.pi * freq * x + phase))


def background(spec: SynthSpec) -> np.ndarray:
    """Low-rank background as an n x m matrix (column-major pixel order), unclipped."""
    n1, n2, m = spec.n1, spec.n2, spec.m
    if not 1 <= spec.bg_rank <= min(n1 * n2, m):
        raise ValueError(f"bg_rank must lie in [1, {min(n1 * n2, m)}]")
    amps = list(spec.bg_amplitudes) + [spec.bg_amplitudes[-1] * 0.5] * spec.bg_rank
    t = np.arange(m)
    L = np.zeros((n1 * n2, m))
    for k in range(spec.bg_rank):
        if k == 0:
            rows = 0.6 + 0.4 * _raised_cosine(n1, 0.5, 0.0)
            cols = 0.6 + 0.4 * _raised_cosine(n2, 0.5, np.pi / 3)
            pattern = np.outer(rows, cols)
            pattern = pattern / pattern.max()
        else:
            rows = _raised_cosine(n1, 1.0 + 0.5 * k, 0.7 * k) - 0.5
            cols = _raised_cosine(n2, 0.5 + 0.5 * k, 1.3 * k) - 0.5
            pattern = 4.0 * np.outer(rows, cols)
        profile = 1.0 + spec.temporal_ripple * np.sin(2 * np.pi * (k + 1) * t / max(m, 2) + k)
        L += amps[k] * np.outer(pattern.reshape(-1, order="F"), profile)
    return L


def generate(spec: SynthSpec) -> tuple[VideoMatrix, VideoMatrix, VideoMatrix, np.ndarray]:
    """Return (D, L_true, S_true, masks) with masks of shape (m, n1, n2)."""
    n1, n2, m = spec.n1, spec.n2, spec.m
    if not 0 <= spec.outlier_fraction < 1:
        raise ValueError("outlier_fraction must lie in [0, 1)")
    traj = spec.resolved_trajectory()
    if len(traj) != m:
        raise ValueError(f"trajectory has {len(traj)} positions for {m} frames")
    h, w = spec.object_size
    masks = np.zeros((m, n1, n2), dtype=bool)
    for j, (r, c) in enumerate(traj):
        if h == 0 or w == 0:
            continue
        if r < 0 or c < 0 or r + h > n1 or c + w > n2:
            raise ValueError(f"trajectory out of bounds at frame {j}: object at {(r, c)}")
        masks[j, r : r + h, c : c + w] = True

    L_true = np.clip(background(spec), 0.0, 1.0)
    mask_cols = masks.reshape(m, -1, order="F").T
    S_true = np.where(mask_cols, spec.object_intensity_delta, 0.0)

    rng = np.random.default_rng(spec.rng_seed)
    outliers = np.zeros_like(L_true)
    count = int(round(spec.outlier_fraction * L_true.size))
    if count:
        idx = rng.choice(L_true.size, size=count, replace=False)
        signs = rng.choice(np.array([-1.0, 1.0]), size=count)
        outliers.flat[idx] = signs * spec.outlier_magnitude
    D = np.clip(L_true + S_true + outliers, 0.0, 1.0)
    return (
        VideoMatrix(D, n1, n2),
        VideoMatrix(L_true, n1, n2),
        VideoMatrix(S_true, n1, n2),
        masks,
    )
