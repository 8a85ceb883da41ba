"""Spatial / temporal similarity graphs and their normalized Laplacians.

Adjacency matrices are scipy CSR matrices holding both triangles; they are
symmetric by construction (every edge is inserted as a pair). Edges link
each node only to its location-nearest neighbours: a grid stencil in space
and nearby frame offsets in time.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter, uniform_filter

from .video_io import VideoMatrix


@dataclass(frozen=True)
class GraphConfig:
    h_s: float = 1.0
    h_t: float = 1.0
    p: int = 3
    k: int = 4
    gaussian_presmooth_sigma: float = 0.0

    def __post_init__(self):
        if not (self.h_s > 0 and self.h_t > 0):
            raise ValueError("h_s and h_t must be positive")
        if self.p < 1 or self.p % 2 == 0:
            raise ValueError(f"patch size p must be a positive odd integer, got {self.p}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.gaussian_presmooth_sigma < 0:
            raise ValueError("gaussian_presmooth_sigma must be nonnegative")


def spatial_offsets(k: int) -> list[tuple[int, int]]:
    """The ``k`` grid offsets nearest to the origin, ties broken by (dy, dx).

    k=4 gives the 4-connected stencil, k=8 the 8-connected one.
    """
    radius = int(np.ceil(np.sqrt(k))) + 1
    cands = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if (dy, dx) != (0, 0)
    ]
    cands.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, o))
    return cands[:k]


def temporal_offsets(k: int) -> list[int]:
    """Frame offsets -1, +1, -2, +2, ... truncated to ``k`` entries."""
    offs = []
    d = 1
    while len(offs) < k:
        offs.extend([-d, d])
        d += 1
    return offs[:k]


def extract_patch(D: VideoMatrix, pixel_index: int, p: int) -> np.ndarray:
    """The p x p window around a pixel across all frames, as a (p*p, m) matrix.

    ``pixel_index`` is 0-based in column-major order. Window rows are also
    ordered column-major; out-of-image positions replicate the nearest edge.
    """
    if p < 1 or p % 2 == 0:
        raise ValueError("p must be a positive odd integer")
    if p >= 2 * min(D.n1, D.n2):
        raise ValueError(f"patch exceeds image: p={p} for a {D.n1}x{D.n2} frame")
    if not 0 <= pixel_index < D.n:
        raise IndexError(f"pixel_index {pixel_index} out of range [0, {D.n})")
    r, c = pixel_index % D.n1, pixel_index // D.n1
    h = p // 2
    rows = np.clip(np.arange(r - h, r + h + 1), 0, D.n1 - 1)
    cols = np.clip(np.arange(c - h, c + h + 1), 0, D.n2 - 1)
    cube = D.cube()
    # column-major over the window: row offset varies fastest
    idx_r = np.tile(rows, p)
    idx_c = np.repeat(cols, p)
    return cube[idx_r, idx_c, :]


def _symmetric_csr(i: np.ndarray, j: np.ndarray, v: np.ndarray, dim: int) -> sp.csr_matrix:
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([v, v])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _undirected(pairs_i: np.ndarray, pairs_j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # union symmetrization: an edge survives if either endpoint picked it
    lo = np.minimum(pairs_i, pairs_j)
    hi = np.maximum(pairs_i, pairs_j)
    uniq = np.unique(np.stack([lo, hi], axis=1), axis=0)
    return uniq[:, 0], uniq[:, 1]


def temporal_adjacency(D: VideoMatrix, cfg: GraphConfig) -> sp.csr_matrix:
    """m x m adjacency exp(-||d_i - d_j||^2 / h_t^2) over nearby frames."""
    m = D.m
    if m < 2:
        raise ValueError("at least 2 frames required")
    src, dst = [], []
    for off in temporal_offsets(cfg.k):
        i = np.arange(m)
        j = i + off
        ok = (j >= 0) & (j < m)
        src.append(i[ok])
        dst.append(j[ok])
    i, j = _undirected(np.concatenate(src), np.concatenate(dst))
    X = D.data
    dist2 = ((X[:, i] - X[:, j]) ** 2).sum(axis=0)
    return _symmetric_csr(i, j, np.exp(-dist2 / cfg.h_t**2), m)


def _patch_distances(cube: np.ndarray, dy: int, dx: int, p: int) -> np.ndarray:
    """||patch(r, c) - patch(r + dy, c + dx)||_F^2 for every pixel (r, c)."""
    n1, n2, _ = cube.shape
    h = p // 2
    pad = h + max(abs(dy), abs(dx))
    padded = np.pad(cube, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    shifted = np.roll(padded, shift=(-dy, -dx), axis=(0, 1))
    diff = ((padded - shifted) ** 2).sum(axis=2)
    # box sum over the p x p window; uniform_filter returns the mean
    boxed = uniform_filter(diff, size=p, mode="constant") * (p * p)
    return boxed[pad : pad + n1, pad : pad + n2]


def spatial_adjacency(D: VideoMatrix, cfg: GraphConfig) -> sp.csr_matrix:
    """n x n patch-similarity adjacency restricted to the k-nearest grid stencil."""
    n1, n2 = D.n1, D.n2
    if min(n1, n2) < cfg.p:
        raise ValueError(f"frame {n1}x{n2} smaller than patch size {cfg.p}")
    cube = D.cube()
    if cfg.gaussian_presmooth_sigma > 0:
        cube = gaussian_filter(
            cube, sigma=(cfg.gaussian_presmooth_sigma, cfg.gaussian_presmooth_sigma, 0),
            mode="nearest",
        )
    rr, cc = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    src, dst, vals = [], [], []
    seen: set[tuple[int, int]] = set()
    for dy, dx in spatial_offsets(cfg.k):
        # the stencil is point-symmetric after union; compute each direction once
        key = (dy, dx) if (dy, dx) > (-dy, -dx) else (-dy, -dx)
        if key in seen:
            continue
        seen.add(key)
        dist2 = _patch_distances(cube, dy, dx, cfg.p)
        ok = (rr + dy >= 0) & (rr + dy < n1) & (cc + dx >= 0) & (cc + dx < n2)
        i = (rr + cc * n1)[ok]
        j = ((rr + dy) + (cc + dx) * n1)[ok]
        src.append(i)
        dst.append(j)
        vals.append(np.exp(-dist2[ok] / cfg.h_s**2))
    return _symmetric_csr(
        np.concatenate(src), np.concatenate(dst), np.concatenate(vals), n1 * n2
    )


def normalized_laplacian(A: sp.spmatrix) -> sp.csr_matrix:
    """I - W^{-1/2} A W^{-1/2} with W the diagonal degree matrix of A."""
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    deg = np.asarray(A.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise ValueError(f"node {bad} has zero degree; normalized Laplacian undefined")
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    Phi = sp.identity(A.shape[0], format="csr") - inv_sqrt @ A @ inv_sqrt
    Phi = sp.csr_matrix(Phi)
    # symmetric by construction; average away any last-bit asymmetry
    Phi = ((Phi + Phi.T) * 0.5).tocsr()
    Phi.eliminate_zeros()
    Phi.sort_indices()
    return Phi


def laplacian_quadratic(Phi: sp.spmatrix, L: np.ndarray, side: str = "left") -> float:
    """tr(L^T Phi L) for side='left', tr(L Phi L^T) for side='right'."""
    if side == "left":
        if Phi.shape[0] != L.shape[0]:
            raise ValueError(f"Phi is {Phi.shape}, L has {L.shape[0]} rows")
        return float(np.sum(L * (Phi @ L)))
    if side == "right":
        if Phi.shape[0] != L.shape[1]:
            raise ValueError(f"Phi is {Phi.shape}, L has {L.shape[1]} columns")
        return float(np.sum(L * (Phi @ L.T).T))
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def build_laplacians(D: VideoMatrix, cfg: GraphConfig) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """(Phi_s, Phi_t) for a video."""
    return (
        normalized_laplacian(spatial_adjacency(D, cfg)),
        normalized_laplacian(temporal_adjacency(D, cfg)),
    )


def power_iteration(M: sp.spmatrix, iters: int = 1000, tol: float = 1e-12) -> float:
    """Largest eigenvalue of a symmetric PSD matrix, from a fixed start vector."""
    dim = M.shape[0]
    x = np.ones(dim) + np.linspace(0.0, 1.0, dim)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = M @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new_lam = float(x @ y)
        x = y / ny
        if abs(new_lam - lam) <= tol * max(1.0, abs(new_lam)):
            lam = new_lam
            break
        lam = new_lam
    return lam


def eigen_bounds(Phi: sp.spmatrix, iters: int = 1000) -> tuple[float, float]:
    """(min, max) eigenvalue estimates of a normalized Laplacian.

    The minimum comes from power iteration on 2I - Phi, which is PSD since
    the spectrum of Phi lies in [0, 2].
    """
    lam_max = power_iteration(Phi, iters)
    shifted = 2.0 * sp.identity(Phi.shape[0], format="csr") - Phi
    lam_min = 2.0 - power_iteration(shifted, iters)
    return lam_min, lam_max


def write_spsym(path: str | Path, M: sp.spmatrix) -> None:
    """Dump the upper triangle as 'SPSYM dim nnz' then 1-based 'i j value' lines."""
    upper = sp.triu(sp.csr_matrix(M)).tocoo()
    order = np.lexsort((upper.col, upper.row))
    rows, cols, vals = upper.row[order], upper.col[order], upper.data[order]
    keep = vals != 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    lines = [f"SPSYM {M.shape[0]} {len(vals)}"]
    lines.extend(f"{i + 1} {j + 1} {v:.17g}" for i, j, v in zip(rows, cols, vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_spsym(path: str | Path) -> sp.csr_matrix:
    text = Path(path).read_text().splitlines()
    head = text[0].split()
    if len(head) != 3 or head[0] != "SPSYM":
        raise ValueError(f"{path}: not an SPSYM file")
    dim, nnz = int(head[1]), int(head[2])
    body = np.loadtxt(text[1 : 1 + nnz], ndmin=2) if nnz else np.zeros((0, 3))
    i = body[:, 0].astype(int) - 1
    j = body[:, 1].astype(int) - 1
    v = body[:, 2]
    off = i != j
    rows = np.concatenate([i, j[off]])
    cols = np.concatenate([j, i[off]])
    vals = np.concatenate([v, v[off]])
    return sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
