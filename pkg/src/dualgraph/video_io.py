"""Frame loading, video <-> matrix reshaping and binary matrix dumps.

Pixels are flattened column-major over the (n1, n2) grid, so pixel (r, c)
of frame j lands at row ``r + c * n1`` of column ``j``.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

DGM_MAGIC = b"DGM1"
_DGM_HEADER = struct.Struct("<4sQQQQ")


@dataclass(frozen=True)
class FrameSequence:
    """Grayscale frames stacked as an (m, n1, n2) array with values in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (m, n1, n2), got shape {self.frames.shape}")

    @property
    def m(self) -> int:
        return self.frames.shape[0]

    @property
    def n1(self) -> int:
        return self.frames.shape[1]

    @property
    def n2(self) -> int:
        return self.frames.shape[2]


@dataclass(frozen=True)
class VideoMatrix:
    """An n x m video matrix; column j is frame j flattened column-major."""

    data: np.ndarray
    n1: int
    n2: int

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] != self.n1 * self.n2:
            raise ValueError(
                f"data shape {self.data.shape} incompatible with n1={self.n1}, n2={self.n2}"
            )

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    def cube(self) -> np.ndarray:
        """View the data as an (n1, n2, m) array."""
        return self.data.reshape((self.n1, self.n2, self.m), order="F")

    def with_data(self, data: np.ndarray) -> VideoMatrix:
        return VideoMatrix(np.asarray(data, dtype=float), self.n1, self.n2)


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
                rgb = np.asarray(img.convert("RGB"), dtype=float)
                gray = rgb @ np.array([0.299, 0.587, 0.114])
                return gray / 255.0
            if mode in ("L", "1"):
                return np.asarray(img.convert("L"), dtype=float) / 255.0
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(img, dtype=float)
                return arr / 65535.0
            raise ValueError(f"unsupported image mode {mode!r} in {path}")
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from exc


def load_frames(directory: str | Path, pattern: str = "*.pgm") -> FrameSequence:
    """Load every file in ``directory`` matching ``pattern`` (sorted by name).

    8-bit images are scaled by 1/255 and 16-bit ones by 1/65535. Colour
    images are reduced to BT.601 luminance first.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"input directory not found: {directory}")
    paths = sorted(p for p in directory.glob(pattern) if p.is_file())
    if len(paths) < 2:
        raise ValueError(
            f"at least 2 frames required, found {len(paths)} matching {pattern!r} in {directory}"
        )
    frames = []
    for path in paths:
        frame = _read_image(path)
        if frames and frame.shape != frames[0].shape:
            raise ValueError(
                f"frame {path.name} has shape {frame.shape}, expected {frames[0].shape}"
            )
        frames.append(frame)
    return FrameSequence(np.clip(np.stack(frames), 0.0, 1.0))


def to_matrix(seq: FrameSequence) -> VideoMatrix:
    data = seq.frames.reshape(seq.m, -1, order="F").T.copy()
    return VideoMatrix(data, seq.n1, seq.n2)


def from_matrix(M: np.ndarray, n1: int, n2: int) -> FrameSequence:
    """Inverse of :func:`to_matrix`; values outside [0, 1] are clamped."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.shape[0] != n1 * n2:
        raise ValueError(f"matrix has {M.shape[0]} rows, expected n1*n2 = {n1 * n2}")
    n_clamped = int(np.count_nonzero((M < 0.0) | (M > 1.0)))
    if n_clamped:
        log.info("from_matrix clamped %d values to [0, 1]", n_clamped)
    frames = np.clip(M, 0.0, 1.0).T.reshape((M.shape[1], n1, n2), order="F")
    return FrameSequence(frames)


def clamp_count(M: np.ndarray) -> int:
    """Number of entries :func:`from_matrix` would clamp."""
    return int(np.count_nonzero((M < 0.0) | (M > 1.0)))


def remove_motionless(D: VideoMatrix, threshold: float) -> tuple[VideoMatrix, list[int]]:
    """Drop frames whose L1 distance to the last kept frame is below ``threshold``.

    The first frame is always kept. Returns the reduced matrix and the
    (0-based) indices of the surviving frames.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if D.m < 2:
        raise ValueError("at least 2 frames required")
    kept = [0]
    for j in range(1, D.m):
        if np.abs(D.data[:, j] - D.data[:, kept[-1]]).sum() >= threshold:
            kept.append(j)
    if len(kept) < 2:
        raise ValueError(
            f"insufficient motion: only {len(kept)} frame(s) survive threshold {threshold}"
        )
    return D.with_data(D.data[:, kept]), kept


def mean_background(L: VideoMatrix) -> np.ndarray:
    """Mean column of ``L`` reshaped to an n1 x n2 image."""
    # offset by the first column so identical columns average to themselves exactly
    first = L.data[:, 0]
    mean = first + (L.data - first[:, None]).mean(axis=1)
    return mean.reshape((L.n1, L.n2), order="F")


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a [0, 1] image as 8-bit binary PGM (values clamped and rounded)."""
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a single image as floats in [0, 1]."""
    return _read_image(Path(path))


def write_frames(directory: str | Path, seq: FrameSequence, prefix: str = "frame") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(seq.m - 1)))
    paths = []
    for j, frame in enumerate(seq.frames):
        path = directory / f"{prefix}_{j:0{width}d}.pgm"
        write_pgm(path, frame)
        paths.append(path)
    return paths


def save_dgm(path: str | Path, M: np.ndarray, n1: int | None = None, n2: int | None = None) -> None:
    """Dump a matrix in the DGM1 format (little-endian, column-major float64)."""
    M = np.asarray(M, dtype="<f8")
    if M.ndim == 1:
        M = M[:, None]
    n, m = M.shape
    if n1 is None or n2 is None:
        n1, n2 = n, 1
    if n1 * n2 != n:
        raise ValueError(f"n1*n2 = {n1 * n2} does not match n = {n}")
    with open(path, "wb") as fh:
        fh.write(_DGM_HEADER.pack(DGM_MAGIC, n, m, n1, n2))
        fh.write(M.tobytes(order="F"))


def load_dgm(path: str | Path) -> VideoMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _DGM_HEADER.size:
        raise ValueError(f"{path}: truncated DGM1 header")
    magic, n, m, n1, n2 = _DGM_HEADER.unpack_from(raw)
    if magic != DGM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _DGM_HEADER.size + 8 * n * m
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", offset=_DGM_HEADER.size).reshape((n, m), order="F")
    return VideoMatrix(data.astype(float), int(n1), int(n2))
