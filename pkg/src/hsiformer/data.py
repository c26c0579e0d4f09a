"""Hyperspectral cubes, label maps, binary I/O, patches, and splits.

File formats (the contract with external converters):

* cube:  magic ``HSIC1\\n`` (6 bytes), little-endian u32 rows/cols/bands,
  then rows*cols*bands IEEE-754 float32 LE in (row, col, band) order.
* labels: magic ``HSIL1\\n``, little-endian u32 rows/cols, then rows*cols
  u16 LE class indices, 0 meaning unlabeled.

Write -> read round-trips are bit-identical; cube values live in float32
to match the payload precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

CUBE_MAGIC = b"HSIC1\n"
LABEL_MAGIC = b"HSIL1\n"


@dataclass
class HsiCube:
    """Reflectance cube, shape (rows, cols, bands), float32."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise DataError(f"cube must be 3-d with positive extents, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("cube contains non-finite values")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelMap:
    """Per-pixel class indices; 0 = unlabeled, 1..C = classes."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2 or min(self.labels.shape) < 1:
            raise DataError(f"label map must be 2-d with positive extents, got {self.labels.shape}")

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max())


@dataclass
class Patch:
    center: tuple
    data: np.ndarray  # (window, window, bands) float32
    label: int


@dataclass
class Split:
    train_indices: list = field(default_factory=list)  # (row, col) tuples
    test_indices: list = field(default_factory=list)
    seed: int = 0
    fraction: float = 0.0


# ---------------------------------------------------------------------------
# binary I/O


def _read_exact(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise FormatError(f"truncated file while reading {what}", offset=len(data))
    return data[offset : offset + count]


def read_cube(path) -> HsiCube:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = _read_exact(raw, 0, 6, "magic")
    if magic != CUBE_MAGIC:
        raise FormatError(f"bad cube magic {magic!r}", offset=0)
    m, n, k = struct.unpack_from("<III", _read_exact(raw, 6, 12, "header extents"), 0)
    if m < 1 or n < 1 or k < 1:
        raise FormatError(f"non-positive extents {(m, n, k)}", offset=6)
    payload = m * n * k * 4
    if len(raw) != 18 + payload:
        raise FormatError(
            f"payload length mismatch: extents {(m, n, k)} need {payload} bytes, file has {len(raw) - 18}",
            offset=18,
        )
    values = np.frombuffer(raw, dtype="<f4", count=m * n * k, offset=18).reshape(m, n, k)
    return HsiCube(values)


def write_cube(cube: HsiCube, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<III", cube.rows, cube.cols, cube.bands))
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())


def read_labels(path) -> LabelMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = _read_exact(raw, 0, 6, "magic")
    if magic != LABEL_MAGIC:
        raise FormatError(f"bad label magic {magic!r}", offset=0)
    m, n = struct.unpack_from("<II", _read_exact(raw, 6, 8, "header extents"), 0)
    if m < 1 or n < 1:
        raise FormatError(f"non-positive extents {(m, n)}", offset=6)
    payload = m * n * 2
    if len(raw) != 14 + payload:
        raise FormatError(
            f"payload length mismatch: extents {(m, n)} need {payload} bytes, file has {len(raw) - 14}",
            offset=14,
        )
    labels = np.frombuffer(raw, dtype="<u2", count=m * n, offset=14).reshape(m, n)
    return LabelMap(labels)


def write_labels(label_map: LabelMap, path) -> None:
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<II", label_map.rows, label_map.cols))
        fh.write(np.ascontiguousarray(label_map.labels, dtype="<u2").tobytes())


# ---------------------------------------------------------------------------
# preprocessing


def normalize(cube: HsiCube) -> HsiCube:
    """Min-max scale each band to [0, 1]; constant bands map to 0."""
    v = cube.values
    lo = v.min(axis=(0, 1), keepdims=True)
    hi = v.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    flat = span == 0
    span = np.where(flat, 1.0, span).astype(np.float32)
    out = (v - lo) / span
    out = np.where(np.broadcast_to(flat, out.shape), 0.0, out)
    return HsiCube(out)


def patch_count(rows: int, cols: int, size: int) -> int:
    """Number of fully-interior windows: (rows - size + 1) * (cols - size + 1)."""
    if size > min(rows, cols):
        raise DataError(f"window size {size} exceeds cube extent {min(rows, cols)}")
    return (rows - size + 1) * (cols - size + 1)


def effective_patch_size(size: int) -> int:
    """Centered window actually realized for a nominal size: 2*floor(size/2) + 1."""
    return 2 * (size // 2) + 1


def _mirror(idx: int, extent: int) -> int:
    # single reflection about the border pixel (no edge duplication)
    if idx < 0:
        idx = -idx
    if idx >= extent:
        idx = 2 * extent - 2 - idx
    return idx


def extract_patch(cube: HsiCube, labels: LabelMap, center: tuple, size: int, mode: str = "mirror") -> Patch:
    """Window of half-width floor(size/2) around a labeled pixel.

    ``mirror`` reflects out-of-range indices at the border; ``valid``
    raises if the window leaves the cube. ``size`` must be odd in mirror
    mode so the pixel sits at the window center.
    """
    r, c = center
    if labels.labels[r, c] == 0:
        raise DataError(f"center pixel {center} is unlabeled")
    if mode == "mirror":
        if size % 2 == 0:
            raise DataError(f"mirror mode needs an odd window, got {size}")
        half = size // 2
        if half > cube.rows - 1 or half > cube.cols - 1:
            raise DataError(f"mirror depth {half} exceeds cube extents {(cube.rows, cube.cols)}")
        rows = [_mirror(r + d, cube.rows) for d in range(-half, half + 1)]
        cols = [_mirror(c + d, cube.cols) for d in range(-half, half + 1)]
        window = cube.values[np.ix_(rows, cols)]
    elif mode == "valid":
        half = size // 2
        r0, c0 = r - half, c - half
        if r0 < 0 or c0 < 0 or r0 + size > cube.rows or c0 + size > cube.cols:
            raise DataError(f"valid window of size {size} at {center} leaves the cube")
        window = cube.values[r0 : r0 + size, c0 : c0 + size]
    else:
        raise DataError(f"unknown patch mode {mode!r}")
    return Patch(center=(r, c), data=np.ascontiguousarray(window), label=int(labels.labels[r, c]))


def stratified_split(labels: LabelMap, fraction: float, seed: int) -> Split:
    """Per-class proportional split of the labeled pixels.

    Each class contributes max(1, round(fraction * count)) training pixels
    (half-up rounding), selected by a seeded shuffle; everything else goes
    to the test set. Deterministic for a given (labels, fraction, seed).
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0, 1), got {fraction}")
    lab = labels.labels
    num_classes = int(lab.max())
    if num_classes == 0:
        raise DataError("label map has no labeled pixels")
    rng = np.random.default_rng(seed)
    train: list = []
    test: list = []
    for cls in range(1, num_classes + 1):
        positions = np.argwhere(lab == cls)  # row-major order
        if len(positions) == 0:
            raise DataError(f"class {cls} has no labeled pixels")
        n_train = max(1, int(fraction * len(positions) + 0.5))
        order = rng.permutation(len(positions))
        chosen = positions[order]
        train.extend((int(p[0]), int(p[1])) for p in chosen[:n_train])
        test.extend((int(p[0]), int(p[1])) for p in chosen[n_train:])
    return Split(train_indices=train, test_indices=test, seed=seed, fraction=fraction)
