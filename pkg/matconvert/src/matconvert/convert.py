"""Read MAT scientific containers and emit HSIC1/HSIL1 binary files.

Output contract (shared with the classifier pipeline that consumes it):

* cube:  ``HSIC1\\n`` magic, little-endian u32 rows/cols/bands, then
  rows*cols*bands float32 LE in (row, col, band) row-major order.
* labels: ``HSIL1\\n`` magic, little-endian u32 rows/cols, then rows*cols
  u16 LE class indices (0 = unlabeled).

Variable selection defaults to the largest 3-D numeric array for the cube
and the largest 2-D integer-valued array for the ground truth, because
public datasets name their arrays inconsistently; an exact-size tie is an
ambiguity that must be resolved with an explicit variable name.

Both classic (v5/v7) and HDF5-backed (v7.3) containers are handled; v7.3
stores MATLAB arrays column-major, so dataset axes are reversed on read.
"""

from __future__ import annotations

import struct

import numpy as np


class MatFormatError(Exception):
    """Input container violates the converter's expectations."""


class AmbiguityError(MatFormatError):
    """Several same-size candidate arrays; an explicit --var choice is needed."""

    def __init__(self, role: str, names):
        self.names = sorted(names)
        super().__init__(
            f"multiple candidate arrays for {role}: {', '.join(self.names)}; "
            f"select one explicitly with --var/--gt-var"
        )


def _load_classic(path) -> dict:
    from scipy.io import loadmat

    doc = loadmat(path)
    return {k: np.asarray(v) for k, v in doc.items() if not k.startswith("__")}


def _load_hdf5(path) -> dict:
    import h5py

    arrays = {}
    with h5py.File(path, "r") as fh:
        def visit(name, node):
            if isinstance(node, h5py.Dataset) and node.dtype.kind in "iuf":
                arr = np.asarray(node)
                # MATLAB v7.3 writes column-major: reported axes are reversed
                arrays[name.split("/")[-1]] = arr.transpose(tuple(reversed(range(arr.ndim))))

        fh.visititems(visit)
    return arrays


def load_arrays(path) -> dict:
    """Name -> numeric ndarray from either container flavor."""
    try:
        return _load_classic(path)
    except NotImplementedError:
        # classic reader redirects v7.3 containers here
        return _load_hdf5(path)
    except ValueError as ex:
        # not a classic MAT file at all; it may still be a bare HDF5 container
        try:
            return _load_hdf5(path)
        except OSError:
            raise MatFormatError(f"cannot parse {path}: {ex}") from ex


def _is_integral(arr: np.ndarray) -> bool:
    if np.issubdtype(arr.dtype, np.integer):
        return True
    if np.issubdtype(arr.dtype, np.floating):
        return bool(np.all(np.isfinite(arr)) and np.all(arr == np.round(arr)))
    return False


def _pick(arrays: dict, role: str, ndim: int, predicate, explicit: str | None) -> np.ndarray:
    if explicit is not None:
        if explicit not in arrays:
            raise MatFormatError(f"variable {explicit!r} not found; available: {sorted(arrays)}")
        arr = arrays[explicit]
        if arr.ndim != ndim:
            raise MatFormatError(f"variable {explicit!r} has {arr.ndim} dims, {role} needs {ndim}")
        return arr
    candidates = {k: v for k, v in arrays.items() if v.ndim == ndim and predicate(v)}
    if not candidates:
        raise MatFormatError(f"no {ndim}-d candidate array for {role}; available: {sorted(arrays)}")
    top_size = max(v.size for v in candidates.values())
    top = [k for k, v in candidates.items() if v.size == top_size]
    if len(top) > 1:
        raise AmbiguityError(role, top)
    return candidates[top[0]]


def _write_cube(values: np.ndarray, path) -> None:
    rows, cols, bands = values.shape
    with open(path, "wb") as fh:
        fh.write(b"HSIC1\n")
        fh.write(struct.pack("<III", rows, cols, bands))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def _write_labels(labels: np.ndarray, path) -> None:
    rows, cols = labels.shape
    with open(path, "wb") as fh:
        fh.write(b"HSIL1\n")
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())


def convert(
    data_path,
    gt_path,
    out_cube,
    out_labels,
    var: str | None = None,
    gt_var: str | None = None,
) -> tuple:
    """Convert one (data, ground-truth) container pair; returns (M, N, K)."""
    cube = _pick(
        load_arrays(data_path), "cube", 3,
        lambda a: np.issubdtype(a.dtype, np.number), var,
    )
    labels = _pick(load_arrays(gt_path), "labels", 2, _is_integral, gt_var)

    if cube.shape[:2] != labels.shape:
        raise MatFormatError(
            f"cube spatial extents {cube.shape[:2]} do not match labels {labels.shape}"
        )
    cube = np.asarray(cube, dtype=np.float64)
    if not np.all(np.isfinite(cube)):
        raise MatFormatError("cube contains non-finite values")
    if not _is_integral(labels):
        raise MatFormatError("label array is not integer-valued")
    labels = np.asarray(np.round(labels), dtype=np.int64)
    if labels.min() < 0:
        raise MatFormatError(f"label array has a negative entry (min {labels.min()})")
    if labels.max() > np.iinfo(np.uint16).max:
        raise MatFormatError(f"label {labels.max()} exceeds the u16 range")

    _write_cube(cube.astype(np.float32), out_cube)
    _write_labels(labels.astype(np.uint16), out_labels)
    return cube.shape
