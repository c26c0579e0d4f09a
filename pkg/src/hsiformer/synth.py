"""Seeded synthetic hyperspectral scenes for desk-scale experiments.

Each class gets a smooth spectral signature (a low-frequency cosine
mixture, rejection-sampled so signatures stay well separated), pixels are
assigned to classes by nearest seed point (Voronoi regions, so classes
form contiguous blobs), and zero-mean Gaussian noise is added per voxel.
"""

from __future__ import annotations

import numpy as np

from .data import HsiCube, LabelMap
from .errors import DataError

_MIN_SIGNATURE_RMS_DISTANCE = 0.15


def _smooth_signature(rng: np.random.Generator, bands: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, bands)
    curve = np.zeros(bands)
    for _ in range(3):
        freq = rng.uniform(0.5, 3.0)
        amp = rng.uniform(0.05, 0.25)
        phase = rng.uniform(0, 2 * np.pi)
        curve += amp * np.cos(2 * np.pi * freq * t + phase)
    return 0.5 + rng.uniform(-0.15, 0.15) + curve


def synth_dataset(
    classes: int,
    rows: int,
    cols: int,
    bands: int,
    noise_sigma: float,
    seed: int,
):
    """Deterministic (cube, labels) pair; every pixel is labeled 1..classes."""
    if classes < 2:
        raise DataError(f"need at least 2 classes, got {classes}")
    if rows * cols < classes:
        raise DataError(f"{rows}x{cols} scene cannot host {classes} regions")
    rng = np.random.default_rng(seed)

    signatures = []
    for _ in range(classes):
        for _attempt in range(200):
            candidate = _smooth_signature(rng, bands)
            ok = all(
                np.sqrt(np.mean((candidate - other) ** 2)) >= _MIN_SIGNATURE_RMS_DISTANCE
                for other in signatures
            )
            if ok:
                signatures.append(candidate)
                break
        else:
            raise DataError("could not sample separated spectral signatures")
    signatures = np.stack(signatures)  # (classes, bands)

    flat_choice = rng.choice(rows * cols, size=classes, replace=False)
    seeds = np.stack([flat_choice // cols, flat_choice % cols], axis=1)  # (classes, 2)
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    dist2 = (rr[None] - seeds[:, 0, None, None]) ** 2 + (cc[None] - seeds[:, 1, None, None]) ** 2
    labels = np.argmin(dist2, axis=0).astype(np.uint16) + 1  # ties break to the lower class

    values = signatures[labels - 1].astype(np.float64)
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return HsiCube(values.astype(np.float32)), LabelMap(labels)


def nearest_centroid_accuracy(cube: HsiCube, labels: LabelMap) -> float:
    """Overall accuracy of per-class mean-spectrum nearest-centroid labeling;
    a floor on how learnable the scene is from raw spectra alone."""
    lab = labels.labels
    classes = int(lab.max())
    spectra = cube.values.reshape(-1, cube.bands).astype(np.float64)
    flat = lab.reshape(-1)
    centroids = np.stack([spectra[flat == c].mean(axis=0) for c in range(1, classes + 1)])
    labeled = flat > 0
    d2 = ((spectra[labeled, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    predicted = np.argmin(d2, axis=1) + 1
    return float(np.mean(predicted == flat[labeled]))
