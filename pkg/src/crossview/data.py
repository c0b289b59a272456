"""Multimodal dataset container, synthetic cohort generator, and stratified folds."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

CLASS_NAMES = ("normal", "abnormal")

# Twelve semi-quantification parameters: eight striatal binding ratios,
# two putamen/caudate ratios, two asymmetry indices.
CLINICAL_COLUMNS = (
    "sbr_striatum_r",
    "sbr_striatum_l",
    "sbr_ant_putamen_r",
    "sbr_ant_putamen_l",
    "sbr_post_putamen_r",
    "sbr_post_putamen_l",
    "sbr_caudate_r",
    "sbr_caudate_l",
    "putamen_caudate_ratio_r",
    "putamen_caudate_ratio_l",
    "putamen_asymmetry",
    "caudate_asymmetry",
)

# typical magnitudes, only to make the numbers look like the real thing
_CLINICAL_OFFSET = np.array([2.4, 2.4, 2.6, 2.6, 2.0, 2.0, 2.8, 2.8, 0.9, 0.9, 5.0, 4.0])


class DatasetError(ValueError):
    pass


@dataclass
class MultimodalDataset:
    clinical: np.ndarray  # N x F float64
    labels: np.ndarray  # N x C one-hot
    ids: list[str]
    images: np.ndarray | None = None  # N x 1 x H x W float32
    embeddings: np.ndarray | None = None  # N x latent, precomputed image features
    clinical_columns: tuple[str, ...] = CLINICAL_COLUMNS

    def __post_init__(self):
        self.clinical = np.asarray(self.clinical, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        n = self.clinical.shape[0]
        if self.images is None and self.embeddings is None:
            raise DatasetError("dataset needs either images or precomputed embeddings")
        if self.labels.shape[0] != n or len(self.ids) != n:
            raise DatasetError(f"inconsistent N: clinical {n}, labels {self.labels.shape[0]}, ids {len(self.ids)}")
        for name in ("images", "embeddings"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise DatasetError(f"{name} has {arr.shape[0]} rows, expected {n}")
        if self.images is not None and self.images.ndim != 4:
            raise DatasetError(f"images must be N x 1 x H x W, got shape {self.images.shape}")
        y = self.labels
        if y.ndim != 2 or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
            raise DatasetError("labels must be one-hot rows")
        if len(set(self.ids)) != n:
            raise DatasetError("patient ids must be unique")

    @property
    def n(self) -> int:
        return self.clinical.shape[0]

    @property
    def class_index(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


def _clinical_cov(rho: float = 0.4) -> np.ndarray:
    cov = np.eye(12)
    # right/left pairs of the same region move together
    for i in range(0, 10, 2):
        cov[i, i + 1] = cov[i + 1, i] = rho
    return cov


def _class_direction() -> np.ndarray:
    # abnormal: lower binding ratios, higher asymmetry
    u = np.concatenate([-np.ones(10), np.ones(2)])
    return u / np.linalg.norm(u)


def _blob_images(amp: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    n = amp.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2.0 - 0.5
    centres = ((cy, size * 0.32), (cy, size * 0.68))
    sigma = size / 9.0
    imgs = np.zeros((n, 1, size, size))
    jitter = rng.normal(0.0, 0.4, size=(n, 2, 2))
    for b, (y0, x0) in enumerate(centres):
        dy = yy[None] - (y0 + jitter[:, b, 0])[:, None, None]
        dx = xx[None] - (x0 + jitter[:, b, 1])[:, None, None]
        imgs[:, 0] += amp[:, b, None, None] * np.exp(-(dy**2 + dx**2) / (2 * sigma**2))
    imgs[:, 0] += rng.normal(0.0, 0.03, size=(n, size, size))
    return imgs


def synth_generate(
    n: int = 200,
    image_size: int = 16,
    n_clinical: int = 12,
    separation: float = 3.0,
    label_noise: float = 0.0,
    seed: int = 0,
) -> MultimodalDataset:
    """Two-class stand-in cohort with correlated clinical features and blob images.

    Class-conditional clinical means sit ``separation`` apart (Euclidean). Each
    image holds two blurred blobs whose brightness is driven by a per-patient
    uptake score whose class means are also ``separation`` standard deviations
    apart; the abnormal class has the dimmer blobs. ``round(label_noise * n)``
    labels, chosen at random, are then flipped.
    """
    if n < 4 or n % 2:
        raise DatasetError(f"n must be an even number >= 4, got {n}")
    if n_clinical != 12:
        raise DatasetError("the generator models exactly 12 clinical parameters")
    if image_size < 7:
        raise DatasetError(f"image_size must be >= 7, got {image_size}")
    if separation < 0:
        raise DatasetError(f"separation must be >= 0, got {separation}")
    if not 0.0 <= label_noise <= 1.0:
        raise DatasetError(f"label_noise must lie in [0, 1], got {label_noise}")
    rng = np.random.default_rng(seed)
    y_true = np.repeat([0, 1], n // 2)
    rng.shuffle(y_true)
    sign = np.where(y_true == 1, 0.5, -0.5)

    u = _class_direction()
    z = rng.standard_normal((n, 12)) @ np.linalg.cholesky(_clinical_cov()).T
    clinical = _CLINICAL_OFFSET + z + separation * sign[:, None] * u[None, :]

    uptake = rng.normal(0.0, 1.0, size=n) - separation * sign
    asym = rng.normal(0.0, 0.25, size=(n, 1))
    amp = 1.0 + 0.15 * (uptake[:, None] + np.hstack([asym, -asym]))
    images = _blob_images(amp, rng, image_size).astype(np.float32)

    y_obs = y_true.copy()
    n_flip = int(round(label_noise * n))
    flip = rng.permutation(n)[:n_flip]
    y_obs[flip] = 1 - y_obs[flip]
    labels = np.eye(2)[y_obs]
    ids = [f"P{i:04d}" for i in range(n)]
    return MultimodalDataset(clinical=clinical, labels=labels, ids=ids, images=images)


def class_means(data: MultimodalDataset, true_labels: np.ndarray | None = None) -> np.ndarray:
    y = data.class_index if true_labels is None else true_labels
    return np.stack([data.clinical[y == c].mean(axis=0) for c in range(data.labels.shape[1])])


def kfold_split(labels, folds: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold masks as (train_mask, test_mask) pairs.

    ``labels`` may be an int (unstratified over that many items), a vector of
    class indices, or a one-hot matrix. Members of each class are shuffled and
    dealt round-robin, continuing the deal across classes so that total fold
    sizes also differ by at most one.
    """
    if isinstance(labels, (int, np.integer)):
        y = np.zeros(int(labels), dtype=int)
    else:
        y = np.asarray(labels)
        if y.ndim == 2:
            y = y.argmax(axis=1)
    n = y.shape[0]
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise ValueError(f"cannot make {folds} folds from {n} items")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < folds):
        warnings.warn(
            f"class with {counts.min()} members cannot fill {folds} folds; falling back to unstratified split",
            stacklevel=2,
        )
        order = rng.permutation(n)
    else:
        order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in classes])
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % folds
    out = []
    for f in range(folds):
        test = fold_of == f
        out.append((~test, test))
    return out


def fixed_split(labels, test_fraction: float = 0.25, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Single stratified train/test split, returned in the same shape as kfold_split."""
    y = np.asarray(labels)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test = np.zeros(y.shape[0], dtype=bool)
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        test[members[: int(round(test_fraction * members.size))]] = True
    return [(~test, test)]
