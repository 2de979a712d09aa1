"""
Datasets: seeded synthetic hypersphere blobs, IDX image files and CSV feature export.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from warnings import warn

import numpy as np
from numpy.typing import ArrayLike

from .exceptions import ConfigError, DimensionError, DomainError, IdxFormatError
from .numcore import as_matrix, make_rng

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledBatch:
    """
    Feature rows paired with integer class labels.

    Parameters
    ----------
    features : np.ndarray
        Matrix of shape (N, d).
    labels : np.ndarray
        Integer labels of shape (N,), in [0, class_count).
    class_count : int
        Number of classes K. Must exceed every label.
    metadata : dict
        Free-form information about the batch (e.g. generation warnings).
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DimensionError(
                f"Features must be two-dimensional, got shape {self.features.shape}."
            )
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.features.shape[0]:
            raise DimensionError(
                f"Got {self.features.shape[0]} feature rows but {self.labels.shape[0]} labels."
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise DomainError(f"Labels must lie in [0, {self.class_count}).")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: ArrayLike) -> LabeledBatch:
        """
        Returns the batch restricted to the given row indices.
        """
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledBatch(
            self.features[indices],
            self.labels[indices],
            self.class_count,
            dict(self.metadata),
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Parameters of :func:`synth_blobs`.

    Parameters
    ----------
    k_classes : int
        Number of classes, at least 2.
    per_class : int
        Samples per class, at least 1.
    dim : int
        Feature dimension, at least 2.
    angular_spread : float
        Largest angle in radians between a sample and its class center, in (0, pi/2).
    radius_jitter : float
        Relative radius perturbation, samples have norm in [1 - jitter, 1 + jitter].
    seed : int
        Seed of the generator.
    """

    k_classes: int = 4
    per_class: int = 20
    dim: int = 2
    angular_spread: float = 0.3
    radius_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_classes < 2:
            raise ConfigError("synthetic.k_classes", "must be at least 2")
        if self.per_class < 1:
            raise ConfigError("synthetic.per_class", "must be at least 1")
        if self.dim < 2:
            raise ConfigError("synthetic.dim", "must be at least 2")
        if not 0 < self.angular_spread < np.pi / 2:
            raise ConfigError("synthetic.angular_spread", "must lie in (0, pi/2)")
        if not 0 <= self.radius_jitter < 1:
            raise ConfigError("synthetic.radius_jitter", "must lie in [0, 1)")


def _class_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.dim == 2:
        angles = 2 * np.pi * np.arange(spec.k_classes) / spec.k_classes
        return np.column_stack([np.cos(angles), np.sin(angles)])
    centers = rng.standard_normal((spec.k_classes, spec.dim))
    return centers / np.linalg.norm(centers, axis=1, keepdims=True)


def _orthogonal_directions(
    centers: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    directions = rng.standard_normal(centers.shape)
    directions -= np.sum(directions * centers, axis=1, keepdims=True) * centers
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    # a draw parallel to its center has probability zero; fall back to a fixed axis
    degenerate = norms[:, 0] < 1e-12
    if np.any(degenerate):
        fallback = np.roll(centers[degenerate], 1, axis=1)
        fallback[:, 0] = -fallback[:, 0]
        directions[degenerate] = fallback
        norms[degenerate] = np.linalg.norm(fallback, axis=1, keepdims=True)
    return directions / norms


def synth_blobs(spec: SyntheticSpec) -> LabeledBatch:
    """
    Generates class blobs on the unit hypersphere.

    Class centers are uniformly spaced on the circle when ``dim == 2`` and drawn
    uniformly on the sphere otherwise. Each sample is its center rotated by a random
    angle of at most ``angular_spread`` and scaled by a factor in
    ``1 +/- radius_jitter``.

    Parameters
    ----------
    spec : :class:`SyntheticSpec`
        Generation parameters.

    Returns
    -------
    :class:`LabeledBatch`
        Batch of ``k_classes * per_class`` samples, ordered by class. The metadata
        holds the class centers and any generation warnings.
    """
    rng = make_rng(spec.seed)
    centers = _class_centers(spec, rng)
    labels = np.repeat(np.arange(spec.k_classes), spec.per_class)
    sample_centers = centers[labels]
    directions = _orthogonal_directions(sample_centers, rng)
    angles = rng.uniform(0.0, spec.angular_spread, size=labels.shape[0])
    radii = 1.0 + rng.uniform(-spec.radius_jitter, spec.radius_jitter, labels.shape[0])
    features = (
        np.cos(angles)[:, None] * sample_centers
        + np.sin(angles)[:, None] * directions
    ) * radii[:, None]

    metadata = {"centers": centers.tolist(), "warnings": []}
    cosines = np.clip(centers @ centers.T, -1.0, 1.0)
    np.fill_diagonal(cosines, -1.0)
    min_separation = float(np.arccos(cosines.max()))
    metadata["min_center_separation"] = min_separation
    if min_separation <= 2 * spec.angular_spread:
        message = (
            f"Angular spread {spec.angular_spread} lets classes overlap: the closest centers "
            f"are only {min_separation:.4f} rad apart."
        )
        metadata["warnings"].append(message)
        warn(message)
    logger.debug(
        "Generated %d synthetic samples in %d classes", labels.shape[0], spec.k_classes
    )
    return LabeledBatch(features, labels, spec.k_classes, metadata)


def split_batch(
    batch: LabeledBatch, fraction: float, seed: int
) -> tuple[LabeledBatch, LabeledBatch]:
    """
    Splits every class of a batch in two parts with a seeded shuffle.

    Each class contributes ``ceil(fraction * n_i)`` samples (at least one, and at most
    ``n_i - 1`` when the class has two or more samples) to the first part.

    Parameters
    ----------
    batch : :class:`LabeledBatch`
        Batch to split.
    fraction : float
        Share of every class sent to the first part, in (0, 1).
    seed : int
        Seed of the shuffle.

    Returns
    -------
    first, second : :class:`LabeledBatch`
    """
    if not 0 < fraction < 1:
        raise DomainError(f"fraction must lie in (0, 1), got {fraction}.")
    rng = make_rng(seed)
    first, second = [], []
    for label in np.unique(batch.labels):
        members = rng.permutation(np.flatnonzero(batch.labels == label))
        count = int(np.ceil(fraction * members.size))
        count = max(1, min(count, members.size - 1)) if members.size > 1 else 1
        first.extend(members[:count])
        second.extend(members[count:])
    return batch.subset(np.sort(first)), batch.subset(np.sort(second))


def sample_pairs(
    batch: LabeledBatch, count: int | None = None, seed: int = 0
) -> list[tuple[np.ndarray, np.ndarray, bool]]:
    """
    Builds verification pairs from a batch.

    All pairs are used when ``count`` is ``None`` or at least the number of pairs;
    otherwise ``count`` distinct pairs are drawn with the seeded generator.

    Returns
    -------
    list[tuple[np.ndarray, np.ndarray, bool]]
        Pairs of features with a same-identity flag.
    """
    all_pairs = list(combinations(range(len(batch)), 2))
    if count is not None and count < len(all_pairs):
        chosen = make_rng(seed).choice(len(all_pairs), size=count, replace=False)
        all_pairs = [all_pairs[i] for i in np.sort(chosen)]
    return [
        (
            batch.features[i],
            batch.features[j],
            bool(batch.labels[i] == batch.labels[j]),
        )
        for i, j in all_pairs
    ]


def normalize_pixels(pixels: ArrayLike) -> np.ndarray:
    """
    Maps 8-bit pixel values to roughly [-1, 1] with (pixel - 127.5) / 128.
    """
    return (np.asarray(pixels, dtype=np.float64) - 127.5) / 128.0


def _read_header(
    data: bytes, magic: int, dimensions: int, path: str
) -> tuple[int, ...]:
    header_size = 4 * (1 + dimensions)
    if len(data) < header_size:
        raise IdxFormatError(f"{path}: truncated header", len(data))
    found_magic, *sizes = struct.unpack(f">{1 + dimensions}I", data[:header_size])
    if found_magic != magic:
        raise IdxFormatError(
            f"{path}: bad magic number 0x{found_magic:08x}, expected 0x{magic:08x}", 0
        )
    return tuple(sizes)


def load_idx(images_path: str | Path, labels_path: str | Path) -> LabeledBatch:
    """
    Reads an IDX image file and its IDX label file.

    Images are flattened row by row and normalized with :func:`normalize_pixels`.

    Parameters
    ----------
    images_path : str or Path
        Big-endian IDX file with magic 0x00000803, then count, rows and cols as u32,
        then the unsigned pixel bytes.
    labels_path : str or Path
        Big-endian IDX file with magic 0x00000801, then count as u32, then the
        unsigned label bytes.

    Returns
    -------
    :class:`LabeledBatch`
    """
    images_data = Path(images_path).read_bytes()
    labels_data = Path(labels_path).read_bytes()
    count, rows, cols = _read_header(images_data, IDX_IMAGES_MAGIC, 3, str(images_path))
    (label_count,) = _read_header(labels_data, IDX_LABELS_MAGIC, 1, str(labels_path))
    if count != label_count:
        raise IdxFormatError(
            f"{labels_path}: {label_count} labels declared for {count} images", 4
        )
    expected = 16 + count * rows * cols
    if len(images_data) != expected:
        raise IdxFormatError(
            f"{images_path}: expected {expected} bytes for {count} images of {rows}x{cols}, "
            f"found {len(images_data)}",
            min(len(images_data), expected),
        )
    if len(labels_data) != 8 + count:
        raise IdxFormatError(
            f"{labels_path}: expected {8 + count} bytes, found {len(labels_data)}",
            min(len(labels_data), 8 + count),
        )
    pixels = np.frombuffer(images_data, dtype=np.uint8, offset=16)
    labels = np.frombuffer(labels_data, dtype=np.uint8, offset=8).astype(np.int64)
    features = normalize_pixels(pixels.reshape(count, rows * cols))
    class_count = int(labels.max()) + 1 if count else 1
    logger.info("Loaded %d images of %dx%d from %s", count, rows, cols, images_path)
    return LabeledBatch(
        features, labels, class_count, {"image_shape": [int(rows), int(cols)]}
    )


def write_idx(
    images: ArrayLike,
    labels: ArrayLike,
    images_path: str | Path,
    labels_path: str | Path,
) -> None:
    """
    Writes 8-bit images of shape (N, rows, cols) and their labels as IDX files.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3:
        raise DimensionError(
            f"Images must have shape (N, rows, cols), got {images.shape}."
        )
    if labels.shape != (images.shape[0],):
        raise DimensionError(
            f"Expected {images.shape[0]} labels, got an array of shape {labels.shape}."
        )
    for name, values in (("Pixel", images), ("Label", labels)):
        if values.size and (values.min() < 0 or values.max() > 255):
            raise DomainError(f"{name} values must fit in an unsigned byte.")
    header = struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape)
    Path(images_path).write_bytes(header + images.astype(np.uint8).tobytes())
    header = struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0])
    Path(labels_path).write_bytes(header + labels.astype(np.uint8).tobytes())


def export_features(
    features: ArrayLike | LabeledBatch,
    labels: ArrayLike | None,
    path: str | Path,
) -> None:
    """
    Writes features as CSV with the header ``label,f0,f1,...`` and one row per
    sample. Values use 17 significant digits so that reading them back is exact.

    Parameters
    ----------
    features : ArrayLike or :class:`LabeledBatch`
        Feature matrix of shape (N, d), or a batch (then ``labels`` is ignored).
    labels : ArrayLike, optional
        Integer labels of shape (N,).
    path : str or Path
        Destination file.
    """
    if isinstance(features, LabeledBatch):
        features, labels = features.features, features.labels
    features = as_matrix(features, "features")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != features.shape[0]:
        raise DimensionError(
            f"Got {features.shape[0]} feature rows but {labels.shape[0]} labels."
        )
    with open(path, "w", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(["label"] + [f"f{j}" for j in range(features.shape[1])])
        for label, row in zip(labels, features):
            writer.writerow([int(label)] + [f"{value:.17g}" for value in row])


def import_features(path: str | Path) -> LabeledBatch:
    """
    Reads a CSV written by :func:`export_features`.
    """
    with open(path, "r", newline="") as file:
        reader = csv.reader(file)
        header = next(reader, None)
        if header is None or not header or header[0] != "label":
            raise DimensionError(f"{path} does not start with a 'label,f0,...' header.")
        dim = len(header) - 1
        labels, rows = [], []
        for line_number, record in enumerate(reader, start=2):
            if len(record) != dim + 1:
                raise DimensionError(
                    f"{path}, line {line_number}: expected {dim + 1} fields, got {len(record)}."
                )
            labels.append(int(record[0]))
            rows.append([float(value) for value in record[1:]])
    features = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    labels = np.array(labels, dtype=np.int64)
    class_count = int(labels.max()) + 1 if labels.size else 1
    return LabeledBatch(features, labels, class_count)
