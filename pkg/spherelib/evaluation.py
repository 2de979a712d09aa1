"""
Angular evaluation of embeddings: angular Fisher score, cosine verification with ROC,
nearest-identity identification with CMC, and pair-angle histograms.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike

from .dataio import LabeledBatch, sample_pairs, split_batch
from .exceptions import ConfigError, DimensionError, DomainError
from .numcore import as_matrix

logger = logging.getLogger(__name__)

CLAMP_TOLERANCE = 1e-12
DEGENERATE_SCATTER = 1e-15


@dataclass
class AngleHistogram:
    """
    Counts of angles in uniform bins over [0, pi].
    """

    bin_edges: list[float]
    counts: list[int]

    @property
    def total(self) -> int:
        return int(sum(self.counts))


@dataclass
class EvalReport:
    """
    Summary of an evaluation run.

    Attributes
    ----------
    afs : float
        Angular Fisher score (lower is more discriminative).
    verification_accuracy : float or None
        Best pair classification accuracy over all thresholds. ``None`` when the pairs
        are all of one kind.
    best_threshold : float or None
        Cosine threshold reaching ``verification_accuracy``.
    rank1 : float or None
        Identification accuracy at rank 1. ``None`` when no class has a sample left
        for the probe set.
    roc : list[tuple[float, float]]
        (false accept rate, true accept rate) points. Empty without verification.
    cmc : list[tuple[int, float]]
        (rank, accuracy) points. Empty without identification.
    pos_angle_hist, neg_angle_hist : :class:`AngleHistogram`
        Angles of same-class and cross-class pairs.
    """

    afs: float
    verification_accuracy: Optional[float]
    best_threshold: Optional[float]
    rank1: Optional[float]
    roc: list[tuple[float, float]]
    cmc: list[tuple[int, float]]
    pos_angle_hist: AngleHistogram
    neg_angle_hist: AngleHistogram

    def validate(self) -> None:
        """
        Checks the report invariants before it is written.

        Raises
        ------
        :class:`~spherelib.exceptions.DomainError`
            If the ROC is not monotone, the CMC decreases or a value is out of range.
        """
        roc = np.asarray(self.roc, dtype=np.float64).reshape(-1, 2)
        if np.any(np.diff(roc[:, 0]) < 0) or np.any(np.diff(roc[:, 1]) < 0):
            raise DomainError("The ROC curve must be non-decreasing.")
        cmc = np.asarray([point[1] for point in self.cmc], dtype=np.float64)
        if np.any(np.diff(cmc) < 0):
            raise DomainError("The CMC curve must be non-decreasing in rank.")
        for accuracy in (self.verification_accuracy, self.rank1):
            if accuracy is not None and not 0 <= accuracy <= 1:
                raise DomainError("Accuracies must lie in [0, 1].")
        if self.best_threshold is not None and not -1 <= self.best_threshold <= 1:
            raise DomainError("The best threshold must lie in [-1, 1].")
        if not self.afs >= 0:
            raise DomainError("The angular Fisher score must be non-negative.")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["roc"] = [[float(x), float(y)] for x, y in self.roc]
        data["cmc"] = [[int(rank), float(accuracy)] for rank, accuracy in self.cmc]
        return data

    def to_json(self) -> str:
        """
        Serializes the report with fixed field names; curves are arrays of [x, y].
        """
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        data = json.loads(text)
        return cls(
            afs=data["afs"],
            verification_accuracy=data["verification_accuracy"],
            best_threshold=data["best_threshold"],
            rank1=data["rank1"],
            roc=[tuple(point) for point in data["roc"]],
            cmc=[(int(rank), accuracy) for rank, accuracy in data["cmc"]],
            pos_angle_hist=AngleHistogram(**data["pos_angle_hist"]),
            neg_angle_hist=AngleHistogram(**data["neg_angle_hist"]),
        )


@dataclass(frozen=True)
class EvalOptions:
    """
    Parameters of :func:`evaluate`.

    Parameters
    ----------
    bins : int
        Number of histogram bins over [0, pi].
    max_rank : int
        Largest rank of the CMC curve (capped at the number of gallery identities).
    pair_seed : int
        Seed of the pair sampling and of the gallery/probe split.
    pair_count : int, optional
        Number of sampled verification pairs. ``None`` uses every pair.
    gallery_fraction : float
        Share of every class placed in the gallery.
    """

    bins: int = 18
    max_rank: int = 5
    pair_seed: int = 0
    pair_count: Optional[int] = None
    gallery_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.bins < 1:
            raise ConfigError("eval.bins", "must be at least 1")
        if self.max_rank < 1:
            raise ConfigError("eval.max_rank", "must be at least 1")
        if self.pair_count is not None and self.pair_count < 1:
            raise ConfigError("eval.pair_count", "must be positive or null")
        if not 0 < self.gallery_fraction < 1:
            raise ConfigError("eval.gallery_fraction", "must lie in (0, 1)")


def _unit_rows(features: np.ndarray, what: str = "feature") -> np.ndarray:
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0):
        raise DomainError(f"Every {what} must be non-zero.")
    return features / norms[:, None]


def _clip_cosines(cosines: np.ndarray) -> np.ndarray:
    if np.any(np.abs(cosines) > 1 + CLAMP_TOLERANCE):
        raise DomainError("Cosine values drifted outside [-1, 1].")
    return np.clip(cosines, -1.0, 1.0)


def cosine_score(a: ArrayLike, b: ArrayLike) -> float:
    """
    Cosine similarity of two non-zero vectors, clamped to [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"Cannot compare vectors of shapes {a.shape} and {b.shape}.")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise DomainError("Cosine score is undefined for a zero vector.")
    return float(_clip_cosines(np.asarray(a @ b / (norm_a * norm_b))))


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _clip_cosines(_unit_rows(a) @ _unit_rows(b).T)


def angular_fisher_score(features: ArrayLike, labels: ArrayLike) -> float:
    """
    Angular Fisher score S_w / S_b.

    S_w sums 1 - cos(x_j, m_i) over every sample and S_b sums n_i (1 - cos(m_i, m))
    over classes, where m_i are the arithmetic class means and m the global mean of
    the raw features.

    Parameters
    ----------
    features : ArrayLike
        Non-zero features of shape (N, d).
    labels : ArrayLike
        Integer labels of shape (N,), with at least two distinct values.

    Returns
    -------
    float
    """
    features = as_matrix(features, "features")
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != features.shape[0]:
        raise DimensionError(f"Got {features.shape[0]} features but {labels.shape[0]} labels.")
    _unit_rows(features)
    classes = np.unique(labels)
    means = np.array([features[labels == c].mean(axis=0) for c in classes])
    counts = np.array([np.sum(labels == c) for c in classes])
    global_mean = features.mean(axis=0)[None, :]
    unit_means = _unit_rows(means, "class mean")
    _unit_rows(global_mean, "global mean")

    member_means = unit_means[np.searchsorted(classes, labels)]
    # singleton classes give 1 - cos(x, x) which can round below zero
    within = max(float(np.sum(1 - np.sum(_unit_rows(features) * member_means, axis=1))), 0.0)
    between = np.sum(counts * (1 - _cosine_matrix(means, global_mean)[:, 0]))
    if between < DEGENERATE_SCATTER:
        raise DomainError(
            "The between-class scatter vanishes; at least two separated classes are required."
        )
    return float(within / between)


def verification_from_scores(
    scores: ArrayLike, same: ArrayLike
) -> tuple[float, float, list[tuple[float, float]]]:
    """
    Sweeps the acceptance threshold over all observed scores.

    A pair is accepted when its score is at least the threshold. The thresholds are the
    distinct scores plus the sentinels -1 and 1; ties in accuracy go to the lower
    threshold.

    Parameters
    ----------
    scores : ArrayLike
        Similarity of each pair.
    same : ArrayLike
        Whether each pair shares an identity.

    Returns
    -------
    accuracy : float
    best_threshold : float
    roc : list[tuple[float, float]]
        (false accept rate, true accept rate) for every threshold, from the strictest
        (nothing accepted) to the loosest, non-decreasing in both coordinates.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    same = np.asarray(same, dtype=bool).reshape(-1)
    if scores.shape != same.shape:
        raise DimensionError(f"Got {scores.size} scores but {same.size} flags.")
    n_pos, n_neg = int(same.sum()), int((~same).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("Verification needs at least one positive and one negative pair.")
    thresholds = np.unique(np.concatenate([scores, [-1.0, 1.0]]))
    pos_sorted = np.sort(scores[same])
    neg_sorted = np.sort(scores[~same])
    true_accepts = n_pos - np.searchsorted(pos_sorted, thresholds, side="left")
    false_accepts = n_neg - np.searchsorted(neg_sorted, thresholds, side="left")
    accuracy = (true_accepts + n_neg - false_accepts) / (n_pos + n_neg)
    best = int(np.argmax(accuracy))
    roc = [(0.0, 0.0)] + [
        (fa / n_neg, ta / n_pos)
        for fa, ta in zip(false_accepts[::-1], true_accepts[::-1])
    ]
    return float(accuracy[best]), float(thresholds[best]), roc


def verification(
    pairs: Sequence[tuple[ArrayLike, ArrayLike, bool]]
) -> tuple[float, float, list[tuple[float, float]]]:
    """
    Cosine-score verification of feature pairs.

    Parameters
    ----------
    pairs : Sequence[tuple[ArrayLike, ArrayLike, bool]]
        Feature pairs with a same-identity flag.

    Returns
    -------
    accuracy, best_threshold, roc
        See :func:`verification_from_scores`.
    """
    if not pairs:
        raise DomainError("Verification needs at least one pair.")
    scores = [cosine_score(a, b) for a, b, _ in pairs]
    return verification_from_scores(scores, [flag for _, _, flag in pairs])


def identification(
    gallery: LabeledBatch, probes: LabeledBatch, max_rank: int
) -> tuple[float, list[tuple[int, float]]]:
    """
    Closed-set identification by cosine similarity.

    Each gallery identity is scored by its best-matching gallery feature. Identities are
    ranked by decreasing score, ties broken by increasing label, and a probe is correct
    at rank r when its identity is among the first r.

    Parameters
    ----------
    gallery : :class:`~spherelib.dataio.LabeledBatch`
        Enrolled features.
    probes : :class:`~spherelib.dataio.LabeledBatch`
        Query features.
    max_rank : int
        Last rank of the CMC curve, at most the number of gallery identities.

    Returns
    -------
    rank1 : float
    cmc : list[tuple[int, float]]
        Fraction of probes correct at rank at most r, for r = 1..max_rank.
    """
    if len(gallery) == 0:
        raise DomainError("The gallery is empty.")
    if len(probes) == 0:
        raise DomainError("There are no probes.")
    identities = np.unique(gallery.labels)
    if not 1 <= max_rank <= identities.size:
        raise DomainError(
            f"max_rank must lie in [1, {identities.size}] (gallery identities), got {max_rank}."
        )
    similarities = _cosine_matrix(probes.features, gallery.features)
    identity_scores = np.column_stack(
        [similarities[:, gallery.labels == label].max(axis=1) for label in identities]
    )
    ranks = np.full(len(probes), np.inf)
    for index, label in enumerate(probes.labels):
        position = np.searchsorted(identities, label)
        if position == identities.size or identities[position] != label:
            continue
        row = identity_scores[index]
        true_score = row[position]
        ranks[index] = 1 + np.sum(row > true_score) + np.sum(row[:position] == true_score)
    cmc = [(r, float(np.mean(ranks <= r))) for r in range(1, max_rank + 1)]
    return cmc[0][1], cmc


def _pair_angles(features: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    upper = np.triu_indices(features.shape[0], k=1)
    angles = np.arccos(_cosine_matrix(features, features)[upper])
    same = labels[upper[0]] == labels[upper[1]]
    return angles[same], angles[~same]


def pair_angle_histograms(
    features: ArrayLike, labels: ArrayLike, bins: int
) -> tuple[AngleHistogram, AngleHistogram]:
    """
    Histograms of the angles of all same-class and all cross-class pairs.

    Parameters
    ----------
    features : ArrayLike
        Non-zero features of shape (N, d), N >= 2.
    labels : ArrayLike
        Integer labels of shape (N,).
    bins : int
        Number of uniform bins over [0, pi].

    Returns
    -------
    pos_hist, neg_hist : :class:`AngleHistogram`
    """
    if bins < 1:
        raise DomainError(f"bins must be positive, got {bins}.")
    features = as_matrix(features, "features")
    labels = np.asarray(labels).reshape(-1)
    if features.shape[0] < 2:
        raise DomainError("At least two samples are needed to form pairs.")
    if labels.shape[0] != features.shape[0]:
        raise DimensionError(f"Got {features.shape[0]} features but {labels.shape[0]} labels.")
    positive, negative = _pair_angles(features, labels)
    edges = np.linspace(0.0, np.pi, bins + 1)
    histograms = []
    for angles in (positive, negative):
        counts, _ = np.histogram(angles, bins=edges)
        histograms.append(AngleHistogram(edges.tolist(), counts.astype(int).tolist()))
    return histograms[0], histograms[1]


def intra_inter_angle_stats(
    features: ArrayLike, labels: ArrayLike, weights: Optional[ArrayLike] = None
) -> tuple[float, float]:
    """
    Largest within-class and smallest cross-class feature angles, in radians.

    Parameters
    ----------
    features : ArrayLike
        Non-zero features of shape (N, d).
    labels : ArrayLike
        Integer labels of shape (N,), with at least two classes.
    weights : ArrayLike, optional
        Classifier matrix of shape (d, K). When given, labels are checked against its
        class count and feature dimension.

    Returns
    -------
    max_intra, min_inter : float
    """
    features = as_matrix(features, "features")
    labels = np.asarray(labels).reshape(-1)
    if weights is not None:
        weights = np.asarray(getattr(weights, "matrix", weights))
        if weights.shape[0] != features.shape[1]:
            raise DimensionError(
                f"Features of shape {features.shape} do not match weights of shape {weights.shape}."
            )
        if labels.max() >= weights.shape[1]:
            raise DomainError(f"Labels must lie in [0, {weights.shape[1]}).")
    if np.unique(labels).size < 2:
        raise DomainError("The minimal inter-class angle needs at least two classes.")
    positive, negative = _pair_angles(features, labels)
    max_intra = float(positive.max()) if positive.size else 0.0
    return max_intra, float(negative.min())


def evaluate(
    features: ArrayLike, labels: ArrayLike, options: EvalOptions = EvalOptions()
) -> EvalReport:
    """
    Runs every angular evaluation on a set of embeddings.

    Verification uses the pairs of :func:`~spherelib.dataio.sample_pairs`;
    identification splits every class between gallery and probes with
    :func:`~spherelib.dataio.split_batch`. Verification is skipped when the pairs are
    all positive or all negative, and identification when every class has a single
    sample; the report then holds ``None`` and an empty curve for them.

    Parameters
    ----------
    features : ArrayLike
        Embeddings of shape (N, d).
    labels : ArrayLike
        Integer labels of shape (N,).
    options : :class:`EvalOptions`
        Evaluation parameters.

    Returns
    -------
    :class:`EvalReport`
        Validated report.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch = LabeledBatch(features, labels, int(labels.max()) + 1)
    pairs = sample_pairs(batch, options.pair_count, options.pair_seed)
    n_positive = sum(1 for _, _, same in pairs if same)
    if 0 < n_positive < len(pairs):
        accuracy, threshold, roc = verification(pairs)
    else:
        logger.warning(
            "Skipping verification: %d of %d pairs are positive", n_positive, len(pairs)
        )
        accuracy, threshold, roc = None, None, []

    gallery, probes = split_batch(batch, options.gallery_fraction, options.pair_seed)
    if len(probes):
        max_rank = min(options.max_rank, np.unique(gallery.labels).size)
        rank1, cmc = identification(gallery, probes, max_rank)
    else:
        logger.warning("Skipping identification: every class has a single sample")
        rank1, cmc = None, []
    pos_hist, neg_hist = pair_angle_histograms(batch.features, labels, options.bins)
    report = EvalReport(
        afs=angular_fisher_score(batch.features, labels),
        verification_accuracy=accuracy,
        best_threshold=threshold,
        rank1=rank1,
        roc=roc,
        cmc=cmc,
        pos_angle_hist=pos_hist,
        neg_angle_hist=neg_hist,
    )
    report.validate()
    return report
