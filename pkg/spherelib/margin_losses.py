"""
Forward and backward passes of the softmax, modified softmax and A-Softmax losses.

All three losses share :func:`cross_entropy`, which averages the per-sample terms with
numpy's pairwise summation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import logsumexp, softmax

from .angular import MarginConfig, cos_multiple, cos_multiple_derivative
from .exceptions import DimensionError, DomainError, NonFiniteError
from .numcore import DEFAULT_EPSILON, as_matrix

LossKind = Literal["softmax", "modified", "asoftmax"]
LOSS_KINDS: tuple[str, ...] = ("softmax", "modified", "asoftmax")
UNIT_NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LossOutput:
    """
    Result of a loss evaluation.

    Attributes
    ----------
    loss : float
        Mean cross-entropy over the batch.
    grad_features : np.ndarray
        Gradient with respect to the features, shape (N, d).
    grad_weights : np.ndarray
        Gradient with respect to the classifier weights, shape (d, K).
    per_sample_target_angle : np.ndarray
        Angle in radians between each feature and its target class weight.
    grad_biases : np.ndarray, optional
        Gradient with respect to the biases, only for :func:`softmax_loss`.
    """

    loss: float
    grad_features: np.ndarray
    grad_weights: np.ndarray
    per_sample_target_angle: np.ndarray
    grad_biases: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AnnealState:
    """
    Position in the annealing schedule of the cosine weight lambda.
    """

    iteration: int = 0
    lambda_: float = 0.0

    @classmethod
    def initial(cls, config: MarginConfig) -> AnnealState:
        """
        State before the first iteration, with lambda at ``config.lambda_start``.
        """
        return cls(iteration=0, lambda_=float(config.lambda_start))


def advance_anneal(state: AnnealState, config: MarginConfig) -> AnnealState:
    """
    Moves the annealing schedule forward by one iteration:
    lambda = max(lambda_min, lambda_start / (1 + lambda_decay * iteration)).

    Parameters
    ----------
    state : :class:`AnnealState`
        Current state.
    config : :class:`~spherelib.angular.MarginConfig`
        Schedule parameters.

    Returns
    -------
    :class:`AnnealState`
        State after the iteration counter is incremented.
    """
    iteration = state.iteration + 1
    lambda_ = max(
        config.lambda_min, config.lambda_start / (1 + config.lambda_decay * iteration)
    )
    return replace(state, iteration=iteration, lambda_=float(lambda_))


def _check_inputs(
    features: ArrayLike, weights: ArrayLike, labels: ArrayLike
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    features = as_matrix(features, "features")
    weights = as_matrix(weights, "weights")
    labels = np.asarray(labels)
    if features.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"Features of shape {features.shape} do not match weights of shape {weights.shape}."
        )
    if labels.shape != (features.shape[0],):
        raise DimensionError(
            f"Expected {features.shape[0]} labels, got an array of shape {labels.shape}."
        )
    if features.shape[0] == 0:
        raise DimensionError("Cannot evaluate a loss on an empty batch.")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DomainError("Labels must be integers.")
    n_classes = weights.shape[1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise DomainError(f"Labels must lie in [0, {n_classes}).")
    return features, weights, labels.astype(np.int64)


def _check_unit_columns(weights: np.ndarray, tolerance: float) -> None:
    norms = np.linalg.norm(weights, axis=0)
    off = np.flatnonzero(np.abs(norms - 1.0) > tolerance)
    if off.size:
        raise DomainError(
            f"Classifier column {off[0]} has norm {norms[off[0]]!r}; unit norm is required."
        )


def _target_angles(
    features: np.ndarray, weights: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    target_weights = weights[:, labels].T
    denominator = np.maximum(
        np.linalg.norm(features, axis=1) * np.linalg.norm(target_weights, axis=1),
        DEFAULT_EPSILON,
    )
    cosines = np.einsum("ij,ij->i", features, target_weights) / denominator
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Mean cross-entropy of integer labels under softmax(logits).

    Parameters
    ----------
    logits : np.ndarray
        Logits of shape (N, K).
    labels : np.ndarray
        Integer labels of shape (N,).

    Returns
    -------
    loss : float
        Mean of the per-sample terms.
    grad_logits : np.ndarray
        Gradient of the mean loss with respect to the logits.
    """
    n_samples = logits.shape[0]
    rows = np.arange(n_samples)
    per_sample = logsumexp(logits, axis=1) - logits[rows, labels]
    loss = float(np.sum(per_sample) / n_samples)
    grad_logits = softmax(logits, axis=1)
    grad_logits[rows, labels] -= 1.0
    grad_logits /= n_samples
    if not np.isfinite(loss):
        raise NonFiniteError("The loss is not finite.")
    # per-sample terms are non-negative; rounding can leave -0.0 or -1e-17
    return max(loss, 0.0), grad_logits


def softmax_loss(
    features: ArrayLike, weights: ArrayLike, biases: ArrayLike, labels: ArrayLike
) -> LossOutput:
    """
    Softmax cross-entropy with logits W_j^T x_i + b_j.

    Parameters
    ----------
    features : ArrayLike
        Features of shape (N, d).
    weights : ArrayLike
        Classifier weights of shape (d, K).
    biases : ArrayLike
        Biases of shape (K,).
    labels : ArrayLike
        Integer labels in [0, K).

    Returns
    -------
    :class:`LossOutput`
        Loss and gradients, including ``grad_biases``.
    """
    features, weights, labels = _check_inputs(features, weights, labels)
    biases = np.asarray(biases, dtype=np.float64)
    if biases.shape != (weights.shape[1],):
        raise DimensionError(
            f"Expected {weights.shape[1]} biases, got an array of shape {biases.shape}."
        )
    if not np.all(np.isfinite(biases)):
        raise NonFiniteError("Biases contain non-finite values.")
    logits = features @ weights + biases
    loss, grad_logits = cross_entropy(logits, labels)
    return LossOutput(
        loss=loss,
        grad_features=grad_logits @ weights.T,
        grad_weights=features.T @ grad_logits,
        per_sample_target_angle=_target_angles(features, weights, labels),
        grad_biases=grad_logits.sum(axis=0),
    )


def modified_softmax_loss(
    features: ArrayLike,
    weights: ArrayLike,
    labels: ArrayLike,
    unit_norm_tolerance: float = UNIT_NORM_TOLERANCE,
) -> LossOutput:
    """
    Softmax cross-entropy with unit-norm weights and no biases, so that the logits are
    ||x_i|| cos(theta_j,i).

    Parameters
    ----------
    features : ArrayLike
        Features of shape (N, d).
    weights : ArrayLike
        Classifier weights of shape (d, K) with unit-norm columns.
    labels : ArrayLike
        Integer labels in [0, K).
    unit_norm_tolerance : float
        Accepted deviation of the column norms from 1. Gradient checks that perturb
        the weights pass ``numpy.inf``.
        Defaults to ``1e-9``.

    Returns
    -------
    :class:`LossOutput`
    """
    features, weights, labels = _check_inputs(features, weights, labels)
    _check_unit_columns(weights, unit_norm_tolerance)
    logits = features @ weights
    loss, grad_logits = cross_entropy(logits, labels)
    return LossOutput(
        loss=loss,
        grad_features=grad_logits @ weights.T,
        grad_weights=features.T @ grad_logits,
        per_sample_target_angle=_target_angles(features, weights, labels),
    )


def _segment_from_cosine(cos_theta: np.ndarray, m: int) -> np.ndarray:
    # theta >= j pi/m  <=>  cos(theta) <= cos(j pi/m)
    thresholds = np.cos(np.arange(1, m) * np.pi / m)
    return np.sum(cos_theta[:, None] <= thresholds[None, :], axis=1).astype(np.int64)


def target_logit(
    feature_norm: ArrayLike, cos_theta: ArrayLike, m: int, lambda_: float = 0.0
) -> np.ndarray:
    """
    Annealed A-Softmax target logit (lambda ||x|| cos(theta) + ||x|| psi(theta)) / (1 + lambda).

    The segment of psi is selected from the cosine directly, so no inverse
    trigonometric function is involved.
    """
    norm = np.asarray(feature_norm, dtype=np.float64)
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), -1.0, 1.0)
    k = _segment_from_cosine(np.atleast_1d(c), m).reshape(c.shape)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    psi_values = sign * cos_multiple(c, m) - 2.0 * k
    return (lambda_ * norm * c + norm * psi_values) / (1 + lambda_)


def restricted_target_logit(
    feature_norm: ArrayLike, cos_theta: ArrayLike, m: int
) -> np.ndarray:
    """
    Target logit ||x|| cos(m theta) of the margin loss restricted to theta in [0, pi/m].

    Raises
    ------
    :class:`~spherelib.exceptions.DomainError`
        If any angle lies beyond pi/m.
    """
    c = np.asarray(cos_theta, dtype=np.float64)
    if np.any(c < np.cos(np.pi / m) - 1e-15):
        raise DomainError("The restricted logit is only defined for theta in [0, pi/m].")
    return np.asarray(feature_norm, dtype=np.float64) * cos_multiple(c, m)


def asoftmax_logits(
    features: ArrayLike,
    weights: ArrayLike,
    labels: ArrayLike,
    config: MarginConfig,
    anneal: AnnealState,
    unit_norm_tolerance: float = UNIT_NORM_TOLERANCE,
) -> np.ndarray:
    """
    Logits seen by :func:`asoftmax_loss`, of shape (N, K).

    The labelled column holds :func:`target_logit` and the others ||x|| cos(theta_j).
    The predicted class of a sample is the argmax of its row.
    """
    features, weights, labels = _check_inputs(features, weights, labels)
    _check_unit_columns(weights, unit_norm_tolerance)
    rows = np.arange(features.shape[0])
    logits = features @ weights
    norms = np.linalg.norm(features, axis=1)
    cos_target = logits[rows, labels] / np.maximum(norms, DEFAULT_EPSILON)
    logits[rows, labels] = target_logit(norms, cos_target, config.m, anneal.lambda_)
    return logits


def asoftmax_loss(
    features: ArrayLike,
    weights: ArrayLike,
    labels: ArrayLike,
    config: MarginConfig,
    anneal: AnnealState,
    unit_norm_tolerance: float = UNIT_NORM_TOLERANCE,
) -> LossOutput:
    """
    A-Softmax loss with the annealed target logit.

    For each sample, the target logit is
    (lambda ||x|| cos(theta) + ||x|| psi(theta)) / (1 + lambda) and the other logits are
    ||x|| cos(theta_j). ``lambda = 0`` gives the pure margin loss and ``m = 1`` the
    modified softmax loss. The weights are treated as free parameters: the
    cosine is x^T W_y / ||x|| with ||W_y|| = 1, and renormalization happens after the
    optimizer step.

    Parameters
    ----------
    features : ArrayLike
        Features of shape (N, d).
    weights : ArrayLike
        Classifier weights of shape (d, K) with unit-norm columns.
    labels : ArrayLike
        Integer labels in [0, K).
    config : :class:`~spherelib.angular.MarginConfig`
        Margin multiplier (only ``m`` is used here).
    anneal : :class:`AnnealState`
        Current value of lambda.
    unit_norm_tolerance : float
        Accepted deviation of the column norms from 1.
        Defaults to ``1e-9``.

    Returns
    -------
    :class:`LossOutput`
    """
    if config.m < 1:
        raise DomainError(f"The margin m must be at least 1, got {config.m}.")
    lambda_ = anneal.lambda_
    if not lambda_ >= 0:
        raise DomainError(f"lambda must be non-negative, got {lambda_}.")
    features, weights, labels = _check_inputs(features, weights, labels)
    _check_unit_columns(weights, unit_norm_tolerance)
    m = config.m
    rows = np.arange(features.shape[0])

    logits = features @ weights
    norms = np.linalg.norm(features, axis=1)
    safe_norms = np.maximum(norms, DEFAULT_EPSILON)
    cos_target = np.clip(logits[rows, labels] / safe_norms, -1.0, 1.0)
    k = _segment_from_cosine(cos_target, m)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    psi_values = sign * cos_multiple(cos_target, m) - 2.0 * k
    logits[rows, labels] = (lambda_ * norms * cos_target + norms * psi_values) / (
        1 + lambda_
    )

    loss, grad_logits = cross_entropy(logits, labels)

    grad_features = grad_logits @ weights.T
    grad_weights = features.T @ grad_logits
    # the plain linear path through the target column is replaced by the blended one
    target_grad = grad_logits[rows, labels]
    target_weights = weights[:, labels].T
    grad_features -= target_grad[:, None] * target_weights
    np.subtract.at(grad_weights.T, labels, target_grad[:, None] * features)

    psi_slope = sign * cos_multiple_derivative(cos_target, m)
    unit_features = features / safe_norms[:, None]
    d_logit_d_x = (
        lambda_ * target_weights
        + psi_values[:, None] * unit_features
        + psi_slope[:, None]
        * (target_weights - cos_target[:, None] * unit_features)
    ) / (1 + lambda_)
    d_logit_d_w = (lambda_ + psi_slope)[:, None] * features / (1 + lambda_)
    grad_features += target_grad[:, None] * d_logit_d_x
    np.add.at(grad_weights.T, labels, target_grad[:, None] * d_logit_d_w)

    return LossOutput(
        loss=loss,
        grad_features=grad_features,
        grad_weights=grad_weights,
        per_sample_target_angle=np.arccos(cos_target),
    )


def evaluate_loss(
    kind: LossKind,
    features: ArrayLike,
    weights: ArrayLike,
    labels: ArrayLike,
    config: MarginConfig,
    anneal: AnnealState,
    unit_norm_tolerance: float = UNIT_NORM_TOLERANCE,
    biases: Optional[ArrayLike] = None,
) -> LossOutput:
    """
    Dispatches to the loss named by ``kind``.

    Only the softmax loss takes ``biases``; without them it runs with zero biases.
    """
    if kind == "softmax":
        weights = np.asarray(weights, dtype=np.float64)
        if biases is None:
            biases = np.zeros(weights.shape[1])
        return softmax_loss(features, weights, biases, labels)
    if biases is not None:
        raise DomainError(f"The {kind!r} loss has no classifier biases.")
    if kind == "modified":
        return modified_softmax_loss(features, weights, labels, unit_norm_tolerance)
    if kind == "asoftmax":
        return asoftmax_loss(
            features, weights, labels, config, anneal, unit_norm_tolerance
        )
    raise DomainError(f"Unknown loss kind {kind!r}; expected one of {LOSS_KINDS}.")
