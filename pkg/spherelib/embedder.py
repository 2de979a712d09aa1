"""
Fully connected embedder trained with a margin loss.

The hidden layers use rectifiers and biases. The last layer produces the embedding
without any nonlinearity, and the classifier on top of it has unit-norm columns and no
bias. Training is plain SGD with step decay of the learning rate; the classifier is
projected back to unit-norm columns after every step.

For ablation runs the embedding can be rectified as well, and the classifier can keep
free columns (``"linear"``) or free columns with biases (``"affine"``). Only the
softmax loss accepts those classifiers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np
from numpy.typing import ArrayLike

from .angular import MarginConfig
from .dataio import LabeledBatch
from .exceptions import (
    ConfigError,
    DimensionError,
    DivergenceError,
    DomainError,
    NonFiniteError,
)
from .margin_losses import (
    LOSS_KINDS,
    AnnealState,
    LossKind,
    advance_anneal,
    evaluate_loss,
)
from .numcore import as_matrix, column_norms, make_rng, normalize_columns

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu",)
CLASSIFIERS = ("angular", "linear", "affine")
ClassifierKind = Literal["angular", "linear", "affine"]
# drift tolerated before a column is projected back to unit norm
PROJECTION_TOLERANCE = 1e-12


@dataclass(frozen=True)
class EmbedderConfig:
    """
    Architecture of the embedder.

    Parameters
    ----------
    layer_widths : tuple[int, ...]
        Input dimension, hidden widths and embedding dimension, in order.
    activation : str
        Hidden nonlinearity. Only ``"relu"`` is available.
        Defaults to ``"relu"``.
    seed : int
        Seed used for initialization and minibatch shuffling.
        Defaults to 0.
    classifier : str
        ``"angular"`` (unit-norm columns, no bias), ``"linear"`` (free columns, no bias)
        or ``"affine"`` (free columns and biases).
        Defaults to ``"angular"``.
    embedding_relu : bool
        Applies the hidden nonlinearity to the embedding output too.
        Defaults to ``False``.
    """

    layer_widths: tuple[int, ...] = (2, 2)
    activation: Literal["relu"] = "relu"
    seed: int = 0
    classifier: ClassifierKind = "angular"
    embedding_relu: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2:
            raise ConfigError(
                "embedder.layer_widths",
                "needs at least the input and the embedding widths",
            )
        if any(width < 1 for width in self.layer_widths):
            raise ConfigError("embedder.layer_widths", "all widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                "embedder.activation", f"must be one of {ACTIVATIONS}, got {self.activation!r}"
            )
        if not 0 <= self.seed < 2**64:
            raise ConfigError("embedder.seed", "must be a 64-bit unsigned integer")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(
                "embedder.classifier", f"must be one of {CLASSIFIERS}, got {self.classifier!r}"
            )
        if not isinstance(self.embedding_relu, bool):
            raise ConfigError("embedder.embedding_relu", "must be true or false")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_widths[-1]


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimization settings.

    Parameters
    ----------
    iterations : int
        Number of SGD steps.
    batch_size : int
        Minibatch size.
    learning_rate : float
        Initial learning rate.
    lr_decay_points : tuple[int, ...]
        Strictly increasing iterations at which the learning rate is multiplied by
        ``lr_decay_factor``.
    lr_decay_factor : float
        Multiplier in (0, 1).
    margin : :class:`~spherelib.angular.MarginConfig`
        Margin and annealing schedule (used by ``"asoftmax"``).
    loss_kind : str
        One of ``"softmax"``, ``"modified"`` or ``"asoftmax"``.
    log_every : int
        Iterations between progress log records. 0 disables them.
        Defaults to 100.
    """

    iterations: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    lr_decay_points: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    margin: MarginConfig = field(default_factory=MarginConfig)
    loss_kind: LossKind = "asoftmax"
    log_every: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "lr_decay_points", tuple(int(p) for p in self.lr_decay_points)
        )
        if self.iterations < 0:
            raise ConfigError("train.iterations", "must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be at least 1")
        if not self.learning_rate >= 0:
            raise ConfigError("train.learning_rate", "must be non-negative")
        points = self.lr_decay_points
        if any(b <= a for a, b in zip(points, points[1:])):
            raise ConfigError("train.lr_decay_points", "must be strictly increasing")
        if not 0 < self.lr_decay_factor < 1:
            raise ConfigError("train.lr_decay_factor", "must lie in (0, 1)")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(
                "train.loss_kind", f"must be one of {LOSS_KINDS}, got {self.loss_kind!r}"
            )

    def learning_rate_at(self, iteration: int) -> float:
        """
        Learning rate after the decay points reached by ``iteration``.
        """
        decays = sum(1 for point in self.lr_decay_points if iteration >= point)
        return self.learning_rate * self.lr_decay_factor**decays


@dataclass(frozen=True)
class DenseLayer:
    """
    Affine layer ``inputs @ weights + biases``.
    """

    weights: np.ndarray
    biases: np.ndarray


@dataclass(frozen=True)
class ClassifierWeights:
    """
    Classifier matrix of shape (d, K).

    The angular classifier (``normalized=True``) has unit-norm columns and no bias. The
    free classifiers of the softmax baselines skip the norm check and may carry biases
    of shape (K,).
    """

    matrix: np.ndarray
    biases: Optional[np.ndarray] = None
    normalized: bool = True

    def __post_init__(self) -> None:
        if self.normalized:
            if self.biases is not None:
                raise DomainError("The angular classifier has no biases.")
            norms = np.linalg.norm(self.matrix, axis=0)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise DomainError("Classifier columns must have unit norm.")
        if self.biases is not None and self.biases.shape != (self.matrix.shape[1],):
            raise DimensionError(
                f"Expected {self.matrix.shape[1]} classifier biases, got shape {self.biases.shape}."
            )

    @property
    def k_classes(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class ModelState:
    """
    Parameters and training progress of an embedder.

    Attributes
    ----------
    config : :class:`EmbedderConfig`
        Architecture the parameters belong to.
    layers : tuple[:class:`DenseLayer`, ...]
        Embedding layers, the last one producing the embedding.
    classifier : :class:`ClassifierWeights`
        Unit-norm, bias-free classifier unless ``config.classifier`` selects a free one.
    anneal : :class:`~spherelib.margin_losses.AnnealState`
        Annealing schedule position.
    iteration : int
        Number of completed training steps.
    """

    config: EmbedderConfig
    layers: tuple[DenseLayer, ...]
    classifier: ClassifierWeights
    anneal: AnnealState
    iteration: int = 0

    @property
    def k_classes(self) -> int:
        return self.classifier.k_classes


@dataclass(frozen=True)
class Gradients:
    """
    Loss value and gradients of every trainable parameter.
    """

    loss: float
    layer_weights: tuple[np.ndarray, ...]
    layer_biases: tuple[np.ndarray, ...]
    classifier: np.ndarray
    classifier_biases: Optional[np.ndarray] = None


def init_model(
    cfg: EmbedderConfig, k_classes: int, margin: MarginConfig | None = None
) -> ModelState:
    """
    Creates a model with variance-scaled random weights.

    Layer weights are drawn uniformly in +/- sqrt(6 / (fan_in + fan_out)) and biases
    start at zero. The classifier columns are Gaussian draws normalized to unit norm,
    whatever the classifier kind, and affine classifiers start with zero biases.

    Parameters
    ----------
    cfg : :class:`EmbedderConfig`
        Architecture and seed.
    k_classes : int
        Number of classes, at least 2.
    margin : :class:`~spherelib.angular.MarginConfig`, optional
        Schedule that sets the initial lambda. :func:`train_step` restarts a schedule
        that has not advanced yet from its own margin configuration.
        Defaults to ``MarginConfig()``.

    Returns
    -------
    :class:`ModelState`
    """
    if k_classes < 2:
        raise DomainError(f"At least two classes are required, got {k_classes}.")
    rng = make_rng(cfg.seed)
    layers = []
    for fan_in, fan_out in zip(cfg.layer_widths, cfg.layer_widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            DenseLayer(
                weights=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                biases=np.zeros(fan_out),
            )
        )
    classifier = ClassifierWeights(
        normalize_columns(rng.standard_normal((cfg.embedding_dim, k_classes))),
        biases=np.zeros(k_classes) if cfg.classifier == "affine" else None,
        normalized=cfg.classifier == "angular",
    )
    anneal = AnnealState.initial(margin if margin is not None else MarginConfig())
    return ModelState(cfg, tuple(layers), classifier, anneal)


def _rectified(state: ModelState, index: int) -> bool:
    return index < len(state.layers) - 1 or state.config.embedding_relu


def _forward(
    state: ModelState, inputs: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    activations = [inputs]
    hidden = inputs
    for index, layer in enumerate(state.layers):
        hidden = hidden @ layer.weights + layer.biases
        if _rectified(state, index):
            hidden = np.maximum(hidden, 0.0)
        activations.append(hidden)
    return hidden, activations


def embed(state: ModelState, inputs: ArrayLike) -> np.ndarray:
    """
    Computes the embeddings of ``inputs``.

    Parameters
    ----------
    state : :class:`ModelState`
        Model to evaluate.
    inputs : ArrayLike
        Matrix of shape (N, input_dim).

    Returns
    -------
    np.ndarray
        Embeddings of shape (N, embedding_dim). Unless ``embedding_relu`` is set, no
        rectifier is applied to the last layer, so coordinates can be negative.
    """
    inputs = as_matrix(inputs, "inputs")
    if inputs.shape[1] != state.config.input_dim:
        raise DimensionError(
            f"The model expects inputs of width {state.config.input_dim}, got shape {inputs.shape}."
        )
    embeddings, _ = _forward(state, inputs)
    return embeddings


def compute_gradients(
    state: ModelState,
    batch: LabeledBatch,
    cfg: TrainConfig,
    unit_norm_tolerance: float = 1e-9,
) -> Gradients:
    """
    Evaluates the loss of a batch and backpropagates it through the whole model.

    Parameters
    ----------
    state : :class:`ModelState`
        Model to differentiate.
    batch : :class:`LabeledBatch`
        Inputs and labels.
    cfg : :class:`TrainConfig`
        Selects the loss and the margin.
    unit_norm_tolerance : float
        Accepted deviation of the classifier column norms from 1.
        Defaults to ``1e-9``.

    Returns
    -------
    :class:`Gradients`

    Raises
    ------
    :class:`~spherelib.exceptions.DomainError`
        If the modified or A-Softmax loss is asked to train a free classifier.
    """
    if len(batch) == 0:
        raise DimensionError("Cannot train on an empty batch.")
    if batch.dim != state.config.input_dim:
        raise DimensionError(
            f"The model expects inputs of width {state.config.input_dim}, got {batch.dim}."
        )
    if cfg.loss_kind != "softmax" and not state.classifier.normalized:
        raise DomainError(
            f"The {cfg.loss_kind!r} loss needs the angular classifier, "
            f"the model has a {state.config.classifier!r} one."
        )
    embeddings, activations = _forward(state, batch.features)
    output = evaluate_loss(
        cfg.loss_kind,
        embeddings,
        state.classifier.matrix,
        batch.labels,
        cfg.margin,
        state.anneal,
        unit_norm_tolerance,
        biases=state.classifier.biases,
    )
    grad = output.grad_features
    weight_grads, bias_grads = [], []
    for index in range(len(state.layers) - 1, -1, -1):
        layer = state.layers[index]
        if _rectified(state, index):
            grad = grad * (activations[index + 1] > 0)
        weight_grads.append(activations[index].T @ grad)
        bias_grads.append(grad.sum(axis=0))
        grad = grad @ layer.weights.T
    return Gradients(
        loss=output.loss,
        layer_weights=tuple(reversed(weight_grads)),
        layer_biases=tuple(reversed(bias_grads)),
        classifier=output.grad_weights,
        classifier_biases=output.grad_biases if state.classifier.biases is not None else None,
    )


def project_columns(matrix: np.ndarray) -> np.ndarray:
    """
    Rescales the columns whose norm drifted from 1 by more than
    ``PROJECTION_TOLERANCE``. The other columns are returned bit for bit.
    """
    drifted = np.abs(column_norms(matrix) - 1.0) > PROJECTION_TOLERANCE
    if not np.any(drifted):
        return matrix
    projected = matrix.copy()
    projected[:, drifted] = normalize_columns(matrix[:, drifted])
    return projected


def train_step(
    state: ModelState, batch: LabeledBatch, cfg: TrainConfig
) -> tuple[ModelState, float]:
    """
    Performs one projected SGD step.

    The loss is evaluated and differentiated, every parameter moves against its
    gradient with the current learning rate, the angular classifier is projected back
    to unit-norm columns and, for the A-Softmax loss, the annealing schedule advances.
    A schedule that has not advanced yet starts from ``cfg.margin.lambda_start``, so
    lambda never increases over a run.

    Parameters
    ----------
    state : :class:`ModelState`
        Model before the step.
    batch : :class:`LabeledBatch`
        Minibatch.
    cfg : :class:`TrainConfig`
        Optimization settings.

    Returns
    -------
    state : :class:`ModelState`
        Model after the step. With a zero learning rate only the counters change.
    loss : float
        Loss before the update.
    """
    if cfg.loss_kind == "asoftmax" and state.anneal.iteration == 0:
        state = replace(state, anneal=AnnealState.initial(cfg.margin))
    learning_rate = cfg.learning_rate_at(state.iteration)
    try:
        gradients = compute_gradients(state, batch, cfg)
    except NonFiniteError as error:
        raise DivergenceError(
            state.iteration, state.anneal.lambda_, learning_rate
        ) from error
    if not np.isfinite(gradients.loss):
        raise DivergenceError(state.iteration, state.anneal.lambda_, learning_rate)

    layers = tuple(
        DenseLayer(
            layer.weights - learning_rate * weight_grad,
            layer.biases - learning_rate * bias_grad,
        )
        for layer, weight_grad, bias_grad in zip(
            state.layers, gradients.layer_weights, gradients.layer_biases
        )
    )
    classifier = state.classifier.matrix - learning_rate * gradients.classifier
    biases = state.classifier.biases
    if biases is not None:
        biases = biases - learning_rate * gradients.classifier_biases
    parameters = [classifier] + [p for layer in layers for p in (layer.weights, layer.biases)]
    if biases is not None:
        parameters.append(biases)
    if not all(np.all(np.isfinite(p)) for p in parameters):
        raise DivergenceError(state.iteration, state.anneal.lambda_, learning_rate)

    if state.classifier.normalized:
        classifier = project_columns(classifier)
    anneal = state.anneal
    if cfg.loss_kind == "asoftmax":
        anneal = advance_anneal(anneal, cfg.margin)
    new_state = replace(
        state,
        layers=layers,
        classifier=ClassifierWeights(classifier, biases, state.classifier.normalized),
        anneal=anneal,
        iteration=state.iteration + 1,
    )
    return new_state, gradients.loss


def minibatches(
    n_samples: int, batch_size: int, seed: int, epoch: int
) -> list[np.ndarray]:
    """
    Index arrays of the full minibatches of one epoch. The shuffle is seeded by
    ``(seed, epoch)`` so that any epoch can be replayed on its own.
    """
    order = np.random.Generator(np.random.PCG64([seed, epoch])).permutation(n_samples)
    n_batches = n_samples // batch_size
    return [order[i * batch_size : (i + 1) * batch_size] for i in range(n_batches)]


def train(
    state: ModelState, dataset: LabeledBatch, cfg: TrainConfig
) -> tuple[ModelState, np.ndarray]:
    """
    Runs ``cfg.iterations`` training steps over shuffled minibatches.

    Parameters
    ----------
    state : :class:`ModelState`
        Initial model.
    dataset : :class:`LabeledBatch`
        Training set, with at least ``cfg.batch_size`` samples.
    cfg : :class:`TrainConfig`
        Optimization settings.

    Returns
    -------
    state : :class:`ModelState`
        Trained model.
    loss_history : np.ndarray
        Loss of every step, of length ``cfg.iterations``.
    """
    if len(dataset) < cfg.batch_size:
        raise DimensionError(
            f"The dataset has {len(dataset)} samples, fewer than the batch size {cfg.batch_size}."
        )
    history = np.empty(cfg.iterations)
    epoch, queue = 0, []
    for step in range(cfg.iterations):
        if not queue:
            queue = minibatches(len(dataset), cfg.batch_size, state.config.seed, epoch)
            epoch += 1
        indices = queue.pop(0)
        state, history[step] = train_step(state, dataset.subset(indices), cfg)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            logger.info(
                "iteration %d: loss %.6f, lambda %.4f, learning rate %.3g",
                state.iteration,
                history[step],
                state.anneal.lambda_,
                cfg.learning_rate_at(state.iteration - 1),
            )
    return state, history
