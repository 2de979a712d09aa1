"""
spherelib
=========

Angular-margin embeddings on the hypersphere, built on NumPy and SciPy.

Provides:
    1. the monotone angle function psi, the multiple-angle expansion and the margin
       bounds of the angular decision boundaries
    2. softmax, modified softmax and A-Softmax losses with analytic gradients
    3. a small fully connected embedder trained with projected SGD and annealing
    4. angular evaluation (angular Fisher score, verification ROC, identification CMC)
    5. synthetic datasets, IDX files and CSV feature export

The ``spherelib`` command runs reproducible experiments from YAML configuration files
(see :func:`~spherelib.file_manager.get_presets` for the packaged presets).
"""

from ._version import __version__
from .angular import (
    BinaryDecision,
    MarginConfig,
    angular_margin,
    binary_bound_root,
    binary_bound_slack,
    bound_inequalities_hold,
    bound_table,
    classify_binary,
    cos_multiple,
    cos_multiple_derivative,
    m_min_binary,
    m_min_multiclass,
    multiclass_bound_holds,
    neighbor_bound_holds,
    psi,
    psi_derivative,
)
from .checkpoint import checkpoint_load, checkpoint_read, checkpoint_save
from .dataio import (
    LabeledBatch,
    SyntheticSpec,
    export_features,
    import_features,
    load_idx,
    sample_pairs,
    split_batch,
    synth_blobs,
    write_idx,
)
from .embedder import (
    ClassifierWeights,
    EmbedderConfig,
    ModelState,
    TrainConfig,
    compute_gradients,
    embed,
    init_model,
    project_columns,
    train,
    train_step,
)
from .evaluation import (
    EvalOptions,
    EvalReport,
    angular_fisher_score,
    cosine_score,
    evaluate,
    identification,
    intra_inter_angle_stats,
    pair_angle_histograms,
    verification,
    verification_from_scores,
)
from .exceptions import (
    CheckpointError,
    ConfigError,
    DimensionError,
    DivergenceError,
    DomainError,
    IdxFormatError,
    NonFiniteError,
    SpherelibException,
)
from .file_manager import RunConfig, get_presets, load_run_config
from .margin_losses import (
    AnnealState,
    LossOutput,
    advance_anneal,
    asoftmax_logits,
    asoftmax_loss,
    modified_softmax_loss,
    restricted_target_logit,
    softmax_loss,
    target_logit,
)
from .numcore import column_norms, make_rng, matmul, normalize_columns, numerical_gradient
