"""Confusion-guided specialist augmentation for multi-label classifiers.

Train a base network, read its top-K confusions on held-out data, spectrally
cluster the label space, graft per-cluster specialist head stacks onto the
frozen base, and measure the accuracy/compute trade against a randomized
control.
"""

from .augment import (
    AugmentationSpec,
    AugmentedNetwork,
    augment,
    forward_augmented,
    load_augmented,
    save_augmented,
    train_augmented,
)
from .confusion import (
    ConfusionMatrix,
    SimilarityMatrix,
    TopKPredictions,
    codetection_matrix,
    confusion_matrix,
    load_confusion,
    save_confusion,
    symmetrize,
    top_k,
)
from .dataset import (
    Dataset,
    Example,
    SplitSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    InputError,
    MissingArtifactError,
    ParseError,
)
from .evaluate import (
    ComparisonTable,
    EvalReport,
    compare,
    count_multiply_adds,
    evaluate_model,
    map_at_top_k,
)
from .linalg import (
    EigenDecomposition,
    KMeansResult,
    kmeans,
    load_matrix,
    matmul,
    save_matrix,
    symmetric_eigen,
)
from .network import (
    LayerSpec,
    NetworkParams,
    TrainConfig,
    backward,
    forward,
    init_network,
    load_network,
    loss,
    mlp_specs,
    save_network,
    sgd_train,
)
from .partition import (
    LabelPartition,
    SpectralConfig,
    load_partition,
    partition_quality,
    randomized_control,
    save_partition,
    spectral_cluster,
)
from .pipeline import PipelineConfig, parse_config, stage_seed

__all__ = [
    "AugmentationSpec",
    "AugmentedNetwork",
    "ComparisonTable",
    "ConfigError",
    "ConfusionMatrix",
    "ConvergenceError",
    "Dataset",
    "EigenDecomposition",
    "EvalReport",
    "Example",
    "InputError",
    "KMeansResult",
    "LabelPartition",
    "LayerSpec",
    "MissingArtifactError",
    "NetworkParams",
    "ParseError",
    "PipelineConfig",
    "SimilarityMatrix",
    "SpectralConfig",
    "SplitSpec",
    "TopKPredictions",
    "TrainConfig",
    "augment",
    "backward",
    "codetection_matrix",
    "compare",
    "confusion_matrix",
    "count_multiply_adds",
    "evaluate_model",
    "forward",
    "forward_augmented",
    "generate_synthetic",
    "init_network",
    "kmeans",
    "load_augmented",
    "load_confusion",
    "load_dataset",
    "load_matrix",
    "load_network",
    "load_partition",
    "loss",
    "map_at_top_k",
    "matmul",
    "mlp_specs",
    "parse_config",
    "partition_quality",
    "randomized_control",
    "save_augmented",
    "save_confusion",
    "save_dataset",
    "save_matrix",
    "save_network",
    "save_partition",
    "sgd_train",
    "spectral_cluster",
    "split",
    "stage_seed",
    "symmetric_eigen",
    "symmetrize",
    "top_k",
    "train_augmented",
]
