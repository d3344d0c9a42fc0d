"""Retriever-dictionary feature enhancement layer with dictionary construction,
training and compression utilities."""

from .compress import (
    DistillConfig,
    contrastive_loss,
    distill,
    init_student,
    mean_output_cosine,
    select_initial_subset,
)
from .dictionary import (
    EmbeddingSet,
    KMeansConfig,
    kmeans,
    lloyd,
    preprocess,
    random_dictionary,
)
from .estimators import KMeansDictionary, RDClassifier, RetrieverDictionary
from .harness import (
    RDModel,
    TrainConfig,
    correlation_coefficient_table,
    generate_toy_task,
    taylor_update_check,
    train_model,
)
from .layer import (
    RDGradients,
    RDParams,
    atom_mix,
    finite_difference_gradients,
    rd_backward,
    rd_forward,
)
from .normalization import Dictionary, PonoParams, pono, weight_normalize
from .pipeline import run_pipeline
from .retriever import (
    FusedKernel,
    RetrieverWeights,
    coefficient_generator,
    fuse_weights,
    fused_retriever,
    global_information_exchanger,
    param_count,
    retriever_core,
)

__all__ = [
    "atom_mix",
    "coefficient_generator",
    "contrastive_loss",
    "correlation_coefficient_table",
    "Dictionary",
    "distill",
    "DistillConfig",
    "EmbeddingSet",
    "finite_difference_gradients",
    "fuse_weights",
    "fused_retriever",
    "FusedKernel",
    "generate_toy_task",
    "global_information_exchanger",
    "init_student",
    "kmeans",
    "KMeansConfig",
    "KMeansDictionary",
    "lloyd",
    "mean_output_cosine",
    "param_count",
    "pono",
    "PonoParams",
    "preprocess",
    "random_dictionary",
    "rd_backward",
    "rd_forward",
    "RDClassifier",
    "RDGradients",
    "RDModel",
    "RDParams",
    "retriever_core",
    "RetrieverDictionary",
    "RetrieverWeights",
    "run_pipeline",
    "select_initial_subset",
    "taylor_update_check",
    "train_model",
    "TrainConfig",
    "weight_normalize",
]

__version__ = "0.1.0"
