"""Laplacian-LoRA: spectral low-rank adaptation of GCN propagation.

numpy/scipy implementation of the graph kernels, a partial Laplacian
eigensolver, the spectral filters, a small autodiff engine, the GCN model
and oversmoothing diagnostics.
"""

from .datasets import (
    SyntheticSpec,
    generate,
    graph_hash,
    load_dataset,
    planetoid_split,
    save_dataset,
)
from .diagnostics import (
    DiagnosticsReport,
    build_report,
    contraction_ratio,
    embedding_variance,
    energy_retention,
    propagation_spectrum,
    variance_sweep,
)
from .eigen import EigenBasis, load_eigen_cache, partial_eigen, save_eigen_cache
from .filters import (
    FilterParams,
    ThetaNet,
    alpha_at_layer,
    beta_of_lambda,
    effective_filter,
    gcn_filter,
    lora_filter,
    stability_report,
    theta_eval,
)
from .graph import (
    GraphDataset,
    SparseMatrix,
    normalized_laplacian,
    propagation_operator,
    spmm,
    symmetrize,
)
from .model import (
    GcnModel,
    ModelConfig,
    TrainConfig,
    build_model,
    lora_correction,
    run_protocol,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "SyntheticSpec",
    "generate",
    "graph_hash",
    "load_dataset",
    "planetoid_split",
    "save_dataset",
    "DiagnosticsReport",
    "build_report",
    "contraction_ratio",
    "embedding_variance",
    "energy_retention",
    "propagation_spectrum",
    "variance_sweep",
    "EigenBasis",
    "load_eigen_cache",
    "partial_eigen",
    "save_eigen_cache",
    "FilterParams",
    "ThetaNet",
    "alpha_at_layer",
    "beta_of_lambda",
    "effective_filter",
    "gcn_filter",
    "lora_filter",
    "stability_report",
    "theta_eval",
    "GraphDataset",
    "SparseMatrix",
    "normalized_laplacian",
    "propagation_operator",
    "spmm",
    "symmetrize",
    "GcnModel",
    "ModelConfig",
    "TrainConfig",
    "build_model",
    "lora_correction",
    "run_protocol",
    "train",
]
