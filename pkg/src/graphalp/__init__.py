"""GraphALP: imbalanced node classification on noisy graphs with LLM-based
oversampling, self-supervised pre-training and pseudo-label fine-tuning."""

from .finetune import (
    PipelineResult,
    PseudoLabelEntry,
    PseudoLabelSet,
    TrainConfig,
    class_weights,
    run_pipeline,
    select_pseudo_labels,
)
from .graph import (
    Graph,
    apply_step_imbalance,
    imbalance_ratio,
    inject_uniform_noise,
    load_dataset,
    save_dataset,
)
from .llm import (
    OfflineProvider,
    PromptTemplate,
    Provider,
    SyntheticNode,
    offline_provider,
    plan_oversampling,
)
from .metrics import accuracy, confusion_matrix, g_mean, macro_f1, measured_noise_ratio
from .pretrain import BalancedGraph, EdgeSynthesisConfig, pretrain
from .synthetic import benchmark_graph, gaussian_cluster_graph

__version__ = "0.1.0"

__all__ = [
    "BalancedGraph",
    "EdgeSynthesisConfig",
    "Graph",
    "OfflineProvider",
    "PipelineResult",
    "PromptTemplate",
    "Provider",
    "PseudoLabelEntry",
    "PseudoLabelSet",
    "SyntheticNode",
    "TrainConfig",
    "accuracy",
    "apply_step_imbalance",
    "benchmark_graph",
    "class_weights",
    "confusion_matrix",
    "g_mean",
    "gaussian_cluster_graph",
    "imbalance_ratio",
    "inject_uniform_noise",
    "load_dataset",
    "macro_f1",
    "measured_noise_ratio",
    "offline_provider",
    "plan_oversampling",
    "pretrain",
    "run_pipeline",
    "save_dataset",
    "select_pseudo_labels",
    "__version__",
]
