"""Seeded synthetic benchmark: Gaussian feature clusters with a homophilous
random graph, step-imbalanced labels and uniform label noise.

Every node carries its true class so residual noise over train and pseudo
labels can be measured exactly.
"""

from __future__ import annotations

import numpy as np

from .graph import Graph, apply_step_imbalance, derive_seed, inject_uniform_noise


def gaussian_cluster_graph(num_nodes: int = 300, num_classes: int = 3,
                           num_features: int = 16, *, separation: float = 2.2,
                           noise_sigma: float = 1.0, intra_p: float = 0.1,
                           inter_p: float = 0.01, val_per_class: int = 15,
                           test_per_class: int = 25,
                           class_sizes: tuple[int, ...] | None = None,
                           seed: int = 0) -> Graph:
    """Fully labeled cluster graph with val/test masks and an empty train mask.

    Class c's center sits at ``separation`` along feature axis c, so any two
    centers are separation * sqrt(2) apart; features add isotropic Gaussian
    noise. Edges are sampled independently with probability ``intra_p`` inside
    a class and ``inter_p`` across classes. ``class_sizes`` sets how many
    nodes each class contributes (defaults to an even split); uneven sizes
    give the unlabeled pool a realistic population skew.
    """
    if num_features < num_classes:
        raise ValueError("need at least one feature axis per class center")
    if class_sizes is None:
        per_class = num_nodes // num_classes
        class_sizes = tuple(per_class for _ in range(num_classes))
    if len(class_sizes) != num_classes:
        raise ValueError("class_sizes must list one count per class")
    if sum(class_sizes) != num_nodes:
        raise ValueError(
            f"class_sizes sum to {sum(class_sizes)}, expected {num_nodes}")
    if min(class_sizes) < val_per_class + test_per_class + 1:
        raise ValueError("classes too small for the requested val/test sizes")
    rng = np.random.default_rng([seed, 0xbe9c])

    labels = np.repeat(np.arange(num_classes), class_sizes).astype(np.int64)
    centers = np.zeros((num_classes, num_features))
    for c in range(num_classes):
        centers[c, c] = separation
    features = centers[labels] + noise_sigma * rng.standard_normal(
        (num_nodes, num_features))

    iu, ju = np.triu_indices(num_nodes, k=1)
    p_edge = np.where(labels[iu] == labels[ju], intra_p, inter_p)
    keep = rng.random(iu.size) < p_edge
    edges = tuple((int(i), int(j)) for i, j in zip(iu[keep], ju[keep]))

    val, test = [], []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        order = rng.permutation(members)
        val.extend(int(i) for i in order[:val_per_class])
        test.extend(int(i) for i in order[val_per_class:val_per_class + test_per_class])

    return Graph(num_nodes=num_nodes, features=features, edges=edges, labels=labels,
                 num_classes=num_classes, train_mask=(), val_mask=tuple(sorted(val)),
                 test_mask=tuple(sorted(test)))


def benchmark_graph(seed: int, rho: float = 0.7, p: float = 0.3, *,
                    majority_per_class: int = 20, num_minority: int = 2,
                    **generator_kwargs) -> tuple[Graph, np.ndarray]:
    """Step-imbalanced noisy benchmark plus its pre-noise reference labels.

    The default cluster populations are uneven (116/92/92), so the unlabeled
    pool is skewed the way real graphs are and confidence-selected pseudo
    labels can unbalance the training pool between rounds.
    """
    generator_kwargs.setdefault("class_sizes", (116, 92, 92))
    base = gaussian_cluster_graph(seed=derive_seed(seed, 101), **generator_kwargs)
    imbalanced = apply_step_imbalance(base, rho, majority_per_class, num_minority,
                                      derive_seed(seed, 102))
    clean_labels = imbalanced.labels.copy()
    noisy = inject_uniform_noise(imbalanced, p, derive_seed(seed, 103))
    return noisy, clean_labels
