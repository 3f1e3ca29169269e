"""Classifier fine-tuning with class-weighted loss, confidence-based
pseudo-labels, secondary rebalancing oversampling, and the full pipeline.

The pipeline runs in rounds: oversample minority classes through the
language-model provider, pre-train the autoencoder and GraphSage encoder,
fine-tune a GraphSage classifier on the balanced graph, then promote
high-confidence predictions on the unlabeled pool to pseudo-labels and
rebalance before the next round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import UNLABELED, Graph, class_counts, derive_seed
from .llm import Provider, SyntheticNode, execute_plan, plan_oversampling
from .metrics import accuracy, confusion_matrix, g_mean, macro_f1, measured_noise_ratio
from .nn import (
    AdamState,
    GraphSageParams,
    adam_step,
    graphsage_forward,
    softmax,
    weighted_cross_entropy,
    zero_grads,
)
from .pretrain import (
    BalancedGraph,
    EdgeSynthesisConfig,
    GaeModel,
    gae_encode,
    pretrain,
)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass(frozen=True)
class PseudoLabelEntry:
    node_id: int
    class_index: int
    confidence: float


@dataclass(frozen=True)
class PseudoLabelSet:
    """Accepted pseudo-labels; every confidence strictly exceeds the threshold."""

    entries: tuple[PseudoLabelEntry, ...] = ()
    round_index: int = 0
    tau_conf: float = 0.9

    def __post_init__(self):
        ids = [e.node_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("a node id appears twice in the pseudo-label set")
        for e in self.entries:
            if not e.confidence > self.tau_conf:
                raise ValueError(
                    f"confidence {e.confidence} for node {e.node_id} does not exceed "
                    f"tau {self.tau_conf}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> tuple[int, ...]:
        return tuple(e.node_id for e in self.entries)

    def classes(self) -> tuple[int, ...]:
        return tuple(e.class_index for e in self.entries)

    def per_class_counts(self, num_classes: int) -> np.ndarray:
        out = np.zeros(num_classes, dtype=np.int64)
        for e in self.entries:
            out[e.class_index] += 1
        return out


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the full pipeline.

    The fine-tune budget is deliberately short: with full-batch training on a
    small labeled set, the classifier memorizes corrupted labels within a few
    hundred epochs, and pseudo-label precision collapses once it does. Sixty
    epochs is enough to grow confident margins on well-supported nodes while
    the decision boundary is still shaped by graph structure.
    """

    lr: float = 1e-3
    weight_decay: float = 5e-4
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    tau_conf: float = 0.9
    tau_edge: float = 0.5
    binarize_threshold: float = 0.25
    neg_ratio: float = 1.0
    scale: float = 0.8
    pseudo_rounds: int = 1
    pretrain_epochs: int = 200
    finetune_epochs: int = 60
    pretrain_patience: int = 20
    finetune_patience: int = 60
    seed: int = 0
    rebalance: bool = True
    uniform_weights: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 < self.tau_conf <= 1:
            raise ValueError(f"tau_conf must be in (0, 1], got {self.tau_conf}")
        if not 0 < self.binarize_threshold <= 1:
            raise ValueError(
                f"binarize_threshold must be in (0, 1], got {self.binarize_threshold}"
            )
        if not 0 <= self.scale <= 1:
            raise ValueError(f"scale must be in [0, 1], got {self.scale}")
        if self.pseudo_rounds < 0:
            raise ValueError(f"pseudo_rounds must be >= 0, got {self.pseudo_rounds}")
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("pretrain_epochs", "finetune_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def classify(classifier: GraphSageParams, z: Tensor, adj_norm: np.ndarray) -> Tensor:
    """Per-node logits from one GraphSage layer over the encoder output."""
    return graphsage_forward(classifier, z, adj_norm)


def predict_classes(logits_values: np.ndarray) -> np.ndarray:
    """Argmax per row; ties break toward the lowest class index."""
    return np.argmax(np.asarray(logits_values), axis=1).astype(np.int64)


def class_weights(counts: np.ndarray, total: int) -> np.ndarray:
    """Per-class weight max(1, N / n_i); minority classes weigh more.

    Classes with a zero count get weight 1.0; they cannot appear in a loss
    computed over the pool the counts were taken from.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if total <= 0:
        raise ValueError("total labeled count must be positive")
    weights = np.ones_like(counts)
    present = counts > 0
    weights[present] = np.maximum(1.0, float(total) / counts[present])
    return weights


def select_pseudo_labels(probs: np.ndarray, unlabeled_ids, tau_conf: float,
                         existing: PseudoLabelSet) -> PseudoLabelSet:
    """Promote rows whose max probability strictly exceeds tau to pseudo-labels.

    Rows align with ``unlabeled_ids``. Nodes already in ``existing`` are not
    re-selected; the returned set is cumulative with the round index bumped.
    """
    probs = np.asarray(probs, dtype=np.float64)
    ids = list(unlabeled_ids)
    if probs.shape[0] != len(ids):
        raise ValueError("one probability row per unlabeled id required")
    taken = set(existing.ids())
    new_entries = []
    for row, node_id in zip(probs, ids):
        if node_id in taken:
            continue
        conf = float(row.max())
        if conf > tau_conf:
            new_entries.append(PseudoLabelEntry(int(node_id), int(row.argmax()), conf))
    merged = tuple(sorted(existing.entries + tuple(new_entries), key=lambda e: e.node_id))
    return PseudoLabelSet(entries=merged, round_index=existing.round_index + 1,
                          tau_conf=tau_conf)


def rebalance_after_pseudo(train_counts_with_pseudo: np.ndarray, scale: float,
                           provider: Provider, label_texts: list[str],
                           seed: int, start_counts: np.ndarray | None = None
                           ) -> list[SyntheticNode]:
    """Fresh oversampling plan over the post-pseudo class counts, executed."""
    plan = plan_oversampling(train_counts_with_pseudo, scale)
    return execute_plan(provider, plan, label_texts, seed, start_counts=start_counts)


def finetune_loss(logits: Tensor, labeled_ids, labels: np.ndarray,
                  pseudo: PseudoLabelSet, weights: np.ndarray) -> Tensor:
    """Class-weighted cross-entropy over ground-truth plus pseudo-labeled nodes."""
    labeled_ids = list(labeled_ids)
    overlap = set(labeled_ids) & set(pseudo.ids())
    if overlap:
        raise ValueError(f"labeled and pseudo id sets overlap: {sorted(overlap)[:5]}")
    labels = np.asarray(labels, dtype=np.int64)
    loss = weighted_cross_entropy(ad.gather_rows(logits, labeled_ids),
                                  labels[labeled_ids], weights)
    if len(pseudo):
        pseudo_term = weighted_cross_entropy(
            ad.gather_rows(logits, list(pseudo.ids())),
            np.array(pseudo.classes(), dtype=np.int64), weights)
        loss = ad.add(loss, pseudo_term)
    return loss


def total_loss(loss_edge: Tensor, loss_recon: Tensor, loss_classifier: Tensor) -> Tensor:
    """Joint objective: plain sum of the three stage losses."""
    for name, t in (("edge", loss_edge), ("reconstruction", loss_recon),
                    ("classifier", loss_classifier)):
        if not np.isfinite(t.values).all():
            raise ValueError(f"{name} loss is not finite")
    return ad.add(ad.add(loss_edge, loss_recon), loss_classifier)


@dataclass
class FinetuneResult:
    classifier: GraphSageParams
    z_values: np.ndarray
    logits_values: np.ndarray
    logits_final_values: np.ndarray
    history: list[dict]
    best_val_f1: float
    best_epoch: int


def finetune_classifier(gae: GaeModel, balanced: BalancedGraph,
                        pseudo: PseudoLabelSet, config: TrainConfig, seed: int,
                        clf: GraphSageParams | None = None) -> FinetuneResult:
    """Train the classifier (encoder unfrozen) and keep the best-validation weights.

    ``logits_values`` come from the restored best-validation checkpoint and
    drive test evaluation. ``logits_final_values`` come from the last trained
    epoch; confidence-based pseudo-labeling reads those, because validation
    accuracy saturates long before the margins that clear the confidence
    threshold have finished growing.

    Passing ``clf`` continues training an existing head instead of drawing a
    fresh initialization, which keeps later pseudo-label rounds on the
    trajectory the previous round selected.
    """
    graph = balanced.graph
    k = graph.num_classes
    if clf is None:
        rng = np.random.default_rng([seed, 0xc1a55])
        clf = GraphSageParams.create(gae.out_dim, k, rng, activation="identity")
    params = {**gae.parameters(), **clf.parameters("clf")}
    opt = AdamState(lr=config.lr, weight_decay=config.weight_decay)

    labeled_ids = list(balanced.train_ids)
    counts = balanced.train_counts() + pseudo.per_class_counts(k)
    if config.uniform_weights:
        weights = np.ones(k)
    else:
        weights = class_weights(counts, int(counts.sum()))

    val_ids = list(graph.val_mask)
    best_f1 = -1.0
    best_ce = np.inf
    best_epoch = -1
    best_values: dict[str, np.ndarray] = {}
    history: list[dict] = []
    for epoch in range(config.finetune_epochs):
        z = gae_encode(gae, balanced)
        logits = classify(clf, z, balanced.adj_norm)
        loss = finetune_loss(logits, labeled_ids, balanced.labels, pseudo, weights)
        zero_grads(params)
        loss.backward()
        adam_step(opt, params)

        rec = {"epoch": epoch, "loss": loss.item()}
        if val_ids:
            preds = predict_classes(logits.values[val_ids])
            cm = confusion_matrix(graph.labels[val_ids], preds, k)
            rec["val_macro_f1"] = macro_f1(cm)
            val_probs = softmax(logits.values[val_ids])
            picked = val_probs[np.arange(len(val_ids)), graph.labels[val_ids]]
            rec["val_loss"] = float(-np.log(np.clip(picked, 1e-12, None)).mean())
            # Checkpoint on the best validation macro-F1; among F1 ties keep
            # the epoch with the lowest validation cross-entropy, so the kept
            # weights reflect margin quality that F1 alone cannot see.
            tied = rec["val_macro_f1"] >= best_f1 - 1e-12
            better = rec["val_macro_f1"] > best_f1 + 1e-12
            if better or (tied and rec["val_loss"] < best_ce - 1e-12):
                best_f1 = max(best_f1, rec["val_macro_f1"])
                best_ce = rec["val_loss"]
                best_epoch = epoch
                best_values = {name: p.values.copy() for name, p in params.items()}
            elif epoch - best_epoch >= config.finetune_patience:
                history.append(rec)
                break
        history.append(rec)

    logits_final = classify(clf, gae_encode(gae, balanced), balanced.adj_norm)

    if best_values:
        for name, p in params.items():
            p.values = best_values[name]
    else:
        best_epoch = len(history) - 1
        best_f1 = float("nan")

    z = gae_encode(gae, balanced)
    logits = classify(clf, z, balanced.adj_norm)
    return FinetuneResult(classifier=clf, z_values=z.values.copy(),
                          logits_values=logits.values.copy(),
                          logits_final_values=logits_final.values.copy(),
                          history=history, best_val_f1=best_f1, best_epoch=best_epoch)


@dataclass
class PipelineResult:
    report: dict
    balanced: BalancedGraph
    ae: object
    gae: GaeModel
    classifier: GraphSageParams
    z_values: np.ndarray
    logits_values: np.ndarray
    pseudo: PseudoLabelSet
    test_predictions: np.ndarray


def _pool_ids(graph: Graph) -> list[int]:
    held = set(graph.train_mask) | set(graph.val_mask) | set(graph.test_mask)
    return [i for i in range(graph.num_nodes) if i not in held]


def _noise_ratio(graph: Graph, pseudo: PseudoLabelSet,
                 reference_labels: np.ndarray) -> float | None:
    """Mislabel fraction over train plus pseudo nodes with a known reference."""
    assigned = {i: int(graph.labels[i]) for i in graph.train_mask}
    for e in pseudo.entries:
        assigned[e.node_id] = e.class_index
    ids = [i for i in sorted(assigned) if reference_labels[i] != UNLABELED]
    if not ids:
        return None
    return measured_noise_ratio(np.array([assigned[i] for i in ids]),
                                reference_labels[ids], range(len(ids)))


def run_pipeline(graph: Graph, config: TrainConfig, provider: Provider, *,
                 reference_labels: np.ndarray | None = None,
                 label_texts: list[str] | None = None) -> PipelineResult:
    """Oversample, pre-train, fine-tune and pseudo-label for the configured rounds.

    Rounds after the first warm-start pre-training from the previous round's
    autoencoder and graph encoder, so each round only has to absorb its
    marginal additions (new synthetic nodes and pseudo labels) instead of
    re-learning the representation from scratch.

    ``reference_labels`` are the labels used to measure residual noise over
    the train-plus-pseudo pool (defaults to the graph's own labels, in which
    case only pseudo-label disagreement registers).
    """
    if reference_labels is None:
        reference_labels = graph.labels
    reference_labels = np.asarray(reference_labels, dtype=np.int64)
    if label_texts is None:
        label_texts = [f"class_{c}" for c in range(graph.num_classes)]
    k = graph.num_classes
    edge_cfg = EdgeSynthesisConfig(tau_edge=config.tau_edge, neg_ratio=config.neg_ratio,
                                   binarize_threshold=config.binarize_threshold)

    synthetic: list[SyntheticNode] = []
    pseudo = PseudoLabelSet(tau_conf=config.tau_conf)
    rounds_report: list[dict] = []
    pre = None
    tuned = None

    for rnd in range(config.pseudo_rounds + 1):
        stage = f"round {rnd} oversampling"
        try:
            base_counts = class_counts(graph.labels, graph.train_mask, k)
            synth_counts = class_counts(
                np.array([n.class_index for n in synthetic], dtype=np.int64),
                range(len(synthetic)), k)
            pool_counts = base_counts + synth_counts + pseudo.per_class_counts(k)
            if config.scale > 0 and (rnd == 0 or config.rebalance):
                new_nodes = rebalance_after_pseudo(
                    pool_counts, config.scale, provider, label_texts,
                    derive_seed(config.seed, rnd, 1), start_counts=synth_counts)
                synthetic.extend(new_nodes)
        except Exception as exc:
            raise PipelineError(f"stage '{stage}' failed: {exc}") from exc

        stage = f"round {rnd} pre-training"
        try:
            pre = pretrain(graph, synthetic, edge_cfg,
                           epochs=config.pretrain_epochs,
                           patience=config.pretrain_patience,
                           lr=config.lr, weight_decay=config.weight_decay,
                           alpha=config.alpha, beta=config.beta, gamma=config.gamma,
                           seed=derive_seed(config.seed, rnd, 2),
                           ae=pre.ae if pre else None,
                           gae=pre.gae if pre else None)
        except Exception as exc:
            raise PipelineError(f"stage '{stage}' failed: {exc}") from exc

        stage = f"round {rnd} fine-tuning"
        try:
            tuned = finetune_classifier(pre.gae, pre.balanced, pseudo, config,
                                        derive_seed(config.seed, rnd, 3),
                                        clf=tuned.classifier if tuned else None)
        except Exception as exc:
            raise PipelineError(f"stage '{stage}' failed: {exc}") from exc

        labeled_counts = pre.balanced.train_counts() + pseudo.per_class_counts(k)
        rounds_report.append({
            "round": rnd,
            "class_counts": [int(c) for c in labeled_counts],
            "synthetic_count": len(synthetic),
            "pseudo_count": len(pseudo),
            "measured_noise_ratio": _noise_ratio(graph, pseudo, reference_labels),
        })

        if rnd < config.pseudo_rounds:
            stage = f"round {rnd} pseudo-label selection"
            try:
                pool = _pool_ids(graph)
                if pool:
                    probs = softmax(tuned.logits_final_values[pool])
                    pseudo = select_pseudo_labels(probs, pool, config.tau_conf, pseudo)
                else:
                    log.warning("unlabeled pool is empty; no pseudo-labels selected")
            except Exception as exc:
                raise PipelineError(f"stage '{stage}' failed: {exc}") from exc

    test_ids = list(graph.test_mask)
    preds = predict_classes(tuned.logits_values[test_ids]) if test_ids else np.zeros(0, np.int64)
    if test_ids:
        cm = confusion_matrix(graph.labels[test_ids], preds, k)
        final = {
            "accuracy": accuracy(cm),
            "macro_f1": macro_f1(cm),
            "g_mean": g_mean(cm),
            "confusion_matrix": [[int(v) for v in row] for row in cm],
        }
    else:
        final = {"accuracy": None, "macro_f1": None, "g_mean": None,
                 "confusion_matrix": []}

    report = {
        "config": config_echo(config),
        "rounds": rounds_report,
        "final": final,
    }
    return PipelineResult(report=report, balanced=pre.balanced, ae=pre.ae, gae=pre.gae,
                          classifier=tuned.classifier, z_values=tuned.z_values,
                          logits_values=tuned.logits_values, pseudo=pseudo,
                          test_predictions=preds)


def config_echo(config: TrainConfig) -> dict:
    """Plain-JSON view of a TrainConfig with stable key order."""
    fields = ("lr", "weight_decay", "alpha", "beta", "gamma", "tau_conf", "tau_edge",
              "binarize_threshold", "neg_ratio", "scale", "pseudo_rounds",
              "pretrain_epochs", "finetune_epochs", "pretrain_patience",
              "finetune_patience", "seed", "rebalance", "uniform_weights")
    return {name: getattr(config, name) for name in fields}
