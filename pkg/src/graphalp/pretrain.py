"""Self-supervised pre-training: autoencoder alignment of original and
synthetic nodes, learned edge synthesis and GraphSage representation learning.

The autoencoder maps graph attributes and language-model embeddings into one
latent space, reconstructs attributes and structure, and scores candidate
edges between synthetic and original nodes. Kept edges and reconstructed
synthetic features form a class-balanced graph that a two-layer GraphSage
encoder turns into node representations for the downstream classifier.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import Graph, class_counts, normalized_adjacency
from .llm import SyntheticNode
from .nn import (
    AdamState,
    GraphSageParams,
    MlpParams,
    adam_step,
    binary_cross_entropy,
    cosine_matrix,
    frobenius_loss,
    graphsage_forward,
    mlp_forward,
    sigmoid_inner_product,
    zero_grads,
)

log = logging.getLogger(__name__)


@dataclass
class AeModel:
    """Autoencoder with a shared projection trunk and an edge predictor.

    ``mlp1`` encodes graph attributes, ``adapter_h``/``adapter_e`` map the
    attribute latent and the language-model embedding into the trunk input
    dim, the shared ``trunk`` finishes the common projection, ``mlp3``
    decodes the common latent back to attribute space, and ``edge_mlp``
    scores a concatenated pair of common latents as an edge logit.
    """

    mlp1: MlpParams
    adapter_h: MlpParams
    adapter_e: MlpParams
    trunk: MlpParams
    mlp3: MlpParams
    edge_mlp: MlpParams

    def __post_init__(self):
        trunk_in = self.trunk.weights[0].shape[0]
        for name, adapter in (("adapter_h", self.adapter_h), ("adapter_e", self.adapter_e)):
            if adapter.weights[-1].shape[1] != trunk_in:
                raise ValueError(f"{name} output dim must match trunk input {trunk_in}")
        common = self.trunk.weights[-1].shape[1]
        if self.mlp3.weights[0].shape[0] != common:
            raise ValueError("decoder input dim must match the common latent dim")
        if self.edge_mlp.weights[0].shape[0] != 2 * common:
            raise ValueError("edge predictor input dim must be 2 x common latent dim")
        if self.edge_mlp.weights[-1].shape[1] != 1:
            raise ValueError("edge predictor must output one score")

    @property
    def feature_dim(self) -> int:
        return self.mlp1.weights[0].shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.adapter_e.weights[0].shape[0]

    @property
    def common_dim(self) -> int:
        return self.trunk.weights[-1].shape[1]

    @classmethod
    def create(cls, num_features: int, embed_dim: int, rng: np.random.Generator,
               hidden: int = 64, latent: int = 128, common: int = 64,
               decoder_hidden: int = 128, edge_hidden: int = 64) -> "AeModel":
        return cls(
            mlp1=MlpParams.create([num_features, hidden, latent], rng),
            adapter_h=MlpParams.create([latent, common], rng, output_activation="relu"),
            adapter_e=MlpParams.create([embed_dim, common], rng, output_activation="relu"),
            trunk=MlpParams.create([common, common], rng),
            mlp3=MlpParams.create([common, decoder_hidden, num_features], rng),
            edge_mlp=MlpParams.create([2 * common, edge_hidden, 1], rng),
        )

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.mlp1.parameters("ae.enc"))
        out.update(self.adapter_h.parameters("ae.adapt_h"))
        out.update(self.adapter_e.parameters("ae.adapt_e"))
        out.update(self.trunk.parameters("ae.trunk"))
        out.update(self.mlp3.parameters("ae.dec"))
        out.update(self.edge_mlp.parameters("ae.edge"))
        return out


@dataclass
class GaeModel:
    """Two stacked GraphSage layers; the last layer is linear so latent
    inner products can take either sign."""

    layers: list[GraphSageParams]

    @classmethod
    def create(cls, num_features: int, rng: np.random.Generator,
               hidden: int = 64, out_dim: int = 128) -> "GaeModel":
        return cls([
            GraphSageParams.create(num_features, hidden, rng, activation="relu"),
            GraphSageParams.create(hidden, out_dim, rng, activation="identity"),
        ])

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for k, layer in enumerate(self.layers):
            out.update(layer.parameters(f"gae.l{k}"))
        return out


@dataclass(frozen=True)
class EdgeSynthesisConfig:
    """Thresholds controlling synthetic-edge creation."""

    tau_edge: float = 0.5
    neg_ratio: float = 1.0
    binarize_threshold: float = 0.25

    def __post_init__(self):
        if not -1.0 < self.tau_edge < 1.0:
            raise ValueError(f"tau_edge must be in (-1, 1), got {self.tau_edge}")
        if self.neg_ratio <= 0:
            raise ValueError(f"neg_ratio must be > 0, got {self.neg_ratio}")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError(
                f"binarize_threshold must be in (0, 1), got {self.binarize_threshold}"
            )


@dataclass(eq=False)
class BalancedGraph:
    """Original graph extended with synthetic minority nodes and edges.

    Node ids 0..n-1 are the original nodes (attributes, edges and labels
    unchanged); ids n..n+g-1 are synthetic. ``synthetic_edges`` keeps the
    kept (synthetic_id, original_id, score) triples for inspection.
    """

    graph: Graph
    features: np.ndarray
    edges: tuple[tuple[int, int], ...]
    labels: np.ndarray
    origin: tuple[str, ...]
    synthetic_edges: tuple[tuple[int, int, float], ...] = ()
    adj_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.graph.num_nodes
        if self.features.shape[0] != len(self.origin) or self.labels.shape[0] != len(self.origin):
            raise ValueError("features, labels and origin flags must align")
        original_block = tuple(e for e in self.edges if e[0] < n and e[1] < n)
        if original_block != self.graph.edges:
            raise ValueError("original adjacency block must match the source graph exactly")
        self.adj_norm = normalized_adjacency(self.num_nodes, self.edges)

    @property
    def num_nodes(self) -> int:
        return len(self.origin)

    @property
    def num_original(self) -> int:
        return self.graph.num_nodes

    @property
    def num_synthetic(self) -> int:
        return self.num_nodes - self.graph.num_nodes

    @property
    def train_ids(self) -> tuple[int, ...]:
        """Labeled pool: original train nodes followed by all synthetic nodes."""
        return self.graph.train_mask + tuple(range(self.num_original, self.num_nodes))

    def train_counts(self) -> np.ndarray:
        return class_counts(self.labels, self.train_ids, self.graph.num_classes)


def ae_encode(model: AeModel, x: np.ndarray, syn_embeddings: np.ndarray
              ) -> tuple[Tensor, Tensor, Tensor]:
    """Project attributes and synthetic embeddings into the common latent.

    Returns (H1, H2, H) where H stacks original rows first. With zero
    synthetic nodes H2 has zero rows and H equals H1.
    """
    x = np.asarray(x, dtype=np.float64)
    syn = np.asarray(syn_embeddings, dtype=np.float64)
    if syn.ndim != 2:
        syn = syn.reshape(0, model.embedding_dim) if syn.size == 0 else syn.reshape(1, -1)
    if x.shape[1] != model.feature_dim:
        raise ValueError(f"feature dim {x.shape[1]} != model dim {model.feature_dim}")
    if syn.shape[0] and syn.shape[1] != model.embedding_dim:
        raise ValueError(
            f"embedding dim {syn.shape[1]} != model dim {model.embedding_dim}"
        )
    h1 = mlp_forward(model.trunk, mlp_forward(model.adapter_h, mlp_forward(model.mlp1, Tensor(x))))
    if syn.shape[0]:
        h2 = mlp_forward(model.trunk, mlp_forward(model.adapter_e, Tensor(syn)))
        h = ad.concat_rows(h1, h2)
    else:
        h2 = Tensor(np.zeros((0, model.common_dim)))
        h = h1
    return h1, h2, h


def ae_decode(model: AeModel, h1: Tensor, h2: Tensor) -> tuple[Tensor, Tensor]:
    """Decode the stacked latent into attributes and an edge-probability matrix."""
    h = ad.concat_rows(h1, h2) if h2.shape[0] else h1
    x_recon = mlp_forward(model.mlp3, h)
    a1 = sigmoid_inner_product(h)
    return x_recon, a1


def cosine_candidate_edges(h_syn: np.ndarray, h_orig: np.ndarray,
                           tau_edge: float) -> set[tuple[int, int]]:
    """(synthetic, original) index pairs whose latent cosine is strictly above tau."""
    h_syn = np.asarray(h_syn, dtype=np.float64)
    h_orig = np.asarray(h_orig, dtype=np.float64)
    if h_syn.shape[0] == 0 or h_orig.shape[0] == 0:
        return set()
    sims = cosine_matrix(h_syn, h_orig)
    rows, cols = np.nonzero(sims > tau_edge)
    return {(int(s), int(o)) for s, o in zip(rows, cols)}


def sample_negative_edges(num_nodes: int, pos_edges, count: int,
                          rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniform sample of ``count`` distinct non-edges as canonical (i, j) pairs."""
    existing = set(pos_edges)
    possible = num_nodes * (num_nodes - 1) // 2 - len(existing)
    if count > possible:
        raise ValueError(
            f"cannot sample {count} negative edges, only {possible} non-edges exist"
        )
    picked: set[tuple[int, int]] = set()
    out: list[tuple[int, int]] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 1000:
            raise ValueError("negative sampling did not converge; graph too dense")
        draw = rng.integers(0, num_nodes, size=(max(count * 2, 64), 2))
        for i, j in draw:
            if i == j:
                continue
            pair = (int(min(i, j)), int(max(i, j)))
            if pair in existing or pair in picked:
                continue
            picked.add(pair)
            out.append(pair)
            if len(out) == count:
                break
    return out


def edge_predictor_train_step(model: AeModel, h: Tensor, pos_edges,
                              num_nodes: int, neg_seed: int,
                              neg_ratio: float = 1.0) -> Tensor:
    """Edge-prediction BCE over original edges and sampled non-edges.

    Positives are the original graph's edges; negatives are drawn uniformly
    among non-edges at ``neg_ratio`` per positive, reseeded by the caller
    each epoch. Pairs are scored in the stored (i, j) order.
    """
    pos = list(pos_edges)
    n_neg = int(round(neg_ratio * len(pos)))
    rng = np.random.default_rng(neg_seed)
    neg = sample_negative_edges(num_nodes, pos, n_neg, rng) if n_neg else []
    pairs = pos + neg
    if not pairs:
        return Tensor(np.zeros((1, 1)))
    idx_a = [p[0] for p in pairs]
    idx_b = [p[1] for p in pairs]
    feats = ad.concat_cols(ad.gather_rows(h, idx_a), ad.gather_rows(h, idx_b))
    probs = ad.sigmoid(mlp_forward(model.edge_mlp, feats))
    targets = np.zeros((len(pairs), 1))
    targets[: len(pos)] = 1.0
    return binary_cross_entropy(probs, targets)


def score_candidate_pairs(model: AeModel, h_values: np.ndarray, pairs,
                          num_original: int, max_workers: int = 1
                          ) -> dict[tuple[int, int], float]:
    """Predictor probability for each (synthetic, original) candidate.

    The predictor is not symmetric in its two inputs, so each pair is scored
    in both orders and averaged. Runs on detached values; optionally fans out
    over worker threads as a pure map with order-independent results.
    """
    pairs = sorted(pairs)
    if not pairs:
        return {}
    h = np.asarray(h_values, dtype=np.float64)

    def score_chunk(chunk: list[tuple[int, int]]) -> np.ndarray:
        syn_rows = h[[num_original + s for s, _ in chunk]]
        orig_rows = h[[o for _, o in chunk]]
        fwd = mlp_forward(model.edge_mlp, Tensor(np.hstack([syn_rows, orig_rows])))
        rev = mlp_forward(model.edge_mlp, Tensor(np.hstack([orig_rows, syn_rows])))
        return 0.5 * (ad.sigmoid_values(fwd.values) + ad.sigmoid_values(rev.values)).ravel()

    if max_workers > 1 and len(pairs) > 1:
        chunks = np.array_split(np.arange(len(pairs)), max_workers)
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(lambda ids: score_chunk([pairs[i] for i in ids]),
                                  [c for c in chunks if len(c)]))
        scores = np.concatenate(parts)
    else:
        scores = score_chunk(pairs)
    return {pair: float(s) for pair, s in zip(pairs, scores)}


def synthesize_edges(a1_values: np.ndarray, candidate_scores: dict[tuple[int, int], float],
                     binarize_threshold: float, num_original: int
                     ) -> list[tuple[int, int, float]]:
    """Gate cosine candidates by the product of decoder and predictor scores.

    An edge survives iff A1[n+s, o] * predictor_score > binarize_threshold.
    Returns sorted (synthetic_index, original_id, product) triples; the pair
    is undirected and materialized symmetrically when building adjacency.
    """
    kept = []
    for (s, o), a2 in sorted(candidate_scores.items()):
        product = float(a1_values[num_original + s, o]) * a2
        if product > binarize_threshold:
            kept.append((s, o, product))
    return kept


def build_balanced_graph(graph: Graph, synthetic_nodes: list[SyntheticNode],
                         synthetic_edges: list[tuple[int, int, float]],
                         x_recon_syn: np.ndarray, warn_isolated: bool = True
                         ) -> BalancedGraph:
    """Attach synthetic nodes (reconstructed features) and kept edges to the graph."""
    n, g = graph.num_nodes, len(synthetic_nodes)
    if g:
        x_recon_syn = np.asarray(x_recon_syn, dtype=np.float64).reshape(g, -1)
    else:
        x_recon_syn = np.zeros((0, graph.num_features))
    if g and x_recon_syn.shape[1] != graph.num_features:
        raise ValueError(
            f"reconstructed features have dim {x_recon_syn.shape[1]}, expected {graph.num_features}"
        )
    features = np.vstack([graph.features, x_recon_syn]) if g else graph.features.copy()
    labels = np.concatenate([graph.labels,
                             np.array([node.class_index for node in synthetic_nodes],
                                      dtype=np.int64)])
    origin = ("original",) * n + ("synthetic",) * g

    edges = list(graph.edges)
    degree = np.zeros(g, dtype=np.int64)
    kept = []
    for s, o, score in sorted(synthetic_edges):
        if not (0 <= s < g and 0 <= o < n):
            raise ValueError(f"synthetic edge ({s}, {o}) out of range")
        edges.append((o, n + s))
        degree[s] += 1
        kept.append((n + s, o, score))
    if warn_isolated:
        isolated = int((degree == 0).sum())
        if g and isolated:
            log.warning("%d of %d synthetic nodes have no edges", isolated, g)
    return BalancedGraph(graph=graph, features=features, edges=tuple(edges),
                         labels=labels, origin=origin, synthetic_edges=tuple(kept))


def gae_forward(gae: GaeModel, features: Tensor, adj_norm: np.ndarray) -> Tensor:
    """Stacked GraphSage layers over an explicit feature tensor."""
    out = features
    for layer in gae.layers:
        out = graphsage_forward(layer, out, adj_norm)
    return out


def gae_encode(gae: GaeModel, balanced: BalancedGraph) -> Tensor:
    """Node representations from stacked GraphSage layers over the balanced graph."""
    return gae_forward(gae, Tensor(balanced.features), balanced.adj_norm)


def pretrain_losses(x_recon: Tensor, x: np.ndarray, a1: Tensor, a: np.ndarray,
                    z_decoded: Tensor, alpha: float, beta: float, gamma: float) -> Tensor:
    """Weighted reconstruction loss alpha*L_A + beta*L_X + gamma*L_Ahat.

    All structure terms compare against the original adjacency, so every
    matrix is restricted to the original n x n (or n x m) block first.
    """
    if alpha < 0 or beta < 0 or gamma < 0:
        raise ValueError("loss coefficients must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    n, m = x.shape
    rows = slice(0, n)
    target_a = Tensor(a)
    loss_a = frobenius_loss(ad.slice_block(a1, rows, slice(0, n)), target_a)
    loss_x = frobenius_loss(ad.slice_block(x_recon, rows, slice(0, m)), Tensor(x))
    loss_ahat = frobenius_loss(ad.slice_block(z_decoded, rows, slice(0, n)), target_a)
    return ad.add(ad.add(ad.scale(loss_a, alpha), ad.scale(loss_x, beta)),
                  ad.scale(loss_ahat, gamma))


@dataclass
class PretrainResult:
    ae: AeModel
    gae: GaeModel
    balanced: BalancedGraph
    history: list[dict]
    stopped_epoch: int


def _forward_graph(ae: AeModel, graph: Graph, synthetic_nodes: list[SyntheticNode],
                   syn_embeddings: np.ndarray, edge_cfg: EdgeSynthesisConfig,
                   warn_isolated: bool):
    """One AE pass plus edge synthesis and balanced-graph assembly.

    Also returns the balanced feature matrix as a tape tensor whose synthetic
    rows are the live decoder outputs, so the structural constraint trains
    the embedding branch through the encoder's neighbor aggregation.
    """
    n, m = graph.features.shape
    g = len(synthetic_nodes)
    h1, h2, h = ae_encode(ae, graph.features, syn_embeddings)
    x_recon, a1 = ae_decode(ae, h1, h2)
    if synthetic_nodes:
        candidates = cosine_candidate_edges(h.values[n:], h.values[:n], edge_cfg.tau_edge)
        scores = score_candidate_pairs(ae, h.values, candidates, n)
        edges = synthesize_edges(a1.values, scores, edge_cfg.binarize_threshold, n)
    else:
        edges = []
    balanced = build_balanced_graph(graph, synthetic_nodes, edges,
                                    x_recon.values[n:], warn_isolated=warn_isolated)
    if g:
        syn_rows = ad.slice_block(x_recon, slice(n, n + g), slice(0, m))
        features_t = ad.concat_rows(Tensor(graph.features), syn_rows)
    else:
        features_t = Tensor(graph.features)
    return h, x_recon, a1, balanced, features_t


def pretrain(graph: Graph, synthetic_nodes: list[SyntheticNode],
             edge_cfg: EdgeSynthesisConfig | None = None, *,
             epochs: int = 200, patience: int = 20, lr: float = 1e-3,
             weight_decay: float = 5e-4, alpha: float = 1.0, beta: float = 1.0,
             gamma: float = 1.0, seed: int = 0, ae: AeModel | None = None,
             gae: GaeModel | None = None, log_every: int = 0) -> PretrainResult:
    """Jointly train the autoencoder and GraphSage encoder on L_E + L_recon.

    The balanced graph is rebuilt from the current latents every epoch and
    fed to the encoder as data. When the synthetic embeddings live in the
    attribute space (same dimension), the embedding branch is additionally
    distilled toward the attribute branch evaluated on those embeddings
    (attribute side held constant). Reconstruction losses never touch the
    embedding adapter, so without this term synthetic latents would stay at
    their random initial projections and never meet the cosine threshold.
    Training stops early when L_recon has not improved for ``patience``
    epochs.
    """
    edge_cfg = edge_cfg or EdgeSynthesisConfig()
    rng = np.random.default_rng([seed, 0x9e37])
    if synthetic_nodes:
        syn_embeddings = np.vstack([node.embedding.reshape(1, -1) for node in synthetic_nodes])
        embed_dim = syn_embeddings.shape[1]
    else:
        embed_dim = graph.num_features
        syn_embeddings = np.zeros((0, embed_dim))
    if ae is None:
        ae = AeModel.create(graph.num_features, embed_dim, rng)
    if gae is None:
        gae = GaeModel.create(graph.num_features, rng)

    params = {**ae.parameters(), **gae.parameters()}
    opt = AdamState(lr=lr, weight_decay=weight_decay)
    adjacency = graph.adjacency()
    seed_rng = np.random.default_rng([seed, 0x51ed])
    neg_seeds = seed_rng.integers(0, 2**31 - 1, size=max(epochs, 1))

    history: list[dict] = []
    best = np.inf
    best_epoch = 0
    stopped = 0
    n, m = graph.features.shape
    g = len(synthetic_nodes)
    anchor_syn = g > 0 and syn_embeddings.shape[1] == m
    for epoch in range(epochs):
        h, x_recon, a1, balanced, features_t = _forward_graph(
            ae, graph, synthetic_nodes, syn_embeddings, edge_cfg, warn_isolated=False)
        loss_edge = edge_predictor_train_step(
            ae, h, graph.edges, graph.num_nodes, int(neg_seeds[epoch]), edge_cfg.neg_ratio)
        z = gae_forward(gae, features_t, balanced.adj_norm)
        loss_recon = pretrain_losses(x_recon, graph.features, a1, adjacency,
                                     sigmoid_inner_product(z), alpha, beta, gamma)
        if anchor_syn:
            with_attr_branch = mlp_forward(ae.trunk, mlp_forward(
                ae.adapter_h, mlp_forward(ae.mlp1, Tensor(syn_embeddings))))
            h2_rows = ad.slice_block(h, slice(n, n + g), slice(0, ae.common_dim))
            align = frobenius_loss(h2_rows, Tensor(with_attr_branch.values))
            loss_recon = ad.add(loss_recon, align)
        total = ad.add(loss_edge, loss_recon)
        zero_grads(params)
        total.backward()
        adam_step(opt, params)

        rec = {"epoch": epoch, "loss_edge": loss_edge.item(),
               "loss_recon": loss_recon.item(), "loss_total": total.item(),
               "synthetic_edges": len(balanced.synthetic_edges)}
        history.append(rec)
        if log_every and epoch % log_every == 0:
            log.info("pretrain epoch %d: L_E=%.4f L_recon=%.4f edges=%d",
                     epoch, rec["loss_edge"], rec["loss_recon"], rec["synthetic_edges"])
        stopped = epoch + 1
        if rec["loss_recon"] < best - 1e-9:
            best = rec["loss_recon"]
            best_epoch = epoch
        elif epoch - best_epoch >= patience:
            log.info("pretrain early stop at epoch %d (no improvement for %d epochs)",
                     epoch, patience)
            break

    _, _, _, balanced, _ = _forward_graph(ae, graph, synthetic_nodes, syn_embeddings,
                                          edge_cfg, warn_isolated=True)
    return PretrainResult(ae=ae, gae=gae, balanced=balanced, history=history,
                          stopped_epoch=stopped)


def write_synthetic_edges(path, balanced: BalancedGraph) -> None:
    """CSV of kept synthetic edges as src,dst,score (src is the synthetic id)."""
    lines = ["src,dst,score"]
    for src, dst, score in balanced.synthetic_edges:
        lines.append(f"{src},{dst},{score:.6f}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
