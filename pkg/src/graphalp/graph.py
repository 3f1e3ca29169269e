"""Graph data model, dataset I/O, step-imbalance subsampling and label-noise injection.

A dataset directory holds:

    nodes.csv    id,f0,f1,...          (header row, 0-based integer ids)
    edges.csv    src,dst               (undirected; duplicates/reversals deduped)
    labels.csv   id,class_index        (nodes absent from the file stay unlabeled)
    splits.json  {"train": [...], "val": [...], "test": [...]}
    texts.jsonl  {"id": ..., "text": ...} one per line (optional)
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

UNLABELED = -1


class DatasetError(ValueError):
    """Raised when a dataset directory is missing files or internally inconsistent."""


@dataclass(frozen=True)
class Graph:
    """Undirected attributed graph with labels, split masks and a noise mask.

    Immutable: operations that change a graph return a new instance. Edges are
    stored canonically as (i, j) with i < j, deduplicated, no self-loops.
    Labels use -1 for unlabeled nodes. ``noise_mask`` records train nodes whose
    label has been corrupted by :func:`inject_uniform_noise`.
    """

    num_nodes: int
    features: np.ndarray
    edges: tuple[tuple[int, int], ...]
    labels: np.ndarray
    num_classes: int
    train_mask: tuple[int, ...] = ()
    val_mask: tuple[int, ...] = ()
    test_mask: tuple[int, ...] = ()
    texts: dict[int, str] | None = None
    noise_mask: tuple[int, ...] = ()

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise DatasetError(
                f"features must be ({self.num_nodes}, m), got {feats.shape}"
            )
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.num_nodes,):
            raise DatasetError(f"labels must have shape ({self.num_nodes},)")
        bad = labels[(labels != UNLABELED) & ((labels < 0) | (labels >= self.num_classes))]
        if bad.size:
            raise DatasetError(
                f"label index {int(bad[0])} out of range [0, {self.num_classes})"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "edges", tuple(sorted(self._canonical_edges())))
        for name in ("train_mask", "val_mask", "test_mask", "noise_mask"):
            object.__setattr__(self, name, tuple(sorted(set(getattr(self, name)))))
        self._check_masks()

    def _canonical_edges(self):
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise DatasetError(f"edge ({i},{j}) references an unknown node id")
            if i == j:
                raise DatasetError(f"self-loop ({i},{i}) is not allowed")
            key = (i, j) if i < j else (j, i)
            if key not in seen:
                seen.add(key)
                yield key

    def _check_masks(self):
        masks = {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}
        for name, mask in masks.items():
            for i in mask:
                if not 0 <= i < self.num_nodes:
                    raise DatasetError(f"{name} mask references unknown node id {i}")
                if self.labels[i] == UNLABELED:
                    raise DatasetError(f"{name} mask node {i} has no label")
        pairs = [("train", "val"), ("train", "test"), ("val", "test")]
        for a, b in pairs:
            overlap = set(masks[a]) & set(masks[b])
            if overlap:
                raise DatasetError(f"{a}/{b} masks overlap on nodes {sorted(overlap)}")
        if not set(self.noise_mask) <= set(self.train_mask):
            raise DatasetError("noise mask must be a subset of the train mask")

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, v: int) -> tuple[int, ...]:
        out = [j for i, j in self.edges if i == v] + [i for i, j in self.edges if j == v]
        return tuple(sorted(out))

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency with zero diagonal."""
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=np.float64)
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def equals(self, other: "Graph") -> bool:
        return (
            self.num_nodes == other.num_nodes
            and self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.edges == other.edges
            and self.train_mask == other.train_mask
            and self.val_mask == other.val_mask
            and self.test_mask == other.test_mask
            and self.noise_mask == other.noise_mask
            and self.texts == other.texts
        )


def normalized_adjacency(num_nodes: int, edges) -> np.ndarray:
    """Row-normalized adjacency P with P[v,u] = 1/deg(v) for neighbors u.

    P @ X gives the mean of each node's neighbor features; isolated nodes
    aggregate to zero.
    """
    a = np.zeros((num_nodes, num_nodes), dtype=np.float64)
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    deg = a.sum(axis=1)
    scale = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return a * scale[:, None]


def class_counts(labels: np.ndarray, ids, num_classes: int) -> np.ndarray:
    """Per-class count of labeled nodes among ``ids`` (length ``num_classes``)."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for i in ids:
        c = int(labels[i])
        if c != UNLABELED:
            counts[c] += 1
    return counts


def train_class_counts(graph: Graph) -> np.ndarray:
    return class_counts(graph.labels, graph.train_mask, graph.num_classes)


def imbalance_ratio(counts: np.ndarray) -> float:
    """min/max over classes with nonzero count, in (0, 1]."""
    counts = np.asarray(counts)
    nonzero = counts[counts > 0]
    if nonzero.size == 0:
        raise ValueError("imbalance ratio undefined: all class counts are zero")
    return float(nonzero.min()) / float(nonzero.max())


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def derive_seed(*parts: int) -> int:
    """Stable 31-bit seed derived from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0] % (2**31 - 1))


def apply_step_imbalance(
    graph: Graph,
    rho: float,
    majority_labels_per_class: int,
    num_minority_classes: int,
    seed: int,
) -> Graph:
    """Resample the train mask into a step-imbalanced labeled set.

    Randomly picks ``num_minority_classes`` classes as minorities; every
    majority class gets ``majority_labels_per_class`` labeled train nodes and
    each minority class gets round(rho * majority_labels_per_class), sampled
    without replacement from labeled nodes outside the val/test masks. The
    val/test masks are untouched.

    Each class draws from its own seeded permutation and keeps a prefix, so
    train sets are nested across rho values at a fixed seed: raising rho only
    adds labeled nodes. That pairing keeps rho sweeps comparable.
    """
    if not 0 < rho <= 1:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    if num_minority_classes >= graph.num_classes:
        raise ValueError("at least one class must stay a majority class")
    rng = np.random.default_rng(seed)
    minority = set(
        rng.choice(graph.num_classes, size=num_minority_classes, replace=False).tolist()
    )
    minority_count = _round_half_up(rho * majority_labels_per_class)

    held_out = set(graph.val_mask) | set(graph.test_mask)
    pool: dict[int, list[int]] = {c: [] for c in range(graph.num_classes)}
    for i in range(graph.num_nodes):
        c = int(graph.labels[i])
        if c != UNLABELED and i not in held_out:
            pool[c].append(i)

    new_train: list[int] = []
    for c in range(graph.num_classes):
        want = minority_count if c in minority else majority_labels_per_class
        if len(pool[c]) < want:
            raise ValueError(
                f"class {c} has {len(pool[c])} labeled candidates, need {want}"
            )
        order = np.random.default_rng([seed, c]).permutation(len(pool[c]))
        picked = order[:want]
        new_train.extend(pool[c][k] for k in sorted(picked.tolist()))
    return replace(graph, train_mask=tuple(new_train), noise_mask=())


def inject_uniform_noise(graph: Graph, p: float, seed: int) -> Graph:
    """Flip each train label with probability ``p`` to a uniform other class.

    Only train labels are corrupted; val/test labels stay clean so evaluation
    measures true performance. Flipped node ids are recorded in
    ``noise_mask``; a flipped label always differs from the original.

    Each node's draw is keyed by (seed, node id), so a node's flip outcome
    does not depend on which other nodes are in the train mask, and the set
    of flipped nodes is nested across p values: raising p only flips more
    nodes. That pairing keeps noise sweeps comparable.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if p > 0 and graph.num_classes < 2:
        raise ValueError("cannot flip labels with fewer than 2 classes")
    labels = graph.labels.copy()
    flipped = []
    for i in graph.train_mask:
        node_rng = np.random.default_rng([seed, int(i)])
        if node_rng.random() < p:
            orig = int(labels[i])
            offset = int(node_rng.integers(1, graph.num_classes))
            labels[i] = (orig + offset) % graph.num_classes
            flipped.append(i)
    return replace(graph, labels=labels, noise_mask=tuple(flipped))


def load_dataset(dir_path, format_id: str = "csv") -> Graph:
    """Load a dataset directory (see module docstring for the file layout)."""
    if format_id != "csv":
        raise DatasetError(f"unknown dataset format {format_id!r}")
    root = Path(dir_path)
    for name in ("nodes.csv", "edges.csv", "labels.csv", "splits.json"):
        if not (root / name).exists():
            raise DatasetError(f"missing required file {name} in {root}")

    rows: dict[int, list[float]] = {}
    with (root / "nodes.csv").open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise DatasetError("nodes.csv is empty")
        width = len(header) - 1
        for row in reader:
            if not row:
                continue
            if len(row) - 1 != width:
                raise DatasetError(
                    f"nodes.csv: node {row[0]} has {len(row) - 1} features, expected {width}"
                )
            rows[int(row[0])] = [float(v) for v in row[1:]]
    num_nodes = len(rows)
    if sorted(rows) != list(range(num_nodes)):
        raise DatasetError("nodes.csv ids must be exactly 0..n-1")
    features = np.array([rows[i] for i in range(num_nodes)], dtype=np.float64)

    edges = []
    dropped_loops = 0
    with (root / "edges.csv").open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        for row in reader:
            if not row:
                continue
            i, j = int(row[0]), int(row[1])
            if i == j:
                dropped_loops += 1
                continue
            edges.append((i, j))
    if dropped_loops:
        log.warning("edges.csv: dropped %d self-loop rows", dropped_loops)

    labels = np.full(num_nodes, UNLABELED, dtype=np.int64)
    with (root / "labels.csv").open(newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            i, c = int(row[0]), int(row[1])
            if not 0 <= i < num_nodes:
                raise DatasetError(f"labels.csv references unknown node id {i}")
            if c < 0:
                raise DatasetError(f"labels.csv: negative class index for node {i}")
            labels[i] = c
    if (labels == UNLABELED).all():
        raise DatasetError("labels.csv assigns no labels")
    num_classes = int(labels.max()) + 1

    with (root / "splits.json").open() as f:
        splits = json.load(f)
    for key in ("train", "val", "test"):
        if key not in splits:
            raise DatasetError(f"splits.json missing key {key!r}")

    texts = None
    texts_path = root / "texts.jsonl"
    if texts_path.exists():
        texts = {}
        with texts_path.open() as f:
            for line in f:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    texts[int(rec["id"])] = str(rec["text"])

    return Graph(
        num_nodes=num_nodes,
        features=features,
        edges=tuple(edges),
        labels=labels,
        num_classes=num_classes,
        train_mask=tuple(int(i) for i in splits["train"]),
        val_mask=tuple(int(i) for i in splits["val"]),
        test_mask=tuple(int(i) for i in splits["test"]),
        texts=texts,
    )


def save_dataset(graph: Graph, dir_path) -> None:
    """Write a graph back out in the dataset directory layout."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    with (root / "nodes.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id"] + [f"f{k}" for k in range(graph.num_features)])
        for i in range(graph.num_nodes):
            writer.writerow([i] + [repr(float(v)) for v in graph.features[i]])
    with (root / "edges.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["src", "dst"])
        writer.writerows(graph.edges)
    with (root / "labels.csv").open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "class_index"])
        for i in range(graph.num_nodes):
            if graph.labels[i] != UNLABELED:
                writer.writerow([i, int(graph.labels[i])])
    splits = {
        "train": list(graph.train_mask),
        "val": list(graph.val_mask),
        "test": list(graph.test_mask),
    }
    (root / "splits.json").write_text(json.dumps(splits, indent=2) + "\n")
    if graph.texts is not None:
        with (root / "texts.jsonl").open("w") as f:
            for i in sorted(graph.texts):
                f.write(json.dumps({"id": i, "text": graph.texts[i]}) + "\n")
