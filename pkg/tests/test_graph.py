"""Graph container invariants, imbalance/noise protocol and dataset round-trip."""

import numpy as np
import pytest

from graphalp.graph import (
    UNLABELED,
    DatasetError,
    Graph,
    apply_step_imbalance,
    class_counts,
    derive_seed,
    imbalance_ratio,
    inject_uniform_noise,
    load_dataset,
    normalized_adjacency,
    save_dataset,
    train_class_counts,
)

from helpers import tiny_graph


def test_edges_canonicalized_and_deduplicated():
    g = Graph(num_nodes=3, features=np.zeros((3, 2)),
              edges=((1, 0), (0, 1), (2, 1)), labels=np.array([0, 1, 0]),
              num_classes=2)
    assert g.edges == ((0, 1), (1, 2))
    assert g.num_edges == 2


def test_self_loop_rejected():
    with pytest.raises(DatasetError):
        Graph(num_nodes=2, features=np.zeros((2, 1)), edges=((0, 0),),
              labels=np.array([0, 0]), num_classes=1)


def test_edge_to_unknown_node_rejected():
    with pytest.raises(DatasetError):
        Graph(num_nodes=2, features=np.zeros((2, 1)), edges=((0, 5),),
              labels=np.array([0, 0]), num_classes=1)


def test_label_out_of_range_rejected():
    with pytest.raises(DatasetError):
        Graph(num_nodes=2, features=np.zeros((2, 1)), edges=(),
              labels=np.array([0, 7]), num_classes=2)


def test_mask_overlap_rejected():
    with pytest.raises(DatasetError):
        Graph(num_nodes=3, features=np.zeros((3, 1)), edges=(),
              labels=np.array([0, 1, 0]), num_classes=2,
              train_mask=(0, 1), val_mask=(1,))


def test_mask_on_unlabeled_node_rejected():
    with pytest.raises(DatasetError):
        Graph(num_nodes=2, features=np.zeros((2, 1)), edges=(),
              labels=np.array([0, UNLABELED]), num_classes=1, train_mask=(1,))


def test_noise_mask_must_be_train_subset():
    with pytest.raises(DatasetError):
        Graph(num_nodes=2, features=np.zeros((2, 1)), edges=(),
              labels=np.array([0, 0]), num_classes=1,
              train_mask=(0,), noise_mask=(1,))


def test_neighbors_and_adjacency():
    g = Graph(num_nodes=4, features=np.zeros((4, 1)), edges=((0, 1), (1, 2)),
              labels=np.zeros(4, dtype=np.int64), num_classes=1)
    assert g.neighbors(1) == (0, 2)
    a = g.adjacency()
    assert np.array_equal(a, a.T)
    assert a.diagonal().sum() == 0
    assert a.sum() == 4


def test_normalized_adjacency_row_means():
    p = normalized_adjacency(4, [(0, 1), (0, 2)])
    x = np.array([[1.0], [2.0], [4.0], [8.0]])
    agg = p @ x
    assert agg[0, 0] == pytest.approx(3.0)  # mean of nodes 1 and 2
    assert agg[1, 0] == pytest.approx(1.0)
    assert agg[3, 0] == 0.0  # isolated node aggregates to zero


def test_class_counts_skips_unlabeled():
    labels = np.array([0, 1, UNLABELED, 1])
    assert class_counts(labels, [0, 1, 2, 3], 2).tolist() == [1, 2]


def test_imbalance_ratio_cases():
    assert imbalance_ratio(np.array([20, 20, 14])) == pytest.approx(0.7)
    assert imbalance_ratio(np.array([5, 5, 5])) == 1.0
    assert imbalance_ratio(np.array([0, 3, 6])) == 0.5
    with pytest.raises(ValueError):
        imbalance_ratio(np.array([0, 0]))


def test_derive_seed_stable_and_distinct():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


def big_graph(seed=0, per_class=60, num_classes=3):
    rng = np.random.default_rng(seed)
    n = per_class * num_classes
    labels = np.repeat(np.arange(num_classes), per_class)
    return Graph(num_nodes=n, features=rng.standard_normal((n, 4)), edges=(),
                 labels=labels.astype(np.int64), num_classes=num_classes)


def test_step_imbalance_recount_oracle():
    g = big_graph()
    out = apply_step_imbalance(g, rho=0.1, majority_labels_per_class=20,
                               num_minority_classes=1, seed=3)
    counts = sorted(train_class_counts(out).tolist())
    assert counts == [2, 20, 20]
    assert out.val_mask == g.val_mask and out.test_mask == g.test_mask


def test_step_imbalance_rho_one_balanced():
    g = big_graph()
    out = apply_step_imbalance(g, 1.0, 20, 1, seed=3)
    assert train_class_counts(out).tolist() == [20, 20, 20]
    assert imbalance_ratio(train_class_counts(out)) == 1.0


def test_step_imbalance_rounds_half_up():
    g = big_graph()
    out = apply_step_imbalance(g, 0.75, 10, 1, seed=5)
    assert sorted(train_class_counts(out).tolist()) == [8, 10, 10]


def test_step_imbalance_nested_across_rho():
    g = big_graph()
    low = apply_step_imbalance(g, 0.3, 20, 1, seed=9)
    high = apply_step_imbalance(g, 0.9, 20, 1, seed=9)
    assert set(low.train_mask) <= set(high.train_mask)


def test_step_imbalance_validation():
    g = big_graph()
    with pytest.raises(ValueError):
        apply_step_imbalance(g, 0.0, 20, 1, seed=0)
    with pytest.raises(ValueError):
        apply_step_imbalance(g, 0.5, 20, 3, seed=0)
    with pytest.raises(ValueError):
        apply_step_imbalance(g, 0.5, 1000, 1, seed=0)


def test_noise_zero_probability_identity():
    g = apply_step_imbalance(big_graph(), 0.7, 20, 1, seed=1)
    out = inject_uniform_noise(g, 0.0, seed=2)
    assert np.array_equal(out.labels, g.labels)
    assert out.noise_mask == ()


def test_noise_full_probability_flips_everything():
    g = apply_step_imbalance(big_graph(), 0.7, 20, 1, seed=1)
    out = inject_uniform_noise(g, 1.0, seed=2)
    train = list(g.train_mask)
    assert set(out.noise_mask) == set(train)
    assert all(out.labels[i] != g.labels[i] for i in train)
    assert all(0 <= out.labels[i] < g.num_classes for i in train)


def test_noise_only_touches_train_and_tracks_flips():
    g = apply_step_imbalance(big_graph(), 0.7, 20, 1, seed=1)
    out = inject_uniform_noise(g, 0.4, seed=7)
    changed = {i for i in range(g.num_nodes) if out.labels[i] != g.labels[i]}
    assert changed == set(out.noise_mask)
    assert changed <= set(g.train_mask)


def test_noise_rate_within_binomial_interval():
    g = big_graph(per_class=400)
    g = apply_step_imbalance(g, 1.0, 340, 1, seed=1)
    assert len(g.train_mask) >= 1000
    out = inject_uniform_noise(g, 0.3, seed=11)
    n = len(g.train_mask)
    flips = len(out.noise_mask)
    # 99.9% binomial interval around 0.3n
    sd = np.sqrt(n * 0.3 * 0.7)
    assert abs(flips - 0.3 * n) < 3.3 * sd


def test_noise_nested_across_p():
    g = apply_step_imbalance(big_graph(), 0.7, 20, 1, seed=1)
    low = inject_uniform_noise(g, 0.2, seed=13)
    high = inject_uniform_noise(g, 0.6, seed=13)
    assert set(low.noise_mask) <= set(high.noise_mask)


def test_noise_validation():
    g = apply_step_imbalance(big_graph(), 0.7, 20, 1, seed=1)
    with pytest.raises(ValueError):
        inject_uniform_noise(g, -0.1, seed=0)
    with pytest.raises(ValueError):
        inject_uniform_noise(g, 1.5, seed=0)


def test_protocol_deterministic():
    g = big_graph()
    a = inject_uniform_noise(apply_step_imbalance(g, 0.7, 20, 1, 5), 0.3, 6)
    b = inject_uniform_noise(apply_step_imbalance(g, 0.7, 20, 1, 5), 0.3, 6)
    assert a.equals(b)


def test_dataset_roundtrip(tmp_path):
    g = tiny_graph(seed=3)
    save_dataset(g, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.equals(g)


def test_dataset_roundtrip_with_texts(tmp_path):
    base = tiny_graph(seed=4)
    g = Graph(num_nodes=base.num_nodes, features=base.features, edges=base.edges,
              labels=base.labels, num_classes=base.num_classes,
              train_mask=base.train_mask, val_mask=base.val_mask,
              test_mask=base.test_mask,
              texts={0: "alpha", 3: "beta"})
    save_dataset(g, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.texts == {0: "alpha", 3: "beta"}


def test_load_dataset_missing_file(tmp_path):
    save_dataset(tiny_graph(), tmp_path / "ds")
    (tmp_path / "ds" / "labels.csv").unlink()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "ds")


def test_load_dataset_drops_duplicate_direction(tmp_path):
    save_dataset(tiny_graph(), tmp_path / "ds")
    edges_path = tmp_path / "ds" / "edges.csv"
    edges_path.write_text("src,dst\n0,1\n1,0\n")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.edges == ((0, 1),)


def test_load_dataset_drops_self_loops(tmp_path):
    save_dataset(tiny_graph(), tmp_path / "ds")
    (tmp_path / "ds" / "edges.csv").write_text("src,dst\n0,1\n2,2\n")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.edges == ((0, 1),)


def test_load_dataset_empty_edges(tmp_path):
    save_dataset(tiny_graph(), tmp_path / "ds")
    (tmp_path / "ds" / "edges.csv").write_text("src,dst\n")
    assert load_dataset(tmp_path / "ds").num_edges == 0


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path, format_id="parquet")
