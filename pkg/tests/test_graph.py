"""Neighbor graph: exactness against a brute-force oracle, validation, IO."""

import numpy as np
import pytest

from hyperscore.graph import NeighborGraph, build_graph, load_graph, save_graph
from hyperscore.store import FormatError


def brute_force_neighbors(vectors, degree):
    """Independent O(N^2) oracle in float64 with (distance, id) sorting."""
    v = np.asarray(vectors, dtype=np.float64)
    n = v.shape[0]
    degree = min(degree, n - 1)
    out = np.zeros((n, degree), dtype=np.uint32)
    for i in range(n):
        pairs = []
        for j in range(n):
            if j == i:
                continue
            diff = v[j] - v[i]
            pairs.append((float(diff @ diff), j))
        pairs.sort()
        out[i] = [j for _, j in pairs[:degree]]
    return out


@pytest.mark.parametrize("degree", [1, 5, 100])
def test_matches_brute_force(degree):
    rng = np.random.default_rng(degree)
    vectors = rng.standard_normal((120, 6)).astype(np.float32)
    graph = build_graph(vectors, degree)
    expected = brute_force_neighbors(vectors, degree)
    assert np.array_equal(graph.neighbors, expected)


def test_matches_brute_force_with_duplicates():
    # Repeated points force distance ties; ids must break them ascending.
    rng = np.random.default_rng(42)
    base = rng.standard_normal((30, 4)).astype(np.float32)
    vectors = np.concatenate([base, base[:10], base[:5]], axis=0)
    graph = build_graph(vectors, 8)
    expected = brute_force_neighbors(vectors, 8)
    assert np.array_equal(graph.neighbors, expected)


def test_clustered_corpus_matches_oracle():
    rng = np.random.default_rng(9)
    centers = rng.standard_normal((4, 5)).astype(np.float32) * 10
    vectors = np.concatenate(
        [c + rng.standard_normal((25, 5)).astype(np.float32) for c in centers]
    )
    graph = build_graph(vectors, 12)
    assert np.array_equal(graph.neighbors, brute_force_neighbors(vectors, 12))


def test_degree_clamped_to_count_minus_one():
    rng = np.random.default_rng(1)
    vectors = rng.standard_normal((5, 3)).astype(np.float32)
    graph = build_graph(vectors, 100)
    assert graph.degree == 4
    assert np.array_equal(graph.neighbors, brute_force_neighbors(vectors, 4))


def test_no_self_neighbors():
    rng = np.random.default_rng(2)
    vectors = rng.standard_normal((50, 4)).astype(np.float32)
    graph = build_graph(vectors, 10)
    graph.validate()
    rows = np.arange(graph.count, dtype=np.uint32)[:, None]
    assert not (graph.neighbors == rows).any()


def test_build_deterministic():
    rng = np.random.default_rng(3)
    vectors = rng.standard_normal((80, 4)).astype(np.float32)
    a = build_graph(vectors, 7)
    b = build_graph(vectors, 7)
    assert np.array_equal(a.neighbors, b.neighbors)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError, match="non-empty"):
        build_graph(np.zeros((0, 3), dtype=np.float32), 5)
    with pytest.raises(ValueError, match="degree"):
        build_graph(np.zeros((4, 3), dtype=np.float32), 0)


def test_graph_file_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    graph = build_graph(rng.standard_normal((40, 4)).astype(np.float32), 6)
    path = tmp_path / "g.hygr"
    save_graph(graph, path)
    loaded = load_graph(path)
    assert loaded.count == graph.count and loaded.degree == graph.degree
    assert np.array_equal(loaded.neighbors, graph.neighbors)


def test_graph_file_bad_magic(tmp_path):
    path = tmp_path / "g.hygr"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError, match="magic"):
        load_graph(path)


def test_graph_file_payload_mismatch(tmp_path):
    rng = np.random.default_rng(5)
    graph = build_graph(rng.standard_normal((10, 3)).astype(np.float32), 4)
    path = tmp_path / "g.hygr"
    save_graph(graph, path)
    bad = tmp_path / "t.hygr"
    bad.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError, match="payload size mismatch"):
        load_graph(bad)


def test_graph_file_unsupported_version(tmp_path):
    rng = np.random.default_rng(6)
    graph = build_graph(rng.standard_normal((10, 3)).astype(np.float32), 4)
    path = tmp_path / "g.hygr"
    save_graph(graph, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 3
    bad = tmp_path / "v.hygr"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        load_graph(bad)


def test_loaded_graph_rejects_self_loops(tmp_path):
    neighbors = np.array([[1, 2], [0, 2], [2, 0]], dtype=np.uint32)
    graph = NeighborGraph(neighbors)
    path = tmp_path / "g.hygr"
    save_graph(graph, path)
    with pytest.raises(ValueError, match="lists itself"):
        load_graph(path)


def test_loaded_graph_rejects_out_of_range_ids(tmp_path):
    neighbors = np.array([[1], [5]], dtype=np.uint32)
    path = tmp_path / "g.hygr"
    save_graph(NeighborGraph(neighbors), path)
    with pytest.raises(ValueError, match="out of range"):
        load_graph(path)
