"""Exact k-nearest-neighbor document graph over embeddings, by L2 distance.

Candidates come from a blocked float32 distance pass (the usual
norm-expansion trick); the winners are then re-ranked with exact float64
direct differences so ties and near-ties order deterministically.  Ties
break toward the smaller document id.  A document is never its own
neighbor.

On disk the graph is HYGR: magic, version, row count, degree, then the
neighbor ids row-major as u32 little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import FormatError

HYGR_MAGIC = b"HYGR"
HYGR_VERSION = 1
_HEADER = struct.Struct("<4sIQI")  # magic, version, count (u64), degree (u32)

DEFAULT_DEGREE = 100
_CANDIDATE_PAD = 32
_BLOCK_ROWS = 2048
# Cap rows-per-block so the block-by-corpus distance matrix (f32) and its
# argpartition index array (i64) together stay a few hundred MB even for
# corpora with hundreds of thousands of rows.
_BLOCK_ENTRIES = 32_000_000


@dataclass(frozen=True)
class NeighborGraph:
    """Fixed-degree neighbor lists; row i holds the ids nearest to document i."""

    neighbors: np.ndarray  # (count, degree) uint32

    def __post_init__(self):
        arr = np.ascontiguousarray(self.neighbors, dtype=np.uint32)
        if arr.ndim != 2:
            raise ValueError(f"neighbors must be 2-d, got shape {arr.shape}")
        object.__setattr__(self, "neighbors", arr)

    @property
    def count(self) -> int:
        return self.neighbors.shape[0]

    @property
    def degree(self) -> int:
        return self.neighbors.shape[1]

    def validate(self) -> None:
        if self.count > 0 and self.degree > 0:
            if int(self.neighbors.max()) >= self.count:
                raise ValueError(
                    f"neighbor id {int(self.neighbors.max())} out of range for count={self.count}"
                )
            rows = np.arange(self.count, dtype=np.uint32)[:, None]
            if (self.neighbors == rows).any():
                bad = int(np.argwhere(self.neighbors == rows)[0][0])
                raise ValueError(f"document {bad} lists itself as a neighbor")


def _exact_order(vectors64: np.ndarray, row: int, cand_ids: np.ndarray) -> np.ndarray:
    """Order candidate ids by exact squared distance to ``row``, id ascending on ties."""
    diff = vectors64[cand_ids] - vectors64[row]
    dists = np.einsum("ij,ij->i", diff, diff)
    return cand_ids[np.lexsort((cand_ids, dists))]


def build_graph(vectors: np.ndarray, degree: int = DEFAULT_DEGREE) -> NeighborGraph:
    """Build the exact k-NN graph with the given per-document degree.

    Degree is clamped to count-1 when the corpus is smaller than requested,
    so tiny corpora still produce a valid graph.
    """
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise ValueError(f"vectors must be a non-empty 2-d matrix, got shape {vectors.shape}")
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    count = vectors.shape[0]
    degree = min(degree, count - 1)
    if degree == 0:
        return NeighborGraph(np.zeros((count, 0), dtype=np.uint32))

    vectors64 = vectors.astype(np.float64)
    sq_norms = np.einsum("ij,ij->i", vectors, vectors)
    take = min(count, degree + 1 + _CANDIDATE_PAD)
    out = np.empty((count, degree), dtype=np.uint32)
    block_rows = max(16, min(_BLOCK_ROWS, _BLOCK_ENTRIES // count))
    for start in range(0, count, block_rows):
        stop = min(start + block_rows, count)
        block = vectors[start:stop]
        # Squared distances up to the per-row constant; cross term dominates
        # cost.  Scale and shift in place to avoid a second matrix-sized copy.
        dists = block @ vectors.T
        np.multiply(dists, np.float32(-2.0), out=dists)
        np.add(dists, sq_norms[None, :], out=dists)
        if take < count:
            cand = np.argpartition(dists, take - 1, axis=1)[:, :take]
        else:
            cand = np.broadcast_to(np.arange(count), (stop - start, count))
        for local, row in enumerate(range(start, stop)):
            ids = cand[local]
            ids = ids[ids != row]
            ordered = _exact_order(vectors64, row, ids.astype(np.int64))
            out[row] = ordered[:degree]
    return NeighborGraph(out)


def save_graph(graph: NeighborGraph, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(HYGR_MAGIC, HYGR_VERSION, graph.count, graph.degree))
        fh.write(np.ascontiguousarray(graph.neighbors, dtype="<u4").tobytes())


def load_graph(path: str | Path) -> NeighborGraph:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than the HYGR header")
    magic, version, count, degree = _HEADER.unpack_from(raw)
    if magic != HYGR_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {HYGR_MAGIC!r}")
    if version != HYGR_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = count * degree * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload size mismatch, header declares {expected} bytes "
            f"({count} x {degree} u32), found {len(payload)}"
        )
    ids = np.frombuffer(payload, dtype="<u4").reshape(count, degree).copy()
    graph = NeighborGraph(ids)
    graph.validate()
    return graph
