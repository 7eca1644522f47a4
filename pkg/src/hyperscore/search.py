"""Search strategies over an embedded corpus.

Three routes to a ranked list:

* exhaustive: score every document with the per-query network.
* efficient: greedy traversal of a k-NN document graph starting from a
  seeded random sample, scoring candidate pools and expanding through the
  neighbors of the best scorers.
* flat inner product: the classic single-vector baseline.

All tie-breaking is by ascending document id.  Pool scoring and exhaustive
scoring share one blocked execution path, so a full-sized initial pool
reproduces the exhaustive ranking bit for bit.
"""

from __future__ import annotations

import bisect
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .graph import NeighborGraph
from .qnet import QNetParams, qnet_batch
from .store import EmbeddingMatrix

DEFAULT_BLOCK = 4096

# (initial_pool, n_candidates, max_iter): speed-oriented and quality-oriented.
PRESETS = {
    "efficient-1": (10_000, 64, 16),
    "efficient-2": (100_000, 328, 20),
}


@dataclass(frozen=True)
class SearchConfig:
    initial_pool: int
    n_candidates: int
    max_iter: int
    k: int
    seed: int = 0

    def validate(self) -> None:
        for name in ("initial_pool", "n_candidates", "max_iter", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_candidates > self.initial_pool:
            raise ValueError(
                f"n_candidates ({self.n_candidates}) must not exceed "
                f"initial_pool ({self.initial_pool})"
            )


@dataclass(frozen=True)
class RankedList:
    """Descending-score (doc_id, score) pairs for one query."""

    entries: tuple[tuple[int, float], ...]
    query_id: str = ""

    def ids(self) -> list[int]:
        return [doc for doc, _ in self.entries]

    def scores(self) -> list[float]:
        return [score for _, score in self.entries]

    def validate(self) -> None:
        seen = set()
        prev = None
        for doc, score in self.entries:
            if doc in seen:
                raise ValueError(f"duplicate document id {doc} in ranked list")
            seen.add(doc)
            if prev is not None and score > prev:
                raise ValueError(f"scores increase at document id {doc}")
            prev = score


@dataclass(frozen=True)
class SearchStats:
    scored_count: int
    iterations: int
    terminated_by: str | None
    wall_time: float = field(default=0.0, compare=False)


def _values(corpus) -> np.ndarray:
    if isinstance(corpus, EmbeddingMatrix):
        return corpus.values
    values = np.ascontiguousarray(corpus, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError(f"corpus must be a 2-d matrix, got shape {values.shape}")
    return values


def _blocked_scores(values: np.ndarray, ids: np.ndarray, block_size: int, scorer) -> np.ndarray:
    out = np.empty(ids.size, dtype=np.float32)
    for start in range(0, ids.size, block_size):
        chunk = ids[start:start + block_size]
        out[start:start + chunk.size] = scorer(values[chunk])
    return out


def score_ids(
    values: np.ndarray,
    qnet: QNetParams,
    ids: np.ndarray,
    block_size: int = DEFAULT_BLOCK,
) -> np.ndarray:
    """Score the given rows with the per-query network, in fixed-size blocks."""
    return _blocked_scores(values, ids, block_size, lambda rows: qnet_batch(qnet, rows))


def _top_order(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best entries, score descending then id ascending."""
    order = np.lexsort((ids, -scores))
    return order[: min(k, ids.size)]


def exhaustive_search(
    corpus, qnet: QNetParams, k: int, block_size: int = DEFAULT_BLOCK
) -> tuple[RankedList, SearchStats]:
    """Exact top-k by per-query network score over the whole corpus."""
    start = time.perf_counter()
    values = _values(corpus)
    n = values.shape[0]
    if n < 1:
        raise ValueError("corpus is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ids = np.arange(n, dtype=np.int64)
    scores = score_ids(values, qnet, ids, block_size)
    top = _top_order(scores, ids, k)
    entries = tuple((int(i), float(scores[i])) for i in top)
    stats = SearchStats(
        scored_count=n,
        iterations=1,
        terminated_by=None,
        wall_time=time.perf_counter() - start,
    )
    return RankedList(entries=entries), stats


def flat_ip_search(
    corpus, query_vec: np.ndarray, k: int, block_size: int = DEFAULT_BLOCK
) -> tuple[RankedList, SearchStats]:
    """Exact top-k by inner product against a single query vector."""
    start = time.perf_counter()
    values = _values(corpus)
    n = values.shape[0]
    if n < 1:
        raise ValueError("corpus is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = np.ascontiguousarray(query_vec, dtype=np.float32)
    if query.ndim != 1 or query.shape[0] != values.shape[1]:
        raise ValueError(
            f"query vector shape {query.shape} does not match corpus width {values.shape[1]}"
        )
    column = query[:, None]
    ids = np.arange(n, dtype=np.int64)
    scores = _blocked_scores(values, ids, block_size, lambda rows: (rows @ column).ravel())
    top = _top_order(scores, ids, k)
    entries = tuple((int(i), float(scores[i])) for i in top)
    stats = SearchStats(
        scored_count=n,
        iterations=1,
        terminated_by=None,
        wall_time=time.perf_counter() - start,
    )
    return RankedList(entries=entries), stats


def efficient_search(
    corpus,
    graph: NeighborGraph,
    qnet: QNetParams,
    config: SearchConfig,
    block_size: int = DEFAULT_BLOCK,
) -> tuple[RankedList, SearchStats]:
    """Greedy graph traversal.

    Starts from a seeded uniform sample without replacement, then repeats:
    score the pool, stop early when a full result set already beats the
    whole pool, select the best n_candidates, fold them into the running
    top-k, and replace the pool with the selected documents' unvisited
    neighbors.  Documents are marked visited when they enter the pool, so
    nothing is scored twice.
    """
    start = time.perf_counter()
    values = _values(corpus)
    n = values.shape[0]
    if n < 1:
        raise ValueError("corpus is empty")
    config.validate()
    if graph.count != n:
        raise ValueError(f"graph covers {graph.count} documents, corpus has {n}")
    if graph.degree < 1:
        raise ValueError("graph degree must be >= 1 for efficient search")

    rng = np.random.default_rng(config.seed)
    pool = np.sort(rng.choice(n, size=min(config.initial_pool, n), replace=False))
    pool = pool.astype(np.int64)
    visited = np.zeros(n, dtype=bool)
    visited[pool] = True

    # Running top-k, ascending by (score, -id): index 0 is the entry an
    # improvement would evict (lowest score, largest id among ties).
    result: list[tuple[float, int]] = []
    scored_count = 0
    iterations = 0
    terminated = "MaxIter"
    for _ in range(config.max_iter):
        iterations += 1
        scores = score_ids(values, qnet, pool, block_size)
        scored_count += pool.size
        if len(result) == config.k and float(scores.max()) < result[0][0]:
            terminated = "EarlyStop"
            break
        order = _top_order(scores, pool, config.n_candidates)
        selected = pool[order]
        for doc, doc_score in zip(selected.tolist(), scores[order].tolist()):
            key = (doc_score, -doc)
            if len(result) < config.k:
                bisect.insort(result, key)
            elif doc_score > result[0][0]:
                result.pop(0)
                bisect.insort(result, key)
        neighbors = np.unique(graph.neighbors[selected].astype(np.int64).ravel())
        fresh = neighbors[~visited[neighbors]]
        if fresh.size == 0:
            terminated = "EmptyPool"
            break
        visited[fresh] = True
        pool = fresh

    ranked = sorted(result, key=lambda pair: (-pair[0], -pair[1]))
    entries = tuple((-neg_id, doc_score) for doc_score, neg_id in ranked)
    stats = SearchStats(
        scored_count=scored_count,
        iterations=iterations,
        terminated_by=terminated,
        wall_time=time.perf_counter() - start,
    )
    return RankedList(entries=entries), stats


class _FittedMixin:
    def _require_fitted(self, attr: str) -> None:
        if not hasattr(self, attr):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; call fit first"
            )


class FlatIPSearcher(BaseEstimator, _FittedMixin):
    """Single-vector inner-product baseline over a fitted corpus."""

    def __init__(self, block_size: int = DEFAULT_BLOCK):
        self.block_size = block_size

    def fit(self, corpus, y=None):
        self.corpus_ = _values(corpus)
        return self

    def search(self, query_vec: np.ndarray, k: int) -> tuple[RankedList, SearchStats]:
        self._require_fitted("corpus_")
        return flat_ip_search(self.corpus_, query_vec, k, self.block_size)


class ExhaustiveSearcher(BaseEstimator, _FittedMixin):
    """Scores every fitted document with the per-query network."""

    def __init__(self, block_size: int = DEFAULT_BLOCK):
        self.block_size = block_size

    def fit(self, corpus, y=None):
        self.corpus_ = _values(corpus)
        return self

    def search(self, qnet: QNetParams, k: int) -> tuple[RankedList, SearchStats]:
        self._require_fitted("corpus_")
        return exhaustive_search(self.corpus_, qnet, k, self.block_size)


class GraphSearcher(BaseEstimator, _FittedMixin):
    """Greedy graph-guided search with the preset knobs as parameters."""

    def __init__(
        self,
        initial_pool: int = 10_000,
        n_candidates: int = 64,
        max_iter: int = 16,
        seed: int = 0,
        block_size: int = DEFAULT_BLOCK,
    ):
        self.initial_pool = initial_pool
        self.n_candidates = n_candidates
        self.max_iter = max_iter
        self.seed = seed
        self.block_size = block_size

    @classmethod
    def from_preset(cls, name: str, seed: int = 0, block_size: int = DEFAULT_BLOCK):
        if name not in PRESETS:
            known = ", ".join(sorted(PRESETS))
            raise ValueError(f"unknown preset {name!r}, expected one of: {known}")
        initial_pool, n_candidates, max_iter = PRESETS[name]
        return cls(
            initial_pool=initial_pool,
            n_candidates=n_candidates,
            max_iter=max_iter,
            seed=seed,
            block_size=block_size,
        )

    def fit(self, corpus, graph: NeighborGraph):
        values = _values(corpus)
        if graph.count != values.shape[0]:
            raise ValueError(
                f"graph covers {graph.count} documents, corpus has {values.shape[0]}"
            )
        self.corpus_ = values
        self.graph_ = graph
        return self

    def search(
        self, qnet: QNetParams, k: int, seed: int | None = None
    ) -> tuple[RankedList, SearchStats]:
        self._require_fitted("corpus_")
        config = SearchConfig(
            initial_pool=self.initial_pool,
            n_candidates=self.n_candidates,
            max_iter=self.max_iter,
            k=k,
            seed=self.seed if seed is None else seed,
        )
        return efficient_search(self.corpus_, self.graph_, qnet, config, self.block_size)
