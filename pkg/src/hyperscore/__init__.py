"""Retrieval engine that scores documents with per-query generated networks.

The package covers the full loop: embedding containers, per-query network
execution, the attention head that generates those networks from query
token embeddings, an exact nearest-neighbor document graph, exhaustive and
graph-guided search plus a flat inner-product baseline, TREC-style
evaluation, adversarial query perturbations, and latency benchmarking.
"""

__version__ = "0.1.0"

from .graph import NeighborGraph, build_graph, load_graph, save_graph
from .hyperhead import (
    HyperheadLayer,
    HyperheadParams,
    generate_qnet,
    load_hyperhead,
    random_hyperhead,
    save_hyperhead,
)
from .qnet import (
    LinearLayer,
    QNetParams,
    load_qnet,
    qnet_batch,
    qnet_forward,
    save_qnet,
    validate_qnet,
)
from .search import (
    ExhaustiveSearcher,
    FlatIPSearcher,
    GraphSearcher,
    RankedList,
    SearchConfig,
    SearchStats,
    efficient_search,
    exhaustive_search,
    flat_ip_search,
)
from .store import (
    EmbeddingMatrix,
    FormatError,
    QueryTokenStore,
    read_embeddings,
    read_query_tokens,
    write_embeddings,
    write_query_tokens,
)

__all__ = [
    "EmbeddingMatrix",
    "ExhaustiveSearcher",
    "FlatIPSearcher",
    "FormatError",
    "GraphSearcher",
    "HyperheadLayer",
    "HyperheadParams",
    "LinearLayer",
    "NeighborGraph",
    "QNetParams",
    "QueryTokenStore",
    "RankedList",
    "SearchConfig",
    "SearchStats",
    "build_graph",
    "efficient_search",
    "exhaustive_search",
    "flat_ip_search",
    "generate_qnet",
    "load_graph",
    "load_hyperhead",
    "load_qnet",
    "qnet_batch",
    "qnet_forward",
    "random_hyperhead",
    "read_embeddings",
    "read_query_tokens",
    "save_graph",
    "save_hyperhead",
    "save_qnet",
    "validate_qnet",
    "write_embeddings",
    "write_query_tokens",
]
