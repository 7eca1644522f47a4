"""Latency measurement, amortized-cost accounting, and power-law scaling fits.

Timing uses the monotonic performance clock, runs queries serially (so
samples are uncontended), executes warmup queries without recording them,
and spans per-query network generation plus the search itself.  Scaling
sweeps run over synthetic corpora drawn from a seeded mixture of Gaussian
clusters so graph traversal sees realistic local structure.  Result
serialization stays outside every timed region.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import build_graph
from .hyperhead import HyperheadParams, generate_qnet, random_hyperhead
from .search import (
    PRESETS,
    SearchConfig,
    efficient_search,
    exhaustive_search,
    flat_ip_search,
)
from .seeding import derive_seed

DEFAULT_WARMUP = 3
DEFAULT_CLUSTERS = 64

CSV_COLUMNS = [
    "label",
    "corpus_size",
    "n_queries",
    "mean_ms",
    "p50_ms",
    "p95_ms",
    "scored_mean",
    "build_s",
]


@dataclass(frozen=True)
class LatencyRecord:
    label: str
    corpus_size: int
    n_queries: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    scored_mean: float
    build_s: float = 0.0

    def validate(self) -> None:
        if self.p50_ms > self.p95_ms:
            raise ValueError(f"p50 {self.p50_ms} exceeds p95 {self.p95_ms}")
        for name in ("mean_ms", "p50_ms", "p95_ms", "scored_mean", "build_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} is negative")


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    coefficient: float
    r_squared: float


def time_search(
    run_query,
    queries: list,
    warmup: int = DEFAULT_WARMUP,
    label: str = "search",
    corpus_size: int = 0,
    build_s: float = 0.0,
) -> LatencyRecord:
    """Time ``run_query`` over each query; the first ``warmup`` calls are
    executed but not recorded.  ``run_query`` returns SearchStats or a
    (RankedList, SearchStats) pair."""
    if len(queries) - warmup < 1:
        raise ValueError(
            f"need at least 1 query after excluding {warmup} warmup queries, "
            f"got {len(queries)}"
        )
    times_ms = []
    scored = []
    for i, query in enumerate(queries):
        start = time.perf_counter()
        result = run_query(query)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        stats = result[1] if isinstance(result, tuple) else result
        if i < warmup:
            continue
        times_ms.append(elapsed_ms)
        scored.append(stats.scored_count)
    record = LatencyRecord(
        label=label,
        corpus_size=corpus_size,
        n_queries=len(times_ms),
        mean_ms=float(np.mean(times_ms)),
        p50_ms=float(np.percentile(times_ms, 50)),
        p95_ms=float(np.percentile(times_ms, 95)),
        scored_mean=float(np.mean(scored)),
        build_s=build_s,
    )
    record.validate()
    return record


def amortized_latency(t_build_ms: float, t_search_total_ms: float, n_queries: int) -> float:
    """Milliseconds per query once one-time build cost is spread over the load."""
    if n_queries < 1:
        raise ValueError(f"n_queries must be >= 1, got {n_queries}")
    return (t_build_ms + t_search_total_ms) / n_queries


def fit_power_law(points: list[tuple[float, float]]) -> PowerLawFit:
    """Least-squares line through (log size, log latency)."""
    if len(points) < 3:
        raise ValueError(f"power-law fit needs >= 3 points, got {len(points)}")
    sizes = np.array([p[0] for p in points], dtype=np.float64)
    lats = np.array([p[1] for p in points], dtype=np.float64)
    if (sizes <= 0).any() or (lats <= 0).any():
        raise ValueError("power-law fit requires positive sizes and latencies")
    if np.unique(sizes).size != sizes.size:
        raise ValueError("power-law fit requires distinct sizes")
    x = np.log(sizes)
    y = np.log(lats)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    ss_res = float(residual @ residual)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res < 1e-24 else 0.0
    else:
        r_squared = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return PowerLawFit(exponent=float(slope), coefficient=float(np.exp(intercept)), r_squared=r_squared)


def gaussian_mixture_corpus(
    n: int, dim: int, n_clusters: int = DEFAULT_CLUSTERS, seed: int = 0
) -> np.ndarray:
    """Synthetic embeddings: rows sampled around seeded cluster centers."""
    if n < 1 or dim < 1 or n_clusters < 1:
        raise ValueError("n, dim and n_clusters must all be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, dim)).astype(np.float32) * np.float32(4.0)
    assignment = rng.integers(n_clusters, size=n)
    noise = rng.standard_normal((n, dim)).astype(np.float32)
    return centers[assignment] + noise


def _mode_config(mode) -> tuple[str, tuple[int, int, int] | None]:
    """Normalize a sweep mode: preset name, baseline name, or (label, triple)."""
    if isinstance(mode, str):
        if mode in ("exhaustive", "flat-ip"):
            return mode, None
        if mode in PRESETS:
            return mode, PRESETS[mode]
        known = ", ".join(["exhaustive", "flat-ip"] + sorted(PRESETS))
        raise ValueError(f"unknown sweep mode {mode!r}, expected one of: {known}")
    label, triple = mode
    initial_pool, n_candidates, max_iter = triple
    return label, (initial_pool, n_candidates, max_iter)


def scaling_sweep(
    corpus_sizes: list[int],
    modes: list,
    dim: int = 16,
    n_queries: int = 20,
    n_tokens: int = 6,
    degree: int = 32,
    n_clusters: int = DEFAULT_CLUSTERS,
    k: int = 10,
    warmup: int = DEFAULT_WARMUP,
    seed: int = 0,
    head: HyperheadParams | None = None,
    head_layers: int = 3,
) -> tuple[list[LatencyRecord], list[tuple[int, float]], dict[str, PowerLawFit]]:
    """Measure every (corpus size, mode) cell on synthetic corpora.

    Returns the latency records, per-size graph build times in seconds, and
    a power-law fit of mean latency against size per mode (fitted when at
    least 3 sizes are present).
    """
    if list(corpus_sizes) != sorted(corpus_sizes):
        raise ValueError("corpus_sizes must be ascending")
    if len(set(corpus_sizes)) != len(corpus_sizes):
        raise ValueError("corpus_sizes must be distinct")
    parsed = [_mode_config(m) for m in modes]
    needs_graph = any(triple is not None for _, triple in parsed)
    if head is None:
        head_rng = np.random.default_rng(derive_seed(seed, "hyperhead"))
        head = random_hyperhead(dim, dim, 4, head_layers, head_rng)

    records: list[LatencyRecord] = []
    builds: list[tuple[int, float]] = []
    for size in corpus_sizes:
        corpus = gaussian_mixture_corpus(
            size, dim, n_clusters, derive_seed(seed, f"corpus:{size}")
        )
        graph = None
        build_s = 0.0
        if needs_graph:
            start = time.perf_counter()
            graph = build_graph(corpus, degree)
            build_s = time.perf_counter() - start
            builds.append((size, build_s))
        query_rng = np.random.default_rng(derive_seed(seed, f"queries:{size}"))
        token_sets = [
            query_rng.standard_normal((n_tokens, dim)).astype(np.float32)
            for _ in range(warmup + n_queries)
        ]
        for label, triple in parsed:
            if label == "flat-ip":
                pooled = [tokens.mean(axis=0) for tokens in token_sets]
                run = lambda vec: flat_ip_search(corpus, vec, k)
                queries = pooled
            elif triple is None:
                run = lambda tokens: exhaustive_search(corpus, generate_qnet(tokens, head), k)
                queries = token_sets
            else:
                config = SearchConfig(
                    initial_pool=triple[0],
                    n_candidates=triple[1],
                    max_iter=triple[2],
                    k=k,
                    seed=derive_seed(seed, f"{label}:{size}"),
                )
                run = lambda tokens, config=config: efficient_search(
                    corpus, graph, generate_qnet(tokens, head), config
                )
                queries = token_sets
            records.append(
                time_search(
                    run,
                    queries,
                    warmup=warmup,
                    label=label,
                    corpus_size=size,
                    build_s=build_s if triple is not None else 0.0,
                )
            )

    fits: dict[str, PowerLawFit] = {}
    if len(corpus_sizes) >= 3:
        for label, _ in parsed:
            points = [
                (float(r.corpus_size), r.mean_ms) for r in records if r.label == label
            ]
            fits[label] = fit_power_law(points)
    return records, builds, fits


def write_records_csv(records: list[LatencyRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.label,
                    r.corpus_size,
                    r.n_queries,
                    f"{r.mean_ms:.6f}",
                    f"{r.p50_ms:.6f}",
                    f"{r.p95_ms:.6f}",
                    f"{r.scored_mean:.6f}",
                    f"{r.build_s:.6f}",
                ]
            )


def write_fits_tsv(fits: dict[str, PowerLawFit], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label\texponent\tcoefficient\tr2\n")
        for label in sorted(fits):
            fit = fits[label]
            fh.write(f"{label}\t{fit.exponent:.6f}\t{fit.coefficient:.6g}\t{fit.r_squared:.6f}\n")
