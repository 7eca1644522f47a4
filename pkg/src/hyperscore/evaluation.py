"""TREC-style retrieval evaluation: nDCG@k, MRR, Recall@k, p-MRR, file IO.

Conventions: nDCG uses linear gains rel_i with a log2(i+1) discount; MRR
and Recall binarize at a configurable grade (default 1).  Queries with no
relevant document, and run queries missing from the qrels, are excluded
from means and reported in the ``skipped`` diagnostic.  Ranks are always
re-derived from scores, ties broken by doc key, so rank columns in input
files never override scores.

p-MRR follows the rank-ratio convention: with r_og and r_new the rank of
the first relevant document in the original and modified runs,
100*(r_og/r_new - 1) when the rank improves or holds, 100*(1 - r_new/r_og)
when it degrades.  +100 is a perfect promotion to rank 1 from rank 2, 0 is
no change, -100 the reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

Qrels = dict[str, dict[str, int]]
RunFile = dict[str, list[tuple[str, float]]]


@dataclass(frozen=True)
class MetricReport:
    """Per-query values, their mean, and the query ids excluded from it."""

    per_query: dict[str, float]
    mean: float
    skipped: tuple[str, ...]


def _mean(values: dict[str, float]) -> float:
    # Empty report means every query was skipped; the mean is reported as 0.
    return sum(values.values()) / len(values) if values else 0.0


def _sorted_entries(entries: list[tuple[str, float]]) -> list[tuple[str, float]]:
    return sorted(entries, key=lambda pair: (-pair[1], pair[0]))


def ndcg_at_k(run: RunFile, qrels: Qrels, k: int) -> MetricReport:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_query: dict[str, float] = {}
    skipped = []
    for qid, entries in run.items():
        grades = qrels.get(qid)
        if grades is None or not any(g > 0 for g in grades.values()):
            skipped.append(qid)
            continue
        ranked = _sorted_entries(entries)[:k]
        dcg = sum(
            grades.get(doc, 0) / math.log2(i + 2) for i, (doc, _) in enumerate(ranked)
        )
        ideal = sorted((g for g in grades.values() if g > 0), reverse=True)[:k]
        idcg = sum(g / math.log2(i + 2) for i, g in enumerate(ideal))
        per_query[qid] = dcg / idcg
    return MetricReport(per_query, _mean(per_query), tuple(skipped))


def mrr(
    run: RunFile, qrels: Qrels, cutoff: int | None = None, binarize_at: int = 1
) -> MetricReport:
    if cutoff is not None and cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    per_query: dict[str, float] = {}
    skipped = []
    for qid, entries in run.items():
        grades = qrels.get(qid)
        if grades is None or not any(g >= binarize_at for g in grades.values()):
            skipped.append(qid)
            continue
        ranked = _sorted_entries(entries)
        if cutoff is not None:
            ranked = ranked[:cutoff]
        value = 0.0
        for i, (doc, _) in enumerate(ranked):
            if grades.get(doc, 0) >= binarize_at:
                value = 1.0 / (i + 1)
                break
        per_query[qid] = value
    return MetricReport(per_query, _mean(per_query), tuple(skipped))


def recall_at_k(
    run: RunFile, qrels: Qrels, k: int, binarize_at: int = 1
) -> MetricReport:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_query: dict[str, float] = {}
    skipped = []
    for qid, entries in run.items():
        grades = qrels.get(qid)
        relevant = (
            {doc for doc, g in grades.items() if g >= binarize_at} if grades else set()
        )
        if not relevant:
            skipped.append(qid)
            continue
        retrieved = {doc for doc, _ in _sorted_entries(entries)[:k]}
        per_query[qid] = len(relevant & retrieved) / len(relevant)
    return MetricReport(per_query, _mean(per_query), tuple(skipped))


def _first_relevant_rank(
    entries: list[tuple[str, float]], relevant: set[str]
) -> int | None:
    for i, (doc, _) in enumerate(_sorted_entries(entries)):
        if doc in relevant:
            return i + 1
    return None


def p_mrr(
    run_original: RunFile,
    run_modified: RunFile,
    qrels_modified: Qrels,
    binarize_at: int = 1,
) -> MetricReport:
    """Paired rank-shift score in [-100, 100]; positive means the modified
    run ranks the first relevant document better."""
    per_query: dict[str, float] = {}
    skipped = []
    for qid in run_original:
        grades = qrels_modified.get(qid)
        relevant = (
            {doc for doc, g in grades.items() if g >= binarize_at} if grades else set()
        )
        if qid not in run_modified or not relevant:
            skipped.append(qid)
            continue
        r_og = _first_relevant_rank(run_original[qid], relevant)
        r_new = _first_relevant_rank(run_modified[qid], relevant)
        if r_og is None and r_new is None:
            skipped.append(qid)
            continue
        # A relevant document retrieved by only one run is an endpoint case.
        if r_og is None:
            per_query[qid] = 100.0
            continue
        if r_new is None:
            per_query[qid] = -100.0
            continue
        if r_new <= r_og:
            raw = 100.0 * (r_og / r_new - 1.0)
        else:
            raw = 100.0 * (1.0 - r_new / r_og)
        # The ratio exceeds the stated range once a rank shifts by more than
        # 2x, so each per-query value is clamped to keep [-100, 100] exact.
        per_query[qid] = max(-100.0, min(100.0, raw))
    return MetricReport(per_query, _mean(per_query), tuple(skipped))


def read_run(path: str | Path) -> RunFile:
    """Parse "query_id Q0 doc_key rank score tag" lines; ranks are ignored
    in favor of scores."""
    path = Path(path)
    run: RunFile = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 6:
                raise ValueError(
                    f"{path}:{lineno}: expected 6 space-separated run fields, got {len(fields)}"
                )
            qid, _, doc_key, _, score, _ = fields
            try:
                parsed = float(score)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad score {score!r}") from exc
            run.setdefault(qid, []).append((doc_key, parsed))
    return run


def write_run(run: RunFile, path: str | Path, tag: str = "hyperscore") -> None:
    """Write TREC run lines, queries sorted by id, ranks re-derived from scores."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run):
            for rank, (doc_key, score) in enumerate(_sorted_entries(run[qid]), start=1):
                fh.write(f"{qid} Q0 {doc_key} {rank} {score!r} {tag}\n")


def read_qrels(path: str | Path) -> Qrels:
    """Parse "query_id 0 doc_key grade" lines."""
    path = Path(path)
    qrels: Qrels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ValueError(
                    f"{path}:{lineno}: expected 4 space-separated qrels fields, got {len(fields)}"
                )
            qid, _, doc_key, grade = fields
            try:
                value = int(grade)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad grade {grade!r}") from exc
            if value < 0:
                raise ValueError(f"{path}:{lineno}: negative grade {value}")
            qrels.setdefault(qid, {})[doc_key] = value
    return qrels


def read_id_map(path: str | Path) -> dict[int, str]:
    """Parse "internal_id<TAB>external_key" lines mapping engine ids to doc keys."""
    path = Path(path)
    mapping: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 2 tab-separated id-map fields, got {len(fields)}"
                )
            try:
                internal = int(fields[0])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad internal id {fields[0]!r}") from exc
            mapping[internal] = fields[1]
    return mapping


def write_metrics(rows: list[tuple[str, str, float]], path: str | Path) -> None:
    """Write "metric<TAB>query_id|all<TAB>value" rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for metric, qid, value in rows:
            fh.write(f"{metric}\t{qid}\t{value:.6f}\n")


def metric_rows(name: str, report: MetricReport) -> list[tuple[str, str, float]]:
    rows = [(name, qid, report.per_query[qid]) for qid in sorted(report.per_query)]
    rows.append((name, "all", report.mean))
    return rows
