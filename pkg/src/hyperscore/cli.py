"""Command-line entry point: build-graph, search, eval, perturb, bench, inspect.

Every artifact-producing command writes a JSON manifest next to its primary
output (suffix ``.manifest.json``) recording the flags, the top-level seed,
sha256 digests of the inputs, and timestamps.  Re-running a command with
the manifest's flags on the same inputs reproduces the output files byte
for byte.  Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import bench as bench_mod
from . import evaluation, graph, hyperhead, perturb, qnet, search, store
from .seeding import derive_seed


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _sha256_input(path: Path) -> str:
    """Digest of a file, or of a directory's (name, file digest) listing."""
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(child.relative_to(path)).encode("utf-8"))
            digest.update(_sha256_file(child).encode("ascii"))
        return digest.hexdigest()
    return _sha256_file(path)


def _write_manifest(
    out_path: Path, command: str, args: argparse.Namespace, inputs: list[Path], outputs: list[Path]
) -> None:
    flags = {
        key: value for key, value in sorted(vars(args).items()) if key != "func"
    }
    manifest = {
        "command": command,
        "version": __version__,
        "flags": flags,
        "inputs": {str(p): _sha256_input(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "written_at": datetime.now(timezone.utc).isoformat(),
    }
    manifest_path = Path(str(out_path) + ".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _usage_error(parser: argparse.ArgumentParser, message: str) -> int:
    print(f"usage error: {message}", file=sys.stderr)
    print(parser.format_usage(), end="", file=sys.stderr)
    return 2


def cmd_build_graph(args, parser) -> int:
    corpus_path = Path(args.corpus)
    if not corpus_path.exists():
        return _fail(f"corpus file not found: {corpus_path}")
    matrix = store.read_embeddings(corpus_path)
    start = time.perf_counter()
    built = graph.build_graph(matrix.values, degree=args.degree)
    elapsed = time.perf_counter() - start
    graph.save_graph(built, args.out)
    if built.degree != args.degree:
        print(
            f"degree clamped to {built.degree} for a corpus of {built.count} documents",
            file=sys.stderr,
        )
    print(f"built {built.count} x {built.degree} graph in {elapsed:.3f}s", file=sys.stderr)
    _write_manifest(Path(args.out), "build-graph", args, [corpus_path], [Path(args.out)])
    return 0


def _load_id_map(args) -> dict[int, str]:
    if args.id_map:
        return evaluation.read_id_map(args.id_map)
    return {}


def _search_config_for(args, parser, k: int, seed: int):
    if args.mode in search.PRESETS:
        pool, cand, iters = search.PRESETS[args.mode]
    else:
        missing = [
            flag
            for flag, value in (
                ("--initial-pool", args.initial_pool),
                ("--n-candidates", args.n_candidates),
                ("--max-iter", args.max_iter),
            )
            if value is None
        ]
        if missing:
            raise SystemExit(
                _usage_error(parser, f"mode custom requires {', '.join(missing)}")
            )
        pool, cand, iters = args.initial_pool, args.n_candidates, args.max_iter
    return search.SearchConfig(
        initial_pool=pool, n_candidates=cand, max_iter=iters, k=k, seed=seed
    )


def cmd_search(args, parser) -> int:
    mode = args.mode
    needs_graph = mode in ("efficient-1", "efficient-2", "custom")
    custom_flags = [args.initial_pool, args.n_candidates, args.max_iter]
    if mode != "custom" and any(v is not None for v in custom_flags):
        return _usage_error(
            parser, "--initial-pool/--n-candidates/--max-iter are only valid with --mode custom"
        )
    missing = []
    if needs_graph and not args.graph:
        missing.append("--graph")
    if mode != "flat-ip" and not args.hyperhead:
        missing.append("--hyperhead")
    if missing:
        return _usage_error(parser, f"mode {mode} requires {', '.join(missing)}")

    corpus_path = Path(args.corpus)
    queries_path = Path(args.queries)
    for p in (corpus_path, queries_path):
        if not p.exists():
            return _fail(f"input not found: {p}")
    matrix = store.read_embeddings(corpus_path)
    inputs = [corpus_path, queries_path]
    id_map = _load_id_map(args)
    if args.id_map:
        inputs.append(Path(args.id_map))
    tag = args.tag or mode

    results: list[tuple[str, search.RankedList, search.SearchStats]] = []
    if mode == "flat-ip":
        if queries_path.is_dir():
            return _usage_error(
                parser, "mode flat-ip takes a pooled embedding file, not a token directory"
            )
        pooled = store.read_embeddings(queries_path)
        if pooled.dim != matrix.dim:
            return _fail(
                f"query width {pooled.dim} does not match corpus width {matrix.dim}"
            )
        qids = {}
        if args.query_ids:
            qids = evaluation.read_id_map(args.query_ids)
            inputs.append(Path(args.query_ids))
        for row in range(pooled.count):
            qid = qids.get(row, str(row))
            ranked, stats = search.flat_ip_search(matrix, pooled.values[row], args.k)
            results.append((qid, ranked, stats))
    else:
        if not queries_path.is_dir():
            return _usage_error(
                parser, f"mode {mode} takes a query token directory with a manifest"
            )
        token_store = store.read_query_tokens(queries_path)
        head_path = Path(args.hyperhead)
        if not head_path.exists():
            return _fail(f"input not found: {head_path}")
        head = hyperhead.load_hyperhead(head_path)
        inputs.append(head_path)
        loaded_graph = None
        if needs_graph:
            graph_path = Path(args.graph)
            if not graph_path.exists():
                return _fail(f"input not found: {graph_path}")
            loaded_graph = graph.load_graph(graph_path)
            inputs.append(graph_path)
        for qid in token_store.query_ids():
            tokens = token_store.load(qid)
            net = hyperhead.generate_qnet(tokens.values, head)
            if mode == "exhaustive":
                ranked, stats = search.exhaustive_search(matrix, net, args.k)
            else:
                config = _search_config_for(
                    args, parser, args.k, derive_seed(args.seed, f"search:{qid}")
                )
                ranked, stats = search.efficient_search(matrix, loaded_graph, net, config)
            results.append((qid, ranked, stats))

    run: evaluation.RunFile = {}
    for qid, ranked, _ in results:
        run[qid] = [(id_map.get(doc, str(doc)), score) for doc, score in ranked.entries]
    out_path = Path(args.out)
    evaluation.write_run(run, out_path, tag=tag)
    outputs = [out_path]
    if args.stats:
        stats_path = Path(args.stats)
        with open(stats_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("query_id,scored_count,iterations,terminated_by,wall_time_ms\n")
            for qid, _, stats in results:
                terminated = stats.terminated_by or ""
                fh.write(
                    f"{qid},{stats.scored_count},{stats.iterations},"
                    f"{terminated},{stats.wall_time * 1000.0:.6f}\n"
                )
        outputs.append(stats_path)
    _write_manifest(out_path, "search", args, inputs, outputs)
    print(f"searched {len(results)} queries in mode {mode}", file=sys.stderr)
    return 0


_METRIC_NAMES = ("ndcg", "mrr", "recall", "p-mrr")


def _parse_metric(spec: str) -> tuple[str, int | None]:
    name, _, suffix = spec.partition("@")
    if name not in _METRIC_NAMES:
        raise ValueError(
            f"unknown metric {spec!r}, expected one of: "
            + ", ".join(f"{n}[@k]" for n in _METRIC_NAMES)
        )
    if not suffix:
        return name, None
    try:
        k = int(suffix)
    except ValueError:
        raise ValueError(f"bad cutoff in metric {spec!r}") from None
    if k < 1:
        raise ValueError(f"cutoff must be >= 1 in metric {spec!r}")
    return name, k


def cmd_eval(args, parser) -> int:
    run_path = Path(args.run)
    qrels_path = Path(args.qrels)
    for p in (run_path, qrels_path):
        if not p.exists():
            return _fail(f"input not found: {p}")
    try:
        metrics = [_parse_metric(m.strip()) for m in args.metrics.split(",") if m.strip()]
    except ValueError as exc:
        return _usage_error(parser, str(exc))
    if not metrics:
        return _usage_error(parser, "no metrics requested")
    run = evaluation.read_run(run_path)
    qrels = evaluation.read_qrels(qrels_path)
    inputs = [run_path, qrels_path]
    rows: list[tuple[str, str, float]] = []
    for name, cutoff in metrics:
        if name == "ndcg":
            if cutoff is None:
                return _usage_error(parser, "ndcg requires a cutoff, e.g. ndcg@10")
            report = evaluation.ndcg_at_k(run, qrels, cutoff)
            label = f"ndcg@{cutoff}"
        elif name == "mrr":
            report = evaluation.mrr(run, qrels, cutoff, binarize_at=args.binarize_at)
            label = f"mrr@{cutoff}" if cutoff else "mrr"
        elif name == "recall":
            if cutoff is None:
                return _usage_error(parser, "recall requires a cutoff, e.g. recall@1000")
            report = evaluation.recall_at_k(run, qrels, cutoff, binarize_at=args.binarize_at)
            label = f"recall@{cutoff}"
        else:
            if not args.run_original:
                return _usage_error(parser, "p-mrr requires --run-original")
            original_path = Path(args.run_original)
            if not original_path.exists():
                return _fail(f"input not found: {original_path}")
            original = evaluation.read_run(original_path)
            if original_path not in inputs:
                inputs.append(original_path)
            report = evaluation.p_mrr(original, run, qrels, binarize_at=args.binarize_at)
            label = "p-mrr"
        if report.skipped:
            print(
                f"{label}: skipped {len(report.skipped)} queries with no usable judgments",
                file=sys.stderr,
            )
        rows.extend(evaluation.metric_rows(label, report))
    if args.out:
        out_path = Path(args.out)
        evaluation.write_metrics(rows, out_path)
        _write_manifest(out_path, "eval", args, inputs, [out_path])
    else:
        for metric, qid, value in rows:
            print(f"{metric}\t{qid}\t{value:.6f}")
    return 0


def cmd_perturb(args, parser) -> int:
    queries_path = Path(args.queries)
    if not queries_path.exists():
        return _fail(f"input not found: {queries_path}")
    queries = perturb.read_queries(queries_path)
    inputs = [queries_path]
    kind = args.type
    lexicon = None
    paraphrases = None
    if kind == "synonymize":
        if not args.lexicon:
            return _usage_error(parser, "type synonymize requires --lexicon")
        lexicon_path = Path(args.lexicon)
        if not lexicon_path.exists():
            return _fail(f"input not found: {lexicon_path}")
        lexicon = perturb.load_lexicon(lexicon_path)
        inputs.append(lexicon_path)
    if kind == "paraphrase":
        if not args.paraphrases:
            return _usage_error(parser, "type paraphrase requires --paraphrases")
        para_path = Path(args.paraphrases)
        if not para_path.exists():
            return _fail(f"input not found: {para_path}")
        paraphrases = perturb.load_paraphrases(para_path)
        inputs.append(para_path)

    rows = []
    unchanged = 0
    for query in queries:
        seed = derive_seed(args.seed, f"{kind}:{query.query_id}")
        if kind == "misspell":
            result = perturb.misspell(query, seed)
        elif kind == "naturality":
            # Single-token queries cannot lose a token; pass them through.
            if len(query.tokens()) < 2:
                result = perturb.PerturbResult(query, changed=False)
            else:
                result = perturb.naturality(query, seed)
        elif kind == "reorder":
            if len(query.tokens()) < 2:
                result = perturb.PerturbResult(query, changed=False)
            else:
                result = perturb.reorder(query, seed)
        elif kind == "synonymize":
            result = perturb.synonymize(query, lexicon, seed)
        else:
            replacement = paraphrases.get(query.query_id)
            if replacement is None:
                result = perturb.PerturbResult(query, changed=False)
            else:
                result = perturb.PerturbResult(replacement, changed=True)
        if not result.changed:
            unchanged += 1
        rows.append((query.query_id, kind, result.query.text))
    out_path = Path(args.out)
    perturb.write_perturbed(rows, out_path)
    if unchanged:
        print(f"{unchanged} queries left unchanged (no eligible edit)", file=sys.stderr)
    _write_manifest(out_path, "perturb", args, inputs, [out_path])
    return 0


def _parse_bench_config(path: Path) -> dict:
    """Flat key=value config; lists are comma-separated."""
    config: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            config[key.strip()] = value.strip()

    def ints(key: str, default: list[int]) -> list[int]:
        if key not in config:
            return default
        try:
            return [int(v) for v in config[key].split(",") if v.strip()]
        except ValueError:
            raise ValueError(f"{path}: key {key!r}: expected comma-separated integers")

    def one_int(key: str, default: int) -> int:
        if key not in config:
            return default
        try:
            return int(config[key])
        except ValueError:
            raise ValueError(f"{path}: key {key!r}: expected an integer")

    known = {
        "sizes", "modes", "dim", "n_queries", "n_tokens",
        "degree", "clusters", "k", "warmup", "seed", "head_layers",
    }
    for key in config:
        if key not in known:
            raise ValueError(f"{path}: unknown key {key!r}")
    modes = [
        m.strip()
        for m in config.get("modes", "exhaustive,efficient-1,flat-ip").split(",")
        if m.strip()
    ]
    return {
        "corpus_sizes": ints("sizes", [10_000, 20_000, 50_000]),
        "modes": modes,
        "dim": one_int("dim", 16),
        "n_queries": one_int("n_queries", 20),
        "n_tokens": one_int("n_tokens", 6),
        "degree": one_int("degree", 32),
        "n_clusters": one_int("clusters", bench_mod.DEFAULT_CLUSTERS),
        "k": one_int("k", 10),
        "warmup": one_int("warmup", bench_mod.DEFAULT_WARMUP),
        "seed": one_int("seed", 0),
        "head_layers": one_int("head_layers", 3),
    }


def cmd_bench(args, parser) -> int:
    config_path = Path(args.config)
    if not config_path.exists():
        return _fail(f"input not found: {config_path}")
    try:
        kwargs = _parse_bench_config(config_path)
    except ValueError as exc:
        return _fail(str(exc))
    records, builds, fits = bench_mod.scaling_sweep(**kwargs)
    out_csv = Path(args.out_csv)
    bench_mod.write_records_csv(records, out_csv)
    outputs = [out_csv]
    if args.out_fits:
        fits_path = Path(args.out_fits)
        bench_mod.write_fits_tsv(fits, fits_path)
        outputs.append(fits_path)
    for size, seconds in builds:
        print(f"graph build at {size} documents: {seconds:.3f}s", file=sys.stderr)
    _write_manifest(out_csv, "bench", args, [config_path], outputs)
    return 0


def cmd_inspect(args, parser) -> int:
    path = Path(args.path)
    if not path.exists():
        return _fail(f"input not found: {path}")
    try:
        if path.is_dir():
            token_store = store.read_query_tokens(path)
            info = {
                "format": "query-tokens",
                "queries": len(token_store.entries),
                "query_ids": token_store.query_ids()[:10],
            }
        else:
            with open(path, "rb") as fh:
                magic = fh.read(4)
            if magic == store.MAGIC:
                matrix = store.read_embeddings(path)
                info = {
                    "format": "embeddings",
                    "dtype": matrix.dtype,
                    "count": matrix.count,
                    "dim": matrix.dim,
                }
            elif magic == qnet.HYQN_MAGIC:
                net = qnet.load_qnet(path)
                info = {
                    "format": "qnet",
                    "depth": net.depth,
                    "width": net.width,
                    "layer_shapes": [[layer.rows, layer.cols] for layer in net.layers],
                }
            elif magic == hyperhead.HYHH_MAGIC:
                head = hyperhead.load_hyperhead(path)
                info = {
                    "format": "hyperhead",
                    "h": head.h,
                    "d": head.d,
                    "m": head.m,
                    "target_shapes": [
                        [layer.target_rows, layer.target_cols] for layer in head.layers
                    ],
                }
            elif magic == graph.HYGR_MAGIC:
                loaded = graph.load_graph(path)
                info = {
                    "format": "graph",
                    "count": loaded.count,
                    "degree": loaded.degree,
                }
            else:
                return _fail(f"{path}: unrecognized magic {magic!r}")
    except (store.FormatError, ValueError) as exc:
        return _fail(str(exc))
    json.dump(info, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperscore",
        description="Retrieval with per-query generated scoring networks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build the nearest-neighbor document graph")
    p.add_argument("--corpus", required=True, help="document embeddings (.hyem)")
    p.add_argument("--degree", type=int, default=graph.DEFAULT_DEGREE)
    p.add_argument("--out", required=True, help="output graph path (.hygr)")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("search", help="rank documents for a set of queries")
    p.add_argument("--corpus", required=True, help="document embeddings (.hyem)")
    p.add_argument(
        "--queries",
        required=True,
        help="query token directory (network modes) or pooled .hyem file (flat-ip)",
    )
    p.add_argument(
        "--mode",
        required=True,
        choices=["exhaustive", "efficient-1", "efficient-2", "custom", "flat-ip"],
    )
    p.add_argument("--hyperhead", help="hyperhead parameters (.hyhh), network modes")
    p.add_argument("--graph", help="neighbor graph (.hygr), efficient modes")
    p.add_argument("--k", type=int, required=True, help="results per query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial-pool", type=int, help="custom mode only")
    p.add_argument("--n-candidates", type=int, help="custom mode only")
    p.add_argument("--max-iter", type=int, help="custom mode only")
    p.add_argument("--id-map", help="TSV internal_id<TAB>doc_key")
    p.add_argument("--query-ids", help="TSV row<TAB>query_id for pooled queries")
    p.add_argument("--tag", help="run tag (default: the mode name)")
    p.add_argument("--out", required=True, help="output run file")
    p.add_argument("--stats", help="optional per-query stats CSV")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True, help="run file to evaluate")
    p.add_argument("--qrels", required=True)
    p.add_argument(
        "--metrics",
        default="ndcg@10,mrr@10,recall@1000",
        help="comma list, e.g. ndcg@10,mrr,recall@1000,p-mrr",
    )
    p.add_argument("--binarize-at", type=int, default=1, help="relevance grade threshold")
    p.add_argument("--run-original", help="baseline run for p-mrr")
    p.add_argument("--out", help="metrics TSV (default: print to stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", help="apply one perturbation to a query file")
    p.add_argument("--queries", required=True, help="TSV query_id<TAB>text")
    p.add_argument(
        "--type",
        required=True,
        choices=["misspell", "naturality", "reorder", "synonymize", "paraphrase"],
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lexicon", help="TSV token<TAB>alt1,alt2,...")
    p.add_argument("--paraphrases", help="TSV query_id<TAB>paraphrase")
    p.add_argument("--out", required=True, help="output TSV")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("bench", help="run a latency scaling sweep")
    p.add_argument("--config", required=True, help="key=value sweep config file")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-fits", help="optional power-law fit TSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print a summary of a data file as JSON")
    p.add_argument("--path", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args, parser)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 2
    except (store.FormatError, ValueError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
