"""End-to-end tests driving the command line through main(argv)."""

import csv
import json

import numpy as np
import pytest

from hyperscore import evaluation, graph, hyperhead, qnet, search, store
from hyperscore.cli import main


@pytest.fixture()
def world(tmp_path):
    """A small corpus, query token directory, hyperhead, and graph on disk."""
    rng = np.random.default_rng(11)
    corpus = store.EmbeddingMatrix(rng.standard_normal((40, 8), dtype=np.float32))
    corpus_path = tmp_path / "corpus.hyem"
    store.write_embeddings(corpus, corpus_path)

    tokens_dir = tmp_path / "queries"
    token_map = {
        "qa": rng.standard_normal((3, 8), dtype=np.float32),
        "qb": rng.standard_normal((5, 8), dtype=np.float32),
        "qc": rng.standard_normal((2, 8), dtype=np.float32),
    }
    store.write_query_tokens(tokens_dir, {k: store.EmbeddingMatrix(v) for k, v in token_map.items()})

    head = hyperhead.random_hyperhead(h=8, d=4, m=2, n_layers=2, rng=rng)
    head_path = tmp_path / "head.hyhh"
    hyperhead.save_hyperhead(head, head_path)

    built = graph.build_graph(corpus.values, degree=6)
    graph_path = tmp_path / "corpus.hygr"
    graph.save_graph(built, graph_path)

    return {
        "tmp": tmp_path,
        "corpus": corpus,
        "corpus_path": corpus_path,
        "tokens_dir": tokens_dir,
        "head": head,
        "head_path": head_path,
        "graph_path": graph_path,
    }


def test_build_graph_writes_graph_and_manifest(world, capsys):
    out = world["tmp"] / "g.hygr"
    rc = main(
        [
            "build-graph",
            "--corpus", str(world["corpus_path"]),
            "--degree", "4",
            "--out", str(out),
        ]
    )
    assert rc == 0
    loaded = graph.load_graph(out)
    assert loaded.count == 40 and loaded.degree == 4
    manifest = json.loads((world["tmp"] / "g.hygr.manifest.json").read_text())
    assert manifest["command"] == "build-graph"
    assert manifest["flags"]["degree"] == 4
    assert str(world["corpus_path"]) in manifest["inputs"]
    digest = manifest["inputs"][str(world["corpus_path"])]
    assert len(digest) == 64 and all(c in "0123456789abcdef" for c in digest)
    assert manifest["outputs"] == [str(out)]
    assert "built 40 x 4 graph" in capsys.readouterr().err


def test_build_graph_degree_clamps_to_corpus(tmp_path, capsys):
    rng = np.random.default_rng(0)
    small = store.EmbeddingMatrix(rng.standard_normal((5, 3), dtype=np.float32))
    corpus_path = tmp_path / "small.hyem"
    store.write_embeddings(small, corpus_path)
    out = tmp_path / "small.hygr"
    rc = main(["build-graph", "--corpus", str(corpus_path), "--out", str(out)])
    assert rc == 0
    assert graph.load_graph(out).degree == 4
    assert "degree clamped to 4" in capsys.readouterr().err


def test_search_exhaustive_matches_library(world):
    out = world["tmp"] / "run.txt"
    rc = main(
        [
            "search",
            "--corpus", str(world["corpus_path"]),
            "--queries", str(world["tokens_dir"]),
            "--mode", "exhaustive",
            "--hyperhead", str(world["head_path"]),
            "--k", "5",
            "--out", str(out),
        ]
    )
    assert rc == 0
    run = evaluation.read_run(out)
    token_store = store.read_query_tokens(world["tokens_dir"])
    assert sorted(run) == ["qa", "qb", "qc"]
    for qid in run:
        net = hyperhead.generate_qnet(token_store.load(qid).values, world["head"])
        ranked, _ = search.exhaustive_search(world["corpus"], net, 5)
        expected = [(str(doc), score) for doc, score in ranked.entries]
        assert run[qid] == expected
    first = out.read_text().splitlines()[0].split()
    assert first[0] == "qa" and first[1] == "Q0" and first[3] == "1"
    assert first[5] == "exhaustive"


def test_search_efficient_rerun_is_byte_identical(world):
    args = [
        "search",
        "--corpus", str(world["corpus_path"]),
        "--queries", str(world["tokens_dir"]),
        "--mode", "custom",
        "--hyperhead", str(world["head_path"]),
        "--graph", str(world["graph_path"]),
        "--initial-pool", "12",
        "--n-candidates", "6",
        "--max-iter", "4",
        "--k", "5",
        "--seed", "7",
    ]
    out1 = world["tmp"] / "run1.txt"
    out2 = world["tmp"] / "run2.txt"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_search_stats_csv(world):
    out = world["tmp"] / "run.txt"
    stats_path = world["tmp"] / "stats.csv"
    rc = main(
        [
            "search",
            "--corpus", str(world["corpus_path"]),
            "--queries", str(world["tokens_dir"]),
            "--mode", "exhaustive",
            "--hyperhead", str(world["head_path"]),
            "--k", "3",
            "--out", str(out),
            "--stats", str(stats_path),
        ]
    )
    assert rc == 0
    with open(stats_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    for row in rows:
        assert int(row["scored_count"]) == 40
        assert int(row["iterations"]) == 1
        assert row["terminated_by"] == ""
        assert float(row["wall_time_ms"]) >= 0.0


def test_search_flat_ip_with_id_maps(world):
    rng = np.random.default_rng(3)
    pooled = store.EmbeddingMatrix(rng.standard_normal((2, 8), dtype=np.float32))
    pooled_path = world["tmp"] / "pooled.hyem"
    store.write_embeddings(pooled, pooled_path)
    qids_path = world["tmp"] / "qids.tsv"
    qids_path.write_text("0\tqx\n1\tqy\n")
    id_map_path = world["tmp"] / "docs.tsv"
    id_map_path.write_text("".join(f"{i}\tD{i:03d}\n" for i in range(40)))
    out = world["tmp"] / "flat.txt"
    rc = main(
        [
            "search",
            "--corpus", str(world["corpus_path"]),
            "--queries", str(pooled_path),
            "--mode", "flat-ip",
            "--k", "4",
            "--query-ids", str(qids_path),
            "--id-map", str(id_map_path),
            "--tag", "base",
            "--out", str(out),
        ]
    )
    assert rc == 0
    run = evaluation.read_run(out)
    assert sorted(run) == ["qx", "qy"]
    for row, qid in enumerate(["qx", "qy"]):
        ranked, _ = search.flat_ip_search(world["corpus"], pooled.values[row], 4)
        expected = [(f"D{doc:03d}", score) for doc, score in ranked.entries]
        assert run[qid] == expected
    assert out.read_text().splitlines()[0].endswith("base")


def test_search_usage_errors(world, capsys):
    base = [
        "search",
        "--corpus", str(world["corpus_path"]),
        "--queries", str(world["tokens_dir"]),
        "--hyperhead", str(world["head_path"]),
        "--k", "5",
        "--out", str(world["tmp"] / "x.txt"),
    ]
    assert main(base + ["--mode", "efficient-1"]) == 2
    assert "requires --graph" in capsys.readouterr().err

    assert main(base + ["--mode", "custom", "--graph", str(world["graph_path"])]) == 2
    err = capsys.readouterr().err
    assert "--initial-pool" in err and "--n-candidates" in err and "--max-iter" in err

    assert main(base + ["--mode", "exhaustive", "--initial-pool", "5"]) == 2
    assert "only valid with --mode custom" in capsys.readouterr().err

    # flat-ip wants a pooled file, network modes want a token directory.
    assert main(
        [
            "search",
            "--corpus", str(world["corpus_path"]),
            "--queries", str(world["tokens_dir"]),
            "--mode", "flat-ip",
            "--k", "5",
            "--out", str(world["tmp"] / "x.txt"),
        ]
    ) == 2
    assert main(
        [
            "search",
            "--corpus", str(world["corpus_path"]),
            "--queries", str(world["corpus_path"]),
            "--mode", "exhaustive",
            "--hyperhead", str(world["head_path"]),
            "--k", "5",
            "--out", str(world["tmp"] / "x.txt"),
        ]
    ) == 2


def test_search_missing_input_is_runtime_error(world, capsys):
    rc = main(
        [
            "search",
            "--corpus", str(world["tmp"] / "nope.hyem"),
            "--queries", str(world["tokens_dir"]),
            "--mode", "exhaustive",
            "--hyperhead", str(world["head_path"]),
            "--k", "5",
            "--out", str(world["tmp"] / "x.txt"),
        ]
    )
    assert rc == 1
    assert "not found" in capsys.readouterr().err


@pytest.fixture()
def eval_files(tmp_path):
    run_path = tmp_path / "run.txt"
    run_path.write_text(
        "q1 Q0 d1 1 9.0 t\n"
        "q1 Q0 d2 2 8.0 t\n"
        "q1 Q0 d3 3 7.0 t\n"
        "q2 Q0 d1 1 5.0 t\n"
        "q2 Q0 d2 2 4.0 t\n"
    )
    qrels_path = tmp_path / "qrels.txt"
    qrels_path.write_text("q1 0 d2 2\nq1 0 d3 1\nq2 0 d2 1\n")
    orig_path = tmp_path / "orig.txt"
    orig_path.write_text(
        "q1 Q0 d2 1 9.0 t\n"
        "q1 Q0 d1 2 8.0 t\n"
        "q2 Q0 d2 1 5.0 t\n"
    )
    return tmp_path, run_path, qrels_path, orig_path


def test_eval_writes_metric_rows(eval_files):
    tmp_path, run_path, qrels_path, orig_path = eval_files
    out = tmp_path / "metrics.tsv"
    rc = main(
        [
            "eval",
            "--run", str(run_path),
            "--qrels", str(qrels_path),
            "--metrics", "ndcg@2,mrr,p-mrr",
            "--run-original", str(orig_path),
            "--out", str(out),
        ]
    )
    assert rc == 0
    run = evaluation.read_run(run_path)
    qrels = evaluation.read_qrels(qrels_path)
    orig = evaluation.read_run(orig_path)
    want = {}
    for label, report in [
        ("ndcg@2", evaluation.ndcg_at_k(run, qrels, 2)),
        ("mrr", evaluation.mrr(run, qrels)),
        ("p-mrr", evaluation.p_mrr(orig, run, qrels)),
    ]:
        for qid, value in report.per_query.items():
            want[(label, qid)] = value
        want[(label, "all")] = report.mean
    got = {}
    for line in out.read_text().splitlines():
        metric, qid, value = line.split("\t")
        got[(metric, qid)] = float(value)
    assert set(got) == set(want)
    for key, value in want.items():
        assert got[key] == pytest.approx(value, abs=5e-7)
    assert (tmp_path / "metrics.tsv.manifest.json").exists()


def test_eval_stdout_without_out_flag(eval_files, capsys):
    _, run_path, qrels_path, _ = eval_files
    rc = main(["eval", "--run", str(run_path), "--qrels", str(qrels_path), "--metrics", "mrr"])
    assert rc == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    assert any(l.startswith("mrr\tall\t") for l in lines)
    by_qid = {l.split("\t")[1]: float(l.split("\t")[2]) for l in lines}
    assert by_qid["q1"] == pytest.approx(0.5)
    assert by_qid["q2"] == pytest.approx(0.5)


def test_eval_usage_errors(eval_files, capsys):
    _, run_path, qrels_path, _ = eval_files
    base = ["eval", "--run", str(run_path), "--qrels", str(qrels_path)]
    assert main(base + ["--metrics", "ndcg"]) == 2
    assert "ndcg requires a cutoff" in capsys.readouterr().err
    assert main(base + ["--metrics", "tau@3"]) == 2
    assert "unknown metric" in capsys.readouterr().err
    assert main(base + ["--metrics", "p-mrr"]) == 2
    assert "requires --run-original" in capsys.readouterr().err
    assert main(base + ["--metrics", "recall"]) == 2
    assert main(base + ["--metrics", "ndcg@zero"]) == 2
    assert main(base + ["--metrics", " , "]) == 2


@pytest.fixture()
def query_file(tmp_path):
    path = tmp_path / "queries.tsv"
    path.write_text(
        "pq1\ttypes of anti depression medication\n"
        "pq2\talpha beta\n"
        "pq3\thi\n"
    )
    return path


def test_perturb_misspell(query_file, tmp_path, capsys):
    out = tmp_path / "out.tsv"
    rc = main(["perturb", "--queries", str(query_file), "--type", "misspell", "--out", str(out)])
    assert rc == 0
    rows = [line.split("\t") for line in out.read_text().splitlines()]
    assert [r[0] for r in rows] == ["pq1", "pq2", "pq3"]
    assert all(r[1] == "misspell" for r in rows)
    assert rows[0][2] != "types of anti depression medication"
    assert rows[2][2] == "hi"
    assert "1 queries left unchanged" in capsys.readouterr().err


def test_perturb_short_queries_pass_through(query_file, tmp_path):
    for kind in ("naturality", "reorder"):
        out = tmp_path / f"{kind}.tsv"
        rc = main(["perturb", "--queries", str(query_file), "--type", kind, "--out", str(out)])
        assert rc == 0
        rows = {r.split("\t")[0]: r.split("\t")[2] for r in out.read_text().splitlines()}
        assert rows["pq3"] == "hi"
        if kind == "reorder":
            assert sorted(rows["pq2"].split()) == ["alpha", "beta"]
        else:
            assert rows["pq2"] in ("alpha", "beta")
    nat = (tmp_path / "naturality.tsv").read_text().splitlines()
    first = nat[0].split("\t")[2]
    assert len(first.split()) == 4  # one of five tokens dropped


def test_perturb_reorder_keeps_tokens(query_file, tmp_path):
    out = tmp_path / "out.tsv"
    assert main(["perturb", "--queries", str(query_file), "--type", "reorder", "--out", str(out)]) == 0
    rows = {r.split("\t")[0]: r.split("\t")[2] for r in out.read_text().splitlines()}
    original = "types of anti depression medication"
    assert rows["pq1"] != original
    assert sorted(rows["pq1"].split()) == sorted(original.split())
    assert rows["pq2"] == "beta alpha"


def test_perturb_synonymize_and_paraphrase(query_file, tmp_path):
    lexicon = tmp_path / "lex.tsv"
    lexicon.write_text("types\tkinds\n")
    out = tmp_path / "syn.tsv"
    rc = main(
        [
            "perturb",
            "--queries", str(query_file),
            "--type", "synonymize",
            "--lexicon", str(lexicon),
            "--out", str(out),
        ]
    )
    assert rc == 0
    rows = {r.split("\t")[0]: r.split("\t")[2] for r in out.read_text().splitlines()}
    assert rows["pq1"] == "kinds of anti depression medication"
    assert rows["pq2"] == "alpha beta"

    paras = tmp_path / "paras.tsv"
    paras.write_text("pq1\twhich drugs treat depression\n")
    out2 = tmp_path / "para.tsv"
    rc = main(
        [
            "perturb",
            "--queries", str(query_file),
            "--type", "paraphrase",
            "--paraphrases", str(paras),
            "--out", str(out2),
        ]
    )
    assert rc == 0
    rows = {r.split("\t")[0]: r.split("\t")[2] for r in out2.read_text().splitlines()}
    assert rows["pq1"] == "which drugs treat depression"
    assert rows["pq2"] == "alpha beta"
    assert rows["pq3"] == "hi"


def test_perturb_is_deterministic(query_file, tmp_path):
    out1 = tmp_path / "a.tsv"
    out2 = tmp_path / "b.tsv"
    args = ["perturb", "--queries", str(query_file), "--type", "misspell", "--seed", "5"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_perturb_usage_errors(query_file, tmp_path, capsys):
    out = tmp_path / "out.tsv"
    base = ["perturb", "--queries", str(query_file), "--out", str(out)]
    assert main(base + ["--type", "synonymize"]) == 2
    assert "requires --lexicon" in capsys.readouterr().err
    assert main(base + ["--type", "paraphrase"]) == 2
    assert "requires --paraphrases" in capsys.readouterr().err


def test_bench_small_sweep(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    config.write_text(
        "# tiny smoke sweep\n"
        "sizes=60,120,240\n"
        "modes=exhaustive,flat-ip\n"
        "dim=8\n"
        "n_queries=2\n"
        "n_tokens=3\n"
        "clusters=4\n"
        "k=3\n"
        "warmup=1\n"
        "head_layers=2\n"
    )
    out_csv = tmp_path / "latency.csv"
    out_fits = tmp_path / "fits.tsv"
    rc = main(
        [
            "bench",
            "--config", str(config),
            "--out-csv", str(out_csv),
            "--out-fits", str(out_fits),
        ]
    )
    assert rc == 0
    with open(out_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert {r["label"] for r in rows} == {"exhaustive", "flat-ip"}
    assert sorted(int(r["corpus_size"]) for r in rows if r["label"] == "exhaustive") == [60, 120, 240]
    fits = out_fits.read_text().splitlines()
    assert fits[0] == "label\texponent\tcoefficient\tr2"
    assert len(fits) == 3
    assert (tmp_path / "latency.csv.manifest.json").exists()


def test_bench_config_tolerates_spaces_in_lists(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    config.write_text(
        "sizes = 60, 120\n"
        "modes = exhaustive, flat-ip\n"
        "dim = 8\n"
        "n_queries = 1\n"
        "n_tokens = 3\n"
        "clusters = 4\n"
        "k = 3\n"
        "warmup = 1\n"
        "head_layers = 2\n"
    )
    out_csv = tmp_path / "latency.csv"
    rc = main(["bench", "--config", str(config), "--out-csv", str(out_csv)])
    assert rc == 0
    with open(out_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {r["label"] for r in rows} == {"exhaustive", "flat-ip"}
    assert sorted(int(r["corpus_size"]) for r in rows) == [60, 60, 120, 120]


def test_bench_rejects_bad_config(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    config.write_text("nonsense=1\n")
    rc = main(["bench", "--config", str(config), "--out-csv", str(tmp_path / "x.csv")])
    assert rc == 1
    assert "unknown key 'nonsense'" in capsys.readouterr().err

    config.write_text("sizes=10,abc\n")
    rc = main(["bench", "--config", str(config), "--out-csv", str(tmp_path / "x.csv")])
    assert rc == 1
    assert "'sizes'" in capsys.readouterr().err


def test_inspect_each_format(world, tmp_path, capsys):
    rc = main(["inspect", "--path", str(world["corpus_path"])])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    assert info["format"] == "embeddings" and info["count"] == 40 and info["dim"] == 8

    rc = main(["inspect", "--path", str(world["graph_path"])])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    assert info["format"] == "graph" and info["degree"] == 6

    rc = main(["inspect", "--path", str(world["head_path"])])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    assert info["format"] == "hyperhead" and info["target_shapes"] == [[8, 8], [1, 8]]

    rng = np.random.default_rng(1)
    net = qnet.QNetParams(
        layers=(
            qnet.LinearLayer(rng.standard_normal((4, 4), dtype=np.float32), np.zeros(4, np.float32)),
            qnet.LinearLayer(rng.standard_normal((1, 4), dtype=np.float32), np.zeros(1, np.float32)),
        )
    )
    net_path = tmp_path / "net.hyqn"
    qnet.save_qnet(net, net_path)
    rc = main(["inspect", "--path", str(net_path)])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    assert info["format"] == "qnet" and info["layer_shapes"] == [[4, 4], [1, 4]]

    rc = main(["inspect", "--path", str(world["tokens_dir"])])
    assert rc == 0
    info = json.loads(capsys.readouterr().out)
    assert info["format"] == "query-tokens" and info["queries"] == 3

    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"XXXX" + b"\x00" * 32)
    rc = main(["inspect", "--path", str(junk)])
    assert rc == 1
    assert "unrecognized magic" in capsys.readouterr().err


def test_argparse_failures_return_two(capsys):
    assert main(["search"]) == 2
    assert main(["no-such-command"]) == 2
    assert main([]) == 2
    capsys.readouterr()


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "hyperscore" in capsys.readouterr().out
