import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { main } from "../src/cli.js";
import { exportDocEmbeddings, exportHyperhead, exportQueryTokens } from "../src/export.js";
import { readEmbeddings, readHead } from "../src/formats.js";
import { buildCheckpointDir, writeTsv } from "./helpers.js";

let tmp: string;
beforeEach(() => {
  tmp = fs.mkdtempSync(path.join(os.tmpdir(), "export-"));
});
afterEach(() => {
  fs.rmSync(tmp, { recursive: true, force: true });
});

function fixture() {
  const ckpt = buildCheckpointDir(path.join(tmp, "ckpt"));
  const logs: string[] = [];
  return { ckpt, logs, log: (m: string) => logs.push(m) };
}

describe("document export", () => {
  it("writes one CLS row per document and an aligned id map", () => {
    const { ckpt, logs, log } = fixture();
    const input = path.join(tmp, "docs.tsv");
    writeTsv(input, [
      ["D1", "types of medication"],
      ["D2", "hello world"],
      ["D3", "alpha beta treatment"],
    ]);
    const outDir = path.join(tmp, "out");
    const counts = exportDocEmbeddings({ checkpointDir: ckpt.dir, inputTsv: input, outDir, log });
    expect(counts).toEqual({ written: 3, skipped: 0 });
    const corpus = readEmbeddings(path.join(outDir, "corpus.hyem"));
    expect(corpus.count).toBe(3);
    expect(corpus.dim).toBe(ckpt.hidden);
    const idMap = fs.readFileSync(path.join(outDir, "corpus.ids.tsv"), "utf-8");
    expect(idMap).toBe("0\tD1\n1\tD2\n2\tD3\n");
    expect(logs).toEqual([]);
  });

  it("gives identical texts identical rows", () => {
    const { ckpt, log } = fixture();
    const input = path.join(tmp, "docs.tsv");
    writeTsv(input, [
      ["A", "depression treatment"],
      ["B", "something else entirely"],
      ["C", "depression treatment"],
    ]);
    const outDir = path.join(tmp, "out");
    exportDocEmbeddings({ checkpointDir: ckpt.dir, inputTsv: input, outDir, log });
    const corpus = readEmbeddings(path.join(outDir, "corpus.hyem"));
    const h = corpus.dim;
    expect([...corpus.values.slice(0, h)]).toEqual([...corpus.values.slice(2 * h, 3 * h)]);
    expect([...corpus.values.slice(0, h)]).not.toEqual([...corpus.values.slice(h, 2 * h)]);
  });

  it("warns on empty input and writes a zero-row file", () => {
    const { ckpt, logs, log } = fixture();
    const input = path.join(tmp, "docs.tsv");
    fs.writeFileSync(input, "");
    const outDir = path.join(tmp, "out");
    const counts = exportDocEmbeddings({ checkpointDir: ckpt.dir, inputTsv: input, outDir, log });
    expect(counts.written).toBe(0);
    expect(logs.some((m) => m.includes("warning"))).toBe(true);
    expect(readEmbeddings(path.join(outDir, "corpus.hyem")).count).toBe(0);
  });

  it("skips and logs malformed lines, keeping the rest", () => {
    const { ckpt, logs, log } = fixture();
    const input = path.join(tmp, "docs.tsv");
    fs.writeFileSync(input, "D1\tgood text\nno-tab-line\nD3\tmore text\n");
    const outDir = path.join(tmp, "out");
    const counts = exportDocEmbeddings({ checkpointDir: ckpt.dir, inputTsv: input, outDir, log });
    expect(counts).toEqual({ written: 2, skipped: 1 });
    expect(logs.some((m) => m.includes("parse error") && m.includes(":2:"))).toBe(true);
    const idMap = fs.readFileSync(path.join(outDir, "corpus.ids.tsv"), "utf-8");
    expect(idMap).toBe("0\tD1\n1\tD3\n");
  });

  it("is deterministic across runs, byte for byte", () => {
    const { ckpt, log } = fixture();
    const input = path.join(tmp, "docs.tsv");
    writeTsv(input, [
      ["D1", "types of anti depression medication"],
      ["D2", "unable, to! match"],
    ]);
    const outA = path.join(tmp, "a");
    const outB = path.join(tmp, "b");
    exportDocEmbeddings({ checkpointDir: ckpt.dir, inputTsv: input, outDir: outA, log });
    exportDocEmbeddings({ checkpointDir: ckpt.dir, inputTsv: input, outDir: outB, log });
    expect(fs.readFileSync(path.join(outA, "corpus.hyem"))).toEqual(
      fs.readFileSync(path.join(outB, "corpus.hyem")),
    );
  });
});

describe("query export", () => {
  it("writes the full token sequence including special tokens", () => {
    const { ckpt, log } = fixture();
    const input = path.join(tmp, "queries.tsv");
    writeTsv(input, [["q1", "alpha beta"]]);
    const outDir = path.join(tmp, "tokens");
    const counts = exportQueryTokens({ checkpointDir: ckpt.dir, inputTsv: input, outDir, log });
    expect(counts.written).toBe(1);
    // 2 words + [CLS] + [SEP]
    const manifest = fs.readFileSync(path.join(outDir, "manifest.tsv"), "utf-8");
    expect(manifest).toBe("q1\t000000.hyem\t4\n");
    const tokens = readEmbeddings(path.join(outDir, "000000.hyem"));
    expect(tokens.count).toBe(4);
    expect(tokens.dim).toBe(ckpt.hidden);
  });

  it("writes identical files for a repeated query", () => {
    const { ckpt, log } = fixture();
    const input = path.join(tmp, "queries.tsv");
    writeTsv(input, [
      ["q1", "hello world"],
      ["q2", "hello world"],
    ]);
    const outDir = path.join(tmp, "tokens");
    exportQueryTokens({ checkpointDir: ckpt.dir, inputTsv: input, outDir, log });
    expect(fs.readFileSync(path.join(outDir, "000000.hyem"))).toEqual(
      fs.readFileSync(path.join(outDir, "000001.hyem")),
    );
  });

  it("logs and skips queries that fail to encode", () => {
    const { ckpt, logs, log } = fixture();
    const input = path.join(tmp, "queries.tsv");
    fs.writeFileSync(input, "broken-line-without-tab\nq2\thello\n");
    const outDir = path.join(tmp, "tokens");
    const counts = exportQueryTokens({ checkpointDir: ckpt.dir, inputTsv: input, outDir, log });
    expect(counts).toEqual({ written: 1, skipped: 1 });
    expect(logs.length).toBe(1);
  });
});

describe("head export", () => {
  it("writes a loadable head file and reports its shape", () => {
    const { ckpt } = fixture();
    const out = path.join(tmp, "head.hyhh");
    const info = exportHyperhead(ckpt.dir, out);
    expect(info).toEqual({ h: ckpt.hidden, d: ckpt.d, m: ckpt.m, layers: ckpt.headLayers });
    const head = readHead(out);
    expect(head.layers.length).toBe(ckpt.headLayers);
    expect(head.layers[ckpt.headLayers - 1].r).toBe(1);
  });
});

describe("command line", () => {
  function run(argv: string[]): { code: number; errs: string[] } {
    const errs: string[] = [];
    const code = main(argv, (m) => errs.push(m));
    return { code, errs };
  }

  it("exports a head end to end", () => {
    const { ckpt } = fixture();
    const out = path.join(tmp, "head.hyhh");
    const { code, errs } = run(["export-hyperhead", "--checkpoint", ckpt.dir, "--out", out]);
    expect(code).toBe(0);
    expect(fs.existsSync(out)).toBe(true);
    expect(errs.some((m) => m.includes("exported head"))).toBe(true);
  });

  it("exports documents and queries end to end", () => {
    const { ckpt } = fixture();
    const input = path.join(tmp, "docs.tsv");
    writeTsv(input, [
      ["D1", "hello"],
      ["D2", "world"],
    ]);
    const outDir = path.join(tmp, "out");
    const docs = run([
      "export-docs",
      "--checkpoint",
      ckpt.dir,
      "--input",
      input,
      "--out",
      outDir,
      "--batch-size",
      "1",
    ]);
    expect(docs.code).toBe(0);
    expect(readEmbeddings(path.join(outDir, "corpus.hyem")).count).toBe(2);

    const tokenDir = path.join(tmp, "tokens");
    const queries = run([
      "export-queries",
      "--checkpoint",
      ckpt.dir,
      "--input",
      input,
      "--out",
      tokenDir,
    ]);
    expect(queries.code).toBe(0);
    expect(fs.existsSync(path.join(tokenDir, "manifest.tsv"))).toBe(true);
  });

  it("returns 2 for usage errors", () => {
    expect(run([]).code).toBe(2);
    expect(run(["no-such-command"]).code).toBe(2);
    expect(run(["export-hyperhead", "--out", "x"]).code).toBe(2);
    expect(run(["export-docs", "--checkpoint", "c", "--input", "i"]).code).toBe(2);
    expect(run(["export-docs", "--checkpoint", "c", "--input", "i", "--out", "o", "--batch-size", "zero"]).code).toBe(2);
    expect(run(["export-hyperhead", "--checkpoint", "c", "--out", "x", "--bogus", "y"]).code).toBe(2);
  });

  it("returns 1 for operational failures", () => {
    const missing = path.join(tmp, "no-such-dir");
    const { code, errs } = run(["export-hyperhead", "--checkpoint", missing, "--out", path.join(tmp, "h")]);
    expect(code).toBe(1);
    expect(errs.some((m) => m.startsWith("error:"))).toBe(true);
  });

  it("prints usage on --help", () => {
    const { code, errs } = run(["--help"]);
    expect(code).toBe(0);
    expect(errs.join("\n")).toContain("export-hyperhead");
  });
});
