/**
 * Export pipelines: turn a checkpoint directory plus TSV text inputs into
 * the engine's binary files — document embeddings (one CLS-pooled row per
 * document), per-query token-embedding files, and head parameters.
 *
 * A checkpoint directory holds config.json, model.safetensors, and
 * vocab.txt. Exports are deterministic for fixed inputs: inference only,
 * float32 outputs.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Encoder } from "./encoder.js";
import { writeEmbeddings, writeHead, writeIdMap, writeQueryTokens } from "./formats.js";
import { defaultMappingPath, extractHead, loadMapping } from "./mapping.js";
import { loadCheckpoint } from "./safetensors.js";
import { WordPieceTokenizer } from "./tokenizer.js";

export interface ExportJob {
  /** Directory with config.json, model.safetensors, vocab.txt. */
  checkpointDir: string;
  /** Input TSV, one "id<TAB>text" line per record. */
  inputTsv: string;
  outDir: string;
  /** Records encoded per progress chunk; numerics are per-record regardless. */
  batchSize?: number;
  maxSeqLen?: number;
  log?: (message: string) => void;
}

export interface ExportCounts {
  written: number;
  skipped: number;
}

const DEFAULT_BATCH = 32;
const DEFAULT_MAX_SEQ = 512;

interface Record_ {
  id: string;
  text: string;
}

/** Parse "id<TAB>text" lines; malformed lines are reported and skipped. */
function parseTsv(tsvPath: string, log: (m: string) => void): { records: Record_[]; skipped: number } {
  const raw = fs.readFileSync(tsvPath, "utf-8");
  const records: Record_[] = [];
  let skipped = 0;
  const lines = raw.split("\n");
  lines.forEach((line, idx) => {
    if (line.endsWith("\r")) {
      line = line.slice(0, -1);
    }
    if (line === "" && idx === lines.length - 1) {
      return; // trailing newline
    }
    const tab = line.indexOf("\t");
    if (tab < 1) {
      log(`${tsvPath}:${idx + 1}: parse error: expected id<TAB>text; line skipped`);
      skipped += 1;
      return;
    }
    records.push({ id: line.slice(0, tab), text: line.slice(tab + 1) });
  });
  return { records, skipped };
}

function loadStack(job: ExportJob): { encoder: Encoder; tokenizer: WordPieceTokenizer } {
  const encoder = Encoder.fromDir(job.checkpointDir);
  const tokenizer = WordPieceTokenizer.fromFile(path.join(job.checkpointDir, "vocab.txt"));
  return { encoder, tokenizer };
}

/**
 * Encode every document and write a single embedding file (row = CLS vector)
 * plus an id map aligning row numbers to external ids.
 */
export function exportDocEmbeddings(job: ExportJob): ExportCounts {
  const log = job.log ?? ((m) => process.stderr.write(m + "\n"));
  const batch = job.batchSize ?? DEFAULT_BATCH;
  const maxSeq = job.maxSeqLen ?? DEFAULT_MAX_SEQ;
  const { encoder, tokenizer } = loadStack(job);
  const { records, skipped: parseSkipped } = parseTsv(job.inputTsv, log);

  fs.mkdirSync(job.outDir, { recursive: true });
  const hidden = encoder.config.hiddenSize;
  const rows: Float32Array[] = [];
  const ids: string[] = [];
  let skipped = parseSkipped;
  for (let start = 0; start < records.length; start += batch) {
    for (const record of records.slice(start, start + batch)) {
      try {
        const encoded = tokenizer.encode(record.text, maxSeq);
        const states = encoder.forward(encoded.ids);
        rows.push(states.slice(0, hidden)); // CLS pooling: first row
        ids.push(record.id);
      } catch (err) {
        log(`document ${record.id}: ${(err as Error).message}; skipped`);
        skipped += 1;
      }
    }
  }

  if (rows.length === 0) {
    log(`warning: no documents exported from ${job.inputTsv}`);
  }
  const values = new Float32Array(rows.length * hidden);
  rows.forEach((row, i) => values.set(row, i * hidden));
  writeEmbeddings(path.join(job.outDir, "corpus.hyem"), values, rows.length, hidden);
  writeIdMap(path.join(job.outDir, "corpus.ids.tsv"), ids);
  return { written: rows.length, skipped };
}

/**
 * Encode every query and write one embedding file per query holding the full
 * contextualized token sequence (special tokens included; the row count is
 * recorded in the manifest).
 */
export function exportQueryTokens(job: ExportJob): ExportCounts {
  const log = job.log ?? ((m) => process.stderr.write(m + "\n"));
  const batch = job.batchSize ?? DEFAULT_BATCH;
  const maxSeq = job.maxSeqLen ?? DEFAULT_MAX_SEQ;
  const { encoder, tokenizer } = loadStack(job);
  const { records, skipped: parseSkipped } = parseTsv(job.inputTsv, log);

  const hidden = encoder.config.hiddenSize;
  const queries: Array<{ queryId: string; tokens: Float32Array; nTokens: number; dim: number }> = [];
  let skipped = parseSkipped;
  for (let start = 0; start < records.length; start += batch) {
    for (const record of records.slice(start, start + batch)) {
      try {
        const encoded = tokenizer.encode(record.text, maxSeq);
        const states = encoder.forward(encoded.ids);
        queries.push({
          queryId: record.id,
          tokens: states,
          nTokens: encoded.ids.length,
          dim: hidden,
        });
      } catch (err) {
        log(`query ${record.id}: ${(err as Error).message}; skipped`);
        skipped += 1;
      }
    }
  }
  if (queries.length === 0) {
    log(`warning: no queries exported from ${job.inputTsv}`);
  }
  writeQueryTokens(job.outDir, queries);
  return { written: queries.length, skipped };
}

/**
 * Pull head parameters out of the checkpoint via the mapping table and write
 * them as a head-parameter file the engine can load.
 */
export function exportHyperhead(
  checkpointDir: string,
  outPath: string,
  mappingPath: string = defaultMappingPath(),
): { h: number; d: number; m: number; layers: number } {
  const ckpt = loadCheckpoint(path.join(checkpointDir, "model.safetensors"));
  const mapping = loadMapping(mappingPath);
  const head = extractHead(ckpt, mapping);
  writeHead(outPath, head);
  return { h: head.h, d: head.d, m: head.m, layers: head.layers.length };
}
