/** Shared fixtures: a deterministic PRNG and a synthetic checkpoint builder. */

import * as fs from "node:fs";
import * as path from "node:path";

import { saveCheckpoint } from "../src/safetensors.js";

/** mulberry32: tiny seeded PRNG, uniform in [0, 1). */
export function makeRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let z = state;
    z = Math.imul(z ^ (z >>> 15), z | 1);
    z ^= z + Math.imul(z ^ (z >>> 7), z | 61);
    return ((z ^ (z >>> 14)) >>> 0) / 0x1_0000_0000;
  };
}

export function randomValues(rng: () => number, count: number, scale: number): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = Math.fround((rng() - 0.5) * 2 * scale);
  }
  return out;
}

export const FIXTURE_VOCAB = [
  "[PAD]",
  "[UNK]",
  "[CLS]",
  "[SEP]",
  "types",
  "of",
  "anti",
  "depression",
  "medication",
  "alpha",
  "beta",
  "hello",
  "world",
  "drug",
  "treatment",
  "un",
  "##able",
  "##s",
  "!",
  ",",
];

export interface FixtureOptions {
  hidden?: number;
  encoderLayers?: number;
  heads?: number;
  intermediate?: number;
  headLayers?: number;
  d?: number;
  m?: number;
  /** Store these hyperhead tensors as BF16 to exercise widening. */
  bf16Queries?: boolean;
  seed?: number;
}

export interface Fixture {
  dir: string;
  hidden: number;
  d: number;
  m: number;
  headLayers: number;
}

type TensorMap = Map<string, { dtype: "F32" | "BF16"; shape: number[]; values: Float32Array }>;

/**
 * Write a self-consistent checkpoint directory: config.json, vocab.txt, and
 * model.safetensors holding a tiny encoder plus head tensors laid out the
 * way the shipped mapping table expects.
 */
export function buildCheckpointDir(dir: string, options: FixtureOptions = {}): Fixture {
  const hidden = options.hidden ?? 8;
  const encoderLayers = options.encoderLayers ?? 2;
  const heads = options.heads ?? 2;
  const intermediate = options.intermediate ?? 16;
  const headLayers = options.headLayers ?? 2;
  const d = options.d ?? 8;
  const m = options.m ?? 2;
  const rng = makeRng(options.seed ?? 0xc0ffee);
  const vocabSize = FIXTURE_VOCAB.length;
  const maxPositions = 32;

  fs.mkdirSync(dir, { recursive: true });
  fs.writeFileSync(
    path.join(dir, "config.json"),
    JSON.stringify(
      {
        vocab_size: vocabSize,
        hidden_size: hidden,
        num_hidden_layers: encoderLayers,
        num_attention_heads: heads,
        intermediate_size: intermediate,
        max_position_embeddings: maxPositions,
        layer_norm_eps: 1e-12,
        type_vocab_size: 2,
      },
      null,
      2,
    ),
  );
  fs.writeFileSync(path.join(dir, "vocab.txt"), FIXTURE_VOCAB.join("\n") + "\n");

  const tensors: TensorMap = new Map();
  const add = (name: string, shape: number[], scale: number, dtype: "F32" | "BF16" = "F32") => {
    const count = shape.reduce((a, b) => a * b, 1);
    tensors.set(name, { dtype, shape, values: randomValues(rng, count, scale) });
  };
  const addOnes = (name: string, size: number) => {
    tensors.set(name, { dtype: "F32", shape: [size], values: new Float32Array(size).fill(1) });
  };

  add("embeddings.word_embeddings.weight", [vocabSize, hidden], 0.5);
  add("embeddings.position_embeddings.weight", [maxPositions, hidden], 0.1);
  add("embeddings.token_type_embeddings.weight", [2, hidden], 0.1);
  addOnes("embeddings.LayerNorm.weight", hidden);
  add("embeddings.LayerNorm.bias", [hidden], 0.05);
  for (let i = 0; i < encoderLayers; i++) {
    const p = `encoder.layer.${i}.`;
    const attnScale = 1 / Math.sqrt(hidden);
    for (const name of ["query", "key", "value"]) {
      add(p + `attention.self.${name}.weight`, [hidden, hidden], attnScale);
      add(p + `attention.self.${name}.bias`, [hidden], 0.05);
    }
    add(p + "attention.output.dense.weight", [hidden, hidden], attnScale);
    add(p + "attention.output.dense.bias", [hidden], 0.05);
    addOnes(p + "attention.output.LayerNorm.weight", hidden);
    add(p + "attention.output.LayerNorm.bias", [hidden], 0.05);
    add(p + "intermediate.dense.weight", [intermediate, hidden], attnScale);
    add(p + "intermediate.dense.bias", [intermediate], 0.05);
    add(p + "output.dense.weight", [hidden, intermediate], 1 / Math.sqrt(intermediate));
    add(p + "output.dense.bias", [hidden], 0.05);
    addOnes(p + "output.LayerNorm.weight", hidden);
    add(p + "output.LayerNorm.bias", [hidden], 0.05);
  }

  for (let i = 0; i < headLayers; i++) {
    const p = `hyperhead.layers.${i}.`;
    const last = i === headLayers - 1;
    const r = last ? 1 : hidden;
    const t = hidden;
    add(p + "key.weight", [d, hidden], 1 / Math.sqrt(hidden));
    add(p + "key.bias", [d], 0.1);
    add(p + "value.weight", [d, hidden], 1 / Math.sqrt(hidden));
    add(p + "value.bias", [d], 0.1);
    add(p + "queries", [m, d], 1, options.bf16Queries ? "BF16" : "F32");
    add(p + "out.weight", [r * (t + 1), m * d], 1 / Math.sqrt(m * d * t));
    add(p + "base", [r, t + 1], 1 / Math.sqrt(t));
  }

  saveCheckpoint(path.join(dir, "model.safetensors"), tensors);
  return { dir, hidden, d, m, headLayers };
}

export function writeTsv(filePath: string, rows: Array<[string, string]>): void {
  fs.writeFileSync(filePath, rows.map(([id, text]) => `${id}\t${text}`).join("\n") + "\n");
}
