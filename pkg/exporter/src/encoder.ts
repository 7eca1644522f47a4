/**
 * Deterministic CPU forward pass for BERT-family encoder checkpoints, just
 * enough to turn token ids into contextualized embeddings: summed token,
 * position, and segment embeddings, then post-layer-norm transformer blocks
 * (self-attention + GELU feed-forward). Inference only, no dropout.
 *
 * Math runs in float64 and narrows to float32 at the boundary.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Checkpoint, CheckpointError, loadCheckpoint } from "./safetensors.js";

export interface EncoderConfig {
  vocabSize: number;
  hiddenSize: number;
  numLayers: number;
  numHeads: number;
  intermediateSize: number;
  maxPositions: number;
  layerNormEps: number;
}

export function readEncoderConfig(checkpointDir: string): EncoderConfig {
  const configPath = path.join(checkpointDir, "config.json");
  let raw: Record<string, unknown>;
  try {
    raw = JSON.parse(fs.readFileSync(configPath, "utf-8"));
  } catch (err) {
    throw new CheckpointError(`${configPath}: unreadable config: ${err}`);
  }
  const int = (key: string): number => {
    const v = raw[key];
    if (!Number.isInteger(v) || (v as number) < 1) {
      throw new CheckpointError(`${configPath}: ${key} must be a positive integer`);
    }
    return v as number;
  };
  const config = {
    vocabSize: int("vocab_size"),
    hiddenSize: int("hidden_size"),
    numLayers: int("num_hidden_layers"),
    numHeads: int("num_attention_heads"),
    intermediateSize: int("intermediate_size"),
    maxPositions: int("max_position_embeddings"),
    layerNormEps: typeof raw.layer_norm_eps === "number" ? raw.layer_norm_eps : 1e-12,
  };
  if (config.hiddenSize % config.numHeads !== 0) {
    throw new CheckpointError(
      `${configPath}: hidden_size ${config.hiddenSize} not divisible by num_attention_heads ${config.numHeads}`,
    );
  }
  return config;
}

/** y[i] = sum_j x[j] * w[i*cols + j] + b[i]; w is [rows, cols] row-major. */
function affine(x: Float64Array, w: Float32Array, b: Float32Array, rows: number, cols: number): Float64Array {
  const y = new Float64Array(rows);
  for (let i = 0; i < rows; i++) {
    let acc = b[i];
    const base = i * cols;
    for (let j = 0; j < cols; j++) {
      acc += x[j] * w[base + j];
    }
    y[i] = acc;
  }
  return y;
}

function layerNormInPlace(x: Float64Array, gamma: Float32Array, beta: Float32Array, eps: number): void {
  const n = x.length;
  let mean = 0;
  for (let i = 0; i < n; i++) {
    mean += x[i];
  }
  mean /= n;
  let variance = 0;
  for (let i = 0; i < n; i++) {
    const centered = x[i] - mean;
    variance += centered * centered;
  }
  variance /= n;
  const scale = 1 / Math.sqrt(variance + eps);
  for (let i = 0; i < n; i++) {
    x[i] = (x[i] - mean) * scale * gamma[i] + beta[i];
  }
}

function erf(x: number): number {
  // Abramowitz-Stegun 7.1.26, 1.5e-7 absolute error.
  const sign = x < 0 ? -1 : 1;
  const ax = Math.abs(x);
  const t = 1 / (1 + 0.3275911 * ax);
  const poly =
    t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
  return sign * (1 - poly * Math.exp(-ax * ax));
}

function gelu(x: number): number {
  return 0.5 * x * (1 + erf(x / Math.SQRT2));
}

export class Encoder {
  readonly config: EncoderConfig;
  private readonly ckpt: Checkpoint;
  private readonly cache = new Map<string, Float32Array>();

  constructor(config: EncoderConfig, ckpt: Checkpoint) {
    this.config = config;
    this.ckpt = ckpt;
    this.requireShapes();
  }

  static fromDir(checkpointDir: string): Encoder {
    const config = readEncoderConfig(checkpointDir);
    const modelPath = path.join(checkpointDir, "model.safetensors");
    return new Encoder(config, loadCheckpoint(modelPath));
  }

  private tensor(name: string): Float32Array {
    let cached = this.cache.get(name);
    if (!cached) {
      cached = this.ckpt.tensor(name);
      this.cache.set(name, cached);
    }
    return cached;
  }

  private requireShapes(): void {
    const { vocabSize, hiddenSize, numLayers, intermediateSize, maxPositions } = this.config;
    const expect = (name: string, shape: number[]) => {
      if (!this.ckpt.has(name)) {
        throw new CheckpointError(`checkpoint is missing tensor ${name}`);
      }
      const actual = this.ckpt.shape(name);
      if (actual.length !== shape.length || actual.some((v, i) => v !== shape[i])) {
        throw new CheckpointError(
          `tensor ${name}: shape [${actual}] does not match config [${shape}]`,
        );
      }
    };
    expect("embeddings.word_embeddings.weight", [vocabSize, hiddenSize]);
    expect("embeddings.position_embeddings.weight", [maxPositions, hiddenSize]);
    expect("embeddings.token_type_embeddings.weight", [2, hiddenSize]);
    expect("embeddings.LayerNorm.weight", [hiddenSize]);
    expect("embeddings.LayerNorm.bias", [hiddenSize]);
    for (let i = 0; i < numLayers; i++) {
      const p = `encoder.layer.${i}.`;
      for (const name of ["query", "key", "value"]) {
        expect(p + `attention.self.${name}.weight`, [hiddenSize, hiddenSize]);
        expect(p + `attention.self.${name}.bias`, [hiddenSize]);
      }
      expect(p + "attention.output.dense.weight", [hiddenSize, hiddenSize]);
      expect(p + "attention.output.dense.bias", [hiddenSize]);
      expect(p + "attention.output.LayerNorm.weight", [hiddenSize]);
      expect(p + "attention.output.LayerNorm.bias", [hiddenSize]);
      expect(p + "intermediate.dense.weight", [intermediateSize, hiddenSize]);
      expect(p + "intermediate.dense.bias", [intermediateSize]);
      expect(p + "output.dense.weight", [hiddenSize, intermediateSize]);
      expect(p + "output.dense.bias", [hiddenSize]);
      expect(p + "output.LayerNorm.weight", [hiddenSize]);
      expect(p + "output.LayerNorm.bias", [hiddenSize]);
    }
  }

  /** Contextualized embeddings, one hiddenSize row per input id. */
  forward(ids: number[]): Float32Array {
    const { hiddenSize: h, numHeads, layerNormEps: eps } = this.config;
    const n = ids.length;
    if (n < 1) {
      throw new CheckpointError("cannot encode an empty id sequence");
    }
    if (n > this.config.maxPositions) {
      throw new CheckpointError(
        `sequence length ${n} exceeds max_position_embeddings ${this.config.maxPositions}`,
      );
    }
    const headDim = h / numHeads;
    const words = this.tensor("embeddings.word_embeddings.weight");
    const positions = this.tensor("embeddings.position_embeddings.weight");
    const types = this.tensor("embeddings.token_type_embeddings.weight");

    let rows: Float64Array[] = ids.map((id, pos) => {
      if (!Number.isInteger(id) || id < 0 || id >= this.config.vocabSize) {
        throw new CheckpointError(`token id ${id} out of vocabulary range`);
      }
      const row = new Float64Array(h);
      for (let j = 0; j < h; j++) {
        row[j] = words[id * h + j] + positions[pos * h + j] + types[j];
      }
      return row;
    });
    const embGamma = this.tensor("embeddings.LayerNorm.weight");
    const embBeta = this.tensor("embeddings.LayerNorm.bias");
    rows.forEach((row) => layerNormInPlace(row, embGamma, embBeta, eps));

    for (let layer = 0; layer < this.config.numLayers; layer++) {
      const p = `encoder.layer.${layer}.`;
      const q = rows.map((row) =>
        affine(row, this.tensor(p + "attention.self.query.weight"), this.tensor(p + "attention.self.query.bias"), h, h),
      );
      const k = rows.map((row) =>
        affine(row, this.tensor(p + "attention.self.key.weight"), this.tensor(p + "attention.self.key.bias"), h, h),
      );
      const v = rows.map((row) =>
        affine(row, this.tensor(p + "attention.self.value.weight"), this.tensor(p + "attention.self.value.bias"), h, h),
      );

      const context = rows.map(() => new Float64Array(h));
      const invSqrt = 1 / Math.sqrt(headDim);
      for (let head = 0; head < numHeads; head++) {
        const offset = head * headDim;
        for (let i = 0; i < n; i++) {
          const logits = new Float64Array(n);
          let maxLogit = -Infinity;
          for (let j = 0; j < n; j++) {
            let dot = 0;
            for (let f = 0; f < headDim; f++) {
              dot += q[i][offset + f] * k[j][offset + f];
            }
            logits[j] = dot * invSqrt;
            if (logits[j] > maxLogit) {
              maxLogit = logits[j];
            }
          }
          let denom = 0;
          for (let j = 0; j < n; j++) {
            logits[j] = Math.exp(logits[j] - maxLogit);
            denom += logits[j];
          }
          for (let j = 0; j < n; j++) {
            const weight = logits[j] / denom;
            for (let f = 0; f < headDim; f++) {
              context[i][offset + f] += weight * v[j][offset + f];
            }
          }
        }
      }

      const attGamma = this.tensor(p + "attention.output.LayerNorm.weight");
      const attBeta = this.tensor(p + "attention.output.LayerNorm.bias");
      const ffGamma = this.tensor(p + "output.LayerNorm.weight");
      const ffBeta = this.tensor(p + "output.LayerNorm.bias");
      rows = rows.map((row, i) => {
        const attOut = affine(
          context[i],
          this.tensor(p + "attention.output.dense.weight"),
          this.tensor(p + "attention.output.dense.bias"),
          h,
          h,
        );
        for (let j = 0; j < h; j++) {
          attOut[j] += row[j];
        }
        layerNormInPlace(attOut, attGamma, attBeta, eps);

        const inter = affine(
          attOut,
          this.tensor(p + "intermediate.dense.weight"),
          this.tensor(p + "intermediate.dense.bias"),
          this.config.intermediateSize,
          h,
        );
        for (let j = 0; j < inter.length; j++) {
          inter[j] = gelu(inter[j]);
        }
        const ffOut = affine(
          inter,
          this.tensor(p + "output.dense.weight"),
          this.tensor(p + "output.dense.bias"),
          h,
          this.config.intermediateSize,
        );
        for (let j = 0; j < h; j++) {
          ffOut[j] += attOut[j];
        }
        layerNormInPlace(ffOut, ffGamma, ffBeta, eps);
        return ffOut;
      });
    }

    const out = new Float32Array(n * h);
    rows.forEach((row, i) => {
      for (let j = 0; j < h; j++) {
        out[i * h + j] = Math.fround(row[j]);
      }
    });
    return out;
  }
}
