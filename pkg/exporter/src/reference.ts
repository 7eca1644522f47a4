/**
 * Reference scorer: generates a per-query scoring network from head
 * parameters and token embeddings, then scores document vectors with it.
 * Mirrors the engine semantics — ones-column key/value projections,
 * scaled-dot-product attention pooled over tokens, ReLU + affine-free
 * layer norm (eps 1e-6, zero-variance rows map to zero), flatten row-major,
 * output projection plus base, and a residual feed-forward scoring pass.
 *
 * Math accumulates in float64 and rounds to float32 at each block boundary,
 * matching the engine's float32 data flow to well under the 1e-4 agreement
 * budget used by the export checks.
 */

import { HeadLayer, HeadParams } from "./formats.js";

export const LAYER_NORM_EPS = 1e-6;

export interface QNetLayer {
  /** rows x cols, row-major */
  weights: Float32Array;
  bias: Float32Array;
  rows: number;
  cols: number;
}

/** rows x inner times inner x cols, all row-major, f64 accumulate, f32 round. */
function matmul(
  a: Float32Array | Float64Array,
  b: Float32Array,
  rows: number,
  inner: number,
  cols: number,
): Float32Array {
  const out = new Float32Array(rows * cols);
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) {
      let acc = 0;
      for (let k = 0; k < inner; k++) {
        acc += a[i * inner + k] * b[k * cols + j];
      }
      out[i * cols + j] = Math.fround(acc);
    }
  }
  return out;
}

/** ReLU then affine-free layer norm over each row of an n x width matrix. */
function reluLayerNormRows(x: Float32Array, n: number, width: number): Float32Array {
  const out = new Float32Array(x.length);
  for (let i = 0; i < n; i++) {
    const offset = i * width;
    let mean = 0;
    for (let j = 0; j < width; j++) {
      const v = Math.max(x[offset + j], 0);
      out[offset + j] = v;
      mean += v;
    }
    mean /= width;
    let variance = 0;
    for (let j = 0; j < width; j++) {
      const centered = out[offset + j] - mean;
      variance += centered * centered;
    }
    variance /= width;
    const scale = 1 / Math.sqrt(variance + LAYER_NORM_EPS);
    for (let j = 0; j < width; j++) {
      out[offset + j] = Math.fround((out[offset + j] - mean) * scale);
    }
  }
  return out;
}

/** Generate one target layer from an n x h token matrix. */
export function generateLayer(
  tokens: Float32Array,
  n: number,
  h: number,
  layer: HeadLayer,
  d: number,
  m: number,
): QNetLayer {
  if (n < 1) {
    throw new Error("token matrix must have at least one row");
  }
  // Append the ones column: n x (h+1).
  const expanded = new Float32Array(n * (h + 1));
  for (let i = 0; i < n; i++) {
    expanded.set(tokens.subarray(i * h, (i + 1) * h), i * (h + 1));
    expanded[i * (h + 1) + h] = 1;
  }
  const keys = matmul(expanded, layer.keyProj, n, h + 1, d);
  const values = matmul(expanded, layer.valueProj, n, h + 1, d);

  // Scaled dot-product scores m x n, softmax over tokens, pool values.
  const invSqrtD = 1 / Math.sqrt(d);
  const attended = new Float32Array(m * d);
  const logits = new Float64Array(n);
  for (let qi = 0; qi < m; qi++) {
    let maxLogit = -Infinity;
    for (let ti = 0; ti < n; ti++) {
      let dot = 0;
      for (let k = 0; k < d; k++) {
        dot += layer.learnedQueries[qi * d + k] * keys[ti * d + k];
      }
      logits[ti] = Math.fround(Math.fround(dot) * invSqrtD);
      if (logits[ti] > maxLogit) {
        maxLogit = logits[ti];
      }
    }
    let denom = 0;
    for (let ti = 0; ti < n; ti++) {
      logits[ti] = Math.exp(logits[ti] - maxLogit);
      denom += logits[ti];
    }
    for (let k = 0; k < d; k++) {
      let acc = 0;
      for (let ti = 0; ti < n; ti++) {
        acc += (logits[ti] / denom) * values[ti * d + k];
      }
      attended[qi * d + k] = Math.fround(acc);
    }
  }

  const pooled = reluLayerNormRows(attended, m, d);
  // Row-major flatten is a no-op on the typed array: 1 x (m*d).
  const projected = matmul(pooled, layer.outProj, 1, m * d, layer.r * (layer.t + 1));

  const weights = new Float32Array(layer.r * layer.t);
  const bias = new Float32Array(layer.r);
  for (let i = 0; i < layer.r; i++) {
    for (let j = 0; j < layer.t + 1; j++) {
      const theta = Math.fround(projected[i * (layer.t + 1) + j] + layer.base[i * (layer.t + 1) + j]);
      if (j === layer.t) {
        bias[i] = theta;
      } else {
        weights[i * layer.t + j] = theta;
      }
    }
  }
  return { weights, bias, rows: layer.r, cols: layer.t };
}

export function generateQNet(tokens: Float32Array, n: number, head: HeadParams): QNetLayer[] {
  if (tokens.length !== n * head.h) {
    throw new Error(`token matrix length ${tokens.length} does not match ${n} x ${head.h}`);
  }
  return head.layers.map((layer) => generateLayer(tokens, n, head.h, layer, head.d, head.m));
}

/**
 * Score one document vector: hidden layers run
 * y = LayerNorm(ReLU(W x + b)) + x, the final layer is plain linear to a
 * scalar.
 */
export function qnetForward(layers: QNetLayer[], doc: Float32Array): number {
  if (layers.length === 0) {
    throw new Error("scoring network needs at least one layer");
  }
  let x = doc;
  for (let li = 0; li < layers.length - 1; li++) {
    const layer = layers[li];
    if (layer.cols !== x.length || layer.rows !== x.length) {
      throw new Error(
        `hidden layer ${li} is ${layer.rows} x ${layer.cols}, expected ${x.length} x ${x.length}`,
      );
    }
    const pre = new Float32Array(layer.rows);
    for (let i = 0; i < layer.rows; i++) {
      let acc = layer.bias[i];
      for (let j = 0; j < layer.cols; j++) {
        acc += layer.weights[i * layer.cols + j] * x[j];
      }
      pre[i] = Math.fround(acc);
    }
    const normed = reluLayerNormRows(pre, 1, layer.rows);
    const next = new Float32Array(layer.rows);
    for (let i = 0; i < layer.rows; i++) {
      next[i] = Math.fround(normed[i] + x[i]);
    }
    x = next;
  }
  const out = layers[layers.length - 1];
  if (out.rows !== 1 || out.cols !== x.length) {
    throw new Error(`output layer is ${out.rows} x ${out.cols}, expected 1 x ${x.length}`);
  }
  let acc = out.bias[0];
  for (let j = 0; j < out.cols; j++) {
    acc += out.weights[j] * x[j];
  }
  return Math.fround(acc);
}
