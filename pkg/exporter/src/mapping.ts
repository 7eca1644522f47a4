/**
 * Translates checkpoint tensors into head parameters using a shipped mapping
 * table (data/mapping.json). The table records, per head block, which tensor
 * holds it and how it is packed; anything the table cannot express — missing
 * tensors, inconsistent shapes — raises an unsupported-layout error rather
 * than reshaping silently.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { HeadLayer, HeadParams, validateHead } from "./formats.js";
import { Checkpoint, CheckpointError } from "./safetensors.js";

export class LayoutError extends Error {}

interface LinearRule {
  kind: "linear";
  weight: string;
  bias: string;
}

interface MatrixRule {
  kind: "matrix";
  name: string;
  transpose: boolean;
}

type BlockRule = LinearRule | MatrixRule;

export interface MappingTable {
  probe: string;
  blocks: {
    key_proj: BlockRule;
    value_proj: BlockRule;
    learned_queries: BlockRule;
    out_proj: BlockRule;
    base: BlockRule;
  };
}

const BLOCK_NAMES = ["key_proj", "value_proj", "learned_queries", "out_proj", "base"] as const;

export function defaultMappingPath(): string {
  return path.join(path.dirname(fileURLToPath(import.meta.url)), "..", "data", "mapping.json");
}

function parseRule(where: string, raw: unknown): BlockRule {
  if (typeof raw !== "object" || raw === null) {
    throw new LayoutError(`${where}: block rule must be an object`);
  }
  const rule = raw as Record<string, unknown>;
  if (rule.kind === "linear") {
    if (typeof rule.weight !== "string" || typeof rule.bias !== "string") {
      throw new LayoutError(`${where}: linear rule needs string 'weight' and 'bias'`);
    }
    return { kind: "linear", weight: rule.weight, bias: rule.bias };
  }
  if (rule.kind === "matrix") {
    if (typeof rule.name !== "string") {
      throw new LayoutError(`${where}: matrix rule needs a string 'name'`);
    }
    return { kind: "matrix", name: rule.name, transpose: rule.transpose === true };
  }
  throw new LayoutError(`${where}: unknown rule kind ${JSON.stringify(rule.kind)}`);
}

export function loadMapping(mappingPath: string = defaultMappingPath()): MappingTable {
  let raw: Record<string, unknown>;
  try {
    raw = JSON.parse(fs.readFileSync(mappingPath, "utf-8"));
  } catch (err) {
    throw new LayoutError(`${mappingPath}: unreadable mapping table: ${err}`);
  }
  if (typeof raw.probe !== "string" || !raw.probe.includes("{i}")) {
    throw new LayoutError(`${mappingPath}: 'probe' must be a name template containing {i}`);
  }
  const blocks = raw.blocks as Record<string, unknown> | undefined;
  if (typeof blocks !== "object" || blocks === null) {
    throw new LayoutError(`${mappingPath}: missing 'blocks' object`);
  }
  const parsed: Partial<Record<(typeof BLOCK_NAMES)[number], BlockRule>> = {};
  for (const name of BLOCK_NAMES) {
    parsed[name] = parseRule(`${mappingPath}: blocks.${name}`, blocks[name]);
  }
  return { probe: raw.probe, blocks: parsed as MappingTable["blocks"] };
}

function instantiate(template: string, layer: number): string {
  return template.replaceAll("{i}", String(layer));
}

function require2d(ckpt: Checkpoint, name: string): number[] {
  if (!ckpt.has(name)) {
    throw new LayoutError(`unsupported layout: tensor ${JSON.stringify(name)} not in checkpoint`);
  }
  const shape = ckpt.shape(name);
  if (shape.length !== 2) {
    throw new LayoutError(
      `unsupported layout: tensor ${name} has rank ${shape.length}, expected a matrix`,
    );
  }
  return shape;
}

function transposed(values: Float32Array, rows: number, cols: number): Float32Array {
  const out = new Float32Array(values.length);
  for (let i = 0; i < rows; i++) {
    for (let j = 0; j < cols; j++) {
      out[j * rows + i] = values[i * cols + j];
    }
  }
  return out;
}

/** Resolve one block to row-major values plus its (rows, cols) shape. */
function extractBlock(
  ckpt: Checkpoint,
  rule: BlockRule,
  layer: number,
): { values: Float32Array; rows: number; cols: number } {
  if (rule.kind === "matrix") {
    const name = instantiate(rule.name, layer);
    const [rows, cols] = require2d(ckpt, name);
    const values = ckpt.tensor(name);
    if (rule.transpose) {
      return { values: transposed(values, rows, cols), rows: cols, cols: rows };
    }
    return { values, rows, cols };
  }
  const weightName = instantiate(rule.weight, layer);
  const biasName = instantiate(rule.bias, layer);
  const [outF, inF] = require2d(ckpt, weightName);
  if (!ckpt.has(biasName)) {
    throw new LayoutError(`unsupported layout: tensor ${JSON.stringify(biasName)} not in checkpoint`);
  }
  const biasShape = ckpt.shape(biasName);
  if (biasShape.length !== 1 || biasShape[0] !== outF) {
    throw new LayoutError(
      `unsupported layout: bias ${biasName} has shape [${biasShape}], expected [${outF}] to match ${weightName}`,
    );
  }
  const weight = ckpt.tensor(weightName);
  const bias = ckpt.tensor(biasName);
  // (outF x inF) weight plus bias folds into an (inF+1) x outF block whose
  // final row is the bias, matching the engine's ones-column convention.
  const values = new Float32Array((inF + 1) * outF);
  for (let i = 0; i < outF; i++) {
    for (let j = 0; j < inF; j++) {
      values[j * outF + i] = weight[i * inF + j];
    }
    values[inF * outF + i] = bias[i];
  }
  return { values, rows: inF + 1, cols: outF };
}

export function extractHead(ckpt: Checkpoint, mapping: MappingTable): HeadParams {
  let layerCount = 0;
  while (ckpt.has(instantiate(mapping.probe, layerCount))) {
    layerCount += 1;
  }
  if (layerCount === 0) {
    throw new LayoutError(
      `unsupported layout: probe tensor ${JSON.stringify(instantiate(mapping.probe, 0))} not in checkpoint`,
    );
  }

  let h = -1;
  let d = -1;
  let m = -1;
  const layers: HeadLayer[] = [];
  for (let i = 0; i < layerCount; i++) {
    const key = extractBlock(ckpt, mapping.blocks.key_proj, i);
    const value = extractBlock(ckpt, mapping.blocks.value_proj, i);
    const queries = extractBlock(ckpt, mapping.blocks.learned_queries, i);
    const out = extractBlock(ckpt, mapping.blocks.out_proj, i);
    const base = extractBlock(ckpt, mapping.blocks.base, i);

    if (i === 0) {
      h = key.rows - 1;
      d = key.cols;
      m = queries.rows;
    }
    const expect = (what: string, rows: number, cols: number, wantRows: number, wantCols: number) => {
      if (rows !== wantRows || cols !== wantCols) {
        throw new LayoutError(
          `unsupported layout: layer ${i} ${what} maps to ${rows} x ${cols}, expected ${wantRows} x ${wantCols}`,
        );
      }
    };
    expect("key projection", key.rows, key.cols, h + 1, d);
    expect("value projection", value.rows, value.cols, h + 1, d);
    expect("learned queries", queries.rows, queries.cols, m, d);
    if (base.cols < 2) {
      throw new LayoutError(
        `unsupported layout: layer ${i} base is ${base.rows} x ${base.cols}; needs a weight block plus a bias column`,
      );
    }
    const r = base.rows;
    const t = base.cols - 1;
    expect("output projection", out.rows, out.cols, m * d, r * (t + 1));

    layers.push({
      keyProj: key.values,
      valueProj: value.values,
      learnedQueries: queries.values,
      outProj: out.values,
      base: base.values,
      r,
      t,
    });
  }

  const head: HeadParams = { h, d, m, layers };
  try {
    validateHead(head);
  } catch (err) {
    throw new LayoutError(`unsupported layout: ${(err as Error).message}`);
  }
  return head;
}

export { CheckpointError };
