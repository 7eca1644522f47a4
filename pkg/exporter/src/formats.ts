/**
 * Writers (and readers, used by the tests) for the engine's binary formats.
 *
 * Every format is little-endian. Multi-byte values are written through
 * DataView with explicit endianness so the output is identical on any host.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export const HYEM_MAGIC = "HYEM";
export const HYHH_MAGIC = "HYHH";
export const DTYPE_F32 = 0;
export const DTYPE_BF16 = 1;

const HYEM_HEADER_BYTES = 4 + 4 + 1 + 4 + 8;

export class FormatError extends Error {}

/** Round a float32 bit pattern to bfloat16 (round-to-nearest-even). */
export function f32BitsToBf16(bits: number): number {
  const rounding = 0x7fff + ((bits >>> 16) & 1);
  // Unsigned 32-bit add can overflow the float64-safe int32 range of >>>,
  // so route the sum through modulo 2^32 before shifting.
  const rounded = (bits + rounding) % 0x1_0000_0000;
  return Math.floor(rounded / 0x1_0000) & 0xffff;
}

/** Widen a bfloat16 bit pattern to the float32 it denotes (exact). */
export function bf16ToF32(bits: number): number {
  const buf = new DataView(new ArrayBuffer(4));
  buf.setUint32(0, (bits & 0xffff) * 0x1_0000, true);
  return buf.getFloat32(0, true);
}

export interface EmbeddingFile {
  dtype: number;
  count: number;
  dim: number;
  /** Row-major values, widened to f32 when stored as bf16. */
  values: Float32Array;
}

export function writeEmbeddings(
  filePath: string,
  values: Float32Array,
  count: number,
  dim: number,
  dtype: number = DTYPE_F32,
): void {
  if (count < 0 || dim < 1) {
    throw new FormatError(`invalid shape ${count} x ${dim}`);
  }
  if (values.length !== count * dim) {
    throw new FormatError(
      `values length ${values.length} does not match ${count} x ${dim}`,
    );
  }
  for (let i = 0; i < values.length; i++) {
    if (!Number.isFinite(values[i])) {
      throw new FormatError(`non-finite value at index ${i}`);
    }
  }
  const elementBytes = dtype === DTYPE_BF16 ? 2 : 4;
  const buf = Buffer.alloc(HYEM_HEADER_BYTES + values.length * elementBytes);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  buf.write(HYEM_MAGIC, 0, "ascii");
  view.setUint32(4, 1, true);
  view.setUint8(8, dtype);
  view.setUint32(9, dim, true);
  view.setBigUint64(13, BigInt(count), true);
  const scratch = new DataView(new ArrayBuffer(4));
  for (let i = 0; i < values.length; i++) {
    if (dtype === DTYPE_BF16) {
      scratch.setFloat32(0, values[i], true);
      view.setUint16(HYEM_HEADER_BYTES + 2 * i, f32BitsToBf16(scratch.getUint32(0, true)), true);
    } else {
      view.setFloat32(HYEM_HEADER_BYTES + 4 * i, values[i], true);
    }
  }
  fs.writeFileSync(filePath, buf);
}

export function readEmbeddings(filePath: string): EmbeddingFile {
  const buf = fs.readFileSync(filePath);
  if (buf.length < HYEM_HEADER_BYTES) {
    throw new FormatError(`${filePath}: truncated header (${buf.length} bytes)`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (buf.toString("ascii", 0, 4) !== HYEM_MAGIC) {
    throw new FormatError(`${filePath}: bad magic`);
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new FormatError(`${filePath}: unsupported version ${version}`);
  }
  const dtype = view.getUint8(8);
  if (dtype !== DTYPE_F32 && dtype !== DTYPE_BF16) {
    throw new FormatError(`${filePath}: unknown dtype code ${dtype}`);
  }
  const dim = view.getUint32(9, true);
  const count = Number(view.getBigUint64(13, true));
  const elementBytes = dtype === DTYPE_BF16 ? 2 : 4;
  const expected = HYEM_HEADER_BYTES + count * dim * elementBytes;
  if (buf.length !== expected) {
    throw new FormatError(
      `${filePath}: payload size mismatch (expected ${expected} bytes, found ${buf.length})`,
    );
  }
  const values = new Float32Array(count * dim);
  for (let i = 0; i < values.length; i++) {
    values[i] =
      dtype === DTYPE_BF16
        ? bf16ToF32(view.getUint16(HYEM_HEADER_BYTES + 2 * i, true))
        : view.getFloat32(HYEM_HEADER_BYTES + 4 * i, true);
  }
  return { dtype, count, dim, values };
}

/** One generator layer: projections, learned queries, and the base matrix. */
export interface HeadLayer {
  /** (h+1) x d */
  keyProj: Float32Array;
  /** (h+1) x d */
  valueProj: Float32Array;
  /** m x d */
  learnedQueries: Float32Array;
  /** (m*d) x (r*(t+1)) */
  outProj: Float32Array;
  /** r x (t+1); the last column is the bias column */
  base: Float32Array;
  r: number;
  t: number;
}

export interface HeadParams {
  h: number;
  d: number;
  m: number;
  layers: HeadLayer[];
}

function checkBlock(name: string, data: Float32Array, rows: number, cols: number): void {
  if (data.length !== rows * cols) {
    throw new FormatError(
      `${name}: expected ${rows} x ${cols} = ${rows * cols} values, got ${data.length}`,
    );
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new FormatError(`${name}: non-finite value at index ${i}`);
    }
  }
}

export function validateHead(head: HeadParams): void {
  const { h, d, m } = head;
  if (h < 1 || d < 1 || m < 1) {
    throw new FormatError(`invalid dimensions h=${h} d=${d} m=${m}`);
  }
  if (head.layers.length < 1) {
    throw new FormatError("head has no layers");
  }
  head.layers.forEach((layer, i) => {
    const { r, t } = layer;
    if (r < 1 || t < 1) {
      throw new FormatError(`layer ${i}: invalid target shape ${r} x ${t}`);
    }
    checkBlock(`layer ${i}: keyProj`, layer.keyProj, h + 1, d);
    checkBlock(`layer ${i}: valueProj`, layer.valueProj, h + 1, d);
    checkBlock(`layer ${i}: learnedQueries`, layer.learnedQueries, m, d);
    checkBlock(`layer ${i}: outProj`, layer.outProj, m * d, r * (t + 1));
    checkBlock(`layer ${i}: base`, layer.base, r, t + 1);
  });
}

function writeF32Block(view: DataView, offset: number, data: Float32Array): number {
  for (let i = 0; i < data.length; i++) {
    view.setFloat32(offset + 4 * i, data[i], true);
  }
  return offset + 4 * data.length;
}

export function writeHead(filePath: string, head: HeadParams): void {
  validateHead(head);
  let payload = 0;
  for (const layer of head.layers) {
    payload +=
      8 +
      4 *
        (layer.keyProj.length +
          layer.valueProj.length +
          layer.learnedQueries.length +
          layer.outProj.length +
          layer.base.length);
  }
  const buf = Buffer.alloc(4 + 5 * 4 + payload);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  buf.write(HYHH_MAGIC, 0, "ascii");
  view.setUint32(4, 1, true);
  view.setUint32(8, head.h, true);
  view.setUint32(12, head.d, true);
  view.setUint32(16, head.m, true);
  view.setUint32(20, head.layers.length, true);
  let off = 24;
  for (const layer of head.layers) {
    view.setUint32(off, layer.r, true);
    view.setUint32(off + 4, layer.t, true);
    off += 8;
    off = writeF32Block(view, off, layer.keyProj);
    off = writeF32Block(view, off, layer.valueProj);
    off = writeF32Block(view, off, layer.learnedQueries);
    off = writeF32Block(view, off, layer.outProj);
    off = writeF32Block(view, off, layer.base);
  }
  fs.writeFileSync(filePath, buf);
}

export function readHead(filePath: string): HeadParams {
  const buf = fs.readFileSync(filePath);
  if (buf.length < 24) {
    throw new FormatError(`${filePath}: truncated header`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (buf.toString("ascii", 0, 4) !== HYHH_MAGIC) {
    throw new FormatError(`${filePath}: bad magic`);
  }
  if (view.getUint32(4, true) !== 1) {
    throw new FormatError(`${filePath}: unsupported version`);
  }
  const h = view.getUint32(8, true);
  const d = view.getUint32(12, true);
  const m = view.getUint32(16, true);
  const layerCount = view.getUint32(20, true);
  let off = 24;
  const readBlock = (rows: number, cols: number, name: string): Float32Array => {
    const n = rows * cols;
    if (off + 4 * n > buf.length) {
      throw new FormatError(`${filePath}: truncated in ${name}`);
    }
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      out[i] = view.getFloat32(off + 4 * i, true);
    }
    off += 4 * n;
    return out;
  };
  const layers: HeadLayer[] = [];
  for (let i = 0; i < layerCount; i++) {
    if (off + 8 > buf.length) {
      throw new FormatError(`${filePath}: truncated at layer ${i} header`);
    }
    const r = view.getUint32(off, true);
    const t = view.getUint32(off + 4, true);
    off += 8;
    layers.push({
      r,
      t,
      keyProj: readBlock(h + 1, d, `layer ${i} keyProj`),
      valueProj: readBlock(h + 1, d, `layer ${i} valueProj`),
      learnedQueries: readBlock(m, d, `layer ${i} learnedQueries`),
      outProj: readBlock(m * d, r * (t + 1), `layer ${i} outProj`),
      base: readBlock(r, t + 1, `layer ${i} base`),
    });
  }
  if (off !== buf.length) {
    throw new FormatError(`${filePath}: ${buf.length - off} trailing bytes`);
  }
  const head = { h, d, m, layers };
  validateHead(head);
  return head;
}

/** Write one embedding file per query plus the directory manifest. */
export function writeQueryTokens(
  dir: string,
  queries: Array<{ queryId: string; tokens: Float32Array; nTokens: number; dim: number }>,
): void {
  fs.mkdirSync(dir, { recursive: true });
  const lines: string[] = [];
  queries.forEach((q, i) => {
    if (q.queryId.includes("\t") || q.queryId.includes("\n")) {
      throw new FormatError(`query id ${JSON.stringify(q.queryId)} contains tab or newline`);
    }
    if (q.nTokens < 1) {
      throw new FormatError(`query ${q.queryId}: no token rows`);
    }
    const rel = String(i).padStart(6, "0") + ".hyem";
    writeEmbeddings(path.join(dir, rel), q.tokens, q.nTokens, q.dim);
    lines.push(`${q.queryId}\t${rel}\t${q.nTokens}\n`);
  });
  fs.writeFileSync(path.join(dir, "manifest.tsv"), lines.join(""));
}

/** Write "internal_row<TAB>external_id" lines mapping HYEM rows to keys. */
export function writeIdMap(filePath: string, ids: string[]): void {
  const lines = ids.map((id, row) => {
    if (id.includes("\t") || id.includes("\n")) {
      throw new FormatError(`id ${JSON.stringify(id)} contains tab or newline`);
    }
    return `${row}\t${id}\n`;
  });
  fs.writeFileSync(filePath, lines.join(""));
}
