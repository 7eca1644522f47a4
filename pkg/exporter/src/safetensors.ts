/**
 * Minimal safetensors reader: an 8-byte little-endian header length, a JSON
 * header mapping tensor names to {dtype, shape, data_offsets}, then the raw
 * tensor buffer. Only F32 and BF16 tensors are accepted; BF16 widens to F32
 * on access (zero-extended mantissa), matching the engine's convention.
 */

import * as fs from "node:fs";

import { bf16ToF32, f32BitsToBf16 } from "./formats.js";

export class CheckpointError extends Error {}

export interface TensorEntry {
  dtype: "F32" | "BF16";
  shape: number[];
  /** Byte range within the data section. */
  start: number;
  end: number;
}

export class Checkpoint {
  private readonly entries: Map<string, TensorEntry>;
  private readonly data: Buffer;

  constructor(entries: Map<string, TensorEntry>, data: Buffer) {
    this.entries = entries;
    this.data = data;
  }

  names(): string[] {
    return [...this.entries.keys()].sort();
  }

  has(name: string): boolean {
    return this.entries.has(name);
  }

  shape(name: string): number[] {
    return [...this.entry(name).shape];
  }

  private entry(name: string): TensorEntry {
    const entry = this.entries.get(name);
    if (!entry) {
      throw new CheckpointError(`tensor ${JSON.stringify(name)} not in checkpoint`);
    }
    return entry;
  }

  /** The tensor's values as row-major f32, widening BF16 exactly. */
  tensor(name: string): Float32Array {
    const entry = this.entry(name);
    const count = entry.shape.reduce((a, b) => a * b, 1);
    const view = new DataView(
      this.data.buffer,
      this.data.byteOffset + entry.start,
      entry.end - entry.start,
    );
    const out = new Float32Array(count);
    if (entry.dtype === "BF16") {
      for (let i = 0; i < count; i++) {
        out[i] = bf16ToF32(view.getUint16(2 * i, true));
      }
    } else {
      for (let i = 0; i < count; i++) {
        out[i] = view.getFloat32(4 * i, true);
      }
    }
    return out;
  }
}

const ELEMENT_BYTES: Record<string, number> = { F32: 4, BF16: 2 };

export function loadCheckpoint(filePath: string): Checkpoint {
  const buf = fs.readFileSync(filePath);
  if (buf.length < 8) {
    throw new CheckpointError(`${filePath}: too short for a header`);
  }
  const headerLen = Number(
    new DataView(buf.buffer, buf.byteOffset, 8).getBigUint64(0, true),
  );
  if (8 + headerLen > buf.length) {
    throw new CheckpointError(`${filePath}: header length ${headerLen} exceeds file`);
  }
  let header: Record<string, unknown>;
  try {
    header = JSON.parse(buf.toString("utf-8", 8, 8 + headerLen));
  } catch (err) {
    throw new CheckpointError(`${filePath}: header is not valid JSON: ${err}`);
  }
  const data = buf.subarray(8 + headerLen);
  const entries = new Map<string, TensorEntry>();
  for (const [name, raw] of Object.entries(header)) {
    if (name === "__metadata__") {
      continue;
    }
    const info = raw as { dtype?: string; shape?: number[]; data_offsets?: number[] };
    const dtype = info.dtype;
    if (dtype !== "F32" && dtype !== "BF16") {
      throw new CheckpointError(
        `${filePath}: tensor ${name}: unsupported dtype ${JSON.stringify(dtype)} (expected F32 or BF16)`,
      );
    }
    const shape = info.shape;
    if (!Array.isArray(shape) || shape.some((s) => !Number.isInteger(s) || s < 0)) {
      throw new CheckpointError(`${filePath}: tensor ${name}: bad shape`);
    }
    const offsets = info.data_offsets;
    if (!Array.isArray(offsets) || offsets.length !== 2) {
      throw new CheckpointError(`${filePath}: tensor ${name}: bad data_offsets`);
    }
    const [start, end] = offsets;
    const count = shape.reduce((a, b) => a * b, 1);
    if (start < 0 || end > data.length || end - start !== count * ELEMENT_BYTES[dtype]) {
      throw new CheckpointError(
        `${filePath}: tensor ${name}: offsets [${start}, ${end}) do not match shape [${shape}]`,
      );
    }
    entries.set(name, { dtype, shape, start, end });
  }
  return new Checkpoint(entries, data);
}

/** Write a checkpoint file; used by fixtures and tests. */
export function saveCheckpoint(
  filePath: string,
  tensors: Map<string, { dtype: "F32" | "BF16"; shape: number[]; values: Float32Array }>,
): void {
  const header: Record<string, { dtype: string; shape: number[]; data_offsets: number[] }> = {};
  let offset = 0;
  const chunks: Buffer[] = [];
  for (const [name, tensor] of tensors) {
    const count = tensor.shape.reduce((a, b) => a * b, 1);
    if (tensor.values.length !== count) {
      throw new CheckpointError(`tensor ${name}: values do not match shape`);
    }
    const bytes = count * ELEMENT_BYTES[tensor.dtype];
    const chunk = Buffer.alloc(bytes);
    const view = new DataView(chunk.buffer, chunk.byteOffset, chunk.byteLength);
    const scratch = new DataView(new ArrayBuffer(4));
    for (let i = 0; i < count; i++) {
      if (tensor.dtype === "BF16") {
        scratch.setFloat32(0, tensor.values[i], true);
        view.setUint16(2 * i, f32BitsToBf16(scratch.getUint32(0, true)), true);
      } else {
        view.setFloat32(4 * i, tensor.values[i], true);
      }
    }
    header[name] = { dtype: tensor.dtype, shape: tensor.shape, data_offsets: [offset, offset + bytes] };
    offset += bytes;
    chunks.push(chunk);
  }
  const headerBuf = Buffer.from(JSON.stringify(header), "utf-8");
  const lenBuf = Buffer.alloc(8);
  new DataView(lenBuf.buffer, lenBuf.byteOffset, 8).setBigUint64(0, BigInt(headerBuf.length), true);
  fs.writeFileSync(filePath, Buffer.concat([lenBuf, headerBuf, ...chunks]));
}
