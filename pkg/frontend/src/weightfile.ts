/**
 * The weight-file container: an 8-byte little-endian header length, a JSON
 * header of {name: {dtype, shape, data_offsets}}, then a flat data region.
 * This module only moves bytes; compression lives behind the CLI.
 */

export type DTypeString = "F32" | "F16" | "BF16" | "RAW8";

export interface ArrayEntry {
  dtype: DTypeString;
  shape: number[];
  /** little-endian element bytes, contiguous */
  data: Uint8Array;
}

export type ArrayBundle = Record<string, ArrayEntry>;

export const ELEMENT_WIDTH: Record<DTypeString, number> = {
  F32: 4,
  F16: 2,
  BF16: 2,
  RAW8: 1,
};

function elementCount(shape: number[]): number {
  return shape.reduce((n, d) => {
    if (!Number.isInteger(d) || d < 0) {
      throw new Error(`invalid extent ${d} in shape [${shape}]`);
    }
    return n * d;
  }, 1);
}

export function validateEntry(name: string, entry: ArrayEntry): void {
  if (!name) {
    throw new Error("array name must be non-empty");
  }
  const width = ELEMENT_WIDTH[entry.dtype];
  if (width === undefined) {
    throw new Error(
      `unsupported dtype ${JSON.stringify(entry.dtype)} for ${JSON.stringify(name)}: ` +
        "expected F32, F16, BF16 or RAW8",
    );
  }
  const expected = elementCount(entry.shape) * width;
  if (entry.data.byteLength !== expected) {
    throw new Error(
      `array ${JSON.stringify(name)}: shape [${entry.shape}] implies ` +
        `${expected} bytes, got ${entry.data.byteLength}`,
    );
  }
}

/** Serialize a bundle into weight-file bytes, layers in insertion order. */
export function buildWeightFile(bundle: ArrayBundle): Uint8Array {
  const header: Record<string, unknown> = {};
  let offset = 0;
  for (const [name, entry] of Object.entries(bundle)) {
    validateEntry(name, entry);
    header[name] = {
      dtype: entry.dtype,
      shape: entry.shape,
      data_offsets: [offset, offset + entry.data.byteLength],
    };
    offset += entry.data.byteLength;
  }
  const headerBytes = new TextEncoder().encode(JSON.stringify(header));
  const out = new Uint8Array(8 + headerBytes.byteLength + offset);
  new DataView(out.buffer).setBigUint64(0, BigInt(headerBytes.byteLength), true);
  out.set(headerBytes, 8);
  let position = 8 + headerBytes.byteLength;
  for (const entry of Object.values(bundle)) {
    out.set(entry.data, position);
    position += entry.data.byteLength;
  }
  return out;
}

/** Parse weight-file bytes back into a bundle, layers in header order. */
export function parseWeightFile(data: Uint8Array): ArrayBundle {
  if (data.byteLength < 8) {
    throw new Error("file shorter than the 8-byte header length");
  }
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const headerLen = Number(view.getBigUint64(0, true));
  if (8 + headerLen > data.byteLength) {
    throw new Error(`header length ${headerLen} exceeds file size ${data.byteLength}`);
  }
  const header = JSON.parse(
    new TextDecoder().decode(data.subarray(8, 8 + headerLen)),
  ) as Record<string, { dtype: string; shape: number[]; data_offsets: [number, number] }>;
  const region = data.subarray(8 + headerLen);

  const bundle: ArrayBundle = {};
  for (const [name, info] of Object.entries(header)) {
    if (name === "__metadata__") {
      continue;
    }
    const width = ELEMENT_WIDTH[info.dtype as DTypeString];
    if (width === undefined) {
      throw new Error(
        `tensor ${JSON.stringify(name)} has unsupported dtype ${JSON.stringify(info.dtype)}`,
      );
    }
    const [begin, end] = info.data_offsets;
    if (begin < 0 || end < begin || end > region.byteLength) {
      throw new Error(`tensor ${JSON.stringify(name)} has offsets outside the file`);
    }
    if (end - begin !== elementCount(info.shape) * width) {
      throw new Error(`tensor ${JSON.stringify(name)} span disagrees with its shape`);
    }
    bundle[name] = {
      dtype: info.dtype as DTypeString,
      shape: info.shape,
      data: region.slice(begin, end),
    };
  }
  return bundle;
}
