/**
 * Minimal reader/writer for the FLAT adapter container.
 *
 * Layout: "FLATv001" magic, little-endian uint64 header length, UTF-8 JSON
 * header ({entries: [{name, shape, dtype, offset, nbytes}], meta}), raw
 * little-endian payload. The mock rule only rewrites f32 payload bytes, so
 * the original header bytes are preserved verbatim on write: structure,
 * offsets and metadata survive untouched.
 */

export const MAGIC = Buffer.from("FLATv001", "ascii");

export interface FlatEntry {
  name: string;
  shape: number[];
  dtype: string;
  offset: number;
  nbytes: number;
}

export interface FlatContainer {
  headerBytes: Buffer;
  entries: FlatEntry[];
  meta: Record<string, unknown>;
  payload: Buffer;
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function expectedNBytes(shape: number[], dtype: string): number {
  const n = elementCount(shape);
  if (dtype === "f32") return 4 * n;
  if (dtype === "u8-packed-4bit") return Math.ceil(n / 2);
  throw new Error(`unknown dtype ${dtype}`);
}

export function parseFlat(blob: Buffer): FlatContainer {
  if (blob.length < MAGIC.length || !blob.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new Error("bad magic: not a FLAT container");
  }
  if (blob.length < MAGIC.length + 8) {
    throw new Error("truncated: missing header length");
  }
  const headerLen = Number(blob.readBigUInt64LE(MAGIC.length));
  const headerStart = MAGIC.length + 8;
  if (blob.length < headerStart + headerLen) {
    throw new Error("truncated: header shorter than declared");
  }
  const headerBytes = blob.subarray(headerStart, headerStart + headerLen);
  const header = JSON.parse(headerBytes.toString("utf8"));
  if (typeof header !== "object" || header === null || !Array.isArray(header.entries)) {
    throw new Error("header lacks an entries list");
  }
  const payload = Buffer.from(blob.subarray(headerStart + headerLen));
  let total = 0;
  const entries: FlatEntry[] = header.entries.map((raw: FlatEntry) => {
    const entry: FlatEntry = {
      name: raw.name,
      shape: raw.shape.map(Number),
      dtype: raw.dtype,
      offset: Number(raw.offset),
      nbytes: Number(raw.nbytes),
    };
    if (entry.nbytes !== expectedNBytes(entry.shape, entry.dtype)) {
      throw new Error(`${entry.name}: nbytes does not match shape/dtype`);
    }
    if (entry.offset + entry.nbytes > payload.length) {
      throw new Error(`${entry.name}: payload ends before declared extent`);
    }
    total += entry.nbytes;
    return entry;
  });
  if (total !== payload.length) {
    throw new Error(`payload is ${payload.length} bytes, entries account for ${total}`);
  }
  return { headerBytes: Buffer.from(headerBytes), entries, meta: header.meta ?? {}, payload };
}

export function serializeFlat(container: FlatContainer): Buffer {
  const lenBuf = Buffer.alloc(8);
  lenBuf.writeBigUInt64LE(BigInt(container.headerBytes.length));
  return Buffer.concat([MAGIC, lenBuf, container.headerBytes, container.payload]);
}
