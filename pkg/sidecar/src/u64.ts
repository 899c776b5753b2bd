/**
 * 64-bit integer mixing shared with the orchestrator.
 *
 * Everything here must stay bit-identical to the Python side (splitmix64
 * finalizer + FNV-1a 64), so all arithmetic runs on masked BigInts.
 */

export const MASK64 = (1n << 64n) - 1n;
export const GOLDEN = 0x9e3779b97f4a7c15n;

const C1 = 0xbf58476d1ce4e5b9n;
const C2 = 0x94d049bb133111ebn;

export function mix64(z: bigint): bigint {
  z &= MASK64;
  z = ((z ^ (z >> 30n)) * C1) & MASK64;
  z = ((z ^ (z >> 27n)) * C2) & MASK64;
  return (z ^ (z >> 31n)) & MASK64;
}

export function fnv1a64(data: Buffer): bigint {
  let h = 0xcbf29ce484222325n;
  for (const byte of data) {
    h = ((h ^ BigInt(byte)) * 0x100000001b3n) & MASK64;
  }
  return h;
}

export function fnv1a64String(text: string): bigint {
  return fnv1a64(Buffer.from(text, "utf8"));
}
