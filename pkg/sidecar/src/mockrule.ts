/**
 * The deterministic mock training rule, bit-exact with the orchestrator's
 * in-process implementation.
 *
 * Per consumed example i and per element j of each f32 tensor, the value is
 * nudged by ±fround(epoch_fraction × eta). The per-element sign is bit 63 of
 * mix64(state_i + (j+1)·GOLDEN) with state_i = mix64(base ^ (i+1)·GOLDEN) and
 * base = mix64(fnv1a64(name) ^ seed); label-false examples flip every sign.
 *
 * float32 accumulation through f64 + Math.fround is exact: binary64 carries
 * more than 2·24+2 significand bits, so the double rounding is innocuous.
 */

import { FlatContainer } from "./flat";
import { GOLDEN, MASK64, fnv1a64String, mix64 } from "./u64";

export function consumedExamples(epochFraction: number, corpusSize: number): number {
  return Math.floor(epochFraction * corpusSize + 0.5);
}

export function applyDeltasToRegion(
  payload: Buffer,
  offset: number,
  nElements: number,
  nameKey: bigint,
  seed: bigint,
  labels: Uint8Array,
  magnitude: number,
): void {
  if (labels.length === 0 || nElements === 0) return;
  const d = Math.fround(magnitude);
  const view = new DataView(payload.buffer, payload.byteOffset + offset, nElements * 4);
  const base = mix64((nameKey & MASK64) ^ (seed & MASK64));
  for (let i = 0; i < labels.length; i++) {
    const state = mix64(base ^ ((BigInt(i + 1) * GOLDEN) & MASK64));
    const step = labels[i] ? d : -d;
    for (let j = 0; j < nElements; j++) {
      const z = mix64((state + BigInt(j + 1) * GOLDEN) & MASK64);
      const delta = z >> 63n ? step : -step;
      view.setFloat32(j * 4, Math.fround(view.getFloat32(j * 4, true) + delta), true);
    }
  }
}

export function applyMockRule(
  container: FlatContainer,
  labels: Uint8Array,
  magnitude: number,
  seed: number,
): void {
  const seedBig = BigInt(Math.trunc(seed));
  for (const entry of container.entries) {
    if (entry.dtype !== "f32") continue;
    const nElements = entry.shape.reduce((a, b) => a * b, 1);
    applyDeltasToRegion(
      container.payload,
      entry.offset,
      nElements,
      fnv1a64String(entry.name),
      seedBig,
      labels,
      magnitude,
    );
  }
}
