/** Request/response schema of the trainer wire protocol. */

import * as fs from "fs";

export interface TrainRequest {
  round: number;
  client_id: number;
  epoch_fraction: number;
  adapter_in: string;
  corpus: string;
  seed: number;
}

export interface TrainResponse {
  adapter_out: string;
  examples_seen: number;
  trainer_stats: Record<string, unknown>;
}

export function parseRequest(line: string): TrainRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new Error(`request line is not valid JSON: ${line.slice(0, 80)}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new Error("request must be a JSON object");
  }
  const req = raw as Record<string, unknown>;
  for (const key of ["round", "client_id", "epoch_fraction", "seed"]) {
    if (typeof req[key] !== "number") throw new Error(`request field ${key} must be a number`);
  }
  for (const key of ["adapter_in", "corpus"]) {
    if (typeof req[key] !== "string") throw new Error(`request field ${key} must be a string`);
  }
  const fraction = req.epoch_fraction as number;
  if (!(fraction >= 0 && fraction <= 1)) {
    throw new Error(`epoch_fraction ${fraction} outside [0, 1]`);
  }
  return req as unknown as TrainRequest;
}

/** Labels of a JSON-lines corpus file, in file order. */
export function readCorpusLabels(path: string): Uint8Array {
  const text = fs.readFileSync(path, "utf8");
  const labels: number[] = [];
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const record = JSON.parse(line);
    labels.push(record.label ? 1 : 0);
  }
  return Uint8Array.from(labels);
}
