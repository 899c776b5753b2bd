/**
 * Reference external trainer: speaks the JSON-lines protocol on stdio.
 *
 * Modes:
 *   echo       respond with the incoming adapter unchanged (identity update)
 *   mock-rule  apply the deterministic mock rule, bit-exact with the
 *              orchestrator's in-process trainer
 *   custom     extension point: attach a real fine-tuning loop here. The
 *              adapter metadata carries lora_rank / lora_alpha / quant_bits
 *              through unchanged; a real implementation would load the
 *              corpus records (messages/completion/label), run its
 *              preference-optimization step, and write the updated tensors
 *              back in FLAT format. Not implemented.
 *
 * Every request line gets exactly one response line; failures become
 * {"error": ...} replies and the process stays alive. Adapter files are
 * written to a temp path and renamed, never left partial.
 */

import * as fs from "fs";
import * as path from "path";
import * as readline from "readline";

import { parseFlat, serializeFlat } from "./flat";
import { applyMockRule, consumedExamples } from "./mockrule";
import { TrainRequest, TrainResponse, parseRequest, readCorpusLabels } from "./protocol";

const DEFAULT_ETA = 1e-3;

interface SidecarConfig {
  mode: "echo" | "mock-rule" | "custom";
  eta: number;
}

export function parseArgs(argv: string[]): SidecarConfig {
  const config: SidecarConfig = { mode: "echo", eta: DEFAULT_ETA };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--mode") {
      const value = argv[++i];
      if (value !== "echo" && value !== "mock-rule" && value !== "custom") {
        throw new Error(`unknown mode ${value}`);
      }
      config.mode = value;
    } else if (arg === "--eta") {
      config.eta = parseFloat(argv[++i]);
      if (!(config.eta > 0)) throw new Error("eta must be positive");
    } else {
      throw new Error(`unknown argument ${arg}`);
    }
  }
  return config;
}

function atomicWrite(target: string, data: Buffer): void {
  const tmp = target + ".tmp";
  fs.writeFileSync(tmp, data);
  fs.renameSync(tmp, target);
}

export function handleRequest(request: TrainRequest, config: SidecarConfig): TrainResponse {
  if (config.mode === "echo") {
    return {
      adapter_out: request.adapter_in,
      examples_seen: 0,
      trainer_stats: { mode: "echo" },
    };
  }
  if (config.mode === "custom") {
    throw new Error("custom mode is an extension point; no trainer attached");
  }
  const container = parseFlat(fs.readFileSync(request.adapter_in));
  const labels = readCorpusLabels(request.corpus);
  if (labels.length === 0) {
    throw new Error(`corpus is empty: ${request.corpus}`);
  }
  const n = consumedExamples(request.epoch_fraction, labels.length);
  const magnitude = request.epoch_fraction * config.eta;
  applyMockRule(container, labels.subarray(0, n), magnitude, request.seed);
  const outPath = path.join(
    path.dirname(request.adapter_in),
    `sidecar_r${request.round}_c${request.client_id}.flat`,
  );
  atomicWrite(outPath, serializeFlat(container));
  return {
    adapter_out: outPath,
    examples_seen: n,
    trainer_stats: { mode: "mock-rule", eta: config.eta },
  };
}

export function handleLine(line: string, config: SidecarConfig): string {
  try {
    const response = handleRequest(parseRequest(line), config);
    return JSON.stringify(response);
  } catch (error) {
    return JSON.stringify({ error: error instanceof Error ? error.message : String(error) });
  }
}

function main(): void {
  const config = parseArgs(process.argv.slice(2));
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line: string) => {
    if (!line.trim()) return;
    process.stdout.write(handleLine(line, config) + "\n");
  });
}

if (require.main === module) {
  main();
}
