import * as fs from "fs";
import * as os from "os";
import * as path from "path";

import { describe, expect, it } from "vitest";

import { handleLine, parseArgs } from "../src/main";
import { parseRequest, readCorpusLabels } from "../src/protocol";

const VALID = JSON.stringify({
  round: 0,
  client_id: 1,
  epoch_fraction: 0.1,
  adapter_in: "/nowhere/global.flat",
  corpus: "/nowhere/corpus.jsonl",
  seed: 7,
});

describe("parseRequest", () => {
  it("accepts a well-formed request", () => {
    const req = parseRequest(VALID);
    expect(req.client_id).toBe(1);
    expect(req.epoch_fraction).toBeCloseTo(0.1);
  });

  it("rejects non-JSON, non-objects and missing fields", () => {
    expect(() => parseRequest("not json {")).toThrow(/not valid JSON/);
    expect(() => parseRequest("[1,2]")).toThrow(/object/);
    expect(() => parseRequest('{"round": 0}')).toThrow(/client_id/);
    expect(() => parseRequest(VALID.replace('"epoch_fraction":0.1', '"epoch_fraction":1.5'))).toThrow(
      /outside/,
    );
  });
});

describe("handleLine", () => {
  it("echo mode answers without touching the filesystem", () => {
    const reply = JSON.parse(handleLine(VALID, { mode: "echo", eta: 1e-3 }));
    expect(reply.adapter_out).toBe("/nowhere/global.flat");
    expect(reply.examples_seen).toBe(0);
  });

  it("turns any failure into an error reply", () => {
    const reply = JSON.parse(handleLine("garbage", { mode: "echo", eta: 1e-3 }));
    expect(reply.error).toMatch(/not valid JSON/);
    const missing = JSON.parse(handleLine(VALID, { mode: "mock-rule", eta: 1e-3 }));
    expect(missing.error).toBeTruthy();
  });

  it("custom mode reports the unimplemented extension point", () => {
    const reply = JSON.parse(handleLine(VALID, { mode: "custom", eta: 1e-3 }));
    expect(reply.error).toMatch(/extension point/);
  });
});

describe("parseArgs", () => {
  it("parses mode and eta", () => {
    expect(parseArgs([])).toEqual({ mode: "echo", eta: 1e-3 });
    expect(parseArgs(["--mode", "mock-rule", "--eta", "0.01"])).toEqual({
      mode: "mock-rule",
      eta: 0.01,
    });
    expect(() => parseArgs(["--mode", "turbo"])).toThrow(/unknown mode/);
    expect(() => parseArgs(["--wat"])).toThrow(/unknown argument/);
  });
});

describe("readCorpusLabels", () => {
  it("reads labels in file order", () => {
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "sidecar-test-"));
    const file = path.join(dir, "corpus.jsonl");
    fs.writeFileSync(
      file,
      [
        JSON.stringify({ messages: [], completion: "- A", label: true }),
        "",
        JSON.stringify({ messages: [], completion: "- B", label: false }),
      ].join("\n") + "\n",
    );
    expect(Array.from(readCorpusLabels(file))).toEqual([1, 0]);
  });
});
