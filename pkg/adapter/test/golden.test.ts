import { AddressInfo } from "net";
import * as fs from "fs";
import * as path from "path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { adapterConfigSchema } from "../src/config";
import { buildDrivers, TranscriptEntry } from "../src/drivers";
import { conformanceCheck } from "../src/conformance";
import { makeApp } from "../src/server";
import { normalize, RleMask } from "../src/rle";

const TRANSCRIPT = path.join(__dirname, "..", "golden", "synthetic_transcript.json");

const OP_PATH: Record<string, string> = {
  segment: "/segment",
  track_init: "/track/init",
  track_step: "/track/step",
  select: "/v1/select",
};

let baseUrl = "";
let close: () => void = () => undefined;
let entries: TranscriptEntry[] = [];

beforeAll(async () => {
  const config = adapterConfigSchema.parse({
    segmenter: { model: "replay" },
    tracker: { model: "replay" },
    vlm: { model: "replay" },
    replay_transcript: TRANSCRIPT,
  });
  const app = makeApp(buildDrivers(config));
  entries = JSON.parse(fs.readFileSync(TRANSCRIPT, "utf8"));
  await new Promise<void>((resolve) => {
    const server = app.listen(0, "127.0.0.1", () => {
      baseUrl = `http://127.0.0.1:${(server.address() as AddressInfo).port}`;
      close = () => server.close();
      resolve();
    });
  });
});

afterAll(() => close());

/** Canonical JSON with RLE payloads normalized, for bit-exact comparison. */
function canonical(value: unknown): string {
  const norm = (v: unknown): unknown => {
    if (Array.isArray(v)) return v.map(norm);
    if (v !== null && typeof v === "object") {
      const obj = v as Record<string, unknown>;
      if (typeof obj.w === "number" && typeof obj.h === "number" && Array.isArray(obj.runs)) {
        return normalize(obj as unknown as RleMask);
      }
      const out: Record<string, unknown> = {};
      for (const k of Object.keys(obj).sort()) out[k] = norm(obj[k]);
      return out;
    }
    return v;
  };
  return JSON.stringify(norm(value));
}

describe("golden transcript replay", () => {
  it("has the full protocol coverage recorded", () => {
    const ops = new Set(entries.map((e) => e.op));
    expect(ops).toEqual(new Set(["segment", "track_init", "track_step", "select"]));
    expect(entries.length).toBeGreaterThanOrEqual(5);
  });

  it("replays every recorded exchange bit-exact at the JSON level", async () => {
    for (const entry of entries) {
      const resp = await fetch(`${baseUrl}${OP_PATH[entry.op]}`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(entry.request),
      });
      expect(resp.status).toBe(200);
      const body = await resp.json();
      if (entry.op === "track_step") {
        // wall-clock latency is freshly measured on every replay
        (body as { latency_ms?: number }).latency_ms = 0.0;
      }
      expect(canonical(body)).toBe(canonical(entry.response));
    }
  });

  it("returns a protocol error for unrecorded requests", async () => {
    const resp = await fetch(`${baseUrl}/segment`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image_png_b64: entries[0].request.image_png_b64, granularity: [6] }),
    });
    expect(resp.status).toBe(400);
    const body = await resp.json();
    expect((body as any).error.message).toContain("no recorded response");
  });

  it("passes the full conformance battery against the golden-backed server", async () => {
    const probe = fs.readFileSync(path.join(__dirname, "..", "golden", "probe.png"));
    const report = await conformanceCheck(baseUrl, {
      timeoutMs: 5000,
      probePngB64: probe.toString("base64"),
    });
    const failed = report.checks.filter((c) => !c.ok);
    expect(failed).toEqual([]);
    expect(report.pass).toBe(true);
  });
});
