/**
 * Protocol conformance battery: exercises every wire message against a live
 * endpoint, validating schemas, mask dimensions/bounds, disjointness where
 * the protocol implies it (level-1 segmentation probes and tracker output),
 * latency, and error behavior. Produces a machine-readable report.
 */

import { z } from "zod";

import { pngSizeFromBase64 } from "./png";
import { RleMask, decode, disjoint, validate } from "./rle";
import {
  errorResponseSchema,
  segmentResponseSchema,
  selectResponseSchema,
  trackInitResponseSchema,
  trackStepResponseSchema,
} from "./schema";

// 16x16 gray PNG with two colored rectangles; tiny, embedded so the checker
// has no image dependencies
export const PROBE_PNG_B64 =
  "iVBORw0KGgoAAAANSUhEUgAAABAAAAAQCAIAAACQkWg2AAAAQ0lEQVR4nGOsqKhgIAUwkaSagYGBBUKlHNmA" +
  "JjHHJoA6NgwHDdBQwhUmODVgBbseoZviJrdhEHqa3FDCCtzkNlDBBgAKugnMzmJ+WQAAAABJRU5ErkJggg==";
export const PROBE_W = 16;
export const PROBE_H = 16;

export interface Check {
  name: string;
  ok: boolean;
  detail: string;
}

export interface ConformanceReport {
  endpoint: string;
  pass: boolean;
  checks: Check[];
}

const DEFAULT_STEP_LATENCY_BUDGET_MS = 2000;

async function postJson(url: string, body: unknown, timeoutMs: number):
  Promise<{ status: number; json: unknown }> {
  const resp = await fetch(url, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: typeof body === "string" ? body : JSON.stringify(body),
    signal: AbortSignal.timeout(timeoutMs),
  });
  return { status: resp.status, json: await resp.json().catch(() => null) };
}

function maskChecks(masks: RleMask[], label: string, width: number, height: number,
                    requireDisjoint: boolean, checks: Check[]): void {
  let dimsOk = true;
  let runsOk = true;
  for (const m of masks) {
    if (m.w !== width || m.h !== height) dimsOk = false;
    try {
      validate(m);
      decode(m);
    } catch (err) {
      runsOk = false;
    }
  }
  checks.push({
    name: `${label}.dimensions`,
    ok: dimsOk,
    detail: dimsOk ? `all masks ${width}x${height}` : `mask dimensions differ from image ${width}x${height}`,
  });
  checks.push({
    name: `${label}.runs-valid`,
    ok: runsOk,
    detail: runsOk ? "all run streams decode" : "malformed run stream",
  });
  if (requireDisjoint) {
    const ok = runsOk && dimsOk && disjoint(masks);
    checks.push({
      name: `${label}.disjoint`,
      ok,
      detail: ok ? "masks pairwise disjoint" : "overlapping masks",
    });
  }
}

function schemaCheck<T>(schema: z.ZodType<T>, payload: unknown, name: string,
                        checks: Check[]): T | null {
  const parsed = schema.safeParse(payload);
  checks.push({
    name,
    ok: parsed.success,
    detail: parsed.success ? "schema valid" : parsed.error.issues[0]?.message ?? "schema error",
  });
  return parsed.success ? parsed.data : null;
}

export interface ConformanceOptions {
  timeoutMs?: number;
  stepLatencyBudgetMs?: number;
  /** Override the built-in probe, e.g. with a frame the backend expects. */
  probePngB64?: string;
}

export async function conformanceCheck(
  endpoint: string,
  opts: ConformanceOptions = {},
): Promise<ConformanceReport> {
  const base = endpoint.replace(/\/$/, "");
  const timeoutMs = opts.timeoutMs ?? 15000;
  const latencyBudget = opts.stepLatencyBudgetMs ?? DEFAULT_STEP_LATENCY_BUDGET_MS;
  const probeB64 = opts.probePngB64 ?? PROBE_PNG_B64;
  const probeSize = pngSizeFromBase64(probeB64);
  const checks: Check[] = [];

  try {
    const health = await fetch(`${base}/healthz`, { signal: AbortSignal.timeout(timeoutMs) });
    checks.push({
      name: "healthz",
      ok: health.status === 200,
      detail: `status ${health.status}`,
    });
  } catch (err) {
    return {
      endpoint,
      pass: false,
      checks: [{ name: "transport", ok: false, detail: `unreachable: ${(err as Error).message}` }],
    };
  }

  // segment: valid request at granularity [1]; synthetic-style backends must
  // answer with in-bounds, disjoint object masks
  let segMasks: RleMask[] = [];
  try {
    const seg = await postJson(`${base}/segment`,
      { image_png_b64: probeB64, granularity: [1] }, timeoutMs);
    checks.push({ name: "segment.status", ok: seg.status === 200, detail: `status ${seg.status}` });
    const parsed = schemaCheck(segmentResponseSchema, seg.json, "segment.schema", checks);
    if (parsed) {
      segMasks = parsed.masks;
      maskChecks(segMasks, "segment", probeSize.width, probeSize.height, true, checks);
    }
  } catch (err) {
    checks.push({ name: "segment", ok: false, detail: String(err) });
  }

  // segment: malformed body must produce a structured error, not a crash
  try {
    const bad = await postJson(`${base}/segment`, "{not json", timeoutMs);
    const shaped = isErrorShape(bad.json);
    checks.push({
      name: "segment.malformed-json",
      ok: bad.status >= 400 && shaped,
      detail: `status ${bad.status}, error object ${shaped ? "present" : "missing"}`,
    });
  } catch (err) {
    checks.push({ name: "segment.malformed-json", ok: false, detail: String(err) });
  }

  // track lifecycle on the probe masks
  let sessionId: string | null = null;
  const initMasks = segMasks.length ? segMasks.slice(0, 2) : [];
  if (initMasks.length) {
    try {
      const init = await postJson(`${base}/track/init`,
        { image_png_b64: probeB64, masks: initMasks }, timeoutMs);
      checks.push({ name: "track_init.status", ok: init.status === 200, detail: `status ${init.status}` });
      const parsed = schemaCheck(trackInitResponseSchema, init.json, "track_init.schema", checks);
      sessionId = parsed?.session_id ?? null;
    } catch (err) {
      checks.push({ name: "track_init", ok: false, detail: String(err) });
    }
  }
  if (sessionId) {
    for (let stepIdx = 0; stepIdx < 2; stepIdx++) {
      try {
        const t0 = Date.now();
        const step = await postJson(`${base}/track/step`,
          { session_id: sessionId, image_png_b64: probeB64 }, timeoutMs);
        const wall = Date.now() - t0;
        const parsed = schemaCheck(trackStepResponseSchema, step.json,
          `track_step${stepIdx}.schema`, checks);
        if (parsed) {
          maskChecks(parsed.masks, `track_step${stepIdx}`, probeSize.width, probeSize.height,
            true, checks);
          checks.push({
            name: `track_step${stepIdx}.count`,
            ok: parsed.masks.length === initMasks.length,
            detail: `${parsed.masks.length} masks for ${initMasks.length} tracked objects`,
          });
          checks.push({
            name: `track_step${stepIdx}.latency`,
            ok: wall <= latencyBudget,
            detail: `wall ${wall} ms (budget ${latencyBudget} ms), reported ${parsed.latency_ms.toFixed(1)} ms`,
          });
        }
      } catch (err) {
        checks.push({ name: `track_step${stepIdx}`, ok: false, detail: String(err) });
      }
    }
    try {
      const ghost = await postJson(`${base}/track/step`,
        { session_id: "no-such-session", image_png_b64: probeB64 }, timeoutMs);
      checks.push({
        name: "track_step.unknown-session",
        ok: ghost.status >= 400 && isErrorShape(ghost.json),
        detail: `status ${ghost.status}`,
      });
    } catch (err) {
      checks.push({ name: "track_step.unknown-session", ok: false, detail: String(err) });
    }
  }

  // select: mandatory for full adapters, optional for segment/track-only
  // backends (they answer 404/405 here)
  try {
    const sel = await postJson(`${base}/v1/select`,
      { image_png_b64: probeB64, prompt: "Select the relevant tag.\nFINAL: [n]" }, timeoutMs);
    if (sel.status === 404 || sel.status === 405) {
      checks.push({
        name: "select",
        ok: true,
        detail: "not implemented (optional for segment/track backends)",
      });
    } else {
      checks.push({ name: "select.status", ok: sel.status === 200, detail: `status ${sel.status}` });
      schemaCheck(selectResponseSchema, sel.json, "select.schema", checks);
    }
  } catch (err) {
    checks.push({ name: "select", ok: false, detail: String(err) });
  }

  return { endpoint, pass: checks.every((c) => c.ok), checks };
}

/** Accepts the adapter's {error:{type,message}} and FastAPI-style {detail:...}. */
function isErrorShape(payload: unknown): boolean {
  if (errorResponseSchema.safeParse(payload).success) return true;
  return typeof payload === "object" && payload !== null && "detail" in payload;
}
