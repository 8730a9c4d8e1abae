/**
 * Driver seams around the actual models. The adapter stays thin: drivers
 * turn wire payloads into model calls and back, nothing else. Shipped
 * drivers: a deterministic geometric demo segmenter, an identity tracker,
 * a canned VLM, an HTTP-forwarding VLM, and transcript replay for all
 * three roles (golden-file testing and offline operation).
 */

import * as crypto from "crypto";
import * as fs from "fs";

import { AdapterConfig } from "./config";
import { pngSizeFromBase64 } from "./png";
import { RleMask, encode } from "./rle";

export class ModelLoadError extends Error {}
export class RequestError extends Error {}
export class UnknownSessionError extends Error {}

export interface Segmenter {
  segment(imagePngB64: string, granularity: number[]): Promise<RleMask[]>;
}

export interface Tracker {
  init(imagePngB64: string, masks: RleMask[]): Promise<string>;
  step(sessionId: string, imagePngB64: string): Promise<RleMask[]>;
}

export interface Vlm {
  select(imagePngB64: string, prompt: string): Promise<string>;
}

// ---------------------------------------------------------------------------
// Demo drivers: real geometry, no neural weights, fully deterministic.

export class GridSegmenter implements Segmenter {
  constructor(private granularityMapping: Record<string, number>) {}

  async segment(imagePngB64: string, granularity: number[]): Promise<RleMask[]> {
    const { width, height } = pngSizeFromBase64(imagePngB64);
    const masks: RleMask[] = [];
    for (const level of [...new Set(granularity)].sort()) {
      const cells = this.granularityMapping[String(level)];
      if (!cells) throw new RequestError(`granularity level ${level} not mapped`);
      for (let gy = 0; gy < cells; gy++) {
        for (let gx = 0; gx < cells; gx++) {
          const x0 = Math.floor((gx * width) / cells);
          const x1 = Math.floor(((gx + 1) * width) / cells);
          const y0 = Math.floor((gy * height) / cells);
          const y1 = Math.floor(((gy + 1) * height) / cells);
          const bits = new Uint8Array(width * height);
          for (let y = y0; y < y1; y++) bits.fill(1, y * width + x0, y * width + x1);
          masks.push(encode(bits, width, height));
        }
      }
    }
    return masks;
  }
}

interface IdentitySession {
  masks: RleMask[];
  width: number;
  height: number;
  steps: number;
}

export class IdentityTracker implements Tracker {
  private sessions = new Map<string, IdentitySession>();

  async init(imagePngB64: string, masks: RleMask[]): Promise<string> {
    const { width, height } = pngSizeFromBase64(imagePngB64);
    for (const m of masks) {
      if (m.w !== width || m.h !== height) {
        throw new RequestError(`mask ${m.w}x${m.h} does not match image ${width}x${height}`);
      }
    }
    const id = crypto.randomUUID().replace(/-/g, "");
    this.sessions.set(id, { masks, width, height, steps: 0 });
    return id;
  }

  async step(sessionId: string, imagePngB64: string): Promise<RleMask[]> {
    const session = this.sessions.get(sessionId);
    if (!session) throw new UnknownSessionError(`session ${sessionId} unknown or expired`);
    const { width, height } = pngSizeFromBase64(imagePngB64);
    if (width !== session.width || height !== session.height) {
      throw new RequestError(`frame ${width}x${height} does not match session ${session.width}x${session.height}`);
    }
    session.steps += 1;
    return session.masks;
  }
}

export class CannedVlm implements Vlm {
  constructor(private template = "The most relevant region is the first tag.\nFINAL: [1]") {}

  async select(_imagePngB64: string, _prompt: string): Promise<string> {
    return this.template;
  }
}

export class ForwardVlm implements Vlm {
  constructor(private endpointUrl: string, private credentialsEnv: string) {
    if (!endpointUrl) throw new ModelLoadError("forward VLM needs vlm.endpoint_url");
  }

  async select(imagePngB64: string, prompt: string): Promise<string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    const key = process.env[this.credentialsEnv];
    if (key) headers.authorization = `Bearer ${key}`;
    const resp = await fetch(`${this.endpointUrl.replace(/\/$/, "")}/v1/select`, {
      method: "POST",
      headers,
      body: JSON.stringify({ image_png_b64: imagePngB64, prompt }),
    });
    if (!resp.ok) throw new RequestError(`VLM endpoint returned ${resp.status}`);
    const body = (await resp.json()) as { reply?: string };
    if (typeof body.reply !== "string") throw new RequestError("VLM endpoint reply missing");
    return body.reply;
  }
}

// ---------------------------------------------------------------------------
// Transcript replay: serve recorded request/response pairs byte-for-byte.

export interface TranscriptEntry {
  op: "segment" | "track_init" | "track_step" | "select";
  request: Record<string, unknown>;
  response: Record<string, unknown>;
}

function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return "[" + value.map(canonicalJson).join(",") + "]";
  }
  if (value !== null && typeof value === "object") {
    const obj = value as Record<string, unknown>;
    const keys = Object.keys(obj).sort();
    return "{" + keys.map((k) => JSON.stringify(k) + ":" + canonicalJson(obj[k])).join(",") + "}";
  }
  return JSON.stringify(value);
}

export function requestKey(op: string, request: Record<string, unknown>): string {
  return crypto.createHash("sha256").update(op + "\n" + canonicalJson(request)).digest("hex");
}

export class ReplayStore {
  private entries = new Map<string, Record<string, unknown>>();
  readonly transcript: TranscriptEntry[];

  constructor(path: string) {
    if (!fs.existsSync(path)) throw new ModelLoadError(`transcript not found: ${path}`);
    this.transcript = JSON.parse(fs.readFileSync(path, "utf8"));
    for (const entry of this.transcript) {
      this.entries.set(requestKey(entry.op, entry.request), entry.response);
    }
  }

  lookup(op: string, request: Record<string, unknown>): Record<string, unknown> {
    const hit = this.entries.get(requestKey(op, request));
    if (!hit) throw new RequestError(`no recorded response for this ${op} request`);
    return hit;
  }
}

export class ReplaySegmenter implements Segmenter {
  constructor(private store: ReplayStore) {}

  async segment(imagePngB64: string, granularity: number[]): Promise<RleMask[]> {
    const resp = this.store.lookup("segment", { image_png_b64: imagePngB64, granularity });
    return resp.masks as RleMask[];
  }
}

export class ReplayTracker implements Tracker {
  constructor(private store: ReplayStore) {}

  async init(imagePngB64: string, masks: RleMask[]): Promise<string> {
    const resp = this.store.lookup("track_init", { image_png_b64: imagePngB64, masks });
    return resp.session_id as string;
  }

  async step(sessionId: string, imagePngB64: string): Promise<RleMask[]> {
    const resp = this.store.lookup("track_step", {
      session_id: sessionId,
      image_png_b64: imagePngB64,
    });
    return resp.masks as RleMask[];
  }
}

export class ReplayVlm implements Vlm {
  constructor(private store: ReplayStore) {}

  async select(imagePngB64: string, prompt: string): Promise<string> {
    const resp = this.store.lookup("select", { image_png_b64: imagePngB64, prompt });
    return resp.reply as string;
  }
}

// ---------------------------------------------------------------------------

export interface DriverSet {
  segmenter: Segmenter;
  tracker: Tracker;
  vlm: Vlm;
}

export function buildDrivers(config: AdapterConfig): DriverSet {
  let store: ReplayStore | null = null;
  const replay = (): ReplayStore => {
    if (!store) {
      if (!config.replay_transcript) {
        throw new ModelLoadError("replay drivers need replay_transcript in the config");
      }
      store = new ReplayStore(config.replay_transcript);
    }
    return store;
  };

  let segmenter: Segmenter;
  switch (config.segmenter.model) {
    case "demo-grid":
      segmenter = new GridSegmenter(config.segmenter.granularity_mapping);
      break;
    case "replay":
      segmenter = new ReplaySegmenter(replay());
      break;
    default:
      throw new ModelLoadError(`unknown segmenter model ${config.segmenter.model}`);
  }

  let tracker: Tracker;
  switch (config.tracker.model) {
    case "identity":
      tracker = new IdentityTracker();
      break;
    case "replay":
      tracker = new ReplayTracker(replay());
      break;
    default:
      throw new ModelLoadError(`unknown tracker model ${config.tracker.model}`);
  }

  let vlm: Vlm;
  switch (config.vlm.model) {
    case "canned":
      vlm = new CannedVlm();
      break;
    case "forward":
      vlm = new ForwardVlm(config.vlm.endpoint_url, config.vlm.credentials_env);
      break;
    case "replay":
      vlm = new ReplayVlm(replay());
      break;
    default:
      throw new ModelLoadError(`unknown vlm model ${config.vlm.model}`);
  }

  return { segmenter, tracker, vlm };
}
