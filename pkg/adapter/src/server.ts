/**
 * Protocol server: /segment, /track/init, /track/step, /v1/select, /healthz
 * over HTTP, or the same messages as JSON lines on stdio with an "op" field.
 * Per-request model errors come back as protocol error objects; the process
 * stays up.
 */

import * as readline from "readline";

import express, { Express } from "express";
import { ZodType } from "zod";

import { DriverSet, RequestError, UnknownSessionError } from "./drivers";
import { PngError } from "./png";
import { RleError, validate } from "./rle";
import {
  segmentRequestSchema,
  selectRequestSchema,
  trackInitRequestSchema,
  trackStepRequestSchema,
} from "./schema";

function errorBody(err: unknown): { error: { type: string; message: string } } {
  const e = err as Error;
  return { error: { type: e.constructor?.name ?? "Error", message: e.message ?? String(err) } };
}

function statusFor(err: unknown): number {
  if (err instanceof UnknownSessionError) return 404;
  if (err instanceof RequestError || err instanceof PngError || err instanceof RleError) return 400;
  return 500;
}

function parseWith<T>(schema: ZodType<T>, body: unknown): T {
  const parsed = schema.safeParse(body);
  if (!parsed.success) {
    throw new RequestError(`invalid request: ${parsed.error.issues[0]?.message ?? "schema"}`);
  }
  return parsed.data;
}

export async function dispatch(drivers: DriverSet, op: string, body: unknown): Promise<object> {
  switch (op) {
    case "segment": {
      const req = parseWith(segmentRequestSchema, body);
      const masks = await drivers.segmenter.segment(req.image_png_b64, req.granularity);
      masks.forEach(validate);
      return { masks };
    }
    case "track_init": {
      const req = parseWith(trackInitRequestSchema, body);
      req.masks.forEach(validate);
      const sessionId = await drivers.tracker.init(req.image_png_b64, req.masks);
      return { session_id: sessionId };
    }
    case "track_step": {
      const req = parseWith(trackStepRequestSchema, body);
      const start = process.hrtime.bigint();
      const masks = await drivers.tracker.step(req.session_id, req.image_png_b64);
      masks.forEach(validate);
      const latencyMs = Number(process.hrtime.bigint() - start) / 1e6;
      return { masks, latency_ms: latencyMs };
    }
    case "select": {
      const req = parseWith(selectRequestSchema, body);
      const reply = await drivers.vlm.select(req.image_png_b64, req.prompt);
      return { reply };
    }
    default:
      throw new RequestError(`unknown op ${op}`);
  }
}

export function makeApp(drivers: DriverSet): Express {
  const app = express();
  app.use(express.json({ limit: "64mb" }));
  // malformed JSON bodies become protocol error objects, not stack traces
  app.use((err: Error, _req: express.Request, res: express.Response, next: express.NextFunction) => {
    if (err) {
      res.status(400).json(errorBody(new RequestError(`malformed JSON: ${err.message}`)));
      return;
    }
    next();
  });

  const route = (path: string, op: string) => {
    app.post(path, async (req, res) => {
      try {
        res.json(await dispatch(drivers, op, req.body));
      } catch (err) {
        res.status(statusFor(err)).json(errorBody(err));
      }
    });
  };
  route("/segment", "segment");
  route("/track/init", "track_init");
  route("/track/step", "track_step");
  route("/v1/select", "select");

  app.get("/healthz", (_req, res) => {
    res.json({ status: "ok" });
  });
  return app;
}

export function serveHttp(drivers: DriverSet, host: string, port: number): Promise<() => void> {
  const app = makeApp(drivers);
  return new Promise((resolve) => {
    const server = app.listen(port, host, () => resolve(() => server.close()));
  });
}

export async function serveStdio(drivers: DriverSet): Promise<void> {
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  for await (const line of rl) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    let reply: object;
    try {
      const msg = JSON.parse(trimmed);
      const { op, ...body } = msg;
      reply = await dispatch(drivers, op, body);
    } catch (err) {
      reply = errorBody(err);
    }
    process.stdout.write(JSON.stringify(reply) + "\n");
  }
}
