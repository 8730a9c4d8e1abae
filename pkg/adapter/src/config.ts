/**
 * Adapter configuration, loadable from YAML with environment overrides.
 *
 * Model identifiers select registered drivers; the granularity mapping
 * translates the pipeline's abstract levels 1..6 into whatever knob the
 * wrapped segmenter actually has. Credentials are referenced by env-var
 * name, never stored in the file.
 */

import * as fs from "fs";
import * as YAML from "yaml";
import { z } from "zod";

export const adapterConfigSchema = z.object({
  segmenter: z.object({
    model: z.string().default("demo-grid"),
    granularity_mapping: z.record(z.string(), z.number()).default({
      "1": 2, "2": 3, "3": 4, "4": 5, "5": 6, "6": 8,
    }),
    options: z.record(z.string(), z.any()).default({}),
  }).prefault({}),
  tracker: z.object({
    model: z.string().default("identity"),
    options: z.record(z.string(), z.any()).default({}),
  }).prefault({}),
  vlm: z.object({
    model: z.string().default("canned"),
    endpoint_url: z.string().default(""),
    credentials_env: z.string().default("VLM_API_KEY"),
    options: z.record(z.string(), z.any()).default({}),
  }).prefault({}),
  device: z.string().default("cpu"),
  replay_transcript: z.string().optional(),
});

export type AdapterConfig = z.infer<typeof adapterConfigSchema>;

export class ConfigError extends Error {}

export function loadConfig(path?: string): AdapterConfig {
  let raw: unknown = {};
  if (path) {
    if (!fs.existsSync(path)) throw new ConfigError(`config file not found: ${path}`);
    raw = YAML.parse(fs.readFileSync(path, "utf8")) ?? {};
  }
  const parsed = adapterConfigSchema.safeParse(raw);
  if (!parsed.success) {
    throw new ConfigError(`invalid config: ${parsed.error.message}`);
  }
  const cfg = parsed.data;
  if (process.env.ADAPTER_SEGMENTER_MODEL) cfg.segmenter.model = process.env.ADAPTER_SEGMENTER_MODEL;
  if (process.env.ADAPTER_TRACKER_MODEL) cfg.tracker.model = process.env.ADAPTER_TRACKER_MODEL;
  if (process.env.ADAPTER_VLM_MODEL) cfg.vlm.model = process.env.ADAPTER_VLM_MODEL;
  if (process.env.ADAPTER_VLM_ENDPOINT) cfg.vlm.endpoint_url = process.env.ADAPTER_VLM_ENDPOINT;
  if (process.env.ADAPTER_REPLAY_TRANSCRIPT) cfg.replay_transcript = process.env.ADAPTER_REPLAY_TRANSCRIPT;
  const levels = Object.keys(cfg.segmenter.granularity_mapping);
  for (let level = 1; level <= 6; level++) {
    if (!levels.includes(String(level))) {
      throw new ConfigError(`granularity_mapping must cover levels 1..6, missing ${level}`);
    }
  }
  return cfg;
}
