/** zod schemas for every message of the segment/track/select wire protocol. */

import { z } from "zod";

export const rleMaskSchema = z.object({
  w: z.number().int().positive(),
  h: z.number().int().positive(),
  runs: z.array(z.number().int().nonnegative()).min(1),
});

export const segmentRequestSchema = z.object({
  image_png_b64: z.string().min(1),
  granularity: z.array(z.number().int().min(1).max(6)).min(1),
});

export const segmentResponseSchema = z.object({
  masks: z.array(rleMaskSchema),
});

export const trackInitRequestSchema = z.object({
  image_png_b64: z.string().min(1),
  masks: z.array(rleMaskSchema).min(1),
});

export const trackInitResponseSchema = z.object({
  session_id: z.string().min(1),
});

export const trackStepRequestSchema = z.object({
  session_id: z.string().min(1),
  image_png_b64: z.string().min(1),
});

export const trackStepResponseSchema = z.object({
  masks: z.array(rleMaskSchema),
  latency_ms: z.number().nonnegative(),
});

export const selectRequestSchema = z.object({
  image_png_b64: z.string().min(1),
  prompt: z.string().min(1),
});

export const selectResponseSchema = z.object({
  reply: z.string(),
});

export const errorResponseSchema = z.object({
  error: z.object({
    type: z.string(),
    message: z.string(),
  }),
});

export type SegmentRequest = z.infer<typeof segmentRequestSchema>;
export type SegmentResponse = z.infer<typeof segmentResponseSchema>;
export type TrackInitRequest = z.infer<typeof trackInitRequestSchema>;
export type TrackInitResponse = z.infer<typeof trackInitResponseSchema>;
export type TrackStepRequest = z.infer<typeof trackStepRequestSchema>;
export type TrackStepResponse = z.infer<typeof trackStepResponseSchema>;
export type SelectRequest = z.infer<typeof selectRequestSchema>;
export type SelectResponse = z.infer<typeof selectResponseSchema>;
