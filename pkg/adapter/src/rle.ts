/**
 * Run-length mask codec matching the wire format:
 * {"w": int, "h": int, "runs": [int, ...]} with alternating run lengths,
 * row-major, starting with the false run (a leading 0 means the mask starts
 * with true pixels).
 */

export interface RleMask {
  w: number;
  h: number;
  runs: number[];
}

export class RleError extends Error {}

export function decode(rle: RleMask): Uint8Array {
  validate(rle);
  const out = new Uint8Array(rle.w * rle.h);
  let pos = 0;
  let value = 0;
  for (const run of rle.runs) {
    if (value) out.fill(1, pos, pos + run);
    pos += run;
    value ^= 1;
  }
  return out;
}

export function encode(bits: Uint8Array, w: number, h: number): RleMask {
  if (bits.length !== w * h) {
    throw new RleError(`bit buffer ${bits.length} != ${w}x${h}`);
  }
  const runs: number[] = [];
  let value = 0;
  let run = 0;
  if (bits.length > 0 && bits[0]) runs.push(0), (value = 1);
  for (const b of bits) {
    const v = b ? 1 : 0;
    if (v === value) {
      run += 1;
    } else {
      runs.push(run);
      run = 1;
      value = v;
    }
  }
  runs.push(run);
  return { w, h, runs };
}

export function validate(rle: RleMask): void {
  if (!Number.isInteger(rle.w) || !Number.isInteger(rle.h) || rle.w <= 0 || rle.h <= 0) {
    throw new RleError(`bad dimensions ${rle.w}x${rle.h}`);
  }
  if (!Array.isArray(rle.runs) || rle.runs.length === 0) {
    throw new RleError("empty run stream");
  }
  let total = 0;
  rle.runs.forEach((r, i) => {
    if (!Number.isInteger(r) || r < 0) throw new RleError(`bad run at ${i}: ${r}`);
    if (r === 0 && i > 0) throw new RleError(`zero-length run at ${i}`);
    total += r;
  });
  if (total !== rle.w * rle.h) {
    throw new RleError(`runs sum to ${total}, expected ${rle.w * rle.h}`);
  }
}

/** Canonical form: decode + re-encode, collapsing representation quirks. */
export function normalize(rle: RleMask): RleMask {
  return encode(decode(rle), rle.w, rle.h);
}

export function area(rle: RleMask): number {
  let total = 0;
  rle.runs.forEach((r, i) => {
    if (i % 2 === 1) total += r;
  });
  return total;
}

export function disjoint(masks: RleMask[]): boolean {
  if (masks.length < 2) return true;
  const { w, h } = masks[0];
  const count = new Uint16Array(w * h);
  for (const m of masks) {
    if (m.w !== w || m.h !== h) return false;
    const bits = decode(m);
    for (let i = 0; i < bits.length; i++) {
      if (bits[i] && ++count[i] > 1) return false;
    }
  }
  return true;
}
