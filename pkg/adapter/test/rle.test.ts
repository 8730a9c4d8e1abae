import { describe, expect, it } from "vitest";

import { RleError, area, decode, disjoint, encode, normalize, validate } from "../src/rle";

function randomBits(n: number, seed: number): Uint8Array {
  // xorshift-ish deterministic bits
  const out = new Uint8Array(n);
  let state = seed || 1;
  for (let i = 0; i < n; i++) {
    state ^= state << 13;
    state ^= state >>> 17;
    state ^= state << 5;
    out[i] = (state >>> 0) % 3 === 0 ? 1 : 0;
  }
  return out;
}

describe("rle codec", () => {
  it("encodes an all-false mask as a single run", () => {
    expect(encode(new Uint8Array(4), 2, 2)).toEqual({ w: 2, h: 2, runs: [4] });
  });

  it("encodes a leading-true mask with a zero first run", () => {
    expect(encode(Uint8Array.from([1, 1, 1]), 3, 1)).toEqual({ w: 3, h: 1, runs: [0, 3] });
  });

  it("round-trips 500 random masks exactly", () => {
    for (let trial = 0; trial < 500; trial++) {
      const w = 1 + (trial % 17);
      const h = 1 + ((trial * 7) % 13);
      const bits = randomBits(w * h, trial + 1);
      const rle = encode(bits, w, h);
      expect(decode(rle)).toEqual(bits);
      expect(encode(decode(rle), w, h)).toEqual(rle);
    }
  });

  it("rejects run sums that do not cover the grid", () => {
    expect(() => validate({ w: 2, h: 2, runs: [3] })).toThrow(RleError);
  });

  it("rejects interior zero runs and negatives", () => {
    expect(() => validate({ w: 2, h: 2, runs: [2, 0, 2] })).toThrow(RleError);
    expect(() => validate({ w: 2, h: 2, runs: [-1, 5] })).toThrow(RleError);
  });

  it("normalize is idempotent", () => {
    const rle = encode(randomBits(36, 9), 6, 6);
    expect(normalize(normalize(rle))).toEqual(normalize(rle));
  });

  it("computes area from the true runs", () => {
    expect(area({ w: 4, h: 1, runs: [1, 2, 1] })).toBe(2);
    expect(area({ w: 2, h: 2, runs: [4] })).toBe(0);
  });

  it("detects overlap and dimension mismatches in disjoint()", () => {
    const a = encode(Uint8Array.from([1, 1, 0, 0]), 2, 2);
    const b = encode(Uint8Array.from([0, 0, 1, 1]), 2, 2);
    const c = encode(Uint8Array.from([0, 1, 1, 0]), 2, 2);
    expect(disjoint([a, b])).toBe(true);
    expect(disjoint([a, c])).toBe(false);
    expect(disjoint([a, { w: 3, h: 1, runs: [3] }])).toBe(false);
  });
});
