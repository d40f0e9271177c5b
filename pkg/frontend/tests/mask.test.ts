import { describe, expect, it } from "vitest";

import {
  base64ToBytes,
  bytesToBase64,
  emptyMask,
  maskArea,
  masksOverlap,
  maskToPayload,
  packBits,
  payloadToMask,
  rasterizeStroke,
  unpackBits,
} from "../src/mask.js";

describe("packbits encoding", () => {
  it("packs most-significant-bit first, matching the server", () => {
    // bits 1,0,1,1,0,0,1,0 -> 0b10110010 = 178
    const mask = Uint8Array.from([1, 0, 1, 1, 0, 0, 1, 0]);
    expect([...packBits(mask)]).toEqual([178]);
  });

  it("pads the final byte with zero bits", () => {
    const mask = Uint8Array.from([1, 1, 1]); // -> 0b11100000
    expect([...packBits(mask)]).toEqual([224]);
  });

  it("round trips through pack/unpack", () => {
    const mask = emptyMask(13, 7);
    for (let i = 0; i < mask.length; i += 3) mask[i] = 1;
    const back = unpackBits(packBits(mask), mask.length);
    expect([...back]).toEqual([...mask]);
  });

  it("round trips through base64", () => {
    const bytes = Uint8Array.from({ length: 300 }, (_, i) => (i * 37) % 256);
    expect([...base64ToBytes(bytesToBase64(bytes))]).toEqual([...bytes]);
  });

  it("round trips through the wire payload", () => {
    const mask = emptyMask(16, 12);
    mask[0] = 1;
    mask[5 * 16 + 3] = 1;
    mask[11 * 16 + 15] = 1;
    const payload = maskToPayload(mask, 16, 12);
    expect(payload.width).toBe(16);
    expect(payload.height).toBe(12);
    expect([...payloadToMask(payload)]).toEqual([...mask]);
  });
});

describe("stroke rasterization", () => {
  it("stamps a disk for a single point", () => {
    const mask = rasterizeStroke(emptyMask(21, 21), 21, 21, [{ x: 10, y: 10 }], 4);
    expect(mask[10 * 21 + 10]).toBe(1);
    expect(mask[10 * 21 + 14]).toBe(1); // on the radius
    expect(mask[10 * 21 + 15]).toBe(0); // outside
    const area = maskArea(mask);
    expect(area).toBeGreaterThan(Math.PI * 16 * 0.8);
    expect(area).toBeLessThan(Math.PI * 16 * 1.5);
  });

  it("fills along the stroke without gaps", () => {
    const mask = rasterizeStroke(
      emptyMask(40, 10),
      40,
      10,
      [
        { x: 2, y: 5 },
        { x: 37, y: 5 },
      ],
      2,
    );
    for (let x = 2; x <= 37; x++) expect(mask[5 * 40 + x]).toBe(1);
  });

  it("clips to the canvas bounds", () => {
    const mask = rasterizeStroke(emptyMask(10, 10), 10, 10, [{ x: 0, y: 0 }], 5);
    expect(maskArea(mask)).toBeGreaterThan(0);
    expect(mask.length).toBe(100);
  });

  it("detects overlap between masks", () => {
    const a = rasterizeStroke(emptyMask(20, 20), 20, 20, [{ x: 5, y: 5 }], 3);
    const b = rasterizeStroke(emptyMask(20, 20), 20, 20, [{ x: 7, y: 5 }], 3);
    const c = rasterizeStroke(emptyMask(20, 20), 20, 20, [{ x: 16, y: 16 }], 2);
    expect(masksOverlap(a, b)).toBe(true);
    expect(masksOverlap(a, c)).toBe(false);
  });
});
