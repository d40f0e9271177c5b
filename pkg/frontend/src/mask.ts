/** Stroke rasterization and the wire encoding for unit masks.
 *
 * Masks travel as packed bits (numpy packbits order: the first pixel is
 * the most significant bit of the first byte), base64-encoded.
 */

import type { MaskPayload } from "./api.js";

export type Mask = Uint8Array; // row-major, 0/1 per pixel

export function emptyMask(width: number, height: number): Mask {
  return new Uint8Array(width * height);
}

/** Stamp a round brush along a polyline of canvas points. */
export function rasterizeStroke(
  mask: Mask,
  width: number,
  height: number,
  stroke: Array<{ x: number; y: number }>,
  radius: number,
): Mask {
  const r2 = radius * radius;
  const stamp = (cx: number, cy: number) => {
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) mask[y * width + x] = 1;
      }
    }
  };
  if (stroke.length === 1) {
    stamp(stroke[0].x, stroke[0].y);
    return mask;
  }
  for (let i = 1; i < stroke.length; i++) {
    const a = stroke[i - 1];
    const b = stroke[i];
    const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
    for (let s = 0; s <= steps; s++) {
      const t = s / steps;
      stamp(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
    }
  }
  return mask;
}

export function maskArea(mask: Mask): number {
  let n = 0;
  for (const v of mask) if (v) n++;
  return n;
}

export function masksOverlap(a: Mask, b: Mask): boolean {
  const n = Math.min(a.length, b.length);
  for (let i = 0; i < n; i++) if (a[i] && b[i]) return true;
  return false;
}

export function packBits(mask: Mask): Uint8Array {
  const out = new Uint8Array(Math.ceil(mask.length / 8));
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) out[i >> 3] |= 0x80 >> (i & 7);
  }
  return out;
}

export function unpackBits(bytes: Uint8Array, count: number): Mask {
  const out = new Uint8Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = (bytes[i >> 3] >> (7 - (i & 7))) & 1;
  }
  return out;
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export function base64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

export function maskToPayload(mask: Mask, width: number, height: number): MaskPayload {
  return { packbits_b64: bytesToBase64(packBits(mask)), width, height };
}

export function payloadToMask(payload: MaskPayload): Mask {
  return unpackBits(base64ToBytes(payload.packbits_b64), payload.width * payload.height);
}
