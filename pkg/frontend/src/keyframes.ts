/** Keyframe curve editing helpers: 6-DOF poses (translation + axis-angle)
 * and scalar strength values, kept sorted by frame. */

import type { RigidKeyframe, StrengthKeyframe } from "./api.js";

export function zeroPose(frame: number): RigidKeyframe {
  return { frame, rotation: [0, 0, 0], translation: [0, 0, 0] };
}

export function upsertKeyframe<K extends { frame: number }>(curve: K[], key: K): K[] {
  const out = curve.filter((k) => k.frame !== key.frame);
  out.push(key);
  out.sort((a, b) => a.frame - b.frame);
  return out;
}

export function removeKeyframe<K extends { frame: number }>(curve: K[], frame: number): K[] {
  return curve.filter((k) => k.frame !== frame);
}

export function clampCurve<K extends { frame: number }>(curve: K[], frameCount: number): K[] {
  return curve.filter((k) => k.frame >= 0 && k.frame < frameCount);
}

/** Frame-0 entries must be the identity / zero; the server enforces the
 * same rule, this keeps the editor from building doomed patches. */
export function violatesFrameZero(curve: RigidKeyframe[]): boolean {
  const first = curve.find((k) => k.frame === 0);
  if (!first) return false;
  return (
    first.rotation.some((c) => c !== 0) || first.translation.some((c) => c !== 0)
  );
}

export function strengthViolatesFrameZero(curve: StrengthKeyframe[]): boolean {
  const first = curve.find((k) => k.frame === 0);
  return first !== undefined && first.value !== 0;
}

/** Linear interpolation of the strength curve (display only). */
export function strengthAt(curve: StrengthKeyframe[], frame: number): number {
  if (curve.length === 0) return 0;
  const sorted = [...curve].sort((a, b) => a.frame - b.frame);
  if (frame <= sorted[0].frame) return sorted[0].frame === frame ? sorted[0].value : 0;
  let prev = sorted[0];
  for (const k of sorted.slice(1)) {
    if (k.frame === frame) return k.value;
    if (k.frame > frame) {
      const t = (frame - prev.frame) / (k.frame - prev.frame);
      return prev.value * (1 - t) + k.value * t;
    }
    prev = k;
  }
  return sorted[sorted.length - 1].value;
}
