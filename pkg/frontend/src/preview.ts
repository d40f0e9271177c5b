/** Preview rendering and timeline scrubbing. */

import type { PreviewFrame, PreviewPoint } from "./api.js";
import type { AuthoringStore } from "./state.js";

/** Deterministic unit colors, mirroring the server's palette. */
export function unitColor(unit: number): string {
  if (unit === 0) return "rgb(128,128,128)";
  const hue = ((unit * 0.61803398875) % 1.0) * 360;
  return `hsl(${hue.toFixed(1)}, 85%, 55%)`;
}

export function drawPreview(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  preview: PreviewFrame,
  pointSize = 2,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, width, height);
  const byUnit = new Map<number, PreviewPoint[]>();
  for (const p of preview.points) {
    let bucket = byUnit.get(p.unit);
    if (!bucket) byUnit.set(p.unit, (bucket = []));
    bucket.push(p);
  }
  for (const [unit, pts] of byUnit) {
    ctx.fillStyle = unitColor(unit);
    for (const p of pts) {
      ctx.fillRect(p.u - pointSize / 2, p.v - pointSize / 2, pointSize, pointSize);
    }
  }
}

export class Scrubber {
  frame = 0;
  playing = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private store: AuthoringStore,
    private onFrame: (frame: number, preview: PreviewFrame | null) => void,
    private fps = 8,
  ) {}

  frameCount(): number {
    return this.store.state?.frame_count ?? 0;
  }

  async show(frame: number): Promise<void> {
    this.frame = frame;
    const preview = await this.store.fetchPreview(frame);
    // a stale response resolves to null and must not repaint
    if (preview && this.frame === frame) this.onFrame(frame, preview);
  }

  play(): void {
    if (this.playing) return;
    this.playing = true;
    this.timer = setInterval(() => {
      const next = (this.frame + 1) % Math.max(1, this.frameCount());
      void this.show(next);
    }, 1000 / this.fps);
  }

  stop(): void {
    this.playing = false;
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

export function downloadBlob(data: ArrayBuffer | string, name: string, type: string): void {
  const blob = typeof data === "string" ? new Blob([data], { type }) : new Blob([data], { type });
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = name;
  a.click();
  URL.revokeObjectURL(url);
}
