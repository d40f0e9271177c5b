/** DOM wiring for the authoring client.
 *
 * Layout: a paint/preview canvas on the left, unit and motion panels on
 * the right, a timeline scrubber below. All server interaction goes
 * through AuthoringStore, which enforces the revision rules.
 */

import { MotionApi, PatchOp, RigidKeyframe } from "./api.js";
import { bytesToBase64, emptyMask, maskArea, maskToPayload, rasterizeStroke } from "./mask.js";
import { upsertKeyframe, violatesFrameZero, zeroPose } from "./keyframes.js";
import { drawPreview, downloadBlob, Scrubber, unitColor } from "./preview.js";
import { AuthoringStore } from "./state.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const api = new MotionApi("");
let store: AuthoringStore;
let scrubber: Scrubber;

let width = 0;
let height = 0;
let painting = false;
let stroke: Array<{ x: number; y: number }> = [];
let paintMask = emptyMask(1, 1);
let selectedUnit = 0;
const rigidCurves = new Map<number, RigidKeyframe[]>(); // local mirror, unit 0 = camera

function canvas(): HTMLCanvasElement {
  return $("canvas") as HTMLCanvasElement;
}

function overlay(): HTMLCanvasElement {
  return $("overlay") as HTMLCanvasElement;
}

function ctx2d(c: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = c.getContext("2d");
  if (!ctx) throw new Error("no 2d context");
  return ctx;
}

// ---------------------------------------------------------------------------
// Session lifecycle

async function createFromDepthFile(file: File): Promise<void> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  const frames = parseInt(($("frames") as HTMLInputElement).value, 10) || 24;
  const manifest = {
    depth: { b64: bytesToBase64(bytes) },
    frame_count: frames,
  };
  const created = await api.createSession(manifest);
  await openSession(created.id);
}

async function openSession(id: string): Promise<void> {
  store = new AuthoringStore(api, {
    onState: (state) => {
      width = state.width;
      height = state.height;
      for (const c of [canvas(), overlay()]) {
        c.width = width;
        c.height = height;
      }
      renderUnitList();
      renderExportState();
      ($("session-label") as HTMLElement).textContent =
        `session ${state.id.slice(0, 8)} rev ${state.revision} ` +
        `(${state.width}x${state.height}, ${state.frame_count} frames)`;
      const slider = $("timeline") as HTMLInputElement;
      slider.max = String(state.frame_count - 1);
      void scrubber.show(Math.min(scrubber.frame, state.frame_count - 1));
    },
    onPreview: () => renderExportState(),
    onRejected: (rejection) => {
      flashRejection(`rejected: ${rejection.detail}`);
    },
    onRebase: (pending) => {
      const again = confirm(
        "Your edit was based on an outdated revision and the session has " +
          "been refreshed. Reapply the edit?",
      );
      if (again) void store.mutate(pending);
    },
    onOffline: (offline) => {
      $("offline-banner").style.display = offline ? "block" : "none";
    },
  });
  scrubber = new Scrubber(store, (frame, preview) => {
    if (preview) drawPreview(ctx2d(canvas()), width, height, preview);
    ($("timeline") as HTMLInputElement).value = String(frame);
    $("frame-label").textContent = `frame ${frame}`;
  });
  await store.open(id);
  paintMask = emptyMask(width, height);
  await scrubber.show(0);
}

// ---------------------------------------------------------------------------
// Painting

function canvasPos(ev: MouseEvent): { x: number; y: number } {
  const rect = overlay().getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * width,
    y: ((ev.clientY - rect.top) / rect.height) * height,
  };
}

function brushRadius(): number {
  return parseInt(($("brush-size") as HTMLInputElement).value, 10) || 6;
}

function paintCategory(): "drag" | "brush" {
  return ($("paint-category") as HTMLSelectElement).value as "drag" | "brush";
}

function drawOverlayMask(): void {
  const octx = ctx2d(overlay());
  octx.clearRect(0, 0, width, height);
  const img = octx.createImageData(width, height);
  for (let i = 0; i < paintMask.length; i++) {
    if (paintMask[i]) {
      img.data[i * 4] = 255;
      img.data[i * 4 + 1] = 200;
      img.data[i * 4 + 2] = 0;
      img.data[i * 4 + 3] = 120;
    }
  }
  octx.putImageData(img, 0, 0);
}

function flashRejection(message: string): void {
  const banner = $("rejection-banner");
  banner.textContent = message;
  banner.style.display = "block";
  const octx = ctx2d(overlay());
  octx.fillStyle = "rgba(255,0,0,0.35)";
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if (paintMask[y * width + x]) octx.fillRect(x, y, 1, 1);
    }
  }
  setTimeout(() => {
    banner.style.display = "none";
    paintMask = emptyMask(width, height);
    drawOverlayMask();
  }, 1500);
}

function wirePainting(): void {
  const el = overlay();
  el.addEventListener("mousedown", (ev) => {
    if (!store?.state) return;
    painting = true;
    stroke = [canvasPos(ev)];
  });
  el.addEventListener("mousemove", (ev) => {
    if (!painting) return;
    stroke.push(canvasPos(ev));
    rasterizeStroke(paintMask, width, height, stroke.slice(-2), brushRadius());
    drawOverlayMask();
  });
  window.addEventListener("mouseup", () => {
    if (!painting) return;
    painting = false;
    rasterizeStroke(paintMask, width, height, stroke, brushRadius());
    void submitPaintedUnit();
  });
}

async function submitPaintedUnit(): Promise<void> {
  if (maskArea(paintMask) === 0) return;
  const ok = await store.mutate([
    {
      op: "add_unit",
      mask: maskToPayload(paintMask, width, height),
      category: paintCategory(),
    },
  ]);
  if (ok) {
    paintMask = emptyMask(width, height);
    drawOverlayMask();
  }
  // on rejection the flashRejection handler clears the stroke
}

// ---------------------------------------------------------------------------
// Unit panel

function renderUnitList(): void {
  const list = $("unit-list");
  list.innerHTML = "";
  if (!store.state) return;
  for (const unit of store.state.units) {
    const row = document.createElement("div");
    row.className = "unit-row" + (unit.id === selectedUnit ? " selected" : "");
    const badge = document.createElement("span");
    badge.className = `badge badge-${unit.category}`;
    badge.textContent = unit.category;
    badge.style.background = unitColor(unit.id);
    const label = document.createElement("span");
    label.textContent = ` #${unit.id} (${unit.pixels}px)`;
    row.append(badge, label);
    if (unit.id > 0) {
      const missing =
        (unit.category === "drag" && !unit.has_rigid) ||
        (unit.category === "brush" && !unit.has_strength);
      if (missing) {
        const warn = document.createElement("span");
        warn.textContent = " needs motion";
        warn.className = "warn";
        row.append(warn);
      }
      const del = document.createElement("button");
      del.textContent = "remove";
      del.onclick = () => void store.mutate([{ op: "remove_unit", unit: unit.id }]);
      row.append(del);
      row.onclick = (ev) => {
        if (ev.target === del) return;
        selectedUnit = unit.id;
        renderUnitList();
        renderMotionEditor();
      };
    } else {
      row.onclick = () => {
        selectedUnit = 0;
        renderUnitList();
        renderMotionEditor();
      };
    }
    list.append(row);
  }
  renderMotionEditor();
}

// ---------------------------------------------------------------------------
// Motion editor (camera = target 0, drag units = their id)

function editorTarget(): { label: string; isCamera: boolean; isDrag: boolean; isBrush: boolean } {
  if (selectedUnit === 0) return { label: "camera", isCamera: true, isDrag: false, isBrush: false };
  const unit = store.state?.units.find((u) => u.id === selectedUnit);
  return {
    label: `unit #${selectedUnit}`,
    isCamera: false,
    isDrag: unit?.category === "drag",
    isBrush: unit?.category === "brush",
  };
}

function readPoseInputs(): RigidKeyframe {
  const val = (id: string) => parseFloat(($(id) as HTMLInputElement).value) || 0;
  return {
    frame: parseInt(($("kf-frame") as HTMLInputElement).value, 10) || 0,
    translation: [val("kf-tx"), val("kf-ty"), val("kf-tz")],
    rotation: [val("kf-rx"), val("kf-ry"), val("kf-rz")],
  };
}

function renderMotionEditor(): void {
  const target = editorTarget();
  $("editor-target").textContent = target.label;
  $("pose-editor").style.display = target.isCamera || target.isDrag ? "block" : "none";
  $("strength-editor").style.display = target.isBrush || target.isDrag ? "block" : "none";
  const curve = rigidCurves.get(selectedUnit) ?? [];
  $("kf-list").textContent = curve
    .map((k) => `f${k.frame}: t(${k.translation.join(",")}) r(${k.rotation.join(",")})`)
    .join("\n");
}

function wireMotionEditor(): void {
  $("kf-add").onclick = () => {
    const key = readPoseInputs();
    if (key.frame === 0 && violatesFrameZero([key])) {
      flashRejection("frame-0 keyframe must stay at the identity");
      return;
    }
    const current = rigidCurves.get(selectedUnit) ?? [zeroPose(0)];
    const curve = upsertKeyframe(current, key);
    rigidCurves.set(selectedUnit, curve);
    const ops: PatchOp[] =
      selectedUnit === 0
        ? [{ op: "set_camera", keyframes: curve }]
        : [{ op: "set_drag_keyframes", unit: selectedUnit, keyframes: curve }];
    void store.mutate(ops).then((ok) => {
      if (!ok) rigidCurves.delete(selectedUnit);
      renderMotionEditor();
    });
  };
  $("strength-apply").onclick = () => {
    const value = parseFloat(($("strength-value") as HTMLInputElement).value) || 0;
    if (selectedUnit === 0) return;
    void store.mutate([{ op: "set_strength", unit: selectedUnit, value }]);
  };
  ($("strength-value") as HTMLInputElement).oninput = () => {
    $("strength-label").textContent = ($("strength-value") as HTMLInputElement).value;
  };
}

// ---------------------------------------------------------------------------
// Export

function renderExportState(): void {
  const button = $("export") as HTMLButtonElement;
  const missing = store.missingScriptUnits();
  button.disabled = missing.length > 0;
  button.title =
    missing.length > 0
      ? `missing motion for unit(s) ${missing.join(", ")}`
      : "download the control tensor";
}

async function doExport(): Promise<void> {
  const tensor = await store.exportTensor();
  downloadBlob(tensor, `${store.sessionId}.ctrl`, "application/octet-stream");
  const provenance = await store.exportProvenance();
  downloadBlob(JSON.stringify(provenance, null, 2), `${store.sessionId}.provenance.json`, "application/json");
}

// ---------------------------------------------------------------------------

function wire(): void {
  ($("depth-file") as HTMLInputElement).onchange = (ev) => {
    const input = ev.target as HTMLInputElement;
    if (input.files?.[0]) void createFromDepthFile(input.files[0]);
  };
  ($("open-session") as HTMLButtonElement).onclick = () => {
    const id = ($("session-id") as HTMLInputElement).value.trim();
    if (id) void openSession(id);
  };
  ($("timeline") as HTMLInputElement).oninput = (ev) => {
    scrubber.stop();
    void scrubber.show(parseInt((ev.target as HTMLInputElement).value, 10));
  };
  ($("play") as HTMLButtonElement).onclick = () => {
    if (scrubber.playing) {
      scrubber.stop();
      $("play").textContent = "play";
    } else {
      scrubber.play();
      $("play").textContent = "pause";
    }
  };
  ($("export") as HTMLButtonElement).onclick = () => void doExport();
  wirePainting();
  wireMotionEditor();
}

window.addEventListener("DOMContentLoaded", wire);
