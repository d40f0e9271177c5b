/** Typed client for the motionforge session REST API. */

export interface MaskPayload {
  packbits_b64: string;
  width: number;
  height: number;
}

export interface UnitInfo {
  id: number;
  category: "borderland" | "drag" | "brush";
  pixels: number;
  has_rigid?: boolean;
  has_strength?: boolean;
}

export interface SessionState {
  id: string;
  revision: number;
  frame_count: number;
  width: number;
  height: number;
  units: UnitInfo[];
  camera_keyframes: number;
  masks?: MaskPayload[];
}

export interface RigidKeyframe {
  frame: number;
  rotation: [number, number, number]; // axis-angle, radians
  translation: [number, number, number];
}

export interface StrengthKeyframe {
  frame: number;
  value: number;
}

export type PatchOp =
  | { op: "add_unit"; mask: MaskPayload; category: "drag" | "brush" }
  | { op: "remove_unit"; unit: number }
  | { op: "set_category"; unit: number; category: "drag" | "brush" }
  | { op: "set_drag_keyframes"; unit: number; keyframes: RigidKeyframe[] }
  | { op: "set_strength"; unit: number; value?: number; keyframes?: StrengthKeyframe[] }
  | { op: "set_camera"; keyframes: RigidKeyframe[] };

export interface PatchResult {
  revision: number;
  diff: Record<string, unknown>;
}

export interface PreviewPoint {
  unit: number;
  category: number;
  u: number;
  v: number;
}

export interface PreviewFrame {
  frame: number;
  points: PreviewPoint[];
  raster_png_b64?: string;
}

export interface PreviewResponse {
  revision: number;
  frames: PreviewFrame[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

/** 409: the patch was based on a revision the server has moved past. */
export class StaleRevisionError extends ApiError {
  constructor(detail: string) {
    super(409, detail);
    this.name = "StaleRevisionError";
  }
}

/** 422: the patch would violate a session invariant (e.g. overlap). */
export class InvariantError extends ApiError {
  constructor(detail: string) {
    super(422, detail);
    this.name = "InvariantError";
  }
}

/** The fetch itself failed: server unreachable. */
export class OfflineError extends Error {
  constructor(public cause: unknown) {
    super("network failure");
    this.name = "OfflineError";
  }
}

async function detail(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    return typeof body.detail === "string" ? body.detail : JSON.stringify(body);
  } catch {
    return resp.statusText;
  }
}

export class MotionApi {
  constructor(
    private base: string = "",
    private fetchImpl: typeof fetch = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.base}${path}`, init);
    } catch (err) {
      throw new OfflineError(err);
    }
    if (resp.ok) return resp;
    const d = await detail(resp);
    if (resp.status === 409) throw new StaleRevisionError(d);
    if (resp.status === 422) throw new InvariantError(d);
    throw new ApiError(resp.status, d);
  }

  async createSession(manifest: unknown): Promise<{ id: string; revision: number }> {
    const resp = await this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(manifest),
    });
    return resp.json();
  }

  async getSession(id: string, includeMasks = false): Promise<SessionState> {
    const q = includeMasks ? "?include_masks=1" : "";
    return (await this.request(`/sessions/${id}${q}`)).json();
  }

  async patch(id: string, baseRevision: number, ops: PatchOp[]): Promise<PatchResult> {
    const resp = await this.request(`/sessions/${id}`, {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ base_revision: baseRevision, ops }),
    });
    return resp.json();
  }

  async preview(
    id: string,
    from: number,
    to: number,
    stride = 4,
    signal?: AbortSignal,
  ): Promise<PreviewResponse> {
    const resp = await this.request(
      `/sessions/${id}/preview?from=${from}&to=${to}&stride=${stride}`,
      { signal },
    );
    return resp.json();
  }

  /** The raw "CTRL" byte stream, unmodified. */
  async exportTensor(id: string): Promise<ArrayBuffer> {
    return (await this.request(`/sessions/${id}/export`)).arrayBuffer();
  }

  async exportProvenance(id: string): Promise<unknown> {
    return (await this.request(`/sessions/${id}/export/provenance`)).json();
  }

  async dump(id: string): Promise<{ manifest: unknown; script: unknown }> {
    return (await this.request(`/sessions/${id}/dump`)).json();
  }
}
