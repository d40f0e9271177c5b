/** Client-side authoring state.
 *
 * Mirrors the server session (units, script, revision) and owns the two
 * consistency rules the UI depends on:
 *
 *  - at most one mutation is in flight; later mutations queue behind it;
 *  - a preview is displayed only if it was computed at the current
 *    revision. Fetches started before a mutation landed resolve with an
 *    older revision stamp and are dropped, never rendered.
 */

import {
  InvariantError,
  MotionApi,
  OfflineError,
  PatchOp,
  PreviewFrame,
  SessionState,
  StaleRevisionError,
} from "./api.js";

export interface MutationRejection {
  ops: PatchOp[];
  detail: string;
}

export interface StoreEvents {
  onState?: (state: SessionState) => void;
  onPreview?: (frame: number, preview: PreviewFrame) => void;
  onRejected?: (rejection: MutationRejection) => void;
  /** 409 path: state was refetched; the UI should offer to reapply ops. */
  onRebase?: (pending: PatchOp[], state: SessionState) => void;
  onOffline?: (offline: boolean) => void;
}

const cacheKey = (revision: number, frame: number, stride: number) =>
  `${revision}:${frame}:${stride}`;

export class AuthoringStore {
  sessionId = "";
  revision = -1;
  state: SessionState | null = null;
  offline = false;

  private previewCache = new Map<string, PreviewFrame>();
  private inFlight: Promise<void> = Promise.resolve();
  private pendingFetches = new Map<string, Promise<PreviewFrame | null>>();

  constructor(
    private api: MotionApi,
    private events: StoreEvents = {},
    private stride = 4,
  ) {}

  async open(sessionId: string): Promise<void> {
    this.sessionId = sessionId;
    await this.refresh();
  }

  async refresh(): Promise<SessionState> {
    const state = await this.guard(() => this.api.getSession(this.sessionId));
    this.acceptState(state);
    return state;
  }

  private acceptState(state: SessionState): void {
    this.state = state;
    this.revision = state.revision;
    this.pruneCache();
    this.events.onState?.(state);
  }

  private pruneCache(): void {
    for (const key of this.previewCache.keys()) {
      if (!key.startsWith(`${this.revision}:`)) this.previewCache.delete(key);
    }
  }

  private async guard<T>(fn: () => Promise<T>): Promise<T> {
    try {
      const out = await fn();
      if (this.offline) {
        this.offline = false;
        this.events.onOffline?.(false);
      }
      return out;
    } catch (err) {
      if (err instanceof OfflineError && !this.offline) {
        this.offline = true;
        this.events.onOffline?.(true);
      }
      throw err;
    }
  }

  /** Serialized mutation entry point: one PATCH in flight at a time. */
  mutate(ops: PatchOp[]): Promise<boolean> {
    const run = this.inFlight.then(() => this.runMutation(ops));
    // keep the chain alive whether or not this mutation succeeds
    this.inFlight = run.then(
      () => undefined,
      () => undefined,
    );
    return run;
  }

  private async runMutation(ops: PatchOp[]): Promise<boolean> {
    try {
      const result = await this.guard(() =>
        this.api.patch(this.sessionId, this.revision, ops),
      );
      this.revision = result.revision;
      const state = await this.guard(() => this.api.getSession(this.sessionId));
      this.acceptState(state);
      return true;
    } catch (err) {
      if (err instanceof StaleRevisionError) {
        const state = await this.guard(() => this.api.getSession(this.sessionId));
        this.acceptState(state);
        this.events.onRebase?.(ops, state);
        return false;
      }
      if (err instanceof InvariantError) {
        this.events.onRejected?.({ ops, detail: err.detail });
        return false;
      }
      throw err;
    }
  }

  /** Cached preview lookup; only current-revision entries are served. */
  cachedPreview(frame: number): PreviewFrame | null {
    return this.previewCache.get(cacheKey(this.revision, frame, this.stride)) ?? null;
  }

  /**
   * Fetch one frame's preview. Resolves with null (and renders nothing)
   * when the response's revision no longer matches the store: a mutation
   * landed while the request was in the air.
   */
  async fetchPreview(frame: number): Promise<PreviewFrame | null> {
    const cached = this.cachedPreview(frame);
    if (cached) return cached;
    const key = cacheKey(this.revision, frame, this.stride);
    const pending = this.pendingFetches.get(key);
    if (pending) return pending;
    const fetching = this.doFetchPreview(key, frame);
    this.pendingFetches.set(key, fetching);
    try {
      return await fetching;
    } finally {
      this.pendingFetches.delete(key);
    }
  }

  private async doFetchPreview(key: string, frame: number): Promise<PreviewFrame | null> {
    const resp = await this.guard(() =>
      this.api.preview(this.sessionId, frame, frame, this.stride),
    );
    if (resp.revision !== this.revision) {
      return null; // stale: never rendered, never cached
    }
    const preview = resp.frames[0];
    this.previewCache.set(key, preview);
    this.events.onPreview?.(frame, preview);
    return preview;
  }

  /** Units whose category still lacks its required curve. */
  missingScriptUnits(): number[] {
    if (!this.state) return [];
    return this.state.units
      .filter(
        (u) =>
          (u.category === "drag" && !u.has_rigid) ||
          (u.category === "brush" && !u.has_strength),
      )
      .map((u) => u.id);
  }

  exportEnabled(): boolean {
    return this.state !== null && this.missingScriptUnits().length === 0;
  }

  /** Download the control tensor stream exactly as the server emits it. */
  async exportTensor(): Promise<ArrayBuffer> {
    return this.guard(() => this.api.exportTensor(this.sessionId));
  }

  async exportProvenance(): Promise<unknown> {
    return this.guard(() => this.api.exportProvenance(this.sessionId));
  }
}
