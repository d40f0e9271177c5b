import { describe, expect, it } from "vitest";

import { MotionApi, PatchOp } from "../src/api.js";
import { AuthoringStore, MutationRejection } from "../src/state.js";
import { FakeServer } from "./fake.js";

const ADD_UNIT: PatchOp = {
  op: "add_unit",
  mask: { packbits_b64: "AA==", width: 16, height: 12 },
  category: "drag",
};

function makeStore(server: FakeServer, events = {}) {
  return new AuthoringStore(new MotionApi("http://fake", server.fetch), events);
}

describe("stale revision guard", () => {
  it("never renders a preview fetched before a mutation landed", async () => {
    const server = new FakeServer({ holdPreviews: true });
    const rendered: number[] = [];
    const store = makeStore(server, {
      onPreview: (frame: number) => rendered.push(frame),
    });
    await store.open("fake");

    // preview request leaves at revision 0 and is held by the server
    const pending = store.fetchPreview(0);
    await new Promise((r) => setTimeout(r, 0));
    expect(server.previewRequests.length).toBe(1);

    // a mutation is injected mid-fetch and bumps the revision
    await store.mutate([ADD_UNIT]);
    expect(store.revision).toBe(1);

    // the held response now resolves, stamped with the old revision
    server.previewRequests[0].release();
    const result = await pending;

    expect(result).toBeNull(); // stale: dropped
    expect(rendered).toEqual([]); // never rendered
    expect(store.cachedPreview(0)).toBeNull(); // never cached
  });

  it("renders and caches previews that match the current revision", async () => {
    const server = new FakeServer();
    const rendered: number[] = [];
    const store = makeStore(server, {
      onPreview: (frame: number) => rendered.push(frame),
    });
    await store.open("fake");
    const preview = await store.fetchPreview(3);
    expect(preview?.frame).toBe(3);
    expect(rendered).toEqual([3]);
    expect(store.cachedPreview(3)).not.toBeNull();
  });

  it("prunes cached previews from older revisions", async () => {
    const server = new FakeServer();
    const store = makeStore(server);
    await store.open("fake");
    await store.fetchPreview(0);
    expect(store.cachedPreview(0)).not.toBeNull();
    await store.mutate([ADD_UNIT]);
    expect(store.cachedPreview(0)).toBeNull();
  });

  it("deduplicates concurrent fetches of the same frame", async () => {
    const server = new FakeServer({ holdPreviews: true });
    const store = makeStore(server);
    await store.open("fake");
    const a = store.fetchPreview(2);
    const b = store.fetchPreview(2);
    await new Promise((r) => setTimeout(r, 0));
    expect(server.previewRequests.length).toBe(1);
    server.previewRequests[0].release();
    expect(await a).toEqual(await b);
  });
});

describe("mutation serialization", () => {
  it("sends at most one PATCH at a time", async () => {
    const server = new FakeServer();
    const gates: Array<() => void> = [];
    server.patchGate = () =>
      new Promise<void>((resolve) => {
        gates.push(resolve);
      });
    const store = makeStore(server);
    await store.open("fake");

    const first = store.mutate([ADD_UNIT]);
    const second = store.mutate([ADD_UNIT]);
    await new Promise((r) => setTimeout(r, 0));
    // only the first PATCH is on the wire; the second is queued client-side
    expect(server.patchCount).toBe(1);
    expect(server.maxConcurrentPatches).toBe(1);

    while (gates.length) gates.shift()!();
    await new Promise((r) => setTimeout(r, 0));
    while (gates.length) gates.shift()!();

    expect(await first).toBe(true);
    expect(await second).toBe(true);
    expect(server.patchCount).toBe(2);
    expect(server.maxConcurrentPatches).toBe(1);
    expect(store.revision).toBe(2);
  });

  it("refetches and asks to reapply on a revision conflict", async () => {
    const server = new FakeServer();
    const rebases: Array<{ pending: PatchOp[]; revision: number }> = [];
    const store = makeStore(server, {
      onRebase: (pending: PatchOp[], state: { revision: number }) =>
        rebases.push({ pending, revision: state.revision }),
    });
    await store.open("fake");
    server.state = { ...server.state, revision: 5 }; // another client moved on

    const ok = await store.mutate([ADD_UNIT]);
    expect(ok).toBe(false);
    expect(store.revision).toBe(5); // rebased onto the server state
    expect(rebases.length).toBe(1);
    expect(rebases[0].pending).toEqual([ADD_UNIT]);
    expect(rebases[0].revision).toBe(5);
  });

  it("surfaces invariant violations without touching the revision", async () => {
    const server = new FakeServer();
    const rejections: MutationRejection[] = [];
    const store = makeStore(server, {
      onRejected: (r: MutationRejection) => rejections.push(r),
    });
    await store.open("fake");
    server.nextPatchStatus = 422;

    const ok = await store.mutate([ADD_UNIT]);
    expect(ok).toBe(false);
    expect(store.revision).toBe(0);
    expect(rejections.length).toBe(1);
    expect(rejections[0].detail).toContain("overlap");
  });
});

describe("offline handling", () => {
  it("raises and clears the offline flag", async () => {
    const server = new FakeServer();
    let failNext = false;
    const flaky: typeof fetch = (input, init) => {
      if (failNext) return Promise.reject(new TypeError("fetch failed"));
      return server.fetch(input, init);
    };
    const transitions: boolean[] = [];
    const store = new AuthoringStore(new MotionApi("http://fake", flaky), {
      onOffline: (offline: boolean) => transitions.push(offline),
    });
    await store.open("fake");

    failNext = true;
    await expect(store.fetchPreview(0)).rejects.toThrow("network failure");
    expect(store.offline).toBe(true);

    failNext = false;
    await store.fetchPreview(0);
    expect(store.offline).toBe(false);
    expect(transitions).toEqual([true, false]);
  });
});

describe("export", () => {
  it("is disabled while any unit lacks its required curve", async () => {
    const server = new FakeServer();
    server.state.units = [
      { id: 0, category: "borderland", pixels: 100 },
      { id: 1, category: "drag", pixels: 10, has_rigid: false, has_strength: false },
      { id: 2, category: "brush", pixels: 10, has_rigid: false, has_strength: true },
    ];
    const store = makeStore(server);
    await store.open("fake");
    expect(store.exportEnabled()).toBe(false);
    expect(store.missingScriptUnits()).toEqual([1]);

    server.state.units[1].has_rigid = true;
    await store.refresh();
    expect(store.exportEnabled()).toBe(true);
  });

  it("passes the tensor stream through byte-for-byte", async () => {
    const server = new FakeServer();
    const store = makeStore(server);
    await store.open("fake");
    const bytes = new Uint8Array(await store.exportTensor());
    expect([...bytes]).toEqual([...server.exportBytes]);
    expect(String.fromCharCode(...bytes.slice(0, 4))).toBe("CTRL");
  });
});
