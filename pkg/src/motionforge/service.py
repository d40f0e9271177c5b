"""HTTP authoring service: upload a scene, paint units, keyframe motion,
preview the control signal live, and export the tensor.

Sessions hold an immutable scene plus a mutable partition/script guarded by
optimistic concurrency: every PATCH names the revision it was based on and
is rejected with 409 when stale. Accepted patches apply atomically (all ops
or none) and bump the revision by exactly 1. When a state directory is
configured, each session is persisted as a JSON-lines patch log and
replayed on startup.

REST surface:
    POST  /sessions                      create from a scene manifest
    GET   /sessions/{id}                 state summary (units, revision)
    PATCH /sessions/{id}                 {"base_revision": r, "ops": [...]}
    GET   /sessions/{id}/preview?from=&to=&raster=&stride=
    GET   /sessions/{id}/preview/{frame}.png
    GET   /sessions/{id}/export          "CTRL" tensor stream
    GET   /sessions/{id}/export/provenance
    GET   /sessions/{id}/dump            self-contained manifest + script
"""

from __future__ import annotations

import base64
import io
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response

from . import __version__
from .compose import ControlTensor, MotionScript, compose, compose_frame, render_preview
from .errors import MissingUnitScript, MotionForgeError
from .geometry import CameraIntrinsics, RigidTransform
from .scene import (
    CATEGORY_DRAG,
    SceneDomain,
    build_partition,
    category_code,
    category_name,
    depth_from_bytes,
    mask_from_payload,
    mask_to_payload,
    scene_from_depth,
)

MAX_UPLOAD_BYTES = 64 * 1024 * 1024
DEFAULT_FRAME_COUNT = 24
DEFAULT_PREVIEW_STRIDE = 4


@dataclass
class Session:
    """Authoring state for one scene. Mutated only under its lock."""

    id: str
    scene: SceneDomain
    frame_count: int
    depth_blob: bytes
    intrinsics: dict
    normalize: bool
    masks: list = field(default_factory=list)
    categories: list = field(default_factory=list)   # per foreground unit, 1/2
    camera: list = field(default_factory=list)       # rigid keyframes (JSON form)
    unit_rigids: dict = field(default_factory=dict)  # unit id -> keyframes
    unit_strengths: dict = field(default_factory=dict)
    revision: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def partition(self):
        return build_partition(self.scene, self.masks, self.categories)

    def script(self) -> MotionScript:
        doc = {"frame_count": self.frame_count, "camera": self.camera, "units": {}}
        for u, curve in self.unit_rigids.items():
            doc["units"].setdefault(str(u), {})["rigid"] = curve
        for u, curve in self.unit_strengths.items():
            doc["units"].setdefault(str(u), {})["strength"] = curve
        return MotionScript.from_json(doc)

    def unit_table(self):
        counts = [int(np.count_nonzero(m)) for m in self.masks]
        table = [{"id": 0, "category": "borderland",
                  "pixels": int(self.scene.valid_count - sum(counts))}]
        for i, (count, cat) in enumerate(zip(counts, self.categories), start=1):
            table.append({
                "id": i,
                "category": category_name(cat),
                "pixels": count,
                "has_rigid": i in self.unit_rigids,
                "has_strength": i in self.unit_strengths,
            })
        return table

    def state_doc(self, include_masks: bool = False) -> dict:
        doc = {
            "id": self.id,
            "revision": self.revision,
            "frame_count": self.frame_count,
            "width": self.scene.width,
            "height": self.scene.height,
            "units": self.unit_table(),
            "camera_keyframes": len(self.camera),
        }
        if include_masks:
            doc["masks"] = [mask_to_payload(m) for m in self.masks]
        return doc

    def manifest_doc(self) -> dict:
        """Self-contained manifest reproducing this session's scene and units."""
        return {
            "depth": {"b64": base64.b64encode(self.depth_blob).decode("ascii")},
            "intrinsics": self.intrinsics,
            "normalize": self.normalize,
            "units": [
                {"mask": mask_to_payload(m), "category": category_name(c)}
                for m, c in zip(self.masks, self.categories)
            ],
        }


def _http_error(status: int, detail: str):
    raise HTTPException(status_code=status, detail=detail)


class SessionStore:
    def __init__(self, state_dir=None, scene_dir=None):
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.state_dir = Path(state_dir) if state_dir else None
        self.scene_dir = Path(scene_dir) if scene_dir else None
        if self.state_dir:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._replay_all()

    # -- construction ------------------------------------------------------

    def _build_session(self, manifest: dict, session_id: str) -> Session:
        if not isinstance(manifest, dict) or "depth" not in manifest:
            _http_error(400, "manifest must be a JSON object with a 'depth' entry")
        depth_ref = manifest["depth"]
        try:
            if isinstance(depth_ref, dict):
                blob = base64.b64decode(depth_ref["b64"])
            else:
                path = Path(depth_ref)
                if not path.is_absolute():
                    if self.scene_dir is None:
                        _http_error(400, "manifest references a file but the service "
                                         "has no --scene-dir")
                    path = self.scene_dir / path
                blob = path.read_bytes()
            depth = depth_from_bytes(blob)
        except HTTPException:
            raise
        except (OSError, KeyError, ValueError, MotionForgeError) as e:
            _http_error(400, f"cannot load depth: {e}")
        h, w = depth.shape
        intr = manifest.get("intrinsics")
        normalize = bool(manifest.get("normalize", True))
        try:
            if intr is None:
                intrinsics = CameraIntrinsics.default_for(w, h)
                intr = intrinsics.to_dict()
            else:
                intrinsics = CameraIntrinsics(
                    fx=float(intr["fx"]), fy=float(intr["fy"]),
                    cx=float(intr["cx"]), cy=float(intr["cy"]),
                    width=int(intr.get("width", w)), height=int(intr.get("height", h)))
            if (intrinsics.width, intrinsics.height) != (w, h):
                raise MotionForgeError("DimensionMismatch: intrinsics dims != depth dims")
            scene = scene_from_depth(depth, intrinsics, normalize=normalize)
        except (KeyError, ValueError, MotionForgeError) as e:
            _http_error(400, str(e) if "DimensionMismatch" in str(e)
                        else f"bad manifest: {e}")
        session = Session(
            id=session_id, scene=scene,
            frame_count=int(manifest.get("frame_count", DEFAULT_FRAME_COUNT)),
            depth_blob=blob, intrinsics=intr, normalize=normalize)
        for entry in manifest.get("units", []):
            mask = mask_from_payload(entry["mask"], (h, w)) if isinstance(entry["mask"], dict) \
                else None
            if mask is None:
                _http_error(400, "manifest units must carry inline masks")
            session.masks.append(mask)
            session.categories.append(category_code(entry.get("category", "drag")))
        try:
            session.partition()  # validate disjointness up front
        except MotionForgeError as e:
            _http_error(400, str(e))
        return session

    def create(self, manifest: dict) -> Session:
        session_id = uuid.uuid4().hex
        session = self._build_session(manifest, session_id)
        with self._lock:
            self.sessions[session_id] = session
        self._log(session_id, {"event": "create", "manifest": manifest})
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self.sessions.get(session_id)
        if session is None:
            _http_error(404, f"no session {session_id}")
        return session

    # -- persistence -------------------------------------------------------

    def _log_path(self, session_id: str) -> Path:
        return self.state_dir / f"{session_id}.jsonl"

    def _log(self, session_id: str, record: dict):
        if not self.state_dir:
            return
        record = dict(record)
        with open(self._log_path(session_id), "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def _replay_all(self):
        for path in sorted(self.state_dir.glob("*.jsonl")):
            session_id = path.stem
            session = None
            for line in path.read_text().splitlines():
                record = json.loads(line)
                if record["event"] == "create":
                    session = self._build_session(record["manifest"], session_id)
                elif record["event"] == "patch" and session is not None:
                    _apply_ops(session, record["ops"])
                    session.revision += 1
            if session is not None:
                self.sessions[session_id] = session


# ---------------------------------------------------------------------------
# Patch operations


def _require_unit(session: Session, unit) -> int:
    u = int(unit)
    if not (1 <= u <= len(session.masks)):
        raise MotionForgeError(f"unknown unit {u}")
    return u


def _op_add_unit(session: Session, op: dict):
    mask = mask_from_payload(op["mask"], (session.scene.height, session.scene.width))
    session.masks.append(mask)
    session.categories.append(category_code(op.get("category", "drag")))
    session.partition()  # raises on overlap/empty before commit


def _op_remove_unit(session: Session, op: dict):
    u = _require_unit(session, op["unit"])
    session.masks.pop(u - 1)
    session.categories.pop(u - 1)

    def shift(curves: dict) -> dict:
        out = {}
        for k, v in curves.items():
            if k == u:
                continue
            out[k - 1 if k > u else k] = v
        return out

    session.unit_rigids = shift(session.unit_rigids)
    session.unit_strengths = shift(session.unit_strengths)


def _op_set_category(session: Session, op: dict):
    u = _require_unit(session, op["unit"])
    session.categories[u - 1] = category_code(op["category"])


def _op_set_drag_keyframes(session: Session, op: dict):
    u = _require_unit(session, op["unit"])
    if session.categories[u - 1] != category_code("drag"):
        raise MotionForgeError(f"unit {u} is not a drag unit")
    session.unit_rigids[u] = list(op["keyframes"])


def _op_set_strength(session: Session, op: dict):
    u = _require_unit(session, op["unit"])
    if "value" in op:
        session.unit_strengths[u] = float(op["value"])
    else:
        session.unit_strengths[u] = list(op["keyframes"])


def _op_set_camera(session: Session, op: dict):
    session.camera = list(op["keyframes"])


_OPS = {
    "add_unit": _op_add_unit,
    "remove_unit": _op_remove_unit,
    "set_category": _op_set_category,
    "set_drag_keyframes": _op_set_drag_keyframes,
    "set_strength": _op_set_strength,
    "set_camera": _op_set_camera,
}


def _apply_ops(session: Session, ops: list):
    for op in ops:
        kind = op.get("op")
        handler = _OPS.get(kind)
        if handler is None:
            raise MotionForgeError(f"unknown op {kind!r}")
        handler(session, op)
    session.script()  # keyframe ranges, frame-0 pins


def _diff_summary(before: Session, after: Session, ops: list) -> dict:
    return {
        "ops_applied": [op.get("op") for op in ops],
        "unit_count": len(after.masks),
        "units_added": max(0, len(after.masks) - len(before.masks)),
        "units_removed": max(0, len(before.masks) - len(after.masks)),
        "camera_updated": any(op.get("op") == "set_camera" for op in ops),
    }


def _snapshot(session: Session) -> Session:
    return Session(
        id=session.id, scene=session.scene, frame_count=session.frame_count,
        depth_blob=session.depth_blob, intrinsics=session.intrinsics,
        normalize=session.normalize,
        masks=list(session.masks), categories=list(session.categories),
        camera=json.loads(json.dumps(session.camera)),
        unit_rigids={k: json.loads(json.dumps(v)) for k, v in session.unit_rigids.items()},
        unit_strengths={k: json.loads(json.dumps(v)) for k, v in session.unit_strengths.items()},
        revision=session.revision)


# ---------------------------------------------------------------------------
# App


def create_app(state_dir=None, scene_dir=None, ui_dir=None) -> FastAPI:
    store = SessionStore(state_dir=state_dir, scene_dir=scene_dir)
    app = FastAPI(title="motionforge", version=__version__)
    app.state.store = store

    @app.middleware("http")
    async def limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > MAX_UPLOAD_BYTES:
            return Response(status_code=413, content="payload exceeds 64 MiB")
        return await call_next(request)

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.body()
        if len(body) > MAX_UPLOAD_BYTES:
            _http_error(413, "payload exceeds 64 MiB")
        try:
            manifest = json.loads(body)
        except json.JSONDecodeError as e:
            _http_error(400, f"body is not valid JSON: {e}")
        session = store.create(manifest)
        return {"id": session.id, "revision": session.revision}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str, include_masks: int = 0):
        return store.get(session_id).state_doc(include_masks=bool(include_masks))

    @app.patch("/sessions/{session_id}")
    def patch_session(session_id: str, envelope: dict):
        session = store.get(session_id)
        if "base_revision" not in envelope:
            _http_error(422, "envelope must carry base_revision")
        ops = envelope.get("ops", [])
        if not isinstance(ops, list) or not ops:
            _http_error(422, "envelope must carry a non-empty ops list")
        with session.lock:
            if int(envelope["base_revision"]) != session.revision:
                _http_error(409, f"revision conflict: base {envelope['base_revision']}, "
                                 f"current {session.revision}")
            candidate = _snapshot(session)
            try:
                _apply_ops(candidate, ops)
            except (MotionForgeError, KeyError, ValueError, TypeError) as e:
                _http_error(422, str(e))
            candidate.revision = session.revision + 1
            candidate.lock = session.lock
            with store._lock:
                store.sessions[session_id] = candidate
            store._log(session_id, {"event": "patch", "ops": ops})
            return {"revision": candidate.revision,
                    "diff": _diff_summary(session, candidate, ops)}

    def _compose_session(session: Session):
        partition = session.partition()
        script = session.script()
        script.validate_against(partition)
        return compose(session.scene, partition, script)

    @app.get("/sessions/{session_id}/preview")
    def preview(session_id: str,
                from_: int = Query(0, alias="from"),
                to: int | None = None,
                raster: int = 0,
                stride: int = DEFAULT_PREVIEW_STRIDE):
        session = store.get(session_id)
        last = session.frame_count - 1
        to = last if to is None else to
        if not (0 <= from_ <= to <= last):
            _http_error(416, f"frame range [{from_}, {to}] outside [0, {last}]")
        partition = session.partition()
        script = session.script()
        frames = []
        for t in range(from_, to + 1):
            rigids = [script.unit_rigid_at(p, t) if partition.categories[p] == CATEGORY_DRAG
                      else RigidTransform.identity()
                      for p in range(partition.unit_count)]
            strengths = [0.0 if p == 0 else script.unit_strength_at(p, t)
                         for p in range(partition.unit_count)]
            channels = compose_frame(session.scene, partition, script.camera_at(t),
                                     rigids, strengths)
            tensor = ControlTensor(channels[None, ...])
            pf = render_preview(tensor, 0, stride=stride, raster=bool(raster))
            frame_doc = {"frame": t, "points": pf.points}
            if raster:
                from PIL import Image

                buf = io.BytesIO()
                Image.fromarray(pf.raster).save(buf, format="PNG")
                frame_doc["raster_png_b64"] = base64.b64encode(buf.getvalue()).decode("ascii")
            frames.append(frame_doc)
        return {"revision": session.revision, "frames": frames}

    @app.get("/sessions/{session_id}/preview/{frame}.png")
    def preview_png(session_id: str, frame: int, stride: int = 1):
        session = store.get(session_id)
        if not (0 <= frame < session.frame_count):
            _http_error(416, f"frame {frame} outside [0, {session.frame_count - 1}]")
        doc = preview(session_id, from_=frame, to=frame, raster=1, stride=stride)
        png = base64.b64decode(doc["frames"][0]["raster_png_b64"])
        return Response(content=png, media_type="image/png",
                        headers={"X-Revision": str(doc["revision"])})

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        session = store.get(session_id)
        try:
            tensor = _compose_session(session)
        except MissingUnitScript as e:
            _http_error(422, f"script incomplete: units {e.units} missing curves")
        except MotionForgeError as e:
            _http_error(422, str(e))
        return Response(content=tensor.to_bytes(),
                        media_type="application/octet-stream",
                        headers={"X-Revision": str(session.revision),
                                 "Content-Disposition":
                                     f'attachment; filename="{session_id}.ctrl"'})

    @app.get("/sessions/{session_id}/export/provenance")
    def export_provenance(session_id: str):
        session = store.get(session_id)
        try:
            script = session.script()
            script.validate_against(session.partition())
        except MissingUnitScript as e:
            _http_error(422, f"script incomplete: units {e.units} missing curves")
        except MotionForgeError as e:
            _http_error(422, str(e))
        return {
            "session": session.id,
            "revision": session.revision,
            "frame_count": session.frame_count,
            "units": session.unit_table(),
            "script": script.to_json(),
        }

    @app.get("/sessions/{session_id}/dump")
    def dump(session_id: str):
        session = store.get(session_id)
        return {
            "revision": session.revision,
            "manifest": {**session.manifest_doc(), "frame_count": session.frame_count},
            "script": session.script().to_json(),
        }

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
