"""Pluggable segmenter/tracker backends and their wire protocol.

Three implementations of one Backend interface: the in-process synthetic
backend (ground-truth masks with configurable corruption, so the whole
pipeline runs without any neural model), an HTTP client, and a stdio
JSON-lines subprocess client. A FastAPI app factory and a stdio serve loop
expose any in-process backend over the same protocol.
"""

from __future__ import annotations

import json
import subprocess
import sys
import time
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import requests
from fastapi import FastAPI, HTTPException, Request

from . import rasters
from .masks import (BinaryMask, CodecError, MaskSet, maskset_from_rle_list,
                    maskset_from_wire, maskset_to_rle_list)
from .rasters import InputError
from .scenesim import SceneSpec, ground_truth_masks, object_mask


class BackendError(RuntimeError):
    """Backend unreachable or returned a protocol-level error."""


class TrackInitError(ValueError):
    """A mask to track cannot be bound to any scene object."""


class SessionError(KeyError):
    """Unknown or expired tracking session."""


@dataclass
class TrackSession:
    session_id: str
    reference_masks: MaskSet
    frame_counter: int = 0
    latencies_ms: List[float] = field(default_factory=list)
    bound_object_ids: Tuple[str, ...] = ()
    last_used: float = field(default_factory=time.monotonic)


class Backend(Protocol):
    def segment(self, image: np.ndarray, granularity_levels: Sequence[int]) -> MaskSet: ...
    def track_init(self, image: np.ndarray, masks: MaskSet) -> TrackSession: ...
    def track_step(self, session: TrackSession, image: np.ndarray) -> MaskSet: ...


@dataclass(frozen=True)
class CorruptionConfig:
    split_probability: float = 0.0
    hole_probability: float = 0.0
    overseg_probability: float = 0.0
    drop_probability: float = 0.0
    spurious_fragment_rate: float = 0.0
    rng_seed: int = 0
    drop_ids: Tuple[str, ...] = ()  # always-drop list for targeted injection

    def __post_init__(self):
        for name in ("split_probability", "hole_probability", "overseg_probability",
                     "drop_probability"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {v}")
        if self.spurious_fragment_rate < 0:
            raise ValueError("spurious_fragment_rate must be >= 0")

    @property
    def is_identity(self) -> bool:
        return (self.split_probability == self.hole_probability == self.overseg_probability
                == self.drop_probability == self.spurious_fragment_rate == 0.0
                and not self.drop_ids)


def _row_band_by_area(data: np.ndarray, lo_q: float, hi_q: float) -> Optional[np.ndarray]:
    """Rows of a mask spanning the [lo_q, hi_q] band of cumulative area.

    Returns a fragment holding 42..75% of the mask's pixels, nudging the
    band edges a row if pixel rounding pushes it outside that window (the
    window keeps fragments mergeable rather than subtractable downstream).
    """
    counts = data.sum(axis=1)
    total = counts.sum()
    if total == 0:
        return None
    cum = np.cumsum(counts) / total
    lo = int(np.searchsorted(cum, lo_q, side="left"))
    hi = int(np.searchsorted(cum, hi_q, side="left")) + 1
    for d_lo, d_hi in ((0, 0), (0, 1), (-1, 0), (0, -1), (1, 0), (-1, 1), (1, -1)):
        a, b = max(lo + d_lo, 0), min(hi + d_hi, data.shape[0])
        if a >= b:
            continue
        frag = np.zeros_like(data)
        frag[a:b] = data[a:b]
        frac = frag.sum() / total
        if 0.42 <= frac <= 0.75:
            return frag
    return None


# cumulative-area bands for part-level fragments at granularity levels 2..6;
# union stays within ~70% of the object so the overlap filter merges rather
# than discards
_LEVEL_BANDS = {2: (0.0, 0.55), 3: (0.20, 0.65), 4: (0.08, 0.60), 5: (0.12, 0.66), 6: (0.02, 0.50)}


class SyntheticBackend:
    """Ground-truth segmenter/tracker for one synthetic scene.

    segment() returns each object's exact mask, plus part-level fragments
    for granularity levels above 1, transformed by the corruption config.
    Tracking binds masks to objects by maximal overlap and replays ground
    truth at each object's pose as frames advance.
    """

    def __init__(self, scene: SceneSpec, corruption: CorruptionConfig = CorruptionConfig(),
                 session_timeout_s: float = 300.0):
        self.scene = scene
        self.corruption = corruption
        self.session_timeout_s = session_timeout_s
        self._sessions: Dict[str, TrackSession] = {}

    # -- segmentation ------------------------------------------------------

    def segment(self, image: np.ndarray, granularity_levels: Sequence[int]) -> MaskSet:
        if not granularity_levels:
            raise ValueError("at least one granularity level required")
        h, w = np.asarray(image).shape[:2]
        if (w, h) != self.scene.image_size:
            raise InputError(
                f"image {w}x{h} does not match scene {self.scene.image_size}")
        cfg = self.corruption
        rng = np.random.Generator(np.random.PCG64(cfg.rng_seed ^ self.scene.rng_seed))
        out: List[np.ndarray] = []
        gt = ground_truth_masks(self.scene, 0)
        for obj, mask in zip(self.scene.objects, gt):
            if obj.id in cfg.drop_ids or rng.random() < cfg.drop_probability:
                continue
            data = mask.data.copy()
            if rng.random() < cfg.split_probability:
                data = self._split(data)
            if rng.random() < cfg.hole_probability:
                data = self._punch_hole(data)
            out.append(data)
            for level in sorted(set(granularity_levels)):
                if level < 2:
                    continue
                band = _LEVEL_BANDS.get(level)
                if band is None:
                    continue
                frag = _row_band_by_area(mask.data, *band)
                if frag is not None:
                    out.append(frag)
            if rng.random() < cfg.overseg_probability:
                frag = _row_band_by_area(mask.data, float(rng.uniform(0.0, 0.2)), 0.62)
                if frag is not None:
                    out.append(frag)
        n_spurious = int(rng.poisson(cfg.spurious_fragment_rate))
        for _ in range(n_spurious):
            out.append(self._spurious_blob(rng, (h, w)))
        return MaskSet([BinaryMask(a) for a in out])

    @staticmethod
    def _split(data: np.ndarray) -> np.ndarray:
        rows = np.flatnonzero(data.any(axis=1))
        if rows.size < 8:
            return data
        mid = rows[rows.size // 2]
        cut = data.copy()
        cut[mid - 1:mid + 2, :] = False
        # a cut that erased a side would not be a split at all
        return cut if cut.any() else data

    @staticmethod
    def _punch_hole(data: np.ndarray) -> np.ndarray:
        rows = np.flatnonzero(data.any(axis=1))
        cols = np.flatnonzero(data.any(axis=0))
        if rows.size < 9 or cols.size < 9:
            return data
        r0, r1 = rows[rows.size // 3], rows[2 * rows.size // 3]
        c0, c1 = cols[cols.size // 3], cols[2 * cols.size // 3]
        holed = data.copy()
        holed[r0:r1, c0:c1] = False
        return holed if holed.any() else data

    @staticmethod
    def _spurious_blob(rng: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
        h, w = shape
        bw = int(rng.integers(8, 30))
        bh = int(rng.integers(8, 30))
        x = int(rng.integers(0, max(w - bw, 1)))
        y = int(rng.integers(0, max(h - bh, 1)))
        blob = np.zeros(shape, dtype=bool)
        blob[y:y + bh, x:x + bw] = True
        return blob

    # -- tracking ----------------------------------------------------------

    def _expire(self) -> None:
        now = time.monotonic()
        dead = [k for k, s in self._sessions.items() if now - s.last_used > self.session_timeout_s]
        for k in dead:
            del self._sessions[k]

    def track_init(self, image: np.ndarray, masks: MaskSet) -> TrackSession:
        self._expire()
        if not len(masks):
            raise TrackInitError("cannot start tracking with an empty mask set")
        bound: List[str] = []
        for i, m in enumerate(masks):
            overlaps = [(int((m.data & object_mask(self.scene, o.id, 0).data).sum()), o.id)
                        for o in self.scene.objects]
            best, best_id = max(overlaps, key=lambda p: (p[0], p[1]))
            if best == 0:
                raise TrackInitError(f"mask {i} overlaps no scene object")
            bound.append(best_id)
        session = TrackSession(
            session_id=uuid.uuid4().hex,
            reference_masks=masks,
            bound_object_ids=tuple(bound),
        )
        self._sessions[session.session_id] = session
        return session

    def track_step(self, session: TrackSession, image: np.ndarray) -> MaskSet:
        self._expire()
        live = self._sessions.get(session.session_id)
        if live is None:
            raise SessionError(f"session {session.session_id} unknown or expired")
        start = time.perf_counter()
        live.frame_counter += 1
        t = live.frame_counter
        out = MaskSet([object_mask(self.scene, oid, t) for oid in live.bound_object_ids])
        live.last_used = time.monotonic()
        live.latencies_ms.append((time.perf_counter() - start) * 1000.0)
        session.frame_counter = live.frame_counter
        session.latencies_ms = live.latencies_ms
        return out

    def get_session(self, session_id: str) -> TrackSession:
        self._expire()
        try:
            return self._sessions[session_id]
        except KeyError:
            raise SessionError(f"session {session_id} unknown or expired") from None


# ---------------------------------------------------------------------------
# Wire protocol, shared by HTTP and stdio transports
#
#   segment:    {image_png_b64, granularity:[int]}      -> {masks:[RLE]}
#   track/init: {image_png_b64, masks:[RLE]}            -> {session_id}
#   track/step: {session_id, image_png_b64}             -> {masks:[RLE], latency_ms}


def handle_message(backend: Backend, op: str, body: dict,
                   sessions: Dict[str, TrackSession]) -> dict:
    """Dispatch one decoded protocol message against an in-process backend."""
    if op == "segment":
        image = rasters.from_b64_png(body["image_png_b64"])
        masks = backend.segment(image, tuple(body.get("granularity", [1])))
        return {"masks": maskset_to_rle_list(masks)}
    if op == "track_init":
        image = rasters.from_b64_png(body["image_png_b64"])
        masks = maskset_from_wire(body["masks"])
        session = backend.track_init(image, masks)
        sessions[session.session_id] = session
        return {"session_id": session.session_id}
    if op == "track_step":
        sid = body["session_id"]
        if sid not in sessions:
            raise SessionError(f"session {sid} unknown or expired")
        session = sessions[sid]
        image = rasters.from_b64_png(body["image_png_b64"])
        start = time.perf_counter()
        masks = backend.track_step(session, image)
        latency = (time.perf_counter() - start) * 1000.0
        return {"masks": maskset_to_rle_list(masks), "latency_ms": latency}
    raise ValueError(f"unknown op {op!r}")


def make_backend_app(backend: Backend) -> FastAPI:
    """FastAPI app exposing a backend over HTTP."""
    app = FastAPI(title="visaug segment/track backend")
    sessions: Dict[str, TrackSession] = {}

    async def _dispatch(op: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="malformed JSON body")
        try:
            return handle_message(backend, op, body, sessions)
        except SessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except (InputError, TrackInitError, CodecError, ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/segment")
    async def segment(request: Request):  # pragma: no cover - thin wrapper
        return await _dispatch("segment", request)

    @app.post("/track/init")
    async def track_init(request: Request):
        return await _dispatch("track_init", request)

    @app.post("/track/step")
    async def track_step(request: Request):
        return await _dispatch("track_step", request)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    return app


def serve_stdio(backend: Backend, stdin=None, stdout=None) -> None:
    """JSON-lines loop: {"op": ..., ...body} per line in, one JSON reply per line out."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    sessions: Dict[str, TrackSession] = {}
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            op = msg.pop("op")
            reply = handle_message(backend, op, msg, sessions)
        except Exception as exc:
            reply = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


class HttpBackend:
    """Client for a backend served over HTTP."""

    def __init__(self, base_url: str, timeout_s: float = 60.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._session.post(f"{self.base_url}{path}", json=payload,
                                      timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise BackendError(f"backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"backend error {resp.status_code}: {resp.text[:300]}")
        return resp.json()

    def segment(self, image: np.ndarray, granularity_levels: Sequence[int]) -> MaskSet:
        out = self._post("/segment", {"image_png_b64": rasters.to_b64_png(image),
                                      "granularity": list(granularity_levels)})
        return maskset_from_rle_list(out["masks"])

    def track_init(self, image: np.ndarray, masks: MaskSet) -> TrackSession:
        out = self._post("/track/init", {"image_png_b64": rasters.to_b64_png(image),
                                         "masks": maskset_to_rle_list(masks)})
        return TrackSession(session_id=out["session_id"], reference_masks=masks)

    def track_step(self, session: TrackSession, image: np.ndarray) -> MaskSet:
        out = self._post("/track/step", {"session_id": session.session_id,
                                         "image_png_b64": rasters.to_b64_png(image)})
        session.frame_counter += 1
        session.latencies_ms.append(float(out["latency_ms"]))
        return maskset_from_rle_list(out["masks"])


class StdioBackend:
    """Client speaking the JSON-lines protocol to a subprocess."""

    def __init__(self, command: Sequence[str]):
        self._proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1,
        )

    def _call(self, op: str, body: dict) -> dict:
        if self._proc.poll() is not None:
            raise BackendError("backend subprocess has exited")
        msg = {"op": op, **body}
        self._proc.stdin.write(json.dumps(msg) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise BackendError("backend subprocess closed its output")
        reply = json.loads(line)
        if "error" in reply:
            err = reply["error"]
            raise BackendError(f"{err.get('type')}: {err.get('message')}")
        return reply

    def segment(self, image: np.ndarray, granularity_levels: Sequence[int]) -> MaskSet:
        out = self._call("segment", {"image_png_b64": rasters.to_b64_png(image),
                                     "granularity": list(granularity_levels)})
        return maskset_from_rle_list(out["masks"])

    def track_init(self, image: np.ndarray, masks: MaskSet) -> TrackSession:
        out = self._call("track_init", {"image_png_b64": rasters.to_b64_png(image),
                                        "masks": maskset_to_rle_list(masks)})
        return TrackSession(session_id=out["session_id"], reference_masks=masks)

    def track_step(self, session: TrackSession, image: np.ndarray) -> MaskSet:
        out = self._call("track_step", {"session_id": session.session_id,
                                        "image_png_b64": rasters.to_b64_png(image)})
        session.frame_counter += 1
        session.latencies_ms.append(float(out["latency_ms"]))
        return maskset_from_rle_list(out["masks"])

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=10)
