"""Streaming HTTP gateway: preprocess once, then per-frame augmentation.

Sessions are strictly ordered streams; a frame arriving while the previous
one is still in flight gets a 429 instead of being queued out of order.
Frame outputs are bit-identical to the offline pipeline for the same inputs
and seeds.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import rasters, scenesim
from .pipeline import (AugmentedInit, EpisodeStream, PipelineConfig, PreprocessError, StepError,
                       build_backend, build_vlm, derive_seeds, preprocess)


class InitRequest(BaseModel):
    image_png_b64: str
    instruction: str
    setting: str = "blocks"
    seed: int = 0
    scene_bundle: Optional[str] = None
    config: Optional[dict] = None


class FrameRequest(BaseModel):
    episode_id: str
    image_png_b64: str


@dataclass
class EpisodeSession:
    episode_id: str
    cfg: PipelineConfig
    stream: EpisodeStream
    created: float = field(default_factory=time.monotonic)
    last_used: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock)
    frame_counter: int = 0


def make_gateway_app(base_cfg: PipelineConfig, session_timeout_s: float = 600.0,
                     clock=time.perf_counter) -> FastAPI:
    app = FastAPI(title="visaug gateway")
    sessions: Dict[str, EpisodeSession] = {}
    registry_lock = threading.Lock()

    def _expire():
        now = time.monotonic()
        with registry_lock:
            dead = [k for k, s in sessions.items()
                    if s is not None and now - s.last_used > session_timeout_s]
            for k in dead:
                # expired ids stay known so /frame can answer 410 rather than 404
                sessions[k] = None  # type: ignore[assignment]

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/init")
    def init(req: InitRequest):
        _expire()
        try:
            frame0 = rasters.from_b64_png(req.image_png_b64)
        except rasters.InputError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        cfg = base_cfg
        if req.config:
            merged = json.loads(json.dumps(req.config))
            cfg = _merge_config(base_cfg, merged)
        scene = None
        if req.scene_bundle:
            scene_path = Path(req.scene_bundle) / "scene.json"
            if not scene_path.exists():
                raise HTTPException(status_code=400, detail=f"no scene.json under {req.scene_bundle}")
            scene = scenesim.SceneSpec.from_json_dict(json.loads(scene_path.read_text()))

        seeds = derive_seeds(req.seed)
        cfg = replace(cfg, vlm=replace(cfg.vlm, mock=replace(cfg.vlm.mock, rng_seed=seeds["vlm"])),
                      backend=replace(cfg.backend,
                                      corruption=replace(cfg.backend.corruption,
                                                         rng_seed=seeds["corruption"])))
        try:
            backend = build_backend(cfg, scene)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        vlm_client = build_vlm(cfg)
        try:
            init_result: AugmentedInit = preprocess(
                frame0, req.instruction, req.setting, cfg, backend, vlm_client,
                scene=scene, clock=clock)
        except PreprocessError as exc:
            if exc.stage == "segment":
                raise HTTPException(status_code=503, detail={"stage": exc.stage, "error": str(exc)})
            raise HTTPException(status_code=422, detail={"stage": exc.stage, "error": str(exc)})

        stream = EpisodeStream(cfg=cfg, backend=backend, init=init_result, clock=clock)
        try:
            stream.start_tracking(frame0)
        except StepError as exc:
            raise HTTPException(status_code=422, detail={"stage": exc.stage, "error": str(exc)})

        episode_id = uuid.uuid4().hex
        with registry_lock:
            sessions[episode_id] = EpisodeSession(episode_id=episode_id, cfg=cfg, stream=stream)
        return {
            "episode_id": episode_id,
            "augmented_frame": rasters.to_b64_png(init_result.highlighted_policy),
            "selection": init_result.selection.to_json_dict(),
            "effective_instruction": init_result.effective_instruction,
            "preprocess_ms": init_result.preprocess_ms,
        }

    @app.post("/frame")
    def frame(req: FrameRequest):
        _expire()
        with registry_lock:
            if req.episode_id not in sessions:
                raise HTTPException(status_code=404, detail="unknown episode id")
            session = sessions[req.episode_id]
        if session is None:
            raise HTTPException(status_code=410, detail="episode expired")
        if not session.lock.acquire(blocking=False):
            raise HTTPException(status_code=429, detail="previous frame still in flight")
        try:
            try:
                img = rasters.from_b64_png(req.image_png_b64)
            except rasters.InputError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            try:
                out = session.stream.step(img)
            except StepError as exc:
                raise HTTPException(status_code=422, detail={"stage": exc.stage, "error": str(exc)})
            session.frame_counter += 1
            session.last_used = time.monotonic()
            return {
                "augmented_frame": rasters.to_b64_png(out),
                "latency_ms": session.stream.step_total_ms[-1],
                "frame_counter": session.frame_counter,
            }
        finally:
            session.lock.release()

    return app


def _merge_config(base: PipelineConfig, overrides: dict) -> PipelineConfig:
    from dataclasses import asdict

    def merge(d: dict, o: dict) -> dict:
        out = dict(d)
        for k, v in o.items():
            if isinstance(v, dict) and isinstance(out.get(k), dict):
                out[k] = merge(out[k], v)
            else:
                out[k] = v
        return out

    return PipelineConfig.from_dict(merge(asdict(base), overrides))
