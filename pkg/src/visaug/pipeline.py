"""End-to-end orchestration: preprocess the first frame, stream the rest.

preprocess = segment -> filter -> tag -> VLM select -> highlight. Subsequent
frames reuse the selection: masks are propagated by the tracker and only
re-composited, so the expensive model runs once per episode. Batch dataset
augmentation and single-episode evaluation runs both build on the same two
entry points.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from PIL import Image

from . import rasters, scenesim
from .annotate import HighlightStyle, TagLayout, highlight, place_tags, render_annotated
from .backends import (Backend, BackendError, CorruptionConfig, HttpBackend, SessionError,
                       StdioBackend, SyntheticBackend, TrackInitError, TrackSession)
from .filters import FilterConfig, filter_pipeline
from .masks import MaskSet, maskset_to_rle_list, resize_nearest
from .selection import (MockVlm, MockVlmConfig, HttpVlm, SelectionContext, SelectionResult,
                        select)

RELABEL_TEMPLATES = {
    "blocks": "lift the highlighted block",
    "kitchen": "put the highlighted vegetable in the highlighted pot",
    "drawers": "open the highlighted drawer",
}

Clock = Callable[[], float]


class PreprocessError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class StepError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass(frozen=True)
class VlmSettings:
    backend: str = "mock"  # mock | http
    url: str = "http://127.0.0.1:8801"
    retries: int = 2
    attempt_timeout_s: float = 30.0
    mock: MockVlmConfig = MockVlmConfig()


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "synthetic"  # synthetic | http | stdio
    url: str = "http://127.0.0.1:8802"
    command: Tuple[str, ...] = ()
    corruption: CorruptionConfig = CorruptionConfig()
    session_timeout_s: float = 300.0


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterConfig = FilterConfig()
    style: HighlightStyle = HighlightStyle()
    vlm: VlmSettings = VlmSettings()
    backend: BackendSettings = BackendSettings()
    relabel: bool = False
    vlm_resolution: int = 480
    policy_resolution: int = 224
    tracker_failure_policy: str = "freeze"  # freeze | abort
    preprocess_budget_s: float = 15.0

    def __post_init__(self):
        if self.vlm_resolution <= 0 or self.policy_resolution <= 0:
            raise ValueError("resolutions must be positive")
        if self.tracker_failure_policy not in ("freeze", "abort"):
            raise ValueError("tracker_failure_policy must be 'freeze' or 'abort'")

    @classmethod
    def for_setting(cls, setting: str, **overrides) -> "PipelineConfig":
        fc = FilterConfig.drawers() if setting == "drawers" else FilterConfig.tabletop()
        return cls(filter=fc, **overrides)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        kwargs = {}
        if "filter" in d:
            kwargs["filter"] = FilterConfig(**_tupled(d.pop("filter"), "granularity_levels"))
        if "style" in d:
            style = d.pop("style")
            if "overlay_color" in style:
                style["overlay_color"] = tuple(style["overlay_color"])
            kwargs["style"] = HighlightStyle(**style)
        if "vlm" in d:
            vlm = d.pop("vlm")
            if "mock" in vlm:
                vlm["mock"] = MockVlmConfig(**vlm["mock"])
            kwargs["vlm"] = VlmSettings(**vlm)
        if "backend" in d:
            be = d.pop("backend")
            if "corruption" in be:
                be["corruption"] = CorruptionConfig(**_tupled(be["corruption"], "drop_ids"))
            if "command" in be:
                be["command"] = tuple(be["command"])
            kwargs["backend"] = BackendSettings(**be)
        kwargs.update(d)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        p = Path(path)
        text = p.read_text()
        if p.suffix in (".toml", ".tml"):
            try:
                import tomllib as toml  # py311+
            except ImportError:
                import tomli as toml
            return cls.from_dict(toml.loads(text))
        return cls.from_dict(json.loads(text))


def _tupled(d: dict, key: str) -> dict:
    d = dict(d)
    if key in d:
        d[key] = tuple(d[key])
    return d


def build_backend(cfg: PipelineConfig, scene: Optional[scenesim.SceneSpec]) -> Backend:
    kind = cfg.backend.kind
    if kind == "synthetic":
        if scene is None:
            raise ValueError("synthetic backend needs a scene (scene.json in the episode)")
        return SyntheticBackend(scene, cfg.backend.corruption, cfg.backend.session_timeout_s)
    if kind == "http":
        return HttpBackend(cfg.backend.url)
    if kind == "stdio":
        return StdioBackend(cfg.backend.command)
    raise ValueError(f"unknown backend kind {kind!r}")


def build_vlm(cfg: PipelineConfig):
    if cfg.vlm.backend == "mock":
        return MockVlm(cfg.vlm.mock)
    if cfg.vlm.backend == "http":
        return HttpVlm(cfg.vlm.url, cfg.vlm.attempt_timeout_s)
    raise ValueError(f"unknown vlm backend {cfg.vlm.backend!r}")


@dataclass
class AugmentedInit:
    candidate_masks: MaskSet
    layout: TagLayout
    selection: SelectionResult
    selected_masks: MaskSet
    highlighted_native: np.ndarray
    highlighted_policy: np.ndarray
    annotated_vlm_image: np.ndarray
    effective_instruction: str
    preprocess_ms: float
    stage_ms: Dict[str, float]


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def preprocess(frame0: np.ndarray, instruction: str, setting: str, cfg: PipelineConfig,
               backend: Backend, vlm_client, scene: Optional[scenesim.SceneSpec] = None,
               clock: Clock = time.perf_counter) -> AugmentedInit:
    """Run the full first-frame augmentation and return every stage artifact.

    Raises PreprocessError with a stage tag ('segment', 'masking',
    'vlm_selection', 'timeout') instead of leaking stage-internal errors.
    """
    t_start = clock()
    stage_ms: Dict[str, float] = {}
    h, w = frame0.shape[:2]

    t0 = clock()
    try:
        raw_masks = backend.segment(frame0, cfg.filter.granularity_levels)
    except (BackendError, rasters.InputError) as exc:
        raise PreprocessError("segment", str(exc)) from exc
    stage_ms["segment"] = (clock() - t0) * 1000.0

    t0 = clock()
    candidates = filter_pipeline(raw_masks, cfg.filter)
    stage_ms["filter"] = (clock() - t0) * 1000.0
    if not len(candidates):
        raise PreprocessError("masking", "no candidate masks survived filtering")

    t0 = clock()
    vlm_res = cfg.vlm_resolution
    frame_vlm = rasters.resize_nearest(frame0, vlm_res, vlm_res)
    masks_vlm = MaskSet([resize_nearest(m, vlm_res, vlm_res) for m in candidates])
    # resizing tiny masks down can erase them; tags need a nonempty anchor target
    keep = [i for i, m in enumerate(masks_vlm) if not m.is_empty()]
    if not keep:
        raise PreprocessError("masking", "no candidate mask visible at VLM resolution")
    if len(keep) < len(candidates):
        candidates = MaskSet([candidates[i] for i in keep])
        masks_vlm = MaskSet([masks_vlm[i] for i in keep])
    layout = place_tags(masks_vlm, (vlm_res, vlm_res))
    annotated = render_annotated(frame_vlm, masks_vlm, layout)
    stage_ms["annotate"] = (clock() - t0) * 1000.0

    t0 = clock()
    valid_tags = tuple(layout.tag_ids())
    context = SelectionContext(
        setting=setting,
        instruction=instruction,
        valid_tags=valid_tags,
        tag_masks={e.tag_id: candidates[e.mask_index] for e in layout.entries},
        scene=scene,
    )
    selection = select(rasters.to_png_bytes(annotated), instruction, vlm_client, context,
                       retries=cfg.vlm.retries, attempt_timeout_s=cfg.vlm.attempt_timeout_s)
    stage_ms["select"] = (clock() - t0) * 1000.0
    if selection.status != "ok":
        raise PreprocessError("vlm_selection",
                              f"selection {selection.status} after {selection.attempts} attempts")

    t0 = clock()
    tag_to_index = {e.tag_id: e.mask_index for e in layout.entries}
    selected = MaskSet([candidates[tag_to_index[t]] for t in selection.chosen_tags])
    highlighted = highlight(frame0, selected, cfg.style)
    policy = rasters.resize_nearest(highlighted, cfg.policy_resolution, cfg.policy_resolution)
    stage_ms["highlight"] = (clock() - t0) * 1000.0

    effective = instruction
    if cfg.relabel:
        effective = RELABEL_TEMPLATES.get(setting, instruction)

    total_ms = (clock() - t_start) * 1000.0
    if total_ms > cfg.preprocess_budget_s * 1000.0:
        raise PreprocessError("timeout", f"preprocessing took {total_ms:.0f} ms")
    return AugmentedInit(
        candidate_masks=candidates, layout=layout, selection=selection,
        selected_masks=selected, highlighted_native=highlighted, highlighted_policy=policy,
        annotated_vlm_image=annotated, effective_instruction=effective,
        preprocess_ms=total_ms, stage_ms=stage_ms,
    )


@dataclass
class EpisodeStream:
    """Streaming state after a successful preprocess; one step() per frame."""

    cfg: PipelineConfig
    backend: Backend
    init: AugmentedInit
    track_session: Optional[TrackSession] = None
    current_masks: MaskSet = None  # type: ignore[assignment]
    step_total_ms: List[float] = field(default_factory=list)
    step_backend_ms: List[float] = field(default_factory=list)
    clock: Clock = time.perf_counter

    def start_tracking(self, frame0: np.ndarray) -> None:
        try:
            self.track_session = self.backend.track_init(frame0, self.init.selected_masks)
        except (TrackInitError, BackendError) as exc:
            raise StepError("track_init", str(exc)) from exc
        self.current_masks = self.init.selected_masks

    def step(self, frame: np.ndarray) -> np.ndarray:
        """Propagate highlights onto one new frame; never touches the VLM."""
        t0 = self.clock()
        backend_ms = 0.0
        if self.track_session is not None:
            tb = self.clock()
            try:
                self.current_masks = self.backend.track_step(self.track_session, frame)
            except (SessionError, BackendError) as exc:
                if self.cfg.tracker_failure_policy == "abort":
                    raise StepError("track_step", str(exc)) from exc
                # freeze: keep compositing the last good masks
            backend_ms = (self.clock() - tb) * 1000.0
        out = highlight(frame, self.current_masks, self.cfg.style)
        out = rasters.resize_nearest(out, self.cfg.policy_resolution, self.cfg.policy_resolution)
        self.step_total_ms.append((self.clock() - t0) * 1000.0)
        self.step_backend_ms.append(backend_ms)
        return out


# ---------------------------------------------------------------------------
# Offline episode runner


def _load_frames(episode_dir: Path) -> List[Path]:
    frames_dir = episode_dir / "frames"
    if frames_dir.is_dir():
        return sorted(frames_dir.glob("frame_????.png"))
    return sorted(episode_dir.glob("frame_????.png"))


def _coverage_by_object(scene: scenesim.SceneSpec, candidates: MaskSet) -> Dict[str, float]:
    if len(candidates):
        union = candidates.union().data
    else:
        union = None
    out = {}
    for obj in scene.objects:
        gt = scenesim.object_mask(scene, obj.id, 0).data
        area = int(gt.sum())
        covered = int((gt & union).sum()) if union is not None else 0
        out[obj.id] = covered / area if area else 0.0
    return out


def reference_ids(scene: scenesim.SceneSpec, instr: scenesim.Instruction) -> List[str]:
    """Objects that must carry tags for the instruction to be groundable."""
    if instr.setting == "blocks":
        return [o.id for o in scene.by_category("block") if o.name == instr.attribute]
    if instr.setting == "kitchen":
        vegs = [o.id for o in scene.by_category("vegetable") if o.name == instr.attribute]
        return vegs + [o.id for o in scene.by_category("pot")]
    return [o.id for o in scene.by_category("drawer") if o.row == instr.row]


def highlighted_object_ids(scene: scenesim.SceneSpec, selected: MaskSet) -> List[str]:
    """Best-overlap object per selected mask, deduplicated in order."""
    out: List[str] = []
    for m in selected:
        overlaps = [(int((m.data & scenesim.object_mask(scene, o.id, 0).data).sum()), o.id)
                    for o in scene.objects]
        best, best_id = max(overlaps, key=lambda p: (p[0], p[1]))
        if best > 0 and best_id not in out:
            out.append(best_id)
    return out


def run_episode(bundle_dir, instruction: scenesim.Instruction, cfg: PipelineConfig,
                noise: scenesim.ExecutorNoise = scenesim.ExecutorNoise(), seed: int = 0,
                variant: str = "augmented", episode_id: Optional[str] = None,
                clock: Clock = time.perf_counter, out_dir=None) -> "EpisodeLog":
    """Full offline run over a scene bundle: preprocess, stream, execute, score.

    Stage errors never raise; they mark the log as failed with the stage tag
    so batch evaluation can keep going.
    """
    from . import evalkit

    bundle_dir = Path(bundle_dir)
    scene, n_frames, _ = scenesim.read_bundle(bundle_dir)
    frame_paths = _load_frames(bundle_dir)
    n_frames = max(n_frames, len(frame_paths))
    frames = [np.asarray(Image.open(p).convert("RGB")) for p in frame_paths]
    seeds = derive_seeds(seed)
    cfg = replace(cfg, vlm=replace(cfg.vlm, mock=replace(cfg.vlm.mock, rng_seed=seeds["vlm"])),
                  backend=replace(cfg.backend,
                                  corruption=replace(cfg.backend.corruption, rng_seed=seeds["corruption"])))
    backend = build_backend(cfg, scene)
    vlm_client = build_vlm(cfg)
    eid = episode_id or bundle_dir.name

    targets: Tuple[str, ...] = ()
    try:
        targets = scenesim.resolve_instruction(scene, instruction)
    except scenesim.ResolveError:
        pass
    refs = reference_ids(scene, instruction)

    log = evalkit.EpisodeLog(
        episode_id=eid, variant=variant, setting=scene.setting,
        instruction_text=instruction.text, effective_instruction=instruction.text,
        category=instruction.category, targets=list(targets), reference_ids=refs,
        seed=seed, n_frames=len(frames),
    )

    try:
        init = preprocess(frames[0], instruction.text, scene.setting, cfg, backend, vlm_client,
                          scene=scene, clock=clock)
    except PreprocessError as exc:
        log.failure_stage = exc.stage
        log.outcome = {"engaged": [], "result": "fail", "reason": exc.stage}
        log.score = 0.0
        return log

    log.effective_instruction = init.effective_instruction
    log.object_coverage = _coverage_by_object(scene, init.candidate_masks)
    log.selection = init.selection.to_json_dict()
    log.highlighted_ids = highlighted_object_ids(scene, init.selected_masks)
    log.timings = {"preprocess_ms": init.preprocess_ms, "stage_ms": init.stage_ms}
    log.artifact_hashes = {
        "candidates": _sha(json.dumps(maskset_to_rle_list(init.candidate_masks)).encode()),
        "annotated": _sha(rasters.to_png_bytes(init.annotated_vlm_image)),
        "highlight0": _sha(rasters.to_png_bytes(init.highlighted_native)),
    }

    augmented_frames = [init.highlighted_policy]
    stream = EpisodeStream(cfg=cfg, backend=backend, init=init, clock=clock)
    try:
        stream.start_tracking(frames[0])
        for frame in frames[1:]:
            augmented_frames.append(stream.step(frame))
    except StepError as exc:
        log.failure_stage = exc.stage
        log.outcome = {"engaged": [], "result": "fail", "reason": exc.stage}
        log.score = 0.0
        return log
    log.timings["step_total_ms"] = stream.step_total_ms
    log.timings["step_backend_ms"] = stream.step_backend_ms
    log.artifact_hashes["augmented"] = _sha(b"".join(rasters.to_png_bytes(f) for f in augmented_frames))

    final_frame = len(frames) - 1
    outcome = scenesim.scripted_executor(scene, stream.current_masks, noise,
                                         seed=seeds["executor"], frame=final_frame)
    log.outcome = {"engaged": list(outcome.engaged), "result": outcome.result,
                   "reason": outcome.reason}
    log.score = evalkit.score_run(outcome, targets, scene.setting)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(augmented_frames):
            Image.fromarray(f).save(out / f"frame_{i:04d}.png")
    return log


def derive_seeds(master: int) -> Dict[str, int]:
    """Stable per-subsystem seeds from one master seed."""
    ss = np.random.SeedSequence(master)
    vlm, corruption, executor = ss.spawn(3)
    return {
        "vlm": int(vlm.generate_state(1)[0]),
        "corruption": int(corruption.generate_state(1)[0]),
        "executor": int(executor.generate_state(1)[0]),
    }


# ---------------------------------------------------------------------------
# Batch dataset augmentation


def _augment_one(ep_dir: Path, ep_out: Path, cfg: PipelineConfig, seed: int,
                 clock: Clock) -> dict:
    """Augment a single episode directory; returns its manifest entry."""
    ep_id = ep_dir.name
    frame_paths = _load_frames(ep_dir)
    done_marker = ep_out / "augment.json"
    if done_marker.exists():
        existing = len(sorted((ep_out / "augmented").glob("frame_????.png")))
        if existing == len(frame_paths):
            return {"status": "skipped"}

    instruction_text = (ep_dir / "instruction.txt").read_text().strip()
    scene = None
    scene_path = ep_dir / "scene.json"
    if scene_path.exists():
        scene = scenesim.SceneSpec.from_json_dict(json.loads(scene_path.read_text()))
    setting = scene.setting if scene else "blocks"

    ep_seed = seed ^ int(hashlib.sha256(ep_id.encode()).hexdigest()[:8], 16)
    seeds = derive_seeds(ep_seed)
    ep_cfg = replace(
        cfg,
        vlm=replace(cfg.vlm, mock=replace(cfg.vlm.mock, rng_seed=seeds["vlm"])),
        backend=replace(cfg.backend,
                        corruption=replace(cfg.backend.corruption, rng_seed=seeds["corruption"])),
    )
    try:
        backend = build_backend(ep_cfg, scene)
        vlm_client = build_vlm(ep_cfg)
        frames = [np.asarray(Image.open(p).convert("RGB")) for p in frame_paths]
        init = preprocess(frames[0], instruction_text, setting, ep_cfg, backend, vlm_client,
                          scene=scene, clock=clock)
        stream = EpisodeStream(cfg=ep_cfg, backend=backend, init=init, clock=clock)
        stream.start_tracking(frames[0])
        augmented = [init.highlighted_policy]
        for frame in frames[1:]:
            augmented.append(stream.step(frame))
    except (PreprocessError, StepError) as exc:
        return {"status": "failed", "stage": exc.stage, "error": str(exc)}

    (ep_out / "augmented").mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(augmented):
        Image.fromarray(f).save(ep_out / "augmented" / f"frame_{i:04d}.png")
    sidecar = {
        "instruction": instruction_text,
        "effective_instruction": init.effective_instruction,
        "selection": init.selection.to_json_dict(),
        "n_candidates": len(init.candidate_masks),
        "chosen_tags": list(init.selection.chosen_tags),
        "preprocess_ms": init.preprocess_ms,
        "seed": ep_seed,
    }
    (ep_out / "augment.json").write_text(json.dumps(sidecar, indent=2))
    if cfg.relabel:
        (ep_out / "instruction_relabel.txt").write_text(init.effective_instruction + "\n")
    return {"status": "ok"}


def augment_dataset(input_dir, output_dir, cfg: PipelineConfig, seed: int = 0,
                    workers: int = 1, clock: Clock = time.perf_counter) -> dict:
    """Augment every episode under input_dir; resumable; returns the manifest.

    Episode layout: <root>/<episode_id>/{instruction.txt, frames/frame_%04d.png}
    plus scene.json when the synthetic backend is in use. Output per episode:
    augmented/frame_%04d.png, augment.json, and instruction_relabel.txt when
    relabeling is on. Episodes are independent; `workers` > 1 fans them out
    over a thread pool (each with its own backend/VLM client). Frames within
    one episode always stay sequential.
    """
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    episodes = sorted(p for p in input_dir.iterdir() if p.is_dir())
    manifest = {"total": len(episodes), "succeeded": 0, "failed": 0, "skipped": 0,
                "failures_by_stage": {}, "episodes": {}}

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda d: _augment_one(d, output_dir / d.name, cfg, seed, clock), episodes))
    else:
        results = [_augment_one(d, output_dir / d.name, cfg, seed, clock) for d in episodes]

    for ep_dir, entry in zip(episodes, results):
        manifest["episodes"][ep_dir.name] = entry
        if entry["status"] == "ok":
            manifest["succeeded"] += 1
        elif entry["status"] == "skipped":
            manifest["skipped"] += 1
        else:
            manifest["failed"] += 1
            stage = entry["stage"]
            manifest["failures_by_stage"][stage] = manifest["failures_by_stage"].get(stage, 0) + 1

    (output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
