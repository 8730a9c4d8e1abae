"""Synthetic duplicate-object benchmark scenes.

Three settings: colored blocks in a row, a toy kitchen with identical pots
plus distinct vegetables, and a fixed 3x4 chest of drawers. Scenes render as
flat colored shapes over a textured background, each object carrying an
exact ground-truth mask, so the full augmentation pipeline can run and be
scored without any neural model in the loop.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .masks import BinaryMask, MaskSet, maskset_to_rle_list, maskset_from_rle_list


class GenError(ValueError):
    """Unsatisfiable scene constraints."""


class ResolveError(ValueError):
    """Instruction has no referent (or an ambiguous one) in the scene."""


SETTINGS = ("blocks", "kitchen", "drawers")

BLOCK_COLORS = {
    "orange": (232, 138, 40),
    "green": (66, 168, 76),
    "blue": (62, 96, 200),
}
VEGETABLES = {
    "tomato": (206, 48, 42),
    "cabbage": (150, 200, 120),
    "carrots": (226, 122, 32),
    "cucumber": (44, 110, 52),
}
POT_COLOR = (92, 96, 106)
DRAWER_COLOR = (152, 112, 72)
HANDLE_COLOR = (62, 50, 40)
DRAWER_ROWS = ("top", "middle", "bottom")
DRAWER_COLS = 4

_ORDINAL_WORDS = {2: "second", 3: "third", 4: "fourth", 5: "fifth"}
_WORD_ORDINALS = {w: n for n, w in _ORDINAL_WORDS.items()}
# largest ordinal the grammar admits per setting
_MAX_ORDINAL = {"blocks": 5, "kitchen": 4, "drawers": 4}


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str  # block | vegetable | pot | drawer
    name: Optional[str]  # color or vegetable name; None for identical duplicates
    shape: str  # rect | circle | triangle
    cx: float
    cy: float
    w: float
    h: float
    color: Tuple[int, int, int]
    row: Optional[str] = None  # drawers only
    index: int = 0  # left-to-right index within its category (per row for drawers)
    velocity: Tuple[float, float] = (0.0, 0.0)  # px per frame


@dataclass(frozen=True)
class SceneSpec:
    setting: str
    objects: Tuple[SceneObject, ...]
    image_size: Tuple[int, int]  # (width, height)
    rng_seed: int

    def by_category(self, category: str) -> List[SceneObject]:
        return [o for o in self.objects if o.category == category]

    def get(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    def to_json_dict(self) -> dict:
        return {
            "setting": self.setting,
            "image_size": list(self.image_size),
            "rng_seed": self.rng_seed,
            "objects": [asdict(o) for o in self.objects],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SceneSpec":
        objs = []
        for o in d["objects"]:
            o = dict(o)
            o["color"] = tuple(o["color"])
            o["velocity"] = tuple(o["velocity"])
            objs.append(SceneObject(**o))
        return cls(
            setting=d["setting"],
            objects=tuple(objs),
            image_size=tuple(d["image_size"]),
            rng_seed=d["rng_seed"],
        )


@dataclass(frozen=True)
class Instruction:
    text: str
    setting: str
    attribute: Optional[str]  # block color or vegetable name
    ordinal: int  # 1 = leftmost/rightmost
    direction: str  # left | right
    row: Optional[str] = None  # drawers only
    category: Optional[int] = None

    @property
    def position_concept(self) -> str:
        if self.ordinal == 1:
            return "leftmost" if self.direction == "left" else "rightmost"
        return f"{_ORDINAL_WORDS[self.ordinal]}-from-{self.direction}"

    def concept_tuple(self) -> Tuple[str, ...]:
        if self.setting == "blocks":
            return (f"pos:{self.position_concept}", f"color:{self.attribute}")
        if self.setting == "kitchen":
            return (f"veg:{self.attribute}", f"pos:{self.position_concept}")
        return (f"pos:{self.position_concept}", f"row:{self.row}")

    def with_category(self, category: int) -> "Instruction":
        return Instruction(
            text=self.text, setting=self.setting, attribute=self.attribute,
            ordinal=self.ordinal, direction=self.direction, row=self.row, category=category,
        )

    def to_json_dict(self) -> dict:
        return {
            "text": self.text, "setting": self.setting, "attribute": self.attribute,
            "ordinal": self.ordinal, "direction": self.direction, "row": self.row,
            "category": self.category,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Instruction":
        return cls(**d)


def _position_phrase(ordinal: int, direction: str) -> str:
    if ordinal == 1:
        return "leftmost" if direction == "left" else "rightmost"
    return f"{_ORDINAL_WORDS[ordinal]}"


def instruction_text(setting: str, attribute: Optional[str], ordinal: int, direction: str,
                     row: Optional[str] = None) -> str:
    pos = _position_phrase(ordinal, direction)
    if setting == "blocks":
        if ordinal == 1:
            return f"lift the {pos} {attribute} block"
        return f"lift the {pos} {attribute} block from the {direction}"
    if setting == "kitchen":
        if ordinal == 1:
            return f"put the {attribute} in the {pos} pot"
        return f"put the {attribute} in the {pos} pot from the {direction}"
    if setting == "drawers":
        if ordinal == 1:
            return f"open the {pos} drawer on the {row} row"
        return f"open the {pos} drawer from the {direction} on the {row} row"
    raise ValueError(f"unknown setting {setting!r}")


def make_instruction(setting: str, attribute: Optional[str], ordinal: int, direction: str,
                     row: Optional[str] = None, category: Optional[int] = None) -> Instruction:
    text = instruction_text(setting, attribute, ordinal, direction, row)
    return Instruction(text=text, setting=setting, attribute=attribute, ordinal=ordinal,
                       direction=direction, row=row, category=category)


_BLOCKS_SUPER = re.compile(r"^lift the (leftmost|rightmost) (\w+) block$")
_BLOCKS_ORD = re.compile(r"^lift the (\w+) (\w+) block from the (left|right)$")
_KITCHEN_SUPER = re.compile(r"^put the (\w+) in the (leftmost|rightmost) pot$")
_KITCHEN_ORD = re.compile(r"^put the (\w+) in the (\w+) pot from the (left|right)$")
_DRAWERS_SUPER = re.compile(r"^open the (leftmost|rightmost) drawer on the (\w+) row$")
_DRAWERS_ORD = re.compile(r"^open the (\w+) drawer from the (left|right) on the (\w+) row$")


def parse_instruction(text: str, setting: str) -> Instruction:
    """Inverse of the instruction grammar; round-trips with instruction_text."""
    text = text.strip()
    if setting == "blocks":
        m = _BLOCKS_SUPER.match(text)
        if m:
            direction = "left" if m.group(1) == "leftmost" else "right"
            return make_instruction("blocks", m.group(2), 1, direction)
        m = _BLOCKS_ORD.match(text)
        if m and m.group(1) in _WORD_ORDINALS:
            return make_instruction("blocks", m.group(2), _WORD_ORDINALS[m.group(1)], m.group(3))
    elif setting == "kitchen":
        m = _KITCHEN_SUPER.match(text)
        if m:
            direction = "left" if m.group(2) == "leftmost" else "right"
            return make_instruction("kitchen", m.group(1), 1, direction)
        m = _KITCHEN_ORD.match(text)
        if m and m.group(2) in _WORD_ORDINALS:
            return make_instruction("kitchen", m.group(1), _WORD_ORDINALS[m.group(2)], m.group(3))
    elif setting == "drawers":
        m = _DRAWERS_SUPER.match(text)
        if m:
            direction = "left" if m.group(1) == "leftmost" else "right"
            return make_instruction("drawers", None, 1, direction, row=m.group(2))
        m = _DRAWERS_ORD.match(text)
        if m and m.group(1) in _WORD_ORDINALS:
            return make_instruction("drawers", None, _WORD_ORDINALS[m.group(1)], m.group(2), row=m.group(3))
    raise ValueError(f"cannot parse {setting} instruction: {text!r}")


# ---------------------------------------------------------------------------
# Seen-concept manifest and instruction categories


@dataclass
class SeenManifest:
    """Concept tuples observed in training demonstrations.

    Entries are (setting, concept tuple, origin setting). Categories are
    decided against entries whose origin-independent setting matches the
    instruction; origins let co-trained settings share concepts for analysis
    without blurring the per-setting category definitions.
    """

    records: List[Tuple[str, Tuple[str, ...], str]] = field(default_factory=list)

    def tuples_for(self, setting: str) -> set:
        return {t for s, t, _ in self.records if s == setting}

    def components_for(self, setting: str) -> set:
        out = set()
        for s, t, _ in self.records:
            if s == setting:
                out.update(t)
        return out

    def categorize(self, instr: Instruction) -> int:
        tup = instr.concept_tuple()
        if tup in self.tuples_for(instr.setting):
            return 1
        if set(tup) <= self.components_for(instr.setting):
            return 2
        return 3

    def seen_elsewhere(self, instr: Instruction) -> bool:
        """True if every unseen component appears under some other setting."""
        missing = set(instr.concept_tuple()) - self.components_for(instr.setting)
        if not missing:
            return False
        other = set()
        for s, t, _ in self.records:
            if s != instr.setting:
                other.update(t)
        return missing <= other

    def to_json_dict(self) -> dict:
        per_setting: Dict[str, list] = {}
        for s, t, origin in self.records:
            per_setting.setdefault(s, []).append({"tuple": list(t), "origin": origin})
        return per_setting

    @classmethod
    def from_json_dict(cls, d: dict) -> "SeenManifest":
        records = []
        for setting, entries in d.items():
            for e in entries:
                if isinstance(e, dict):
                    records.append((setting, tuple(e["tuple"]), e.get("origin", setting)))
                else:
                    records.append((setting, tuple(e), setting))
        mf = cls(records=records)
        for s in {r[0] for r in records}:
            if not mf.tuples_for(s):
                raise ValueError(f"manifest empty for setting {s}")
        return mf

    @classmethod
    def load(cls, path: Optional[str] = None) -> "SeenManifest":
        if path is None:
            text = resources.files("visaug.data").joinpath("default_manifest.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Scene generation


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _spread_centers(n: int, item_w: float, gap: float, width: int) -> List[float]:
    total = n * item_w + (n - 1) * gap
    if total > width - 16:
        raise GenError(f"{n} items of width {item_w} do not fit in image width {width}")
    x0 = (width - total) / 2 + item_w / 2
    return [x0 + i * (item_w + gap) for i in range(n)]


def gen_scene(setting: str, constraints: Optional[dict] = None, seed: int = 0,
              image_size: Tuple[int, int] = (480, 480)) -> Tuple[SceneSpec, np.ndarray, MaskSet]:
    """Build a scene, render frame 0, and return its ground-truth masks.

    Deterministic under (setting, constraints, seed, image_size). Constraints
    may pin counts, colors/vegetable choice, explicit left-to-right order, or
    per-object velocities; anything left open is sampled from the seed.
    """
    if setting not in SETTINGS:
        raise GenError(f"unknown setting {setting!r}")
    c = dict(constraints or {})
    rng = _rng(seed)
    w, h = image_size
    objects: List[SceneObject] = []

    if setting == "blocks":
        n = int(c.get("count", rng.integers(2, 7)))
        if not (2 <= n <= 6):
            raise GenError(f"blocks scenes need 2..6 blocks, got {n}")
        if "order" in c:
            colors = list(c["order"])
            if len(colors) != n:
                raise GenError(f"order length {len(colors)} != count {n}")
        else:
            palette = list(c.get("colors", BLOCK_COLORS))
            colors = [palette[int(rng.integers(len(palette)))] for _ in range(n)]
        unknown = set(colors) - set(BLOCK_COLORS)
        if unknown:
            raise GenError(f"unknown block colors: {sorted(unknown)}")
        size = min(52.0, (w - 40) / n - 16)
        if size < 4:
            raise GenError(f"image {w}px too small for {n} blocks")
        centers = _spread_centers(n, size, 16, w)
        cy = h * 0.58
        for i, (cx, color) in enumerate(zip(centers, colors)):
            objects.append(SceneObject(
                id=f"block{i}", category="block", name=color, shape="rect",
                cx=cx, cy=cy, w=size, h=size, color=BLOCK_COLORS[color], index=i,
            ))

    elif setting == "kitchen":
        n_pots = int(c.get("pots", rng.integers(2, 5)))
        if not (2 <= n_pots <= 4):
            raise GenError(f"kitchen scenes need 2..4 pots, got {n_pots}")
        if "vegetables" in c:
            vegs = list(c["vegetables"])
        else:
            k = int(rng.integers(1, 5))
            vegs = list(rng.choice(sorted(VEGETABLES), size=k, replace=False))
        if len(set(vegs)) != len(vegs):
            raise GenError("vegetables must be distinct")
        unknown = set(vegs) - set(VEGETABLES)
        if unknown:
            raise GenError(f"unknown vegetables: {sorted(unknown)}")
        veg_size = min(44.0, (w - 40) / max(len(vegs), 1) - 20)
        if veg_size < 4:
            raise GenError(f"image {w}px too small for {len(vegs)} vegetables")
        for i, (cx, veg) in enumerate(zip(_spread_centers(len(vegs), veg_size, 20, w), vegs)):
            shape = {"tomato": "circle", "cabbage": "circle", "carrots": "triangle", "cucumber": "rect"}[veg]
            vw, vh = (veg_size, veg_size * 0.55) if veg == "cucumber" else (veg_size, veg_size)
            objects.append(SceneObject(
                id=f"veg_{veg}", category="vegetable", name=veg, shape=shape,
                cx=cx, cy=h * 0.22, w=vw, h=vh, color=VEGETABLES[veg], index=i,
            ))
        pot_w = min(68.0, (w - 40) / n_pots - 18)
        if pot_w < 4:
            raise GenError(f"image {w}px too small for {n_pots} pots")
        for i, cx in enumerate(_spread_centers(n_pots, pot_w, 18, w)):
            objects.append(SceneObject(
                id=f"pot{i}", category="pot", name=None, shape="rect",
                cx=cx, cy=h * 0.64, w=pot_w, h=pot_w * 0.66, color=POT_COLOR, index=i,
            ))

    else:  # drawers
        dw = (w - 60) / DRAWER_COLS - 12
        dh = (h - 80) / len(DRAWER_ROWS) - 24
        if dw < 4 or dh < 4:
            raise GenError(f"image {w}x{h} too small for the drawer grid")
        xs = _spread_centers(DRAWER_COLS, dw, 12, w)
        total_h = len(DRAWER_ROWS) * dh + (len(DRAWER_ROWS) - 1) * 20
        y0 = (h - total_h) / 2 + dh / 2
        for r, row in enumerate(DRAWER_ROWS):
            for i, cx in enumerate(xs):
                objects.append(SceneObject(
                    id=f"drawer_{row}_{i}", category="drawer", name=None, shape="rect",
                    cx=cx, cy=y0 + r * (dh + 20), w=dw, h=dh, color=DRAWER_COLOR,
                    row=row, index=i,
                ))

    velocities = c.get("velocities", {})
    if velocities:
        moved = []
        for o in objects:
            v = velocities.get(o.id)
            moved.append(SceneObject(**{**asdict(o), "velocity": tuple(v) if v else o.velocity,
                                        "color": o.color}))
        objects = moved

    spec = SceneSpec(setting=setting, objects=tuple(objects), image_size=image_size, rng_seed=seed)
    frame0 = render_frame(spec, 0)
    masks0 = ground_truth_masks(spec, 0)
    for i, a in enumerate(masks0):
        for b in list(masks0)[i + 1:]:
            if (a.data & b.data).any():
                raise GenError("scene construction produced overlapping ground-truth masks")
    return spec, frame0, masks0


_GRID_CACHE: Dict[Tuple[int, int], Tuple[np.ndarray, np.ndarray]] = {}


def _grids(image_size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    if image_size not in _GRID_CACHE:
        w, h = image_size
        _GRID_CACHE[image_size] = (np.arange(h, dtype=np.float64)[:, None],
                                   np.arange(w, dtype=np.float64)[None, :])
    return _GRID_CACHE[image_size]


def _object_mask(obj: SceneObject, t: int, image_size: Tuple[int, int]) -> BinaryMask:
    cx = obj.cx + obj.velocity[0] * t
    cy = obj.cy + obj.velocity[1] * t
    yy, xx = _grids(image_size)
    if obj.shape == "rect":
        m = (np.abs(xx - cx) <= obj.w / 2) & (np.abs(yy - cy) <= obj.h / 2)
    elif obj.shape == "circle":
        m = ((xx - cx) / (obj.w / 2)) ** 2 + ((yy - cy) / (obj.h / 2)) ** 2 <= 1.0
    elif obj.shape == "triangle":
        # upright isoceles triangle
        rel_y = (yy - (cy - obj.h / 2)) / obj.h
        half = np.clip(rel_y, 0, 1) * obj.w / 2
        m = (np.abs(xx - cx) <= half) & (rel_y >= 0) & (rel_y <= 1)
    else:
        raise ValueError(f"unknown shape {obj.shape!r}")
    return BinaryMask(m)


def ground_truth_masks(spec: SceneSpec, t: int = 0) -> MaskSet:
    """One disjoint mask per object, in object order, at the poses of frame t."""
    return MaskSet([_object_mask(o, t, spec.image_size) for o in spec.objects])


def object_mask(spec: SceneSpec, object_id: str, t: int = 0) -> BinaryMask:
    """Ground-truth mask of one object at frame t."""
    return _object_mask(spec.get(object_id), t, spec.image_size)


def _background(spec: SceneSpec) -> np.ndarray:
    from scipy import ndimage as ndi

    w, h = spec.image_size
    rng = _rng(spec.rng_seed ^ 0x5EED)
    noise = rng.normal(0.0, 1.0, size=(h, w))
    noise = ndi.uniform_filter(noise, size=9)
    noise = (noise / (np.abs(noise).max() + 1e-9) * 14).astype(np.int16)
    base = np.array([121, 118, 112], dtype=np.int16)
    img = np.clip(base[None, None, :] + noise[:, :, None], 0, 255).astype(np.uint8)
    return img


def render_frame(spec: SceneSpec, t: int = 0) -> np.ndarray:
    """Flat-shaded scene render at frame t; no labels, no highlights."""
    img = _background(spec)
    for obj in spec.objects:
        m = _object_mask(obj, t, spec.image_size).data
        img[m] = obj.color
        if obj.category == "drawer":
            # handle strip, part of the same object mask
            hm = _object_mask(SceneObject(
                id="_h", category="handle", name=None, shape="rect",
                cx=obj.cx + obj.velocity[0] * t, cy=obj.cy + obj.velocity[1] * t,
                w=obj.w * 0.4, h=max(3.0, obj.h * 0.08), color=HANDLE_COLOR,
            ), 0, spec.image_size).data
            img[hm] = HANDLE_COLOR
        elif obj.category == "pot":
            rim = _object_mask(SceneObject(
                id="_r", category="rim", name=None, shape="rect",
                cx=obj.cx + obj.velocity[0] * t,
                cy=obj.cy + obj.velocity[1] * t - obj.h / 2 + max(2.0, obj.h * 0.08),
                w=obj.w, h=max(3.0, obj.h * 0.16), color=POT_COLOR,
            ), 0, spec.image_size).data
            img[rim] = (118, 122, 132)
    return img


# ---------------------------------------------------------------------------
# Instruction enumeration and resolution


def _ordered_ids(objs: Sequence[SceneObject], direction: str) -> List[str]:
    ordered = sorted(objs, key=lambda o: o.cx)
    if direction == "right":
        ordered = ordered[::-1]
    return [o.id for o in ordered]


def resolve_instruction(scene: SceneSpec, instr: Instruction) -> Tuple[str, ...]:
    """Target object id(s): (block,), (vegetable, pot), or (drawer,)."""
    if instr.setting != scene.setting:
        raise ResolveError(f"instruction setting {instr.setting} != scene setting {scene.setting}")
    if instr.setting == "blocks":
        matching = [o for o in scene.by_category("block") if o.name == instr.attribute]
        ordered = _ordered_ids(matching, instr.direction)
        if len(ordered) < instr.ordinal:
            raise ResolveError(
                f"no referent: {len(ordered)} {instr.attribute} blocks, need ordinal {instr.ordinal}")
        return (ordered[instr.ordinal - 1],)
    if instr.setting == "kitchen":
        vegs = [o for o in scene.by_category("vegetable") if o.name == instr.attribute]
        if len(vegs) != 1:
            raise ResolveError(f"expected exactly one {instr.attribute}, found {len(vegs)}")
        pots = _ordered_ids(scene.by_category("pot"), instr.direction)
        if len(pots) < instr.ordinal:
            raise ResolveError(f"no referent: {len(pots)} pots, need ordinal {instr.ordinal}")
        return (vegs[0].id, pots[instr.ordinal - 1])
    if instr.setting == "drawers":
        row = [o for o in scene.by_category("drawer") if o.row == instr.row]
        ordered = _ordered_ids(row, instr.direction)
        if len(ordered) < instr.ordinal:
            raise ResolveError(f"no referent: {len(ordered)} drawers in row {instr.row}")
        return (ordered[instr.ordinal - 1],)
    raise ResolveError(f"unknown setting {instr.setting!r}")


def gen_instructions(scene: SceneSpec, manifest: SeenManifest) -> List[Instruction]:
    """Every grammatical instruction with a unique referent, categorized 1/2/3."""
    out: List[Instruction] = []
    max_ord = _MAX_ORDINAL[scene.setting]
    if scene.setting == "blocks":
        combos = [(color, o, d) for color in BLOCK_COLORS for o in range(1, max_ord + 1)
                  for d in ("left", "right")]
        candidates = [make_instruction("blocks", color, o, d) for color, o, d in combos]
    elif scene.setting == "kitchen":
        present = sorted(o.name for o in scene.by_category("vegetable"))
        candidates = [make_instruction("kitchen", veg, o, d) for veg in present
                      for o in range(1, max_ord + 1) for d in ("left", "right")]
    else:
        candidates = [make_instruction("drawers", None, o, d, row=row) for row in DRAWER_ROWS
                      for o in range(1, max_ord + 1) for d in ("left", "right")]
    for instr in candidates:
        try:
            resolve_instruction(scene, instr)
        except ResolveError:
            continue
        out.append(instr.with_category(manifest.categorize(instr)))
    return out


# ---------------------------------------------------------------------------
# Scripted executor (policy stand-in)

ROLE_CATEGORIES = {
    "blocks": ("block",),
    "kitchen": ("vegetable", "pot"),
    "drawers": ("drawer",),
}


@dataclass(frozen=True)
class ExecutorNoise:
    grasp_fail: float = 0.0
    act_fail: float = 0.0
    wrong_object: float = 0.0

    def __post_init__(self):
        for name in ("grasp_fail", "act_fail", "wrong_object"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {v}")


@dataclass(frozen=True)
class Outcome:
    engaged: Tuple[str, ...]
    result: str  # success | partial | fail
    reason: Optional[str] = None


def scripted_executor(scene: SceneSpec, highlighted: MaskSet, noise: ExecutorNoise,
                      seed: int, frame: int = 0) -> Outcome:
    """Engage whatever the highlight points at; noise injects motor failures.

    For each role the executor picks the object of that category whose
    ground-truth mask (at `frame`) overlaps the highlighted region the most.
    `wrong_object` swaps one engaged object for a random other of the same
    category; `act_fail` aborts outright; `grasp_fail` downgrades to partial.
    """
    rng = _rng(seed)
    if not len(highlighted) or highlighted.union().is_empty():
        return Outcome(engaged=(), result="fail", reason="no_highlight")
    union = highlighted.union().data

    engaged: List[str] = []
    for role_cat in ROLE_CATEGORIES[scene.setting]:
        candidates = scene.by_category(role_cat)
        overlaps = [(int((union & _object_mask(o, frame, scene.image_size).data).sum()), o.id)
                    for o in candidates]
        best_overlap, best_id = max(overlaps, key=lambda p: (p[0], p[1]))
        if best_overlap == 0:
            return Outcome(engaged=(), result="fail", reason="no_highlight")
        engaged.append(best_id)

    if rng.random() < noise.wrong_object:
        role = int(rng.integers(len(engaged)))
        cat = ROLE_CATEGORIES[scene.setting][role]
        others = [o.id for o in scene.by_category(cat) if o.id != engaged[role]]
        if others:
            engaged[role] = others[int(rng.integers(len(others)))]

    if rng.random() < noise.act_fail:
        return Outcome(engaged=tuple(engaged), result="fail", reason="act_fail")
    if rng.random() < noise.grasp_fail:
        return Outcome(engaged=tuple(engaged), result="partial", reason="grasp_fail")
    return Outcome(engaged=tuple(engaged), result="success")


# ---------------------------------------------------------------------------
# Scene bundles on disk


def write_bundle(spec: SceneSpec, out_dir, n_frames: int = 1,
                 manifest: Optional[SeenManifest] = None) -> Path:
    """scene.json + frame_%04d.png + masks.json + instructions.jsonl."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.json").write_text(json.dumps(spec.to_json_dict(), indent=2))
    for t in range(n_frames):
        Image.fromarray(render_frame(spec, t)).save(out / f"frame_{t:04d}.png")
    (out / "masks.json").write_text(json.dumps(maskset_to_rle_list(ground_truth_masks(spec, 0))))
    if manifest is not None:
        lines = []
        for instr in gen_instructions(spec, manifest):
            rec = instr.to_json_dict()
            rec["targets"] = list(resolve_instruction(spec, instr))
            lines.append(json.dumps(rec))
        (out / "instructions.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
    return out


def read_bundle(bundle_dir) -> Tuple[SceneSpec, int, List[Instruction]]:
    d = Path(bundle_dir)
    spec = SceneSpec.from_json_dict(json.loads((d / "scene.json").read_text()))
    n_frames = len(sorted(d.glob("frame_????.png")))
    instrs: List[Instruction] = []
    ipath = d / "instructions.jsonl"
    if ipath.exists():
        for line in ipath.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                rec.pop("targets", None)
                instrs.append(Instruction.from_json_dict(rec))
    return spec, n_frames, instrs


def bundle_ground_truth(bundle_dir) -> MaskSet:
    d = Path(bundle_dir)
    return maskset_from_rle_list(json.loads((d / "masks.json").read_text()))
