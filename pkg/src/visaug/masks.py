"""Binary mask representation, boolean algebra, connected components, and serialization.

Masks are value-semantic: every operation returns a fresh mask and never
mutates its inputs. The pixel grid is stored row-major as a 2-D numpy bool
array.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage


class DimensionError(ValueError):
    """Raised when masks of different sizes are combined."""


class CodecError(ValueError):
    """Raised on a malformed RLE run stream."""


_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return _STRUCT_4
    if connectivity == 8:
        return _STRUCT_8
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


@dataclass(frozen=True)
class BinaryMask:
    """A 2-D boolean pixel grid.

    `data` is indexed [row, col] (i.e. [y, x]); shape is (height, width).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] <= 0 or arr.shape[1] <= 0:
            raise DimensionError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def area(self) -> int:
        """Number of true pixels."""
        return int(self.data.sum())

    def bbox(self) -> Tuple[int, int, int, int] | None:
        """(x0, y0, x1, y1) half-open bounding box of true pixels, or None if empty."""
        rows = np.flatnonzero(self.data.any(axis=1))
        if rows.size == 0:
            return None
        cols = np.flatnonzero(self.data.any(axis=0))
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1

    def is_empty(self) -> bool:
        return not bool(self.data.any())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def ones(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        return cls(np.asarray(arr, dtype=bool))


@dataclass
class MaskSet:
    """An ordered list of masks sharing one width/height."""

    masks: List[BinaryMask] = field(default_factory=list)

    def __post_init__(self):
        shapes = {m.shape for m in self.masks}
        if len(shapes) > 1:
            raise DimensionError(f"masks in a set must share dimensions, got {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self) -> Iterator[BinaryMask]:
        return iter(self.masks)

    def __getitem__(self, i) -> BinaryMask:
        return self.masks[i]

    @property
    def shape(self) -> Tuple[int, int] | None:
        return self.masks[0].shape if self.masks else None

    def union(self) -> BinaryMask:
        if not self.masks:
            raise ValueError("cannot take union of empty MaskSet")
        out = np.zeros(self.masks[0].shape, dtype=bool)
        for m in self.masks:
            out |= m.data
        return BinaryMask(out)

    def areas(self) -> List[int]:
        return [m.area() for m in self.masks]


def _check_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def mask_and(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _check_same_shape(a, b)
    return BinaryMask(a.data & b.data)


def mask_or(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _check_same_shape(a, b)
    return BinaryMask(a.data | b.data)


def mask_not(a: BinaryMask) -> BinaryMask:
    return BinaryMask(~a.data)


def mask_subtract(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    """a AND NOT b."""
    _check_same_shape(a, b)
    return BinaryMask(a.data & ~b.data)


_ALGEBRA = {
    "and": mask_and,
    "or": mask_or,
    "not": mask_not,
    "subtract": mask_subtract,
}


def algebra(op: str, a: BinaryMask, b: BinaryMask | None = None) -> BinaryMask:
    """Dispatch pixelwise boolean ops by name; `not` is unary."""
    try:
        fn = _ALGEBRA[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}, expected one of {sorted(_ALGEBRA)}")
    if op == "not":
        if b is not None:
            raise ValueError("'not' takes a single mask")
        return fn(a)
    if b is None:
        raise ValueError(f"{op!r} needs two masks")
    return fn(a, b)


def connected_components(m: BinaryMask, connectivity: int = 8) -> MaskSet:
    """Split a mask into its connected foreground regions.

    Components are pairwise disjoint, their union equals the input, and they
    are ordered by their first pixel in row-major scan order.
    """
    labels, count = ndimage.label(m.data, structure=_structure(connectivity))
    if count == 0:
        return MaskSet([])
    flat = labels.ravel()
    # first occurrence of each label in scan order fixes the canonical ordering
    first_seen: dict[int, int] = {}
    nz = np.flatnonzero(flat)
    lab_nz = flat[nz]
    for pos, lab in zip(nz.tolist(), lab_nz.tolist()):
        if lab not in first_seen:
            first_seen[lab] = pos
            if len(first_seen) == count:
                break
    order = sorted(first_seen, key=first_seen.__getitem__)
    return MaskSet([BinaryMask(labels == lab) for lab in order])


def holes(m: BinaryMask, connectivity: int = 8) -> List[Tuple[BinaryMask, int]]:
    """Enclosed background regions and the index of the enclosing component.

    `connectivity` is the foreground convention; the background is analyzed
    with the complementary one (8<->4), the standard pairing that keeps
    enclosure well defined. A background region touching the image border is
    not a hole. Returned parent indices refer to
    ``connected_components(m, connectivity)`` ordering.
    """
    bg_connectivity = 4 if connectivity == 8 else 8
    fg_labels, fg_count = ndimage.label(m.data, structure=_structure(connectivity))
    if fg_count == 0:
        return []
    # map scipy labels to canonical component indices (row-major first pixel)
    comps = connected_components(m, connectivity)
    label_to_index = {}
    for idx, comp in enumerate(comps):
        r, c = np.argwhere(comp.data)[0]
        label_to_index[fg_labels[r, c]] = idx

    bg_labels, bg_count = ndimage.label(~m.data, structure=_structure(bg_connectivity))
    if bg_count == 0:
        return []
    border = np.zeros(m.shape, dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    border_labels = set(np.unique(bg_labels[border & ~m.data]).tolist()) - {0}

    out: List[Tuple[BinaryMask, int]] = []
    for lab in range(1, bg_count + 1):
        if lab in border_labels:
            continue
        region = bg_labels == lab
        # the pixel directly above the region's first scan-order pixel is
        # foreground (else it would belong to the same background region)
        # and belongs to the enclosing component
        r, c = np.argwhere(region)[0]
        parent_label = fg_labels[r - 1, c]
        out.append((BinaryMask(region), label_to_index[int(parent_label)]))
    return out


def rle_encode(m: BinaryMask) -> dict:
    """Encode as alternating run lengths, starting with the false run, row-major."""
    flat = m.data.ravel()
    n = flat.size
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [n]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return {"w": m.width, "h": m.height, "runs": [int(r) for r in runs]}


def rle_decode(payload: dict) -> BinaryMask:
    """Inverse of :func:`rle_encode`; raises CodecError on a malformed stream."""
    try:
        w = int(payload["w"])
        h = int(payload["h"])
        runs = list(payload["runs"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CodecError(f"bad RLE payload: {exc}") from exc
    if w <= 0 or h <= 0:
        raise CodecError(f"bad dimensions {w}x{h}")
    if not runs:
        raise CodecError("empty run stream")
    for i, r in enumerate(runs):
        if not isinstance(r, int) or isinstance(r, bool):
            raise CodecError(f"run {i} is not an integer: {r!r}")
        if r < 0:
            raise CodecError(f"negative run at {i}: {r}")
        if r == 0 and i > 0:
            raise CodecError(f"zero-length run at {i} (only the leading false run may be 0)")
    if sum(runs) != w * h:
        raise CodecError(f"runs sum to {sum(runs)}, expected {w * h}")
    flat = np.zeros(w * h, dtype=bool)
    pos = 0
    val = False
    for r in runs:
        if val:
            flat[pos:pos + r] = True
        pos += r
        val = not val
    return BinaryMask(flat.reshape(h, w))


def rle_codec(direction: str, payload):
    """encode: BinaryMask -> runs dict; decode: runs dict -> BinaryMask."""
    if direction == "encode":
        return rle_encode(payload)
    if direction == "decode":
        return rle_decode(payload)
    raise ValueError(f"direction must be 'encode' or 'decode', got {direction!r}")


def resize_nearest(m: BinaryMask, new_w: int, new_h: int) -> BinaryMask:
    """Nearest-neighbor resample; identity when the size is unchanged."""
    if new_w <= 0 or new_h <= 0:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    if (new_h, new_w) == m.shape:
        return m
    rows = (np.arange(new_h) * m.height) // new_h
    cols = (np.arange(new_w) * m.width) // new_w
    return BinaryMask(m.data[np.ix_(rows, cols)])


def mask_to_png_bytes(m: BinaryMask) -> bytes:
    """1-bit PNG serialization."""
    img = Image.fromarray(m.data.astype(np.uint8) * 255).convert("1")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> BinaryMask:
    img = Image.open(io.BytesIO(data)).convert("L")
    return BinaryMask(np.asarray(img) > 127)


def maskset_to_rle_list(ms: MaskSet) -> List[dict]:
    return [rle_encode(m) for m in ms]


def maskset_from_rle_list(items: Sequence[dict]) -> MaskSet:
    return MaskSet([rle_decode(it) for it in items])


def mask_from_wire(obj) -> BinaryMask:
    """Either wire form: an RLE object or a base64 1-bit PNG string."""
    if isinstance(obj, str):
        try:
            return mask_from_b64_png(obj)
        except Exception as exc:
            raise CodecError(f"bad PNG mask payload: {exc}") from exc
    if isinstance(obj, dict):
        return rle_decode(obj)
    raise CodecError(f"mask payload must be an RLE object or base64 PNG, got {type(obj).__name__}")


def maskset_from_wire(items: Sequence) -> MaskSet:
    return MaskSet([mask_from_wire(it) for it in items])


def mask_to_b64_png(m: BinaryMask) -> str:
    return base64.b64encode(mask_to_png_bytes(m)).decode("ascii")


def mask_from_b64_png(s: str) -> BinaryMask:
    return mask_from_png_bytes(base64.b64decode(s))
