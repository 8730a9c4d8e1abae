"""Numeric tagging of candidate masks and the semi-transparent highlight compositor.

Rasters are HxWx3 uint8 arrays throughout. Rendering uses a bundled 5x7
bitmap digit font so outputs are bit-identical across platforms; no system
font is ever touched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, MaskSet


class AnchorError(ValueError):
    """Raised when a tag anchor cannot be placed (empty mask)."""


GRAY = (128, 128, 128)

# 5x7 digit glyphs, row-major bit strings.
_DIGITS = {
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
}
_GLYPHS = {
    ch: np.array([[c == "1" for c in row] for row in spec.split()], dtype=bool)
    for ch, spec in _DIGITS.items()
}
GLYPH_H, GLYPH_W = 7, 5


@dataclass(frozen=True)
class HighlightStyle:
    alpha: float = 0.8
    overlay_color: Tuple[int, int, int] = GRAY

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if len(self.overlay_color) != 3 or any(not (0 <= v <= 255) for v in self.overlay_color):
            raise ValueError(f"overlay_color must be an RGB triple, got {self.overlay_color}")


@dataclass(frozen=True)
class TagEntry:
    tag_id: int
    mask_index: int
    anchor: Tuple[int, int]  # (x, y), inside the mask
    box: Tuple[int, int, int, int]  # label chip (x0, y0, x1, y1), half-open


@dataclass(frozen=True)
class TagLayout:
    entries: Tuple[TagEntry, ...]

    def tag_ids(self) -> List[int]:
        return [e.tag_id for e in self.entries]


def _deepest_point(mask: BinaryMask) -> Tuple[int, int]:
    """Pixel of maximum distance to the mask boundary; row-major tie-break.

    The outside of the image counts as background, so border-hugging masks
    still anchor at their thickest point. Work happens on the bounding box
    only; padding with background keeps the border semantics.
    """
    x0, y0, x1, y1 = mask.bbox()
    window = mask.data[y0:y1, x0:x1]
    padded = np.pad(window, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    flat_idx = int(np.argmax(dist))
    dy, dx = divmod(flat_idx, x1 - x0)
    return x0 + dx, y0 + dy


def _chip_size(tag_id: int, scale: int, pad: int) -> Tuple[int, int]:
    ndigits = len(str(tag_id))
    w = ndigits * GLYPH_W * scale + (ndigits - 1) * scale + 2 * pad
    h = GLYPH_H * scale + 2 * pad
    return w, h


def _boxes_overlap(a: Tuple[int, int, int, int], b: Tuple[int, int, int, int]) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _spiral_offsets(step: int, rounds: int):
    """Deterministic outward spiral of candidate offsets, origin first."""
    yield 0, 0
    for radius in range(1, rounds + 1):
        r = radius * step
        ring = []
        for dx in range(-radius, radius + 1):
            ring.append((dx * step, -r))
            ring.append((dx * step, r))
        for dy in range(-radius + 1, radius):
            ring.append((-r, dy * step))
            ring.append((r, dy * step))
        for off in sorted(set(ring)):
            yield off


def place_tags(
    masks: MaskSet,
    image_size: Tuple[int, int],
    scale: int = 2,
    pad: int = 3,
) -> TagLayout:
    """Assign tags 1..n in mask order and lay out non-overlapping label chips.

    The anchor is the deepest interior point of each mask; the chip starts
    centered on the anchor and is nudged along an outward spiral until it
    clears all previously placed chips and the image bounds.
    """
    if not len(masks):
        raise AnchorError("cannot place tags on an empty mask set")
    w, h = image_size
    if masks.shape != (h, w):
        raise AnchorError(f"mask dimensions {masks.shape} do not match image {h, w}")

    entries: List[TagEntry] = []
    placed: List[Tuple[int, int, int, int]] = []
    for idx, mask in enumerate(masks):
        if mask.is_empty():
            raise AnchorError(f"mask {idx} is empty, no anchor exists")
        tag_id = idx + 1
        ax, ay = _deepest_point(mask)
        cw, ch = _chip_size(tag_id, scale, pad)
        base_x = ax - cw // 2
        base_y = ay - ch // 2
        chosen = None
        for dx, dy in _spiral_offsets(step=max(cw, ch) // 2 + 1, rounds=40):
            x0 = min(max(base_x + dx, 0), w - cw)
            y0 = min(max(base_y + dy, 0), h - ch)
            box = (x0, y0, x0 + cw, y0 + ch)
            if not any(_boxes_overlap(box, p) for p in placed):
                chosen = box
                break
        if chosen is None:
            # crowded scene: fall back to the clamped anchor position
            x0 = min(max(base_x, 0), w - cw)
            y0 = min(max(base_y, 0), h - ch)
            chosen = (x0, y0, x0 + cw, y0 + ch)
        placed.append(chosen)
        entries.append(TagEntry(tag_id=tag_id, mask_index=idx, anchor=(ax, ay), box=chosen))
    return TagLayout(entries=tuple(entries))


def _outline(mask: BinaryMask) -> np.ndarray:
    """1-px inner contour of a mask (computed on its bounding box)."""
    box = mask.bbox()
    out = np.zeros(mask.shape, dtype=bool)
    if box is None:
        return out
    x0, y0, x1, y1 = box
    window = mask.data[y0:y1, x0:x1]
    eroded = ndimage.binary_erosion(window, structure=np.ones((3, 3), dtype=bool), border_value=0)
    out[y0:y1, x0:x1] = window & ~eroded
    return out


def _draw_digits(img: np.ndarray, text: str, x: int, y: int, scale: int, color: Tuple[int, int, int]) -> None:
    cx = x
    for ch in text:
        glyph = _GLYPHS[ch]
        block = np.kron(glyph, np.ones((scale, scale), dtype=bool))
        gh, gw = block.shape
        img[y:y + gh, cx:cx + gw][block] = color
        cx += gw + scale


def render_annotated(
    image: np.ndarray,
    masks: MaskSet,
    layout: TagLayout,
    scale: int = 2,
    pad: int = 3,
    outline_color: Tuple[int, int, int] = (255, 255, 0),
) -> np.ndarray:
    """Draw mask contours and numeric label chips; the input image is untouched."""
    out = np.array(image, dtype=np.uint8, copy=True)
    if not layout.entries:
        return out
    for entry in layout.entries:
        mask = masks[entry.mask_index]
        out[_outline(mask)] = outline_color
    for entry in layout.entries:
        x0, y0, x1, y1 = entry.box
        out[y0:y1, x0:x1] = (32, 32, 32)
        _draw_digits(out, str(entry.tag_id), x0 + pad, y0 + pad, scale, (255, 255, 255))
    return out


def highlight(image: np.ndarray, selected: MaskSet, style: HighlightStyle) -> np.ndarray:
    """Dim everything outside the selected masks with a semi-transparent overlay.

    Pixels inside the union of the selected masks are copied bit-exactly;
    each background channel value c becomes round(alpha*overlay + (1-alpha)*c)
    with ties rounded away from zero, computed through a 256-entry lookup
    table so results are reproducible.
    """
    img = np.asarray(image, dtype=np.uint8)
    if len(selected):
        keep = selected.union().data
        if keep.shape != img.shape[:2]:
            raise ValueError(f"mask dimensions {keep.shape} do not match image {img.shape[:2]}")
    else:
        keep = np.zeros(img.shape[:2], dtype=bool)
    levels = np.arange(256, dtype=np.float64)
    out = np.empty_like(img)
    for ch in range(3):
        lut = np.floor(style.alpha * style.overlay_color[ch] + (1.0 - style.alpha) * levels + 0.5).astype(np.uint8)
        out[..., ch] = lut[img[..., ch]]
    out[keep] = img[keep]
    return out
