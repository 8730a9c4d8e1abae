"""Mask filtering stage: patch split, overlap resolution, and area threshold.

The three filters compose in a fixed order (patches -> overlap -> area).
The overlap filter follows its published pseudocode line by line; the two
interpretation knobs it leaves open (`coverage_alive_only`, tie-breaking)
are explicit config options with documented defaults.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .masks import BinaryMask, MaskSet

log = logging.getLogger(__name__)

_STRUCT = {4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
           8: np.ones((3, 3), dtype=bool)}

# Per-environment defaults: tabletop scenes (blocks, kitchen) and the drawer grid.
TABLETOP_FILTER = dict(granularity_levels=(1, 2, 3), overlap_upper=0.8, overlap_lower=0.4, min_area=600)
DRAWERS_FILTER = dict(granularity_levels=(1, 2, 3, 4), overlap_upper=0.8, overlap_lower=0.4, min_area=400)


@dataclass(frozen=True)
class FilterConfig:
    granularity_levels: Tuple[int, ...] = (1, 2, 3)
    overlap_upper: float = 0.8
    overlap_lower: float = 0.4
    min_area: int = 600
    foreground_connectivity: int = 8
    # Coverage in the overlap filter is computed over every other mask in the
    # working list, including ones already discarded or merged away. Set True
    # to restrict it to masks still alive (unprocessed or kept).
    coverage_alive_only: bool = False

    def __post_init__(self):
        if not (0.0 <= self.overlap_lower <= self.overlap_upper <= 1.0):
            raise ValueError(
                f"need 0 <= lower <= upper <= 1, got lower={self.overlap_lower} upper={self.overlap_upper}"
            )
        if self.min_area < 0:
            raise ValueError(f"min_area must be >= 0, got {self.min_area}")
        if self.foreground_connectivity not in (4, 8):
            raise ValueError("foreground_connectivity must be 4 or 8")
        if any(not (1 <= g <= 6) for g in self.granularity_levels):
            raise ValueError(f"granularity levels must be in 1..6, got {self.granularity_levels}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "granularity_levels": list(self.granularity_levels),
                "overlap_upper": self.overlap_upper,
                "overlap_lower": self.overlap_lower,
                "min_area": self.min_area,
                "foreground_connectivity": self.foreground_connectivity,
                "coverage_alive_only": self.coverage_alive_only,
            }
        )

    @classmethod
    def from_json(cls, s: str) -> "FilterConfig":
        d = json.loads(s)
        d["granularity_levels"] = tuple(d.get("granularity_levels", (1, 2, 3)))
        return cls(**d)

    @classmethod
    def tabletop(cls) -> "FilterConfig":
        return cls(**TABLETOP_FILTER)

    @classmethod
    def drawers(cls) -> "FilterConfig":
        return cls(**DRAWERS_FILTER)


def patch_filter(masks: MaskSet, connectivity: int = 8) -> MaskSet:
    """Split each mask into its connected patches, keeping holes as-is.

    Each patch is extracted filled, then every enclosed background region is
    subtracted back out of its enclosing patch, so a ring stays a ring and a
    mask containing two islands becomes two masks. Output order is input
    order, then row-major scan order of the patches within a mask.

    Works on a 1-px-padded bounding-box window per mask: the padding ring is
    background exactly like the (implicit or explicit) surroundings of a
    tight bounding box, so patch and hole topology match the full image.
    """
    bg_connectivity = 4 if connectivity == 8 else 8
    out: List[np.ndarray] = []
    for m in masks:
        box = m.bbox()
        if box is None:
            continue
        x0, y0, x1, y1 = box
        window = np.pad(m.data[y0:y1, x0:x1], 1, constant_values=False)
        fg_labels, fg_count = ndimage.label(window, structure=_STRUCT[connectivity])
        # scipy labels in scan order of first pixel, which is the canonical order
        patch_windows = [fg_labels == lab for lab in range(1, fg_count + 1)]
        order = sorted(range(fg_count),
                       key=lambda k: int(np.argmax(patch_windows[k].ravel())))

        bg_labels, bg_count = ndimage.label(~window, structure=_STRUCT[bg_connectivity])
        border = np.zeros_like(window)
        border[0, :] = border[-1, :] = True
        border[:, 0] = border[:, -1] = True
        outside = set(np.unique(bg_labels[border]).tolist()) - {0}
        holes_found = []
        for lab in range(1, bg_count + 1):
            if lab in outside:
                continue
            region = bg_labels == lab
            ys, xs = np.nonzero(region)
            # the pixel above a hole's first scan pixel belongs to its
            # enclosing foreground component
            parent_label = int(fg_labels[ys[0] - 1, xs[0]])
            holes_found.append((region, parent_label - 1))
        # fill each patch with its holes, then carve the holes back out: a
        # no-op in the result, exactly as the published procedure prescribes
        for region, parent in holes_found:
            patch_windows[parent] |= region
        for region, parent in holes_found:
            patch_windows[parent] &= ~region

        for k in order:
            full = np.zeros(m.shape, dtype=bool)
            full[y0:y1, x0:x1] = patch_windows[k][1:-1, 1:-1]
            out.append(full)
    return MaskSet([BinaryMask(a) for a in out])


def overlap_filter(
    masks: MaskSet,
    upper: float,
    lower: float,
    coverage_alive_only: bool = False,
) -> MaskSet:
    """Discard, combine, or subtract masks based on mutual overlap.

    Working copy semantics: masks are visited in descending area order (areas
    taken once, up front; ties broken by input index). A mask mostly covered
    by the union of the others (total overlap >= upper) is dropped. Otherwise
    every remaining smaller mask either gets merged into it (pairwise overlap
    over the current, possibly grown mask > lower) or is subtracted from it.
    Kept masks come back in keep order and are pairwise disjoint.
    """
    if not (0.0 <= lower <= upper <= 1.0):
        raise ValueError(f"need 0 <= lower <= upper <= 1, got lower={lower} upper={upper}")

    work: List[np.ndarray] = []
    for idx, m in enumerate(masks):
        if m.area() == 0:
            log.warning("overlap_filter: dropping zero-area mask at index %d", idx)
            continue
        work.append(m.data.copy())

    n = len(work)
    if n == 0:
        return MaskSet([])

    def bbox_of(a: np.ndarray):
        rows = np.flatnonzero(a.any(axis=1))
        cols = np.flatnonzero(a.any(axis=0))
        return (rows[0], rows[-1] + 1, cols[0], cols[-1] + 1)

    def bboxes_meet(a, b) -> bool:
        return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]

    # bboxes only prune provably-empty intersections; merges widen them and
    # subtractions keep the stale (conservative) box, so pruning stays sound
    boxes = [bbox_of(a) for a in work]
    areas = [int(a.sum()) for a in work]
    # per-pixel count of covering masks, kept in sync with every mutation of
    # `work`, so coverage never needs an O(n) union per visit
    count = np.zeros(work[0].shape, dtype=np.int32)
    for a in work:
        count += a

    # descending area, ties broken by original index ascending
    pending = sorted(range(n), key=lambda i: (-areas[i], i))
    kept: List[int] = []

    while pending:
        i = pending.pop(0)
        mi = work[i]
        r0, r1, c0, c1 = boxes[i]
        win = (slice(r0, r1), slice(c0, c1))
        if coverage_alive_only:
            alive_count = np.zeros((r1 - r0, c1 - c0), dtype=np.int32)
            for j in pending + kept:
                if bboxes_meet(boxes[i], boxes[j]):
                    alive_count += work[j][win]
            covered = int(((alive_count > 0) & mi[win]).sum())
        else:
            # count includes M[i] itself exactly once on its true pixels
            covered = int(((count[win] >= 2) & mi[win]).sum())
        if covered / areas[i] >= upper:
            continue  # discard: mostly explained by the other masks

        subtract_accum = None
        for j in list(pending):
            if bboxes_meet(boxes[i], boxes[j]):
                inter = int((work[i][win] & work[j][win]).sum())
            else:
                inter = 0
            if inter / areas[i] > lower:
                added = work[j] & ~work[i]
                count += added
                work[i] = work[i] | work[j]  # combine
                areas[i] += int(added.sum())
                bj = boxes[j]
                boxes[i] = (min(r0, bj[0]), max(r1, bj[1]), min(c0, bj[2]), max(c1, bj[3]))
                r0, r1, c0, c1 = boxes[i]
                win = (slice(r0, r1), slice(c0, c1))
                pending.remove(j)
            else:
                # the subtraction applies to the final, possibly grown mask,
                # so even currently-disjoint masks must enter the accumulator
                if subtract_accum is None:
                    subtract_accum = np.zeros_like(work[i])
                bj = boxes[j]
                jwin = (slice(bj[0], bj[1]), slice(bj[2], bj[3]))
                subtract_accum[jwin] |= work[j][jwin]
        if subtract_accum is not None:
            removed = work[i] & subtract_accum
            count -= removed
            work[i] = work[i] & ~subtract_accum
            areas[i] -= int(removed.sum())
        kept.append(i)

    return MaskSet([BinaryMask(work[i]) for i in kept])


def area_filter(masks: MaskSet, min_area: int) -> MaskSet:
    """Keep masks with area >= min_area; anything strictly below is removed."""
    return MaskSet([m for m in masks if m.area() >= min_area])


def filter_pipeline(masks: MaskSet, cfg: FilterConfig) -> MaskSet:
    """patch_filter, then overlap_filter, then area_filter."""
    out = patch_filter(masks, cfg.foreground_connectivity)
    out = overlap_filter(out, cfg.overlap_upper, cfg.overlap_lower, cfg.coverage_alive_only)
    return area_filter(out, cfg.min_area)
