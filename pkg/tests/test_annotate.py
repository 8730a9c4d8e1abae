import numpy as np
import pytest

from visaug.annotate import (AnchorError, HighlightStyle, highlight, place_tags,
                             render_annotated)
from visaug.masks import BinaryMask, MaskSet

from .oracles import composite_exact, distance_to_boundary_bruteforce, random_mask_arrays


def rect_mask(x0, y0, w, h, W=64, H=64):
    m = np.zeros((H, W), dtype=bool)
    m[y0:y0 + h, x0:x0 + w] = True
    return BinaryMask(m)


def flat_image(W=64, H=64, color=(90, 120, 150)):
    img = np.zeros((H, W, 3), dtype=np.uint8)
    img[:] = color
    return img


class TestPlaceTags:
    def test_centered_square_anchor_is_center(self):
        mask = rect_mask(20, 20, 25, 25)
        layout = place_tags(MaskSet([mask]), (64, 64))
        assert len(layout.entries) == 1
        # 25x25 square starting at 20: deepest point at its center (32, 32)
        assert layout.entries[0].anchor == (32, 32)

    def test_ring_anchor_on_band_not_in_hole(self):
        ring = rect_mask(10, 10, 30, 30).data.copy()
        ring[16:34, 16:34] = False
        mask = BinaryMask(ring)
        layout = place_tags(MaskSet([mask]), (64, 64))
        ax, ay = layout.entries[0].anchor
        assert mask.data[ay, ax]

    def test_anchor_is_deepest_point_vs_bruteforce(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            arrays = random_mask_arrays(rng, 1, 16, 16, "rings")
            if not arrays or not arrays[0].any():
                continue
            mask = BinaryMask(arrays[0])
            layout = place_tags(MaskSet([mask]), (16, 16))
            ax, ay = layout.entries[0].anchor
            dist = distance_to_boundary_bruteforce(mask.data)
            assert dist[ay, ax] == pytest.approx(dist.max())
            # row-major tie break: no earlier pixel achieves the max
            best = np.argwhere(dist == dist.max())
            by, bx = best[0]
            assert (ay, ax) == (by, bx)

    def test_twenty_masks_numbered_consecutively(self):
        masks = []
        for i in range(20):
            masks.append(rect_mask(3 + (i % 5) * 12, 3 + (i // 5) * 15, 8, 8))
        layout = place_tags(MaskSet(masks), (64, 64))
        assert layout.tag_ids() == list(range(1, 21))
        for e in layout.entries:
            mask = masks[e.mask_index]
            assert mask.data[e.anchor[1], e.anchor[0]]

    def test_empty_mask_raises(self):
        with pytest.raises(AnchorError):
            place_tags(MaskSet([BinaryMask.zeros(64, 64)]), (64, 64))

    def test_boxes_do_not_overlap_and_stay_in_bounds(self):
        # chips need elbow room; at realistic canvas sizes the greedy spiral
        # always finds a free spot
        rng = np.random.default_rng(19)
        for _ in range(20):
            arrays = random_mask_arrays(rng, 6, 128, 128, "blobs")
            arrays = [a for a in arrays if a.any()]
            if not arrays:
                continue
            layout = place_tags(MaskSet([BinaryMask(a) for a in arrays]), (128, 128))
            boxes = [e.box for e in layout.entries]
            for x0, y0, x1, y1 in boxes:
                assert 0 <= x0 < x1 <= 128 and 0 <= y0 < y1 <= 128
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    a, b = boxes[i], boxes[j]
                    assert not (a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3])

    def test_deterministic(self):
        masks = MaskSet([rect_mask(5, 5, 10, 10), rect_mask(30, 30, 12, 9)])
        a = place_tags(masks, (64, 64))
        b = place_tags(masks, (64, 64))
        assert a == b


class TestRenderAnnotated:
    def test_zero_masks_returns_image_unchanged(self):
        from visaug.annotate import TagLayout

        img = flat_image()
        out = render_annotated(img, MaskSet([]), TagLayout(entries=()))
        assert np.array_equal(out, img)
        assert out is not img

    def test_output_stable_across_runs(self):
        img = flat_image()
        masks = MaskSet([rect_mask(4, 4, 14, 14), rect_mask(30, 8, 12, 18),
                         rect_mask(20, 40, 18, 12)])
        layout = place_tags(masks, (64, 64))
        first = render_annotated(img, masks, layout)
        second = render_annotated(img, masks, layout)
        assert np.array_equal(first, second)
        assert first.tobytes() == second.tobytes()

    def test_source_image_unmodified(self):
        img = flat_image()
        before = img.copy()
        masks = MaskSet([rect_mask(4, 4, 14, 14)])
        render_annotated(img, masks, place_tags(masks, (64, 64)))
        assert np.array_equal(img, before)

    def test_chip_in_bounds_for_border_masks(self):
        rng = np.random.default_rng(29)
        for _ in range(20):
            x0 = int(rng.integers(0, 4))
            y0 = int(rng.integers(0, 4))
            mask = rect_mask(x0, y0, 6, 6, W=40, H=40)
            layout = place_tags(MaskSet([mask]), (40, 40))
            x0b, y0b, x1b, y1b = layout.entries[0].box
            assert 0 <= x0b < x1b <= 40 and 0 <= y0b < y1b <= 40


class TestHighlight:
    def test_alpha_zero_is_identity(self):
        img = flat_image()
        out = highlight(img, MaskSet([rect_mask(5, 5, 10, 10)]), HighlightStyle(alpha=0.0))
        assert np.array_equal(out, img)

    def test_selected_pixels_bit_exact(self):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        mask = rect_mask(10, 12, 20, 17)
        out = highlight(img, MaskSet([mask]), HighlightStyle())
        assert np.array_equal(out[mask.data], img[mask.data])

    def test_paper_alpha_compositing_example(self):
        img = flat_image(color=(100, 150, 200))
        out = highlight(img, MaskSet([rect_mask(0, 0, 1, 1)]), HighlightStyle(alpha=0.8))
        assert tuple(out[40, 40]) == (122, 132, 142)

    def test_matches_exact_fraction_arithmetic_all_levels(self):
        # every channel value 0..255 against round(0.8*128 + 0.2*c)
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        img[..., 0] = np.arange(256, dtype=np.uint8).reshape(16, 16)
        img[..., 1] = img[..., 0]
        img[..., 2] = img[..., 0]
        out = highlight(img, MaskSet([]), HighlightStyle(alpha=0.8))
        for c in range(256):
            want = composite_exact(c, 128, 8, 10)
            got = int(out.reshape(-1, 3)[c, 0])
            assert got == want, f"channel value {c}: {got} != {want}"

    def test_idempotent_on_selected_and_monotone_in_alpha(self):
        img = flat_image(color=(10, 200, 60))
        mask = rect_mask(2, 2, 6, 6)
        selected = MaskSet([mask])
        once = highlight(img, selected, HighlightStyle(alpha=0.8))
        assert np.array_equal(once[mask.data], img[mask.data])
        prev = img.astype(int)
        for alpha in (0.2, 0.5, 0.8, 1.0):
            out = highlight(img, selected, HighlightStyle(alpha=alpha)).astype(int)
            bg = ~mask.data
            # background moves channelwise toward the overlay as alpha grows
            toward = np.abs(out[bg] - 128)
            before = np.abs(prev[bg] - 128)
            assert (toward <= before).all()
            prev = out

    def test_alpha_one_paints_background_with_overlay(self):
        img = flat_image(color=(1, 2, 3))
        out = highlight(img, MaskSet([rect_mask(0, 0, 2, 2)]), HighlightStyle(alpha=1.0))
        assert tuple(out[50, 50]) == (128, 128, 128)
        assert tuple(out[0, 0]) == (1, 2, 3)

    def test_style_validation(self):
        with pytest.raises(ValueError):
            HighlightStyle(alpha=1.5)
        with pytest.raises(ValueError):
            HighlightStyle(overlay_color=(300, 0, 0))
