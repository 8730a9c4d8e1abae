import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visaug.masks import (BinaryMask, CodecError, DimensionError, MaskSet, algebra,
                          connected_components, holes, mask_from_b64_png, mask_from_png_bytes,
                          mask_to_b64_png, mask_to_png_bytes, resize_nearest, rle_codec,
                          rle_decode, rle_encode)

from .oracles import flood_fill_components, holes_bruteforce


def square(x0, y0, side, w=16, h=16):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y0 + side, x0:x0 + side] = True
    return BinaryMask(m)


@st.composite
def small_masks(draw, max_side=12):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    bits = draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
    return BinaryMask(np.array(bits, dtype=bool).reshape(h, w))


class TestAlgebra:
    def test_and_idempotent(self):
        x = square(2, 2, 5)
        assert algebra("and", x, x) == x

    def test_subtract_empty_is_identity(self):
        x = square(2, 2, 5)
        empty = BinaryMask.zeros(16, 16)
        assert algebra("subtract", x, empty) == x

    def test_or_of_disjoint_squares_has_area_18(self):
        a = square(0, 0, 3)
        b = square(8, 8, 3)
        # oracle: direct enumeration of true bits
        expected = int(a.data.sum() + b.data.sum())
        assert algebra("or", a, b).area() == expected == 18

    def test_dimension_mismatch_raises(self):
        with pytest.raises(DimensionError):
            algebra("and", square(0, 0, 3, w=8, h=8), square(0, 0, 3, w=9, h=8))

    def test_not_is_unary(self):
        x = square(0, 0, 2, w=4, h=4)
        assert algebra("not", x).area() == 16 - 4
        with pytest.raises(ValueError):
            algebra("not", x, x)

    def test_inputs_unmodified(self):
        a = square(0, 0, 3)
        before = a.data.copy()
        algebra("subtract", a, square(1, 1, 3))
        assert np.array_equal(a.data, before)

    @given(small_masks(), small_masks())
    @settings(max_examples=60, deadline=None)
    def test_de_morgan(self, a, b):
        if a.shape != b.shape:
            b = BinaryMask(np.resize(b.data, a.shape))
        lhs = algebra("not", algebra("and", a, b))
        rhs = algebra("or", algebra("not", a), algebra("not", b))
        assert lhs == rhs
        lhs2 = algebra("not", algebra("or", a, b))
        rhs2 = algebra("and", algebra("not", a), algebra("not", b))
        assert lhs2 == rhs2


class TestConnectedComponents:
    def test_empty_mask_gives_no_components(self):
        assert len(connected_components(BinaryMask.zeros(8, 8))) == 0

    def test_two_disjoint_squares(self):
        m = algebra("or", square(0, 0, 3), square(8, 8, 3))
        comps = connected_components(m, 8)
        assert len(comps) == 2
        assert [c.area() for c in comps] == [9, 9]

    def test_diagonal_pixels_connectivity(self):
        m = np.zeros((4, 4), dtype=bool)
        m[1, 1] = m[2, 2] = True
        assert len(connected_components(BinaryMask(m), 4)) == 2
        assert len(connected_components(BinaryMask(m), 8)) == 1

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_flood_fill_oracle(self, connectivity):
        rng = np.random.default_rng(7)
        for _ in range(50):
            grid = rng.random((12, 14)) < 0.4
            got = connected_components(BinaryMask(grid), connectivity)
            want = flood_fill_components(grid, connectivity)
            assert len(got) == len(want)
            for g, w in zip(got, want):
                assert np.array_equal(g.data, w)

    def test_union_equals_input_and_disjoint(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            grid = rng.random((10, 10)) < 0.45
            comps = connected_components(BinaryMask(grid), 8)
            if not len(comps):
                assert not grid.any()
                continue
            union = comps.union()
            assert np.array_equal(union.data, grid)
            total = sum(c.area() for c in comps)
            assert total == union.area()  # pairwise disjoint


class TestHoles:
    def test_solid_square_has_no_holes(self):
        assert holes(square(2, 2, 5)) == []

    def test_center_hole_found_with_parent(self):
        ring = square(2, 2, 5).data.copy()
        ring[4, 4] = False
        hs = holes(BinaryMask(ring), 8)
        assert len(hs) == 1
        hole, parent = hs[0]
        assert hole.area() == 1
        assert hole.data[4, 4]
        assert parent == 0

    def test_border_strip_is_not_a_hole(self):
        m = np.ones((6, 6), dtype=bool)
        m[:, 0] = False  # background column touching the border
        assert holes(BinaryMask(m), 8) == []

    def test_nested_island_in_hole(self):
        # ring with an island inside its hole: hole band parent is the ring
        m = np.zeros((9, 9), dtype=bool)
        m[1:8, 1:8] = True
        m[2:7, 2:7] = False
        m[4, 4] = True  # island
        hs = holes(BinaryMask(m), 8)
        assert len(hs) == 1
        hole, parent = hs[0]
        assert hole.area() == 24  # 5x5 band minus island
        comps = connected_components(BinaryMask(m), 8)
        assert comps[parent].area() == comps[0].area()  # ring is first in scan order

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_bruteforce(self, connectivity):
        rng = np.random.default_rng(11)
        for _ in range(40):
            grid = rng.random((10, 12)) < 0.55
            got = holes(BinaryMask(grid), connectivity)
            want = holes_bruteforce(grid, connectivity)
            assert len(got) == len(want)
            for (gm, gp), (wm, wp) in zip(got, want):
                assert np.array_equal(gm.data, wm)
                assert gp == wp

    def test_holes_never_touch_foreground_or_border(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            grid = rng.random((12, 12)) < 0.6
            for hole, _ in holes(BinaryMask(grid), 8):
                assert not (hole.data & grid).any()
                assert not hole.data[0, :].any() and not hole.data[-1, :].any()
                assert not hole.data[:, 0].any() and not hole.data[:, -1].any()


class TestRle:
    def test_all_false_encodes_single_run(self):
        assert rle_encode(BinaryMask.zeros(2, 2)) == {"w": 2, "h": 2, "runs": [4]}

    def test_all_true_has_leading_zero_run(self):
        assert rle_encode(BinaryMask.ones(3, 1)) == {"w": 3, "h": 1, "runs": [0, 3]}

    def test_wrong_total_raises(self):
        with pytest.raises(CodecError):
            rle_decode({"w": 2, "h": 2, "runs": [3]})

    def test_zero_interior_run_raises(self):
        with pytest.raises(CodecError):
            rle_decode({"w": 2, "h": 2, "runs": [2, 0, 2]})

    def test_negative_run_raises(self):
        with pytest.raises(CodecError):
            rle_decode({"w": 2, "h": 2, "runs": [-1, 5]})

    def test_codec_dispatch(self):
        m = square(1, 1, 2, w=5, h=4)
        assert rle_codec("decode", rle_codec("encode", m)) == m

    def test_roundtrip_10k_random_masks(self):
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            h = int(rng.integers(1, 12))
            w = int(rng.integers(1, 12))
            grid = rng.random((h, w)) < rng.random()
            m = BinaryMask(grid)
            assert rle_decode(rle_encode(m)) == m

    @given(small_masks())
    @settings(max_examples=80, deadline=None)
    def test_encode_decode_identities(self, m):
        enc = rle_encode(m)
        assert rle_decode(enc) == m
        assert rle_encode(rle_decode(enc)) == enc


class TestResize:
    def test_same_size_is_identity(self):
        m = square(100, 100, 50, w=480, h=480)
        assert resize_nearest(m, 480, 480) == m

    def test_all_true_stays_all_true(self):
        m = BinaryMask.ones(7, 5)
        for nw, nh in [(1, 1), (3, 9), (14, 10)]:
            out = resize_nearest(m, nw, nh)
            assert out.area() == nw * nh

    def test_checkerboard_upsample(self):
        m = BinaryMask(np.array([[1, 0], [0, 1]], dtype=bool))
        out = resize_nearest(m, 4, 4)
        want = np.array([
            [1, 1, 0, 0],
            [1, 1, 0, 0],
            [0, 0, 1, 1],
            [0, 0, 1, 1],
        ], dtype=bool)
        assert np.array_equal(out.data, want)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            resize_nearest(BinaryMask.ones(2, 2), 0, 4)


class TestSerialization:
    def test_png_roundtrip(self):
        m = square(3, 2, 6, w=20, h=15)
        assert mask_from_png_bytes(mask_to_png_bytes(m)) == m

    def test_b64_roundtrip(self):
        m = square(0, 0, 4, w=9, h=9)
        assert mask_from_b64_png(mask_to_b64_png(m)) == m

    def test_maskset_requires_same_dims(self):
        with pytest.raises(DimensionError):
            MaskSet([BinaryMask.ones(3, 3), BinaryMask.ones(4, 3)])
