import json
import sys

import numpy as np
import pytest

from visaug.backends import (BackendError, CorruptionConfig, HttpBackend, SessionError,
                             StdioBackend, SyntheticBackend, TrackInitError, make_backend_app)
from visaug.filters import FilterConfig, filter_pipeline
from visaug.masks import BinaryMask, MaskSet, maskset_from_rle_list, maskset_to_rle_list
from visaug.scenesim import gen_scene, object_mask, render_frame, write_bundle

from .server_util import LiveServer


@pytest.fixture(scope="module")
def blocks_scene():
    return gen_scene("blocks", {"count": 4, "order": ["orange", "blue", "green", "blue"]},
                     seed=10, image_size=(192, 192))


class TestSyntheticSegment:
    def test_zero_corruption_level1_returns_exact_ground_truth(self, blocks_scene):
        spec, frame0, gt = blocks_scene
        backend = SyntheticBackend(spec)
        masks = backend.segment(frame0, (1,))
        assert len(masks) == 4
        for got, want in zip(masks, gt):
            assert got == want

    def test_higher_granularity_emits_part_fragments(self, blocks_scene):
        spec, frame0, gt = blocks_scene
        backend = SyntheticBackend(spec)
        masks = backend.segment(frame0, (1, 2, 3))
        assert len(masks) == 12  # whole + 2 fragments per object
        # fragments merge back to one mask per object through the filters
        out = filter_pipeline(masks, FilterConfig(granularity_levels=(1, 2, 3), min_area=100))
        assert len(out) == 4
        assert sorted(m.area() for m in out) == sorted(m.area() for m in gt)

    def test_split_one_produces_disjoint_patches_in_one_mask(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        backend = SyntheticBackend(spec, CorruptionConfig(split_probability=1.0, rng_seed=5))
        masks = backend.segment(frame0, (1,))
        assert len(masks) == 4
        from visaug.masks import connected_components

        for m in masks:
            assert len(connected_components(m)) >= 2

    def test_drop_all_removes_targets(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        backend = SyntheticBackend(spec, CorruptionConfig(drop_probability=1.0))
        assert len(backend.segment(frame0, (1,))) == 0

    def test_drop_ids_targets_specific_object(self, blocks_scene):
        spec, frame0, gt = blocks_scene
        backend = SyntheticBackend(spec, CorruptionConfig(drop_ids=("block1",)))
        masks = backend.segment(frame0, (1,))
        assert len(masks) == 3
        target_gt = object_mask(spec, "block1", 0)
        for m in masks:
            assert not (m.data & target_gt.data).any()

    def test_corruptions_seed_deterministic(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        cfg = CorruptionConfig(split_probability=0.5, hole_probability=0.5,
                               overseg_probability=0.5, spurious_fragment_rate=2.0, rng_seed=77)
        a = SyntheticBackend(spec, cfg).segment(frame0, (1,))
        b = SyntheticBackend(spec, cfg).segment(frame0, (1,))
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert x == y

    def test_hole_punched_masks_have_holes(self, blocks_scene):
        from visaug.masks import holes

        spec, frame0, _ = blocks_scene
        backend = SyntheticBackend(spec, CorruptionConfig(hole_probability=1.0))
        masks = backend.segment(frame0, (1,))
        assert any(holes(m) for m in masks)


class TestSyntheticTracking:
    def test_init_binds_exact_masks(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        backend = SyntheticBackend(spec)
        session = backend.track_init(frame0, MaskSet([object_mask(spec, "block2", 0)]))
        assert session.bound_object_ids == ("block2",)

    def test_init_binds_eroded_mask_by_max_overlap(self, blocks_scene):
        from scipy import ndimage

        spec, frame0, _ = blocks_scene
        gt = object_mask(spec, "block2", 0)
        eroded = BinaryMask(ndimage.binary_erosion(gt.data, iterations=3))
        assert 0.5 < eroded.area() / gt.area() < 0.9
        backend = SyntheticBackend(spec)
        session = backend.track_init(frame0, MaskSet([eroded]))
        assert session.bound_object_ids == ("block2",)

    def test_empty_init_raises(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        with pytest.raises(TrackInitError):
            SyntheticBackend(spec).track_init(frame0, MaskSet([]))

    def test_no_overlap_init_raises(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        corner = np.zeros((192, 192), dtype=bool)
        corner[0:3, 0:3] = True
        with pytest.raises(TrackInitError):
            SyntheticBackend(spec).track_init(frame0, MaskSet([BinaryMask(corner)]))

    def test_static_scene_masks_constant(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        backend = SyntheticBackend(spec)
        want = object_mask(spec, "block0", 0)
        session = backend.track_init(frame0, MaskSet([want]))
        for _ in range(3):
            out = backend.track_step(session, frame0)
            assert out[0] == want

    def test_translated_object_mask_follows(self):
        spec, frame0, _ = gen_scene(
            "blocks", {"count": 2, "order": ["orange", "blue"],
                       "velocities": {"block0": (10, 0)}}, seed=3, image_size=(192, 192))
        backend = SyntheticBackend(spec)
        session = backend.track_init(frame0, MaskSet([object_mask(spec, "block0", 0)]))
        out1 = backend.track_step(session, render_frame(spec, 1))
        assert out1[0] == object_mask(spec, "block0", 1)
        assert np.array_equal(np.roll(object_mask(spec, "block0", 0).data, 10, axis=1),
                              out1[0].data)

    def test_hundred_steps_recorded(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        backend = SyntheticBackend(spec)
        session = backend.track_init(frame0, MaskSet([object_mask(spec, "block0", 0)]))
        for _ in range(100):
            backend.track_step(session, frame0)
        assert session.frame_counter == 100
        assert len(session.latencies_ms) == 100

    def test_expired_session_raises(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        backend = SyntheticBackend(spec, session_timeout_s=0.0)
        session = backend.track_init(frame0, MaskSet([object_mask(spec, "block0", 0)]))
        import time

        time.sleep(0.01)
        with pytest.raises(SessionError):
            backend.track_step(session, frame0)


class TestWire:
    def test_maskset_rle_roundtrip_bit_identical(self, blocks_scene):
        spec, frame0, gt = blocks_scene
        payload = json.dumps(maskset_to_rle_list(gt))
        back = maskset_from_rle_list(json.loads(payload))
        assert len(back) == len(gt)
        for a, b in zip(back, gt):
            assert a == b
        assert json.dumps(maskset_to_rle_list(back)) == payload

    def test_http_transport_matches_in_process(self, blocks_scene):
        spec, frame0, gt = blocks_scene
        local = SyntheticBackend(spec)
        with LiveServer(make_backend_app(SyntheticBackend(spec))) as server:
            remote = HttpBackend(server.base_url)
            got = remote.segment(frame0, (1,))
            want = local.segment(frame0, (1,))
            assert len(got) == len(want)
            for a, b in zip(got, want):
                assert a == b
            session = remote.track_init(frame0, MaskSet([gt[0]]))
            stepped = remote.track_step(session, frame0)
            assert stepped[0] == gt[0]
            assert session.frame_counter == 1 and len(session.latencies_ms) == 1

    def test_http_unreachable_raises_backend_error(self, blocks_scene):
        spec, frame0, _ = blocks_scene
        remote = HttpBackend("http://127.0.0.1:1", timeout_s=0.2)
        with pytest.raises(BackendError):
            remote.segment(frame0, (1,))

    def test_stdio_transport_roundtrip(self, blocks_scene, tmp_path):
        spec, frame0, gt = blocks_scene
        bundle = write_bundle(spec, tmp_path / "bundle", n_frames=1)
        client = StdioBackend([sys.executable, "-m", "visaug.cli", "serve-backend",
                               "--bundle", str(bundle), "--transport", "stdio"])
        try:
            got = client.segment(frame0, (1,))
            assert len(got) == 4
            for a, b in zip(got, gt):
                assert a == b
            session = client.track_init(frame0, MaskSet([gt[1]]))
            out = client.track_step(session, frame0)
            assert out[0] == gt[1]
        finally:
            client.close()

    def test_http_bad_payload_is_400(self, blocks_scene):
        import requests

        spec, _, _ = blocks_scene
        with LiveServer(make_backend_app(SyntheticBackend(spec))) as server:
            r = requests.post(f"{server.base_url}/segment",
                              json={"image_png_b64": "not-base64!!", "granularity": [1]})
            assert r.status_code == 400
            r2 = requests.post(f"{server.base_url}/track/step",
                               json={"session_id": "nope", "image_png_b64": "x"})
            assert r2.status_code == 404


class TestWireDualForm:
    def test_track_init_accepts_png_masks_on_the_wire(self, blocks_scene):
        import requests

        from visaug.masks import mask_to_b64_png

        spec, frame0, gt = blocks_scene
        from visaug import rasters

        with LiveServer(make_backend_app(SyntheticBackend(spec))) as server:
            r = requests.post(f"{server.base_url}/track/init", json={
                "image_png_b64": rasters.to_b64_png(frame0),
                "masks": [mask_to_b64_png(gt[0])],
            })
            assert r.status_code == 200
            sid = r.json()["session_id"]
            r2 = requests.post(f"{server.base_url}/track/step", json={
                "session_id": sid,
                "image_png_b64": rasters.to_b64_png(frame0),
            })
            assert r2.status_code == 200
            from visaug.masks import maskset_from_rle_list

            out = maskset_from_rle_list(r2.json()["masks"])
            assert out[0] == gt[0]

    def test_garbage_mask_payload_is_400(self, blocks_scene):
        import requests

        from visaug import rasters

        spec, frame0, _ = blocks_scene
        with LiveServer(make_backend_app(SyntheticBackend(spec))) as server:
            r = requests.post(f"{server.base_url}/track/init", json={
                "image_png_b64": rasters.to_b64_png(frame0),
                "masks": [123],
            })
            assert r.status_code == 400
