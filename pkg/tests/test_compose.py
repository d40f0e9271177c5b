import numpy as np
import pytest

from motionforge.compose import (
    CH_CATEGORY,
    CH_PARTITION,
    CH_STRENGTH,
    CH_U,
    CH_V,
    ControlTensor,
    MotionScript,
    SENTINEL,
    compose,
    compose_from_pipeline,
    read_tensor,
    render_preview,
    tensor_from_bytes,
    write_tensor,
)
from motionforge.errors import (
    CorruptHeader,
    FrameOutOfRange,
    KeyframeOutOfRange,
    MissingUnitScript,
    TruncatedPayload,
)
from motionforge.geometry import CameraIntrinsics, RigidTransform, project
from motionforge.scene import build_partition, scene_from_depth
from motionforge.trajectory import decompose_all

W, H, T = 48, 36, 8
INTR = CameraIntrinsics.default_for(W, H)


def flat_scene():
    return scene_from_depth(np.ones((H, W)), INTR)


def rect_mask(x0, y0, x1, y1):
    m = np.zeros((H, W), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def two_unit_setup():
    scene = flat_scene()
    masks = [rect_mask(4, 4, 16, 16), rect_mask(24, 18, 40, 30)]
    partition = build_partition(scene, masks, ["drag", "brush"])
    return scene, partition


def pixel_grid_channels(scene):
    us, vs = np.meshgrid(np.arange(scene.width), np.arange(scene.height))
    return us.astype(np.float64), vs.astype(np.float64)


class TestMotionScript:
    def test_frame0_identity_implied(self):
        s = MotionScript(frame_count=T, camera=[(4, RigidTransform(np.eye(3), [1, 0, 0]))])
        assert s.camera[0][0] == 0
        assert s.camera_at(0).is_identity()

    def test_frame0_nonidentity_rejected(self):
        with pytest.raises(ValueError):
            MotionScript(frame_count=T, camera=[(0, RigidTransform(np.eye(3), [1, 0, 0]))])

    def test_keyframe_out_of_range(self):
        with pytest.raises(KeyframeOutOfRange):
            MotionScript(frame_count=T, camera=[(T, RigidTransform.identity())])

    def test_hold_after_last_keyframe(self):
        g = RigidTransform(np.eye(3), [2, 0, 0])
        s = MotionScript(frame_count=T, camera=[(3, g)])
        assert np.allclose(s.camera_at(7).translation, [2, 0, 0])

    def test_interpolation_between_keyframes(self):
        g = RigidTransform(np.eye(3), [4, 0, 0])
        s = MotionScript(frame_count=T, camera=[(4, g)])
        assert np.allclose(s.camera_at(2).translation, [2, 0, 0])

    def test_scalar_strength_expands(self):
        s = MotionScript(frame_count=T, unit_strengths={1: 2.5})
        assert s.unit_strength_at(1, 0) == 0.0
        assert s.unit_strength_at(1, 1) == 2.5
        assert s.unit_strength_at(1, 7) == 2.5

    def test_negative_strength_rejected(self):
        with pytest.raises(ValueError):
            MotionScript(frame_count=T, unit_strengths={1: [(0, 0.0), (2, -1.0)]})

    def test_validation_against_partition(self):
        _, partition = two_unit_setup()
        with pytest.raises(MissingUnitScript) as err:
            MotionScript(frame_count=T).validate_against(partition)
        assert err.value.units == [1, 2]
        ok = MotionScript(frame_count=T,
                          unit_rigids={1: [(2, RigidTransform.identity())]},
                          unit_strengths={2: 1.0})
        ok.validate_against(partition)

    def test_unknown_unit_rejected(self):
        _, partition = two_unit_setup()
        s = MotionScript(frame_count=T, unit_rigids={9: []}, unit_strengths={2: 1.0})
        with pytest.raises(MissingUnitScript):
            s.validate_against(partition)

    def test_json_round_trip(self):
        s = MotionScript(
            frame_count=T,
            camera=[(5, RigidTransform.from_axis_angle([0, 0.1, 0], [0, 0, 0.3]))],
            unit_rigids={1: [(3, RigidTransform.from_axis_angle([0.2, 0, 0], [1, 2, 3]))]},
            unit_strengths={2: [(0, 0.0), (4, 1.5)]})
        back = MotionScript.from_json(s.to_json())
        assert back.frame_count == s.frame_count
        for t in range(T):
            assert np.abs(back.camera_at(t).as_matrix() - s.camera_at(t).as_matrix()).max() < 1e-12
            assert back.unit_strength_at(2, t) == s.unit_strength_at(2, t)


class TestCompose:
    def test_static_script_repeats_frame0(self):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T,
                              unit_rigids={1: []}, unit_strengths={2: 0.0})
        tensor = compose(scene, partition, script)
        assert tensor.data.shape == (T, 5, H, W)
        us, vs = pixel_grid_channels(scene)
        for t in range(T):
            assert np.abs(tensor.data[t, CH_U] - us).max() < 1e-6
            assert np.abs(tensor.data[t, CH_V] - vs).max() < 1e-6
            assert np.array_equal(tensor.data[t], tensor.data[0])
        assert np.all(tensor.data[:, CH_STRENGTH] == 0)

    def test_borderland_channels(self):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T,
                              unit_rigids={1: [(4, RigidTransform(np.eye(3), [0.1, 0, 0]))]},
                              unit_strengths={2: 2.0})
        tensor = compose(scene, partition, script)
        border = partition.labels == 0
        for t in range(T):
            assert np.all(tensor.data[t, CH_STRENGTH][border] == 0)
            assert np.all(tensor.data[t, CH_PARTITION][border] == 0)
            assert np.all(tensor.data[t, CH_CATEGORY][border] == 0)

    def test_dolly_in_spreads_points_from_principal_point(self):
        # camera advancing toward a flat scene: every projected point moves
        # radially away from the principal point; verify against per-pixel
        # brute-force projection
        scene, partition = two_unit_setup()
        camera = [(T - 1, RigidTransform(np.eye(3), [0, 0, 0.1 * (T - 1)]))]
        script = MotionScript(frame_count=T, camera=camera,
                              unit_rigids={1: []}, unit_strengths={2: 0.0})
        tensor = compose(scene, partition, script)
        t = T - 1
        e_inv = script.camera_at(t).inverse()
        for v in range(0, H, 5):
            for u in range(0, W, 7):
                expected = project(scene.intrinsics, e_inv.apply(scene.points[v, u]))
                got = tensor.data[t, CH_U, v, u], tensor.data[t, CH_V, v, u]
                if got[0] == SENTINEL:
                    ok_u = -0.5 <= expected[0] < W - 0.5
                    ok_v = -0.5 <= expected[1] < H - 0.5
                    assert not (ok_u and ok_v)
                else:
                    assert np.abs(np.array(got) - expected).max() < 1e-5
                    cx, cy = scene.intrinsics.cx, scene.intrinsics.cy
                    r0 = np.hypot(u - cx, v - cy)
                    r1 = np.hypot(got[0] - cx, got[1] - cy)
                    assert r1 >= r0 - 1e-9

    def test_strength_constant_within_unit(self):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T, unit_rigids={1: []},
                              unit_strengths={1: 0.7, 2: [(0, 0.0), (7, 3.0)]})
        tensor = compose(scene, partition, script)
        for t in range(T):
            for p in (1, 2):
                vals = tensor.data[t, CH_STRENGTH][partition.labels == p]
                assert np.all(vals == vals[0])

    def test_partition_category_channels_integer_frame_constant(self):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T,
                              unit_rigids={1: [(5, RigidTransform(np.eye(3), [0, 0.05, 0]))]},
                              unit_strengths={2: 1.0})
        tensor = compose(scene, partition, script)
        for ch in (CH_PARTITION, CH_CATEGORY):
            chan = tensor.data[:, ch]
            assert np.array_equal(chan, np.rint(chan))
            for t in range(1, T):
                assert np.array_equal(chan[t], chan[0])
        assert set(np.unique(tensor.data[:, CH_CATEGORY])) <= {0.0, 1.0, 2.0}
        assert set(np.unique(tensor.data[:, CH_PARTITION])) == {0.0, 1.0, 2.0}

    def test_missing_script_rejected(self):
        scene, partition = two_unit_setup()
        with pytest.raises(MissingUnitScript):
            compose(scene, partition, MotionScript(frame_count=T))

    def test_out_of_frame_written_as_sentinel_not_clamped(self):
        scene, partition = two_unit_setup()
        # drag unit 1 far off to the left
        script = MotionScript(frame_count=T,
                              unit_rigids={1: [(T - 1, RigidTransform(np.eye(3), [-5, 0, 0]))]},
                              unit_strengths={2: 0.0})
        tensor = compose(scene, partition, script)
        unit1 = partition.labels == 1
        assert np.all(tensor.data[T - 1, CH_U][unit1] == SENTINEL)
        assert np.all(tensor.data[T - 1, CH_V][unit1] == SENTINEL)
        # sentinel never leaks into other channels
        assert np.all(tensor.data[T - 1, CH_PARTITION][unit1] == 1)

    def test_disentanglement_bit_identical(self):
        scene, partition = two_unit_setup()
        base = MotionScript(frame_count=T,
                            unit_rigids={1: [(4, RigidTransform(np.eye(3), [0.05, 0, 0]))]},
                            unit_strengths={2: 1.0})
        changed = MotionScript(frame_count=T,
                               unit_rigids={1: [(4, RigidTransform.from_axis_angle(
                                   [0, 0, 0.4], [0, 0.08, 0]))]},
                               unit_strengths={2: 1.0})
        t0 = compose(scene, partition, base).data
        t1 = compose(scene, partition, changed).data
        touched = partition.labels == 1
        untouched = ~touched
        assert np.array_equal(t0[:, :, untouched], t1[:, :, untouched])
        assert not np.array_equal(t0[:, :3, touched], t1[:, :3, touched])

    def test_camera_object_commutation(self):
        # E^-1 composed with R applied once equals applying R then E^-1
        scene, partition = two_unit_setup()
        rng = np.random.default_rng(0)
        from .conftest import random_rigid

        e, r = random_rigid(rng, 0.1), random_rigid(rng, 0.1)
        pts = scene.points[partition.labels == 1]
        chained = e.inverse().compose(r).apply(pts)
        stepwise = e.inverse().apply(r.apply(pts))
        assert np.abs(chained - stepwise).max() < 1e-9


class TestComposeFromPipeline:
    def test_agrees_with_script_path_when_static(self):
        scene, partition = two_unit_setup()
        pts = scene.tracked_points()
        pos = np.tile(pts, (T, 1, 1))
        from motionforge.trajectory import TrajectoryField

        traj = TrajectoryField("world", pos, np.ones((T, len(pts)), bool))
        motions = decompose_all(traj, partition, scene.valid)
        ext = [RigidTransform.identity() for _ in range(T)]
        via_pipeline = compose_from_pipeline(scene, partition, motions, ext)
        script = MotionScript(frame_count=T, unit_rigids={1: []}, unit_strengths={2: 0.0})
        via_script = compose(scene, partition, script)
        assert np.array_equal(via_pipeline.data, via_script.data)

    def test_synthetic_drag_matches_projected_truth(self, fixture_scenes):
        syn = fixture_scenes["two_units_pan"]
        motions = decompose_all(syn.world_traj, syn.partition, syn.scene.valid)
        tensor = compose_from_pipeline(syn.scene, syn.partition, motions,
                                       syn.true_extrinsics)
        # drag category: trajectory channels equal projection of E^-1 R x
        t = syn.config.frame_count - 1
        e_inv = syn.true_extrinsics[t].inverse()
        labels = syn.partition.labels
        for p in (1, 2):
            r = syn.true_unit_rigids[p][t]
            vs, us = np.nonzero(labels == p)
            pts = syn.scene.points[vs, us]
            expect = project(syn.scene.intrinsics, e_inv.compose(r).apply(pts))
            got_u = tensor.data[t, CH_U, vs, us]
            got_v = tensor.data[t, CH_V, vs, us]
            inside = got_u != SENTINEL
            assert inside.mean() > 0.9
            assert np.abs(got_u[inside] - expect[inside, 0]).max() < 1e-5
            assert np.abs(got_v[inside] - expect[inside, 1]).max() < 1e-5

    def test_brush_uses_identity_rigid(self, fixture_scenes):
        syn = fixture_scenes["translate"]
        partition = build_partition(syn.scene, syn.unit_masks, ["brush"])
        motions = decompose_all(syn.world_traj, partition, syn.scene.valid)
        tensor = compose_from_pipeline(syn.scene, partition, motions,
                                       syn.true_extrinsics)
        # static camera + identity rigid: trajectory channels stay at the
        # pixel grid even though the unit moves; strength is positive
        us, vs = np.meshgrid(np.arange(syn.scene.width), np.arange(syn.scene.height))
        sel = partition.labels == 1
        t = syn.config.frame_count - 1
        assert np.abs(tensor.data[t, CH_U][sel] - us[sel]).max() < 1e-5
        assert np.all(tensor.data[t, CH_STRENGTH][sel] > 0)


class TestPreview:
    def test_identity_layout_at_frame0(self):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T, unit_rigids={1: []}, unit_strengths={2: 0.0})
        tensor = compose(scene, partition, script)
        pf = render_preview(tensor, 0)
        assert len(pf.points) == scene.valid_count
        for pt in pf.points[:50]:
            assert float(pt["u"]).is_integer() and float(pt["v"]).is_integer()

    def test_dolly_grows_unit_bounding_box(self):
        scene, partition = two_unit_setup()
        camera = [(T - 1, RigidTransform(np.eye(3), [0, 0, 0.02 * (T - 1)]))]
        script = MotionScript(frame_count=T, camera=camera,
                              unit_rigids={1: []}, unit_strengths={2: 0.0})
        tensor = compose(scene, partition, script)

        def bbox_area(pf, unit):
            us = [p["u"] for p in pf.points if p["unit"] == unit]
            vs = [p["v"] for p in pf.points if p["unit"] == unit]
            return (max(us) - min(us)) * (max(vs) - min(vs))

        first, last = render_preview(tensor, 0), render_preview(tensor, T - 1)
        for unit in (1, 2):
            assert bbox_area(last, unit) > bbox_area(first, unit)

    def test_frame_out_of_range(self):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T, unit_rigids={1: []}, unit_strengths={2: 0.0})
        tensor = compose(scene, partition, script)
        with pytest.raises(FrameOutOfRange):
            render_preview(tensor, T)

    def test_stride_and_raster(self):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T, unit_rigids={1: []}, unit_strengths={2: 0.0})
        tensor = compose(scene, partition, script)
        pf = render_preview(tensor, 0, stride=4, raster=True)
        assert len(pf.points) == (H // 4 + (H % 4 > 0)) * (W // 4 + (W % 4 > 0))
        assert pf.raster.shape == (H, W, 3)
        assert pf.raster.any()


class TestTensorIO:
    def test_round_trip_byte_identical(self, tmp_path):
        scene, partition = two_unit_setup()
        script = MotionScript(frame_count=T,
                              unit_rigids={1: [(3, RigidTransform(np.eye(3), [0.02, 0, 0]))]},
                              unit_strengths={2: 1.2})
        tensor = compose(scene, partition, script)
        path = tmp_path / "t.ctrl"
        write_tensor(tensor, path)
        back = read_tensor(path)
        assert back.to_bytes() == tensor.to_bytes()
        assert back.meta["units"] == tensor.meta["units"]

    def test_header_and_payload_length(self, tmp_path):
        data = np.zeros((24, 5, 448, 704), dtype=np.float32)
        tensor = ControlTensor(data)
        blob = tensor.to_bytes()
        assert blob[:4] == b"CTRL"
        assert len(blob) == 24 + 24 * 5 * 448 * 704 * 4

    def test_corrupt_header(self):
        with pytest.raises(CorruptHeader):
            tensor_from_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")

    def test_truncated_payload(self):
        tensor = ControlTensor(np.zeros((2, 5, 4, 4), dtype=np.float32))
        with pytest.raises(TruncatedPayload):
            tensor_from_bytes(tensor.to_bytes()[:-3])
