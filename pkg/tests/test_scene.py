import base64
import json

import numpy as np
import pytest
from PIL import Image

from motionforge.errors import (
    CorruptHeader,
    DimensionMismatch,
    EmptyMask,
    OverlappingMasks,
    TruncatedPayload,
    UnreadableFile,
)
from motionforge.geometry import CameraIntrinsics
from motionforge.scene import (
    build_partition,
    load_manifest,
    load_scene,
    mask_from_payload,
    mask_to_payload,
    read_depth,
    read_mask,
    scene_from_depth,
    select_units_from_segments,
    selected_segment_indices,
    write_depth,
    write_mask,
)

W, H = 32, 24
INTR = CameraIntrinsics.default_for(W, H)


def flat_scene(depth_value=1.0):
    return scene_from_depth(np.full((H, W), depth_value), INTR)


def rect_mask(x0, y0, x1, y1):
    m = np.zeros((H, W), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


class TestSceneFromDepth:
    def test_flat_plane_z(self):
        scene = flat_scene(1.0)
        assert np.allclose(scene.points[..., 2], 1.0)
        assert scene.valid.all()

    def test_backprojection_consistency(self):
        rng = np.random.default_rng(0)
        depth = rng.uniform(0.5, 2.0, size=(H, W))
        scene = scene_from_depth(depth, INTR)
        from motionforge.geometry import backproject

        for _ in range(20):
            v, u = rng.integers(H), rng.integers(W)
            assert np.abs(scene.points[v, u] - backproject(INTR, (u, v), depth[v, u])).max() < 1e-9

    def test_invalid_depths_flagged_not_errored(self):
        depth = np.ones((H, W))
        depth[0, 0] = np.nan
        depth[1, 1] = -2.0
        depth[2, 2] = 0.0
        scene = scene_from_depth(depth, INTR)
        assert not scene.valid[0, 0] and not scene.valid[1, 1] and not scene.valid[2, 2]
        assert scene.valid_count == H * W - 3

    def test_normalization_sets_median_depth_to_one(self):
        depth = np.full((H, W), 5.0)
        scene = scene_from_depth(depth, INTR, normalize=True)
        assert scene.median_depth() == pytest.approx(1.0)
        assert scene.depth_scale == pytest.approx(5.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            scene_from_depth(np.ones((10, 10)), INTR)

    def test_tracked_points_row_major_order(self):
        depth = np.ones((H, W))
        depth[0, 0] = np.nan
        scene = scene_from_depth(depth, INTR)
        pix = scene.tracked_pixels()
        assert pix[0].tolist() == [1, 0]  # (u, v): first valid pixel
        assert len(pix) == scene.valid_count


class TestDepthFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        depth = rng.uniform(0.2, 3.0, size=(H, W)).astype(np.float32)
        path = tmp_path / "d.dpth"
        write_depth(path, depth)
        assert path.stat().st_size == 16 + H * W * 4
        back = read_depth(path)
        assert np.array_equal(back, depth.astype(np.float64))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dpth"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(CorruptHeader):
            read_depth(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.dpth"
        write_depth(path, np.ones((H, W), dtype=np.float32))
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(TruncatedPayload):
            read_depth(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableFile):
            read_depth(tmp_path / "nothing.dpth")


class TestLoadScene:
    def test_image_depth_dims_must_match(self, tmp_path):
        write_depth(tmp_path / "d.dpth", np.ones((10, 10), dtype=np.float32))
        Image.new("L", (20, 20)).save(tmp_path / "img.png")
        with pytest.raises(DimensionMismatch):
            load_scene(tmp_path / "img.png", tmp_path / "d.dpth")

    def test_paper_scale_dims(self, tmp_path):
        write_depth(tmp_path / "d.dpth", np.ones((448, 704), dtype=np.float32))
        Image.new("L", (704, 448)).save(tmp_path / "img.png")
        scene = load_scene(tmp_path / "img.png", tmp_path / "d.dpth")
        assert (scene.width, scene.height) == (704, 448)

    def test_no_image_is_fine(self, tmp_path):
        write_depth(tmp_path / "d.dpth", np.ones((H, W), dtype=np.float32))
        scene = load_scene(None, tmp_path / "d.dpth")
        assert (scene.width, scene.height) == (W, H)


class TestBuildPartition:
    def test_zero_masks_pure_borderland(self):
        scene = flat_scene()
        part = build_partition(scene, [], [])
        assert part.unit_count == 1
        assert np.all(part.labels == 0)

    def test_two_disjoint_masks(self):
        scene = flat_scene()
        m1, m2 = rect_mask(2, 2, 8, 8), rect_mask(10, 10, 16, 16)
        part = build_partition(scene, [m1, m2], ["drag", "brush"])
        assert part.unit_count == 3
        assert part.categories.tolist() == [0, 1, 2]
        assert np.array_equal(part.labels == 1, m1)
        assert np.array_equal(part.labels == 2, m2)
        assert set(np.unique(part.labels)) == {0, 1, 2}

    def test_overlap_reports_first_conflicting_pixel(self):
        scene = flat_scene()
        with pytest.raises(OverlappingMasks) as err:
            build_partition(scene, [rect_mask(0, 0, 8, 8), rect_mask(4, 4, 12, 12)],
                            ["drag", "drag"])
        assert err.value.pixel == (4, 4)

    def test_empty_mask_rejected(self):
        scene = flat_scene()
        with pytest.raises(EmptyMask):
            build_partition(scene, [np.zeros((H, W), bool)], ["drag"])

    def test_empty_borderland_rejected(self):
        scene = flat_scene()
        everything = np.ones((H, W), dtype=bool)
        with pytest.raises(EmptyMask):
            build_partition(scene, [everything], ["drag"])

    def test_completeness(self):
        scene = flat_scene()
        part = build_partition(scene, [rect_mask(2, 2, 8, 8)], ["drag"])
        sizes = part.pixel_counts()
        assert sizes.sum() == scene.valid_count

    def test_permutation_covariance(self):
        scene = flat_scene()
        masks = [rect_mask(2, 2, 8, 8), rect_mask(10, 10, 16, 16), rect_mask(20, 2, 26, 8)]
        cats = ["drag", "brush", "drag"]
        part = build_partition(scene, masks, cats)
        perm = [2, 0, 1]
        part_p = build_partition(scene, [masks[i] for i in perm], [cats[i] for i in perm])
        for new_label, old_index in enumerate(perm, start=1):
            assert np.array_equal(part_p.labels == new_label, masks[old_index])
            assert part_p.categories[new_label] == part.categories[old_index + 1]

    def test_invalid_pixels_excluded_from_every_unit(self):
        depth = np.ones((H, W))
        depth[3, 3] = np.nan
        scene = scene_from_depth(depth, INTR)
        part = build_partition(scene, [rect_mask(2, 2, 8, 8)], ["drag"])
        assert part.labels[3, 3] == -1

    def test_category_count_mismatch(self):
        with pytest.raises(ValueError):
            build_partition(flat_scene(), [rect_mask(2, 2, 8, 8)], [])


class TestSelectUnits:
    def test_fully_inside_selected(self):
        seg = rect_mask(2, 2, 12, 12)
        assert len(select_units_from_segments([seg], seg.copy())) == 1

    def test_exactly_half_not_selected(self):
        seg = rect_mask(0, 0, 10, 10)  # 100 px
        dyn = rect_mask(0, 0, 10, 5)   # covers exactly 50
        assert select_units_from_segments([seg], dyn) == []

    def test_51_of_100_selected(self):
        seg = rect_mask(0, 0, 10, 10)
        dyn = rect_mask(0, 0, 10, 5)
        dyn[5, 0] = True  # 51st pixel
        assert np.count_nonzero(seg & dyn) == 51
        kept = select_units_from_segments([seg], dyn)
        assert len(kept) == 1 and np.array_equal(kept[0], seg)

    def test_indices_follow_input_order(self):
        segs = [rect_mask(0, 0, 4, 4), rect_mask(8, 8, 12, 12), rect_mask(16, 16, 20, 20)]
        dyn = segs[0] | segs[2]
        assert selected_segment_indices(segs, dyn) == [0, 2]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            select_units_from_segments([np.zeros((2, 2), bool)], np.zeros((H, W), bool))


class TestMaskIO:
    def test_png_round_trip(self, tmp_path):
        m = rect_mask(3, 4, 9, 11)
        write_mask(tmp_path / "m.png", m)
        assert np.array_equal(read_mask(tmp_path / "m.png"), m)

    def test_payload_round_trip(self):
        m = rect_mask(1, 2, 7, 9)
        assert np.array_equal(mask_from_payload(mask_to_payload(m), (H, W)), m)

    def test_payload_dim_check(self):
        with pytest.raises(DimensionMismatch):
            mask_from_payload(mask_to_payload(rect_mask(0, 0, 2, 2)), (H + 1, W))


class TestManifest:
    def test_load_from_files(self, tmp_path):
        write_depth(tmp_path / "d.dpth", np.full((H, W), 2.0, dtype=np.float32))
        write_mask(tmp_path / "m1.png", rect_mask(2, 2, 8, 8))
        doc = {
            "depth": "d.dpth",
            "intrinsics": {"fx": 30.0, "fy": 30.0, "cx": 16.0, "cy": 12.0},
            "units": [{"mask": "m1.png", "category": "brush"}],
        }
        (tmp_path / "scene.json").write_text(json.dumps(doc))
        scene, masks, cats = load_manifest(tmp_path / "scene.json")
        assert scene.median_depth() == pytest.approx(1.0)  # normalized by default
        assert len(masks) == 1 and cats == [2]

    def test_normalize_override_in_doc(self, tmp_path):
        write_depth(tmp_path / "d.dpth", np.full((H, W), 2.0, dtype=np.float32))
        doc = {"depth": "d.dpth", "normalize": False}
        scene, _, _ = load_manifest(doc, base_dir=tmp_path)
        assert scene.median_depth() == pytest.approx(2.0)

    def test_inline_depth(self, tmp_path):
        write_depth(tmp_path / "d.dpth", np.ones((H, W), dtype=np.float32))
        blob = (tmp_path / "d.dpth").read_bytes()
        doc = {"depth": {"b64": base64.b64encode(blob).decode()}}
        scene, _, _ = load_manifest(doc, base_dir=tmp_path)
        assert (scene.width, scene.height) == (W, H)

    def test_missing_depth_key(self):
        with pytest.raises(ValueError):
            load_manifest({"units": []}, base_dir=".")

    def test_bad_json_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(UnreadableFile):
            load_manifest(path)
