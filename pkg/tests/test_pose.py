import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import directed_hausdorff

from radreid.errors import DataError, DegenerateSegment, InsufficientPoses, ShapeError
from radreid.pose import (
    NUM_KEYPOINTS,
    PART_JOINTS,
    PART_NAMES,
    Part,
    PartSet,
    Pose,
    SimilarityTransform,
    apply_part_transforms,
    draw_targets,
    estimate_part_transform,
    generate_pt,
    generate_pt_features,
    rasterize_polygon,
    read_keypoints,
    read_part_masks,
    read_sia_annotation,
    warp_mask,
    warp_sia_parts,
    write_keypoints,
    write_part_masks,
    write_sia_annotation,
)
from radreid.synth import SynthSpec, figure_polygons, generate_figures


def _close(t, rotation, scale, translation):
    assert t.rotation == pytest.approx(rotation, abs=1e-12)
    assert t.scale == pytest.approx(scale, abs=1e-12)
    np.testing.assert_allclose(t.translation, translation, atol=1e-12)


def test_identity_estimate():
    _close(estimate_part_transform((0, 0), (0, 1), (0, 0), (0, 1)), 0.0, 1.0, (0, 0))


def test_pure_rotation_estimate():
    _close(estimate_part_transform((0, 0), (1, 0), (0, 0), (0, 1)), math.pi / 2, 1.0, (0, 0))


def test_scale_and_translation_estimate():
    _close(estimate_part_transform((0, 0), (0, 1), (2, 3), (2, 5)), 0.0, 2.0, (2, 3))


def test_degenerate_segment():
    with pytest.raises(DegenerateSegment):
        estimate_part_transform((1, 1), (1, 1), (0, 0), (0, 1))
    with pytest.raises(DegenerateSegment):
        estimate_part_transform((0, 0), (0, 1), (3, 3), (3, 3))


def _segment(rng):
    a = rng.uniform(-100, 100, size=2)
    return a, a + rng.uniform(1, 60) * np.array([math.cos(t := rng.uniform(-math.pi, math.pi)), math.sin(t)])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 1_000_000))
def test_endpoints_are_reproduced(seed):
    rng = np.random.default_rng(seed)
    (sa, sb), (ta, tb) = _segment(rng), _segment(rng)
    t = estimate_part_transform(sa, sb, ta, tb)
    np.testing.assert_allclose(t.apply(np.array([sa, sb])), [ta, tb], atol=1e-6, rtol=0)
    assert -math.pi < t.rotation <= math.pi and t.scale > 0
    np.testing.assert_allclose(t.apply_inverse(t.apply(np.array([sa, sb]))), [sa, sb], atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 1_000_000))
def test_composition_matches_direct_estimate(seed):
    rng = np.random.default_rng(seed)
    (a0, a1), (b0, b1), (c0, c1) = _segment(rng), _segment(rng), _segment(rng)
    ab = estimate_part_transform(a0, a1, b0, b1)
    bc = estimate_part_transform(b0, b1, c0, c1)
    ac = estimate_part_transform(a0, a1, c0, c1)
    ends = np.array([a0, a1])
    np.testing.assert_allclose(bc.apply(ab.apply(ends)), ac.apply(ends), atol=1e-6, rtol=0)
    np.testing.assert_allclose(ab.then(bc).apply(ends), ac.apply(ends), atol=1e-6, rtol=0)


def test_transform_rejects_nonpositive_scale():
    with pytest.raises(DataError):
        SimilarityTransform(0.0, 0.0, (0.0, 0.0))


# ---------------------------------------------------------------------------
# records


def test_pose_validation():
    with pytest.raises(ShapeError):
        Pose(np.zeros((14, 3)))
    bad = np.zeros((15, 3))
    bad[0, 2] = 1.5
    with pytest.raises(DataError):
        Pose(bad)


def test_part_validation():
    with pytest.raises(DataError):
        Part((0, 0), polygon=[[0, 0], [1, 0], [0, 1]])
    with pytest.raises(DataError):
        Part((0, 15), polygon=[[0, 0], [1, 0], [0, 1]])
    with pytest.raises(DataError):
        Part((0, 1))
    with pytest.raises(DataError):
        PartSet(tuple(Part((0, 1), polygon=[[0, 0], [1, 0], [0, 1]]) for _ in range(9)))


# ---------------------------------------------------------------------------
# raster warps


def _pose_with(points, conf=1.0):
    kp = np.zeros((NUM_KEYPOINTS, 3))
    for k, (x, y) in points.items():
        kp[k] = (x, y, conf)
    return Pose(kp)


def _torso_only_parts(mask, shape):
    empty = np.zeros(shape, dtype=np.uint8)
    return PartSet(tuple(Part(PART_JOINTS[n], mask=mask if n == "torso" else empty) for n in PART_NAMES))


def test_pure_translation_shifts_mask_pixels():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8)
    mask = np.zeros((48, 64), dtype=np.uint8)
    mask[10:31, 17:24] = 1
    src = _pose_with({1: (20, 10), 8: (20, 30)})
    tgt = _pose_with({1: (30, 10), 8: (30, 30)})
    out = apply_part_transforms(img, _torso_only_parts(mask, (48, 64)), src, tgt)
    expected = img.copy()
    expected[10:31, 27:34] = img[10:31, 17:24]
    np.testing.assert_array_equal(out, expected)


def test_out_of_frame_pixels_are_dropped():
    img = np.zeros((20, 20, 3), dtype=np.uint8)
    img[5:15, 15:19] = 200
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[5:15, 15:19] = 1
    src = _pose_with({1: (16, 5), 8: (16, 14)})
    tgt = _pose_with({1: (22, 5), 8: (22, 14)})
    out = apply_part_transforms(img, _torso_only_parts(mask, (20, 20)), src, tgt)
    # every warped pixel lands at x >= 21, so nothing is pasted
    np.testing.assert_array_equal(out, img)


def test_zero_confidence_leaves_image_unchanged():
    spec = SynthSpec(2, 2, 4, seed=3)
    imgs, poses, parts, _, _ = generate_figures(spec)
    blind = Pose(np.column_stack([poses[1].keypoints[:, :2], np.zeros(NUM_KEYPOINTS)]))
    np.testing.assert_array_equal(apply_part_transforms(imgs[0], parts[0], poses[0], blind), imgs[0])


def test_identity_pose_is_bit_exact():
    spec = SynthSpec(3, 2, 4, seed=4)
    imgs, poses, parts, _, _ = generate_figures(spec)
    for img, pose, ps in zip(imgs, poses, parts):
        assert apply_part_transforms(img, ps, pose, pose).tobytes() == img.tobytes()


def test_later_parts_paint_over_earlier_ones():
    shape = (30, 30)
    torso = np.zeros(shape, dtype=np.uint8)
    torso[5:10, 5:10] = 1
    head = np.zeros(shape, dtype=np.uint8)
    head[20:25, 20:25] = 1
    parts = PartSet(tuple(Part(PART_JOINTS[n], mask={"torso": torso, "head": head}.get(n, np.zeros(shape)))
                          for n in PART_NAMES))
    img = np.zeros(shape + (3,), dtype=np.uint8)
    img[5:10, 5:10] = 10
    img[20:25, 20:25] = 20
    # torso moves onto (15, 15); head (joints 1, 0) moves onto the same spot
    src = _pose_with({8: (5, 5), 1: (5, 15), 0: (20, 20)})
    tgt = _pose_with({8: (15, 15), 1: (15, 25), 0: (15, 15)})
    head_t = estimate_part_transform((5, 15), (20, 20), (15, 25), (15, 15))
    out = apply_part_transforms(img, parts, src, tgt)
    head_dst = warp_mask(head, head_t).astype(bool)
    assert head_dst.any()
    np.testing.assert_array_equal(out[head_dst], 20)


def test_warp_mask_rotation_keeps_area():
    mask = rasterize_polygon([[10, 10], [30, 10], [30, 14], [10, 14]], (40, 40))
    rot = estimate_part_transform((20, 12), (30, 12), (20, 20), (20, 30))
    warped = warp_mask(mask, rot)
    assert abs(int(warped.sum()) - int(mask.sum())) <= 0.15 * mask.sum()


# ---------------------------------------------------------------------------
# target draws and PT generation


def test_k_zero_is_empty():
    assert draw_targets(4, 0, 0).shape == (4, 0)
    assert generate_pt([np.zeros((4, 4, 3), np.uint8)] * 2, [None] * 2, [None] * 2, 0, 0) == ([], [])


def test_insufficient_poses():
    with pytest.raises(InsufficientPoses):
        draw_targets(3, 3, 0)
    with pytest.raises(InsufficientPoses):
        generate_pt_features(np.zeros((2, 2)), 2, 0, 1.0)


def test_three_images_two_targets_exhaustive():
    for seed in range(20):
        t = draw_targets(3, 2, seed)
        for i in range(3):
            assert sorted(t[i].tolist()) == sorted(set(range(3)) - {i})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(0, 6))
def test_targets_never_self_never_repeat(seed, n, K):
    if K >= n:
        K = n - 1
    t = draw_targets(n, K, seed)
    for i in range(n):
        assert i not in t[i] and len(set(t[i].tolist())) == K


def test_generate_pt_is_reproducible():
    spec = SynthSpec(3, 1, 4, seed=5)
    imgs, poses, parts, _, _ = generate_figures(spec)
    a, sa = generate_pt(imgs, poses, parts, 1, seed=9)
    b, sb = generate_pt(imgs, poses, parts, 1, seed=9)
    assert sa == sb == [0, 1, 2]
    assert b"".join(r.tobytes() for r in a) == b"".join(r.tobytes() for r in b)


def test_feature_stand_in_shapes_and_sources():
    feats, src = generate_pt_features(np.zeros((4, 3)), 2, 0, 0.5)
    assert feats.shape == (8, 3) and src == [0, 0, 1, 1, 2, 2, 3, 3]


# ---------------------------------------------------------------------------
# geometry round trips on rendered figures


def _segment_from_mask(mask):
    rows, cols = np.nonzero(mask)
    pts = np.column_stack([cols, rows]).astype(float)
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    proj = (pts - c) @ vt[0]
    return c + proj.min() * vt[0], c + proj.max() * vt[0]


def test_pt_masks_land_on_target_joints():
    spec = SynthSpec(4, 1, 4, seed=6)
    imgs, poses, parts, _, _ = generate_figures(spec)
    targets = draw_targets(4, 2, seed=6)
    for i in range(4):
        for t in targets[i]:
            for k, part in enumerate(parts[i]):
                a, b = part.joint_pair
                xf = estimate_part_transform(poses[i].point(a), poses[i].point(b), poses[t].point(a), poses[t].point(b))
                p0, p1 = _segment_from_mask(warp_mask(part.mask, xf))
                ta, tb = poses[t].point(a), poses[t].point(b)
                # the limb body runs joint to joint; ends are matched without orientation
                err = min(max(np.linalg.norm(p0 - ta), np.linalg.norm(p1 - tb)),
                          max(np.linalg.norm(p0 - tb), np.linalg.norm(p1 - ta)))
                assert err <= 2.0, (i, t, PART_NAMES[k], err)


def test_sia_masks_cover_drawn_limbs():
    spec = SynthSpec(3, 1, 4, seed=8)
    imgs, poses, parts, _, _ = generate_figures(spec)
    canonical = figure_polygons(poses[0])
    for i in range(3):
        warped = warp_sia_parts(canonical, poses[0], poses[i])
        for k in range(len(PART_NAMES)):
            a = np.argwhere(warped[k].raster(imgs[i].shape[:2]))
            b = np.argwhere(rasterize_polygon(figure_polygons(poses[i])[k].polygon, imgs[i].shape[:2]))
            h = max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])
            assert h <= 2.0, (i, PART_NAMES[k], h)


def test_sia_identity_and_scaling():
    pose = _pose_with({k: (10 + 3 * k, 40 - 2 * k) for k in range(NUM_KEYPOINTS)})
    canonical = figure_polygons(pose)
    same = warp_sia_parts(canonical, pose, pose)
    for p, q in zip(canonical, same):
        np.testing.assert_allclose(q.polygon, p.polygon, atol=1e-12)
    # double the torso about joint 8
    kp = pose.keypoints.copy()
    kp[1, :2] = kp[8, :2] + 2 * (kp[1, :2] - kp[8, :2])
    stretched = warp_sia_parts(canonical, pose, Pose(kp))
    anchor = pose.point(1)
    expected = kp[1, :2] + 2 * (canonical[0].polygon - anchor)
    np.testing.assert_allclose(stretched[0].polygon, expected, atol=1e-9)


# ---------------------------------------------------------------------------
# file formats


def test_keypoint_round_trip(tmp_path):
    spec = SynthSpec(2, 2, 4, seed=1)
    _, poses, _, _, cams = generate_figures(spec)
    write_keypoints(tmp_path / "k.jsonl", poses, cameras=list(cams))
    ids, back_cams, back = read_keypoints(tmp_path / "k.jsonl")
    assert ids == [0, 1, 2, 3] and back_cams == cams.tolist()
    for p, q in zip(poses, back):
        np.testing.assert_array_equal(p.keypoints, q.keypoints)


def test_keypoint_file_errors(tmp_path):
    (tmp_path / "k.jsonl").write_text('{"id": 0}\n')
    with pytest.raises(DataError):
        read_keypoints(tmp_path / "k.jsonl")


def test_mask_round_trip(tmp_path):
    spec = SynthSpec(1, 1, 4, seed=2)
    _, _, parts, _, _ = generate_figures(spec)
    write_part_masks(tmp_path, 0, parts[0])
    assert (tmp_path / "0_part0.png").exists()
    back = read_part_masks(tmp_path, 0)
    for p, q in zip(parts[0], back):
        np.testing.assert_array_equal(p.mask, q.mask)
        assert p.joint_pair == q.joint_pair
    with pytest.raises(DataError):
        read_part_masks(tmp_path, 1)


def test_sia_round_trip(tmp_path):
    spec = SynthSpec(1, 1, 4, seed=3)
    _, poses, _, _, _ = generate_figures(spec)
    polys = figure_polygons(poses[0])
    write_sia_annotation(tmp_path / "s.json", polys, poses[0])
    back, pose = read_sia_annotation(tmp_path / "s.json")
    np.testing.assert_array_equal(pose.keypoints, poses[0].keypoints)
    for p, q in zip(polys, back):
        np.testing.assert_array_equal(p.polygon, q.polygon)
