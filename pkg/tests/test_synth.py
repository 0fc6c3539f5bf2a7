import numpy as np
import pytest

from radreid.clustering import cluster_hierarchical, purity
from radreid.errors import PlacementError, ShapeError
from radreid.pose import PART_NAMES, rasterize_polygon
from radreid.synth import (
    SynthSpec,
    camera_offsets,
    figure_polygons,
    generate_features,
    generate_figures,
    identity_centroids,
    raster_features,
    uneven_counts,
)


def test_single_identity_labels():
    _, ids, _ = generate_features(SynthSpec(1, 3, 4))
    assert ids.tolist() == [0, 0, 0]


def test_uneven_totals():
    x, ids, cams = generate_features(SynthSpec(3, [10, 2, 7], 4))
    assert x.shape == (19, 4) and np.bincount(ids).tolist() == [10, 2, 7]
    assert cams[:10].tolist() == [0, 1] * 5


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(2, [3], 4)
    with pytest.raises(ValueError):
        SynthSpec(2, [3, 0], 4)
    with pytest.raises(ValueError):
        SynthSpec(2, 3, 4, identity_spread=0.0)


def test_centroid_separation_holds():
    spec = SynthSpec(20, 5, 32, identity_separation=10.0, seed=3)
    c = identity_centroids(spec)
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    assert d[np.triu_indices(20, 1)].min() >= 10.0


def test_placement_error_when_infeasible():
    with pytest.raises(PlacementError):
        identity_centroids(SynthSpec(50, 1, 1, identity_separation=1e6))


def test_nearest_centroid_is_perfect_when_well_separated():
    spec = SynthSpec(8, 6, 16, identity_spread=0.1, identity_separation=100.0, seed=1)
    x, ids, _ = generate_features(spec)
    c = identity_centroids(spec)
    pred = np.linalg.norm(x[:, None] - c[None], axis=2).argmin(axis=1)
    assert (pred == ids).all()


def test_clustering_recovers_well_separated_identities():
    spec = SynthSpec(10, uneven_counts(10, 3, 9, 0), 16, identity_spread=0.5, identity_separation=20.0)
    x, ids, _ = generate_features(spec)
    assert purity(cluster_hierarchical(x, 10), ids) == 1.0


def test_camera_offsets_norm_and_effect():
    spec = SynthSpec(2, 4, 6, camera_bias=3.0, seed=2)
    off = camera_offsets(spec)
    np.testing.assert_allclose(np.linalg.norm(off, axis=1), 3.0)
    plain, _, _ = generate_features(SynthSpec(2, 4, 6, seed=2))
    biased, _, cams = generate_features(spec)
    np.testing.assert_allclose(biased - plain, off[cams], atol=1e-12)


def test_feature_determinism_and_draws():
    spec = SynthSpec(4, 3, 5, seed=9)
    a, b = generate_features(spec)[0], generate_features(spec)[0]
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate_features(spec, draw=1)[0])


def test_uneven_counts_range():
    c = uneven_counts(50, 5, 15, 0)
    assert min(c) >= 5 and max(c) <= 15 and len(set(c)) > 1


# ---------------------------------------------------------------------------
# stick figures


def test_figures_deterministic():
    spec = SynthSpec(2, 2, 4, seed=4)
    a, b = generate_figures(spec)[0], generate_figures(spec)[0]
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_figure_size_check():
    with pytest.raises(ShapeError):
        generate_figures(SynthSpec(1, 1, 4), H=32, W=64)


def test_masks_cover_drawn_pixels():
    spec = SynthSpec(3, 2, 4, seed=5)
    imgs, poses, parts, _, _ = generate_figures(spec)
    for img, pose, ps in zip(imgs, poses, parts):
        for k, part in enumerate(ps):
            drawn = rasterize_polygon(figure_polygons(pose)[k].polygon, img.shape[:2])
            assert (part.mask & drawn).sum() >= 0.99 * drawn.sum(), PART_NAMES[k]


def test_identities_share_colours_across_samples():
    spec = SynthSpec(2, 3, 4, seed=6)
    imgs, _, parts, ids, _ = generate_figures(spec)
    torso = []
    for img, ps in zip(imgs, parts):
        # torso pixels no later limb was drawn over
        only = ps[0].mask.astype(bool) & ~np.any([q.mask.astype(bool) for q in ps.parts[1:]], axis=0)
        torso.append(img[only][0].tolist())
    assert torso[0] == torso[1] == torso[2]
    assert torso[0] != torso[3] or ids[0] == ids[3]


def test_raster_features_shape_and_range():
    img = np.full((128, 64, 3), 255, dtype=np.uint8)
    f = raster_features(img)
    assert f.shape == (16 * 8 * 3,) and np.all(f == 1.0)
