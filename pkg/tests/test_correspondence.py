"""FPS, seed translation, and relaxed object-aware matching."""

import numpy as np
import pytest

from scenepretext.assets import ProceduralAssetSource
from scenepretext.catalog import load_default_scannet_parameters
from scenepretext.correspondence import (MatchSet, SeedSet,
                                         farthest_point_sample,
                                         full_seed_pool, match_points,
                                         sample_seed_set, translate_seed)
from scenepretext.errors import TooFewPoints
from scenepretext.occlusion import occlude_scene
from scenepretext.scenegen import (LayoutParams, ScenePair, Transform,
                                   make_scene_pair)


def yaw(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


# ---------------------------------------------------------------------- FPS

def test_fps_exhaustive_returns_all_indices():
    pts = np.random.default_rng(1).normal(size=(17, 3))
    idx = farthest_point_sample(pts, 17, 5)
    assert sorted(idx.tolist()) == list(range(17))


def test_fps_collinear_maximal_spread():
    # points at 0, 1, 10 on a line; starting at 0 the farthest is 10
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [10.0, 0, 0]])
    idx = farthest_point_sample(pts, 2, rng_seed=11)  # seed 11 starts at 0
    assert sorted(idx.tolist()) == [0, 2]


def test_fps_beats_random_subsets_on_min_pairwise_distance():
    rng = np.random.default_rng(2024)
    pts = rng.uniform(size=(200, 3))
    idx = farthest_point_sample(pts, 50, 7)

    def min_pairwise(subset):
        d = np.linalg.norm(subset[:, None] - subset[None, :], axis=2)
        d[np.arange(len(subset)), np.arange(len(subset))] = np.inf
        return d.min()

    fps_quality = min_pairwise(pts[idx])
    for _ in range(100):
        rand_idx = rng.choice(200, size=50, replace=False)
        assert fps_quality >= min_pairwise(pts[rand_idx])


def test_fps_deterministic_and_bounds():
    pts = np.random.default_rng(3).normal(size=(40, 3))
    a = farthest_point_sample(pts, 12, 9)
    b = farthest_point_sample(pts, 12, 9)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(TooFewPoints):
        farthest_point_sample(pts, 41, 0)
    with pytest.raises(TooFewPoints):
        farthest_point_sample(np.empty((0, 3)), 1, 0)


# ------------------------------------------------------------ translation

def test_translate_seed_identity():
    t = Transform(yaw(0.3), np.array([1.0, 2.0, 3.0]), 1.1)
    seed = np.array([0.5, -0.2, 0.9])
    np.testing.assert_allclose(translate_seed(seed, t, t), seed, atol=1e-12)


def test_translate_seed_pure_translation():
    ta = Transform(np.eye(3), np.zeros(3))
    tb = Transform(np.eye(3), np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(
        translate_seed(np.array([0.2, 0.3, 0.4]), ta, tb),
        [1.2, 0.3, 0.4], atol=1e-15)


def test_translate_seed_algebraic_oracle():
    rng = np.random.default_rng(8)
    for _ in range(25):
        ta = Transform(yaw(rng.uniform(0, 2 * np.pi)), rng.normal(size=3),
                       rng.uniform(0.8, 1.2))
        tb = Transform(yaw(rng.uniform(0, 2 * np.pi)), rng.normal(size=3),
                       rng.uniform(0.8, 1.2))
        canonical = rng.normal(size=3)
        seed_in_a = ta.apply(canonical)
        np.testing.assert_allclose(translate_seed(seed_in_a, ta, tb),
                                   tb.apply(canonical), atol=1e-9)


# ---------------------------------------------------------------- matching

def paired_scenes(seed=50, n_objects=5, occlude=False):
    dist = load_default_scannet_parameters()
    src = ProceduralAssetSource(n_points=96)
    pair = make_scene_pair(dist, n_objects, src, seed, LayoutParams())
    if occlude:
        occ_a, _ = occlude_scene(pair.scene_a, seed + 1)
        occ_b, _ = occlude_scene(pair.scene_b, seed + 2)
        return ScenePair(occ_a, occ_b, pair.pair_seed)
    return pair


def brute_force_matches(pair, seeds_a, pool, theta):
    """Exhaustive per-seed nearest neighbor over same-object candidates."""
    records = []
    t_a = pair.transforms("a")
    t_b = pair.transforms("b")
    for i in range(seeds_a.m):
        y = int(seeds_a.object_ids[i])
        best_j, best_d = -1, np.inf
        target = t_b[y].apply(t_a[y].inverse().apply(seeds_a.coords[i]))
        for j in range(pool.m):
            if int(pool.object_ids[j]) != y:
                continue
            d = float(np.linalg.norm(pool.coords[j] - target))
            if d < best_d:
                best_d, best_j = d, j
        if best_j >= 0 and best_d < theta:
            records.append((int(seeds_a.indices[i]),
                            int(pool.indices[best_j]), y))
    return records


def test_exact_counterpart_distance_zero():
    pair = paired_scenes(occlude=False)
    seeds_a = sample_seed_set(pair.scene_a, 60, 4)
    pool = full_seed_pool(pair.scene_b)
    matches = match_points(pair, seeds_a, pool, theta=0.1)
    assert len(matches) == seeds_a.m
    assert matches.distances.max() < 1e-6


def test_fully_removed_object_unmatched():
    pair = paired_scenes(occlude=False)
    keep = pair.scene_b.point_object_ids != 2
    pool = SeedSet(np.nonzero(keep)[0], pair.scene_b.points[keep],
                   pair.scene_b.point_object_ids[keep])
    seeds_a = sample_seed_set(pair.scene_a, 80, 4)
    matches = match_points(pair, seeds_a, pool, theta=1e9)
    on_gone_object = seeds_a.object_ids == 2
    assert on_gone_object.sum() > 0
    assert len(matches) == seeds_a.m - on_gone_object.sum()
    assert not np.any(matches.object_ids == 2)


def test_match_equals_brute_force_oracle_with_occlusion():
    pair = paired_scenes(seed=61, occlude=True)
    seeds_a = sample_seed_set(pair.scene_a, 100, 5)
    pool = sample_seed_set(pair.scene_b, 100, 6)
    matches = match_points(pair, seeds_a, pool, theta=0.1)
    oracle = brute_force_matches(pair, seeds_a, pool, 0.1)
    got = list(zip(matches.a_indices.tolist(), matches.b_indices.tolist(),
                   matches.object_ids.tolist()))
    assert got == oracle


def test_matching_invariant_to_joint_rigid_motion_of_b():
    pair = paired_scenes(seed=73, occlude=True)
    seeds_a = sample_seed_set(pair.scene_a, 64, 14)
    pool_b = sample_seed_set(pair.scene_b, 64, 15)
    base = match_points(pair, seeds_a, pool_b, theta=0.1)

    motion = Transform(yaw(1.234), np.array([3.0, -2.0, 0.7]))
    moved_objects = [
        type(o)(o.category_id, o.instance_id, o.canonical_points,
                motion.compose(o.transform))
        for o in pair.scene_b.objects
    ]
    from scenepretext.scenegen import SceneInstance
    moved_b = SceneInstance.from_objects(pair.scene_b.scene_type_id,
                                         moved_objects)
    moved_pair = ScenePair(pair.scene_a, moved_b, pair.pair_seed)
    moved_pool = SeedSet(pool_b.indices, moved_b.points[pool_b.indices],
                         pool_b.object_ids)
    moved = match_points(moved_pair, seeds_a, moved_pool, theta=0.1)
    np.testing.assert_array_equal(base.a_indices, moved.a_indices)
    np.testing.assert_array_equal(base.b_indices, moved.b_indices)
    np.testing.assert_allclose(base.distances, moved.distances, atol=1e-9)


def test_theta_infinite_matches_all_seeds_with_candidates():
    pair = paired_scenes(seed=90, occlude=False)
    seeds_a = sample_seed_set(pair.scene_a, 70, 3)
    pool = sample_seed_set(pair.scene_b, 70, 5)
    matches = match_points(pair, seeds_a, pool, theta=np.inf)
    objects_with_candidates = set(pool.object_ids.tolist())
    expected = sum(1 for y in seeds_a.object_ids
                   if int(y) in objects_with_candidates)
    assert len(matches) == expected


def test_match_results_respect_object_consistency_and_threshold():
    pair = paired_scenes(seed=91, occlude=True)
    seeds_a = sample_seed_set(pair.scene_a, 100, 7)
    pool = sample_seed_set(pair.scene_b, 100, 8)
    theta = 0.1
    matches = match_points(pair, seeds_a, pool, theta)
    assert np.all(matches.distances < theta)
    pos_a = {int(i): int(y) for i, y in zip(seeds_a.indices,
                                            seeds_a.object_ids)}
    pos_b = {int(i): int(y) for i, y in zip(pool.indices, pool.object_ids)}
    for a, b, y in zip(matches.a_indices, matches.b_indices,
                       matches.object_ids):
        assert pos_a[int(a)] == int(y)
        assert pos_b[int(b)] == int(y)


def test_one_to_many_matching_allowed():
    # two nearby A seeds, one candidate in B: both seeds take it
    from scenepretext.scenegen import ObjectInstance, SceneInstance
    canon = np.array([[0.0, 0, 0], [0.05, 0, 0], [5.0, 0, 0],
                      [5.05, 0, 0], [9.0, 0, 0], [9.05, 0, 0],
                      [12.0, 0, 0], [12.05, 0, 0]])
    canon = canon - canon.mean(axis=0)
    ident = Transform(np.eye(3), np.zeros(3))
    obj = ObjectInstance(0, 0, canon, ident)
    scene = SceneInstance.from_objects(0, [obj])
    pair = ScenePair(scene, scene, 0)
    seeds_a = SeedSet(np.array([0, 1]), scene.points[:2],
                      np.array([0, 0]))
    pool = SeedSet(np.array([0]), scene.points[:1], np.array([0]))
    matches = match_points(pair, seeds_a, pool, theta=1.0)
    assert len(matches) == 2
    assert matches.b_indices.tolist() == [0, 0]


def test_match_set_validation_and_records():
    with pytest.raises(ValueError):
        MatchSet(np.array([0]), np.array([1]), np.array([0.2]),
                 np.array([0]), theta=0.1)
    ms = MatchSet(np.array([0]), np.array([1]), np.array([0.05]),
                  np.array([3]), theta=0.1)
    rec = ms.to_records()
    back = MatchSet.from_records(rec, theta=0.1)
    np.testing.assert_array_equal(back.a_indices, ms.a_indices)
    assert rec[0]["object_id"] == 3


def test_seed_set_uniqueness_enforced():
    with pytest.raises(ValueError):
        SeedSet(np.array([0, 0]), np.zeros((2, 3)), np.array([0, 1]))


def test_fps_only_on_foreground():
    pair = paired_scenes(seed=95, occlude=False)
    seeds = sample_seed_set(pair.scene_a, 50, 12)
    # seed object ids must index real objects; the merged cloud holds
    # foreground only, so every seed index must be within it
    assert seeds.indices.max() < pair.scene_a.points.shape[0]
    assert set(seeds.object_ids.tolist()) <= set(range(5))


def test_fps_skips_floor_slab():
    dist = load_default_scannet_parameters()
    src = ProceduralAssetSource(n_points=64)
    layout = LayoutParams(include_floor=True, floor_points=256)
    pair = make_scene_pair(dist, 4, src, 77, layout)
    scene = pair.scene_a
    assert scene.floor_points is not None
    assert scene.floor_points.shape[0] >= 256
    seeds = sample_seed_set(scene, 40, 5)
    floor_set = {tuple(p) for p in scene.floor_points}
    for coord in seeds.coords:
        assert tuple(coord) not in floor_set
    # every seed sits on an object, never on the slab at z = 0
    assert np.all(scene.point_object_ids[seeds.indices] >= 0)


def test_exact_match_oracle_agrees_with_relaxed_matcher():
    from scenepretext.correspondence import exact_match_oracle
    pair = paired_scenes(seed=96, occlude=False)
    seeds_a = sample_seed_set(pair.scene_a, 60, 8)
    exact = exact_match_oracle(pair, seeds_a)
    assert len(exact) == seeds_a.m
    assert exact.distances.max() < 1e-9
    relaxed = match_points(pair, seeds_a, full_seed_pool(pair.scene_b),
                           theta=0.1)
    np.testing.assert_array_equal(relaxed.a_indices, exact.a_indices)
    np.testing.assert_array_equal(relaxed.b_indices, exact.b_indices)


def test_exact_match_oracle_rejects_occluded_pairs():
    from scenepretext.correspondence import exact_match_oracle
    pair = paired_scenes(seed=97, occlude=True)
    seeds_a = sample_seed_set(pair.scene_a, 10, 8)
    with pytest.raises(ValueError):
        exact_match_oracle(pair, seeds_a)
