"""Seed sampling and relaxed object-aware point matching between paired scenes.

Seeds are chosen by farthest point sampling on a scene's foreground. To pair
scene A's seeds with scene B, each seed is carried over by composing scene
B's object transform with the inverse of scene A's, then matched to the
nearest candidate point on the same object in B; pairs whose residual
distance reaches the threshold are masked out, which is how occlusion-removed
counterparts are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooFewPoints
from .scenegen import ScenePair, SceneInstance, Transform


@dataclass(frozen=True)
class SeedSet:
    """Seed points of one scene: positions plus owning object per seed."""

    indices: np.ndarray      # unique indices into the source point array
    coords: np.ndarray       # (m, 3)
    object_ids: np.ndarray   # (m,)

    def __post_init__(self):
        if len(np.unique(self.indices)) != self.indices.shape[0]:
            raise ValueError("seed indices must be unique")
        if not (self.indices.shape[0] == self.coords.shape[0]
                == self.object_ids.shape[0]):
            raise ValueError("seed field lengths differ")

    @property
    def m(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class MatchSet:
    """Correspondences (a_index, b_index) with residual distances < theta."""

    a_indices: np.ndarray
    b_indices: np.ndarray
    distances: np.ndarray
    object_ids: np.ndarray
    theta: float

    def __post_init__(self):
        if np.any(self.distances >= self.theta):
            raise ValueError("stored pair at or beyond threshold")

    def __len__(self) -> int:
        return self.a_indices.shape[0]

    def to_records(self) -> list[dict]:
        return [
            {"a_index": int(a), "b_index": int(b),
             "distance": float(d), "object_id": int(o)}
            for a, b, d, o in zip(self.a_indices, self.b_indices,
                                  self.distances, self.object_ids)
        ]

    @classmethod
    def from_records(cls, records: list[dict], theta: float) -> "MatchSet":
        return cls(
            np.array([r["a_index"] for r in records], dtype=np.intp),
            np.array([r["b_index"] for r in records], dtype=np.intp),
            np.array([r["distance"] for r in records], dtype=np.float64),
            np.array([r["object_id"] for r in records], dtype=np.intp),
            theta,
        )


def farthest_point_sample(points: np.ndarray, m: int,
                          rng_seed: int) -> np.ndarray:
    """Greedy farthest point sampling; returns m indices.

    The first index is drawn from the seeded stream; each following pick
    maximizes the minimum distance to the chosen set, ties resolved toward
    the lowest index. Deterministic under rng_seed.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n == 0:
        raise TooFewPoints("empty point set")
    if m > n:
        raise TooFewPoints(f"requested {m} seeds from {n} points")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    chosen = np.empty(m, dtype=np.intp)
    chosen[0] = rng.integers(n)
    min_d = np.linalg.norm(points - points[chosen[0]], axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_d))  # argmax takes the first (lowest) index
        chosen[i] = nxt
        np.minimum(min_d, np.linalg.norm(points - points[nxt], axis=1),
                   out=min_d)
    return chosen


def sample_seed_set(scene: SceneInstance, m: int, rng_seed: int) -> SeedSet:
    """FPS seed set over the scene's foreground (object points only)."""
    idx = farthest_point_sample(scene.points, m, rng_seed)
    return SeedSet(idx, scene.points[idx], scene.point_object_ids[idx])


def full_seed_pool(scene: SceneInstance) -> SeedSet:
    """Every foreground point as a candidate seed (exhaustive pool)."""
    n = scene.points.shape[0]
    return SeedSet(np.arange(n, dtype=np.intp), scene.points,
                   scene.point_object_ids)


def translate_seed(seed_coord: np.ndarray, t_a: Transform,
                   t_b: Transform) -> np.ndarray:
    """Carry a scene-A point onto scene B via t_b composed with t_a inverse."""
    return t_b.compose(t_a.inverse()).apply(np.asarray(seed_coord))


def exact_match_oracle(pair: ScenePair, seeds_a: SeedSet) -> MatchSet:
    """Identical-canonical-point correspondences (test oracle only).

    Valid only for complete, unoccluded pairs, where the two scenes list the
    same canonical points object by object: seed i of object k in A is paired
    with position i of object k in B. This is the rejected exact-matching
    baseline; it exists to cross-check the relaxed matcher in tests and is
    not a pipeline mode.
    """
    counts_a = [o.n_points for o in pair.scene_a.objects]
    counts_b = [o.n_points for o in pair.scene_b.objects]
    if counts_a != counts_b:
        raise ValueError("exact matching requires unoccluded scenes")
    carriers = [tb.compose(ta.inverse())
                for ta, tb in zip(pair.transforms("a"), pair.transforms("b"))]
    b_idx = np.empty(seeds_a.m, dtype=np.intp)
    dists = np.empty(seeds_a.m)
    for i in range(seeds_a.m):
        y = int(seeds_a.object_ids[i])
        b_idx[i] = seeds_a.indices[i]  # same object-major layout both sides
        target = carriers[y].apply(seeds_a.coords[i])
        dists[i] = np.linalg.norm(pair.scene_b.points[b_idx[i]] - target)
    return MatchSet(seeds_a.indices.copy(), b_idx, dists,
                    seeds_a.object_ids.copy(), theta=np.inf)


def match_points(pair: ScenePair, seeds_a: SeedSet, seeds_b_pool: SeedSet,
                 theta: float) -> MatchSet:
    """Relaxed object-aware matching of A seeds into the B candidate pool.

    For each seed, candidates are the pool entries on the same object; the
    nearest candidate to the translated seed wins (ties to the lowest pool
    position) and the pair is kept only if its distance is strictly below
    theta. Seeds with an empty candidate set are dropped silently. Distinct
    seeds may match the same candidate.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    t_a = pair.transforms("a")
    t_b = pair.transforms("b")
    carriers = [tb.compose(ta.inverse()) for ta, tb in zip(t_a, t_b)]
    a_idx, b_idx, dists, objs = [], [], [], []
    for i in range(seeds_a.m):
        y = int(seeds_a.object_ids[i])
        cand = np.nonzero(seeds_b_pool.object_ids == y)[0]
        if cand.size == 0:
            continue
        target = carriers[y].apply(seeds_a.coords[i])
        d = np.linalg.norm(seeds_b_pool.coords[cand] - target, axis=1)
        j = int(np.argmin(d))
        if d[j] < theta:
            a_idx.append(int(seeds_a.indices[i]))
            b_idx.append(int(seeds_b_pool.indices[cand[j]]))
            dists.append(float(d[j]))
            objs.append(y)
    return MatchSet(np.array(a_idx, dtype=np.intp),
                    np.array(b_idx, dtype=np.intp),
                    np.array(dists, dtype=np.float64),
                    np.array(objs, dtype=np.intp), theta)
