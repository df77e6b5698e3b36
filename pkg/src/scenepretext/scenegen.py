"""Scene sampling and paired scene realization.

A scene spec (scene type plus object category/instance ids) is drawn from
the fitted distribution with epsilon-greedy category sampling; realization
places each object's canonical cloud in a square room with an independent
similarity transform (yaw rotation, uniform scale, floor translation) found
by axis-aligned bounding-box rejection sampling. A scene pair shares one
spec draw but realizes the two layouts independently, which is what makes
object-relative point correspondences computable later.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .catalog import SceneDistribution
from .errors import (DegenerateObject, EmptyDistribution, PlacementFailure)
from .seeding import STREAM_LAYOUT_A, STREAM_LAYOUT_B, STREAM_SPEC, mix64

ORTHONORMAL_TOL = 1e-9
MIN_OBJECT_POINTS = 8

AssetSource = Callable[[int, int], np.ndarray]


@dataclass(frozen=True)
class Transform:
    """Similarity transform x -> scale * rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation 3-vector")
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -(rt @ self.translation) / self.scale,
                         1.0 / self.scale)

    def compose(self, other: "Transform") -> "Transform":
        """self after other: (self ∘ other)(x) = self(other(x))."""
        return Transform(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist(),
                "scale": self.scale}

    @classmethod
    def from_dict(cls, doc: dict) -> "Transform":
        return cls(np.array(doc["rotation"]), np.array(doc["translation"]),
                   float(doc["scale"]))


@dataclass(frozen=True)
class ObjectInstance:
    """One placed object: canonical points plus its scene transform."""

    category_id: int
    instance_id: int
    canonical_points: np.ndarray
    transform: Transform

    @property
    def n_points(self) -> int:
        return self.canonical_points.shape[0]

    def placed_points(self) -> np.ndarray:
        return self.transform.apply(self.canonical_points)


@dataclass(frozen=True)
class SceneInstance:
    """A realized scene: objects, merged cloud, per-point object indices."""

    scene_type_id: int
    objects: tuple[ObjectInstance, ...]
    points: np.ndarray
    point_object_ids: np.ndarray
    floor_points: np.ndarray | None = None

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @classmethod
    def from_objects(cls, scene_type_id: int,
                     objects: Sequence[ObjectInstance],
                     floor_points: np.ndarray | None = None
                     ) -> "SceneInstance":
        parts = [o.placed_points() for o in objects]
        ids = np.concatenate([np.full(p.shape[0], k, dtype=np.intp)
                              for k, p in enumerate(parts)])
        return cls(scene_type_id, tuple(objects),
                   np.concatenate(parts, axis=0), ids, floor_points)


@dataclass(frozen=True)
class ScenePair:
    """Two realizations of one object draw with independent layouts."""

    scene_a: SceneInstance
    scene_b: SceneInstance
    pair_seed: int

    def __post_init__(self):
        ids_a = [(o.category_id, o.instance_id) for o in self.scene_a.objects]
        ids_b = [(o.category_id, o.instance_id) for o in self.scene_b.objects]
        if ids_a != ids_b:
            raise ValueError("paired scenes must share the object draw")

    def transforms(self, side: str) -> list[Transform]:
        scene = self.scene_a if side == "a" else self.scene_b
        return [o.transform for o in scene.objects]


@dataclass(frozen=True)
class LayoutParams:
    """Knobs for random placement; defaults give a 6 m room, yaw-only spin."""

    room_size: float = 6.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    yaw_only: bool = True
    max_attempts: int = 1000
    include_floor: bool = False
    floor_points: int = 512


@dataclass(frozen=True)
class SceneSpec:
    scene_type_id: int
    draws: tuple[tuple[int, int], ...]  # (category_id, instance_id) per object


def sample_scene_spec(dist: SceneDistribution, n_objects: int,
                      rng_seed: int) -> SceneSpec:
    """Draw a scene type and n_objects (category, instance) pairs.

    Categories use the epsilon-greedy mixture: with probability epsilon the
    draw is uniform over all categories, otherwise it follows the fitted
    row for the drawn scene type. Instances follow the per-category rows.
    Deterministic under rng_seed.
    """
    if n_objects < 1:
        raise ValueError("n_objects must be >= 1")
    if dist.n_scene_types == 0 or dist.n_categories == 0:
        raise EmptyDistribution("distribution has empty support")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    scene_type = int(rng.choice(dist.n_scene_types, p=dist.scene_prior))
    row = dist.category_given_scene[scene_type]
    draws = []
    for _ in range(n_objects):
        if rng.random() < dist.epsilon:
            cat = int(rng.integers(dist.n_categories))
        else:
            cat = int(rng.choice(dist.n_categories, p=row))
        inst_row = dist.instance_given_category[cat]
        inst = int(rng.choice(inst_row.size, p=inst_row))
        draws.append((cat, inst))
    return SceneSpec(scene_type, tuple(draws))


def _random_rotation(rng: np.random.Generator, yaw_only: bool) -> np.ndarray:
    if yaw_only:
        a = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    # uniform SO(3) via quaternion
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _boxes_overlap(lo1, hi1, lo2, hi2) -> bool:
    return bool(np.all(lo1 <= hi2) and np.all(lo2 <= hi1))


def realize_scene(spec: SceneSpec, asset_source: AssetSource,
                  layout: LayoutParams, rng_seed: int) -> SceneInstance:
    """Place every object of a SceneSpec without bounding-box overlap.

    Each object gets an independent transform; placement is rejection
    sampling of the floor position until the transformed axis-aligned box
    neither leaves the room nor intersects an already placed box. Raises
    PlacementFailure once an object exhausts layout.max_attempts.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    canonicals = []
    for k, (cat, inst) in enumerate(spec.draws):
        canonical = np.asarray(asset_source(cat, inst), dtype=np.float64)
        if canonical.shape[0] < MIN_OBJECT_POINTS:
            raise DegenerateObject(
                f"object {k}: {canonical.shape[0]} points "
                f"(assets must supply >= {MIN_OBJECT_POINTS})")
        canonicals.append(canonical)
    # place the largest footprints first; small objects fill leftover space
    extents = [c.max(axis=0) - c.min(axis=0) for c in canonicals]
    order = sorted(range(len(canonicals)),
                   key=lambda k: -(extents[k][0] * extents[k][1]))
    placed_by_k: dict[int, ObjectInstance] = {}
    boxes: list[tuple[np.ndarray, np.ndarray]] = []
    room = layout.room_size
    for k in order:
        cat, inst = spec.draws[k]
        canonical = canonicals[k]
        for attempt in range(layout.max_attempts):
            rot = _random_rotation(rng, layout.yaw_only)
            scale = rng.uniform(*layout.scale_range)
            body = scale * canonical @ rot.T
            lo, hi = body.min(axis=0), body.max(axis=0)
            x = rng.uniform(-lo[0], room - hi[0]) if room > hi[0] - lo[0] \
                else rng.uniform(0.0, room)
            y = rng.uniform(-lo[1], room - hi[1]) if room > hi[1] - lo[1] \
                else rng.uniform(0.0, room)
            t = np.array([x, y, -lo[2]])
            blo, bhi = lo + t, hi + t
            if blo[0] < 0 or blo[1] < 0 or bhi[0] > room or bhi[1] > room:
                continue
            if any(_boxes_overlap(blo, bhi, plo, phi)
                   for plo, phi in boxes):
                continue
            placed_by_k[k] = ObjectInstance(cat, inst, canonical,
                                            Transform(rot, t, scale))
            boxes.append((blo, bhi))
            break
        else:
            raise PlacementFailure(
                f"object {k} (category {cat}) not placed after "
                f"{layout.max_attempts} attempts")
    placed = [placed_by_k[k] for k in range(len(spec.draws))]
    floor = None
    if layout.include_floor:
        g = int(np.ceil(np.sqrt(layout.floor_points)))
        xs = np.linspace(0.0, room, g)
        gx, gy = np.meshgrid(xs, xs)
        floor = np.stack([gx.ravel(), gy.ravel(),
                          np.zeros(g * g)], axis=1)
    return SceneInstance.from_objects(spec.scene_type_id, placed, floor)


def make_scene_pair(dist: SceneDistribution, n_objects: int,
                    asset_source: AssetSource, rng_seed: int,
                    layout: LayoutParams | None = None) -> ScenePair:
    """One spec draw, two independent realizations, all seeded from rng_seed."""
    layout = layout or LayoutParams()
    spec = sample_scene_spec(dist, n_objects, mix64(rng_seed, STREAM_SPEC))
    scene_a = realize_scene(spec, asset_source, layout,
                            mix64(rng_seed, STREAM_LAYOUT_A))
    scene_b = realize_scene(spec, asset_source, layout,
                            mix64(rng_seed, STREAM_LAYOUT_B))
    return ScenePair(scene_a, scene_b, rng_seed)
