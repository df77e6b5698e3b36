"""Viewpoint occlusion: drop each object's furthest points from a random eye.

For a scene, one viewpoint is drawn uniformly inside the scene's bounding
box inflated by 20%; each object then loses floor(f * n) of its points
furthest from that viewpoint, with f drawn uniformly from [0, 0.5]. Ties in
distance keep the lower original index. The record returned alongside the
occluded scene replays the operation exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateObject
from .scenegen import ObjectInstance, SceneInstance

AABB_INFLATION = 0.2
MAX_FRACTION = 0.5


@dataclass(frozen=True)
class OcclusionRecord:
    viewpoint: np.ndarray
    fractions: np.ndarray            # drawn removal fraction per object
    kept_indices: tuple[np.ndarray, ...]  # strictly increasing, per object

    def to_dict(self) -> dict:
        return {"viewpoint": self.viewpoint.tolist(),
                "fractions": self.fractions.tolist(),
                "kept_indices": [k.tolist() for k in self.kept_indices]}

    @classmethod
    def from_dict(cls, doc: dict) -> "OcclusionRecord":
        return cls(np.array(doc["viewpoint"], dtype=np.float64),
                   np.array(doc["fractions"], dtype=np.float64),
                   tuple(np.array(k, dtype=np.intp)
                         for k in doc["kept_indices"]))


def _kept_for_fraction(placed: np.ndarray, viewpoint: np.ndarray,
                       fraction: float) -> np.ndarray:
    n = placed.shape[0]
    n_remove = int(np.floor(fraction * n))
    d = np.linalg.norm(placed - viewpoint, axis=1)
    # ascending distance, ties broken by lower index first
    order = np.lexsort((np.arange(n), d))
    kept = np.sort(order[: n - n_remove])
    return kept


def occlude_scene(scene: SceneInstance, rng_seed: int,
                  fractions: np.ndarray | None = None,
                  viewpoint: np.ndarray | None = None,
                  jitter_sigma: float = 0.0
                  ) -> tuple[SceneInstance, OcclusionRecord]:
    """Occlude every object of the scene; returns (occluded scene, record).

    ``fractions`` and ``viewpoint`` override the random draws (used by tests
    and replay); normally both come from the seeded stream. Object order and
    surviving point order are preserved. ``jitter_sigma`` > 0 additionally
    perturbs surviving points with isotropic world-frame Gaussian noise;
    jitter is not stored in the record, so replay reproduces geometry only
    when it is off.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    lo, hi = scene.points.min(axis=0), scene.points.max(axis=0)
    center, half = (lo + hi) / 2, (hi - lo) / 2
    if viewpoint is None:
        viewpoint = rng.uniform(center - (1 + AABB_INFLATION) * half,
                                center + (1 + AABB_INFLATION) * half)
    viewpoint = np.asarray(viewpoint, dtype=np.float64)
    if fractions is None:
        fractions = rng.uniform(0.0, MAX_FRACTION, size=scene.n_objects)
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or np.any(fractions > MAX_FRACTION):
        raise ValueError(f"fractions outside [0, {MAX_FRACTION}]")

    kept_lists = []
    new_objects = []
    for k, obj in enumerate(scene.objects):
        if obj.n_points < 2:
            raise DegenerateObject(f"object {k} has {obj.n_points} points")
        kept = _kept_for_fraction(obj.placed_points(), viewpoint,
                                  float(fractions[k]))
        kept_lists.append(kept)
        canonical = obj.canonical_points[kept]
        if jitter_sigma > 0.0:
            # isotropic world noise maps into the canonical frame as
            # sigma/scale (rotation leaves the distribution unchanged)
            canonical = canonical + rng.normal(
                0.0, jitter_sigma / obj.transform.scale, size=canonical.shape)
        new_objects.append(ObjectInstance(
            obj.category_id, obj.instance_id, canonical, obj.transform))
    occluded = SceneInstance.from_objects(scene.scene_type_id, new_objects,
                                          scene.floor_points)
    record = OcclusionRecord(viewpoint, fractions, tuple(kept_lists))
    return occluded, record


def replay_occlusion(scene: SceneInstance,
                     record: OcclusionRecord) -> SceneInstance:
    """Rebuild the occluded scene from a stored record."""
    new_objects = [
        ObjectInstance(o.category_id, o.instance_id,
                       o.canonical_points[kept], o.transform)
        for o, kept in zip(scene.objects, record.kept_indices)
    ]
    return SceneInstance.from_objects(scene.scene_type_id, new_objects,
                                      scene.floor_points)
