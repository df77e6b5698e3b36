"""Categorical scene/object distributions and maximum-likelihood fitting.

The scene sampler is a three-level chain of categorical distributions:
scene type, object category given scene type, object instance given
category. Fitting is maximum likelihood, which for categoricals reduces to
normalized occurrence counts. A bundled parameter set built from published
ScanNetV2 occurrence statistics makes the pipeline runnable offline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import AllZeroCounts, DimensionMismatch

SUM_TOL = 1e-9


@dataclass(frozen=True)
class CategoryTable:
    """Occurrence counts per labeled category.

    Parameters
    ----------
    labels : sequence of str
        Unique category names, order defines index assignment.
    counts : sequence of int
        Nonnegative occurrence count per label; at least one must be > 0.
    """

    labels: tuple[str, ...]
    counts: tuple[int, ...]

    def __init__(self, labels: Sequence[str], counts: Sequence[int]):
        labels = tuple(labels)
        counts = tuple(int(c) for c in counts)
        if len(set(labels)) != len(labels):
            raise DimensionMismatch("labels must be unique")
        if len(labels) != len(counts):
            raise DimensionMismatch(
                f"{len(labels)} labels but {len(counts)} counts")
        if any(c < 0 for c in counts):
            raise ValueError("counts must be nonnegative")
        if sum(counts) == 0:
            raise AllZeroCounts("every count is zero")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)


def fit_categorical(table: CategoryTable) -> np.ndarray:
    """Maximum-likelihood categorical parameters: normalized counts.

    Entry k equals counts[k] / sum(counts); the result sums to 1 within
    1e-12 and is scale-invariant in the counts.
    """
    counts = np.asarray(table.counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        raise AllZeroCounts("every count is zero")
    return counts / total


def _check_prob_vector(vec: np.ndarray, path: str) -> None:
    if np.any(vec < 0):
        raise ValueError(f"{path}: negative probability")
    s = float(vec.sum())
    if abs(s - 1.0) > SUM_TOL:
        raise ValueError(f"{path}: sums to {s!r}, expected 1 within {SUM_TOL}")


@dataclass(frozen=True)
class SceneDistribution:
    """Fitted parameters of the scene/category/instance sampling chain.

    ``scene_prior`` is a probability vector over scene types,
    ``category_given_scene`` one probability row per scene type over object
    categories, and ``instance_given_category`` one probability row per
    category over that category's instances (rows may differ in length).
    ``epsilon`` is the uniform-mixing weight used by the epsilon-greedy
    category sampler. All vectors are validated on construction; instances
    are immutable and safe to share across concurrent samplers.
    """

    scene_labels: tuple[str, ...]
    category_labels: tuple[str, ...]
    scene_prior: np.ndarray
    category_given_scene: np.ndarray
    instance_given_category: tuple[np.ndarray, ...]
    epsilon: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "scene_labels", tuple(self.scene_labels))
        object.__setattr__(self, "category_labels", tuple(self.category_labels))
        prior = np.asarray(self.scene_prior, dtype=np.float64)
        cond = np.asarray(self.category_given_scene, dtype=np.float64)
        inst = tuple(np.asarray(r, dtype=np.float64)
                     for r in self.instance_given_category)
        for arr in (prior, cond, *inst):
            arr.setflags(write=False)
        object.__setattr__(self, "scene_prior", prior)
        object.__setattr__(self, "category_given_scene", cond)
        object.__setattr__(self, "instance_given_category", inst)
        n_s, n_c = len(self.scene_labels), len(self.category_labels)
        if prior.shape != (n_s,):
            raise DimensionMismatch(
                f"scene_prior: shape {prior.shape}, expected ({n_s},)")
        if cond.shape != (n_s, n_c):
            raise DimensionMismatch(
                f"category_given_scene: shape {cond.shape}, "
                f"expected ({n_s}, {n_c})")
        if len(inst) != n_c:
            raise DimensionMismatch(
                f"instance_given_category: {len(inst)} rows, expected {n_c}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon: {self.epsilon} outside [0, 1]")
        _check_prob_vector(prior, "scene_prior")
        for k in range(n_s):
            _check_prob_vector(cond[k], f"category_given_scene[{k}]")
        for c, row in enumerate(inst):
            if row.size == 0:
                raise DimensionMismatch(
                    f"instance_given_category[{c}]: empty row")
            _check_prob_vector(row, f"instance_given_category[{c}]")

    @property
    def n_scene_types(self) -> int:
        return len(self.scene_labels)

    @property
    def n_categories(self) -> int:
        return len(self.category_labels)

    def instances_per_category(self) -> list[int]:
        return [row.size for row in self.instance_given_category]

    def marginal_category_frequencies(self) -> np.ndarray:
        """Category frequencies induced by mixing rows under the scene prior."""
        return self.scene_prior @ self.category_given_scene

    def to_dict(self) -> dict:
        return {
            "scene_labels": list(self.scene_labels),
            "category_labels": list(self.category_labels),
            "scene_prior": self.scene_prior.tolist(),
            "category_given_scene": self.category_given_scene.tolist(),
            "instance_given_category": [r.tolist()
                                        for r in self.instance_given_category],
            "epsilon": self.epsilon,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "SceneDistribution":
        for key in ("scene_labels", "category_labels", "scene_prior",
                    "category_given_scene", "instance_given_category",
                    "epsilon"):
            if key not in doc:
                raise ValueError(f"{key}: missing field")
        return cls(
            scene_labels=tuple(doc["scene_labels"]),
            category_labels=tuple(doc["category_labels"]),
            scene_prior=np.array(doc["scene_prior"], dtype=np.float64),
            category_given_scene=np.array(doc["category_given_scene"],
                                          dtype=np.float64),
            instance_given_category=tuple(
                np.array(r, dtype=np.float64)
                for r in doc["instance_given_category"]),
            epsilon=float(doc["epsilon"]),
        )

    @classmethod
    def load(cls, path) -> "SceneDistribution":
        with open(path) as f:
            doc = json.load(f)
        return cls.from_dict(doc)


def fit_scene_distribution(
    scene_table: CategoryTable,
    per_scene_object_tables: Sequence[CategoryTable],
    instances_per_category: Sequence[int],
    epsilon: float = 0.1,
) -> SceneDistribution:
    """Fit the full chain from occurrence counts.

    Scene prior and per-scene category rows are fitted by normalized counts;
    instance rows are uniform 1/n (instance frequencies are not observed).
    One object table is required per scene type and all object tables must
    share the same category labels.
    """
    n_s = len(scene_table.labels)
    if len(per_scene_object_tables) != n_s:
        raise DimensionMismatch(
            f"{len(per_scene_object_tables)} object tables for "
            f"{n_s} scene types")
    cat_labels = per_scene_object_tables[0].labels
    for k, t in enumerate(per_scene_object_tables):
        if t.labels != cat_labels:
            raise DimensionMismatch(
                f"object table {k}: labels differ from table 0")
    if len(instances_per_category) != len(cat_labels):
        raise DimensionMismatch(
            f"{len(instances_per_category)} instance counts for "
            f"{len(cat_labels)} categories")
    if any(int(n) < 1 for n in instances_per_category):
        raise ValueError("instance counts must be >= 1")
    prior = fit_categorical(scene_table)
    cond = np.stack([fit_categorical(t) for t in per_scene_object_tables])
    inst = tuple(np.full(int(n), 1.0 / int(n))
                 for n in instances_per_category)
    return SceneDistribution(
        scene_labels=scene_table.labels,
        category_labels=cat_labels,
        scene_prior=prior,
        category_given_scene=cond,
        instance_given_category=inst,
        epsilon=epsilon,
    )


def _load_bundled_stats() -> dict:
    ref = resources.files("scenepretext").joinpath("data/scannet_stats.json")
    with ref.open() as f:
        return json.load(f)


def _ipf_conditional(prior: np.ndarray, marginal: np.ndarray,
                     mask: np.ndarray, n_iter: int = 2000,
                     tol: float = 1e-13) -> np.ndarray:
    """Factor a category marginal into per-scene conditional rows.

    Iterative proportional fitting of a joint table supported on ``mask``
    whose row sums match ``prior`` and column sums match ``marginal``; the
    returned conditional rows are joint/prior. Masked-out cells stay
    exactly zero.
    """
    joint = mask * np.outer(prior, marginal)
    for _ in range(n_iter):
        rs = joint.sum(axis=1)
        joint *= (prior / rs)[:, None]
        cs = joint.sum(axis=0)
        joint *= np.where(cs > 0, marginal / np.maximum(cs, 1e-300), 0.0)
        if np.abs(joint.sum(axis=1) - prior).max() < tol:
            break
    cond = joint / joint.sum(axis=1, keepdims=True)
    return cond


def load_default_scannet_parameters(
    epsilon: float = 0.1,
    instances_per_category: int = 8,
) -> SceneDistribution:
    """Bundled default parameters built from ScanNetV2 statistics.

    The published data provides the scene-type marginal and the object
    marginal but not their joint table, so the per-scene category rows are
    reconstructed: a hand-made plausibility mask restricts which categories
    occur in which scene type, and iterative proportional fitting adjusts
    the masked table until it reproduces both published marginals. Instance
    rows are uniform.
    """
    stats = _load_bundled_stats()
    scene_table = CategoryTable(list(stats["scene_counts"].keys()),
                                list(stats["scene_counts"].values()))
    object_table = CategoryTable(list(stats["object_counts"].keys()),
                                 list(stats["object_counts"].values()))
    prior = fit_categorical(scene_table)
    marginal = fit_categorical(object_table)
    mask = np.zeros((len(scene_table.labels), len(object_table.labels)))
    col = {lab: j for j, lab in enumerate(object_table.labels)}
    for k, scene in enumerate(scene_table.labels):
        for lab in stats["plausible_categories"][scene]:
            mask[k, col[lab]] = 1.0
    cond = _ipf_conditional(prior, marginal, mask)
    inst = tuple(np.full(instances_per_category, 1.0 / instances_per_category)
                 for _ in object_table.labels)
    return SceneDistribution(
        scene_labels=scene_table.labels,
        category_labels=object_table.labels,
        scene_prior=prior,
        category_given_scene=cond,
        instance_given_category=inst,
        epsilon=epsilon,
    )
