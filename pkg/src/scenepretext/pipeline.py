"""End-to-end orchestration: dataset export, loss evaluation, file formats.

A dataset is a directory tree of pair folders, each holding the complete
and occluded geometry of both scenes plus a JSON manifest that records the
object draw, transforms, occlusion, matches, and the hash of the producing
config. Everything is a pure function of (config, master seed): per-pair
seeds come from the splitmix64 derivation in `seeding`, so pairs can be
generated in any order or in parallel.
"""

from __future__ import annotations

import hashlib
import json
import struct
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
import numpy as np

from .assets import DirectoryAssetSource, ProceduralAssetSource
from .catalog import SceneDistribution, load_default_scannet_parameters
from .correspondence import (MatchSet, SeedSet, match_points,
                             sample_seed_set)
from .decoder import (DecoderHeads, EncoderConfig, HeadsConfig, PreparedPair,
                      ToyEncoder, forward_backward, load_checkpoint,
                      prepare_scene_pair)
from .errors import CorruptManifest, PlacementFailure
from .losses import LossReport
from .occlusion import OcclusionRecord, occlude_scene, replay_occlusion
from .scenegen import (LayoutParams, ObjectInstance, SceneInstance,
                       ScenePair, Transform, make_scene_pair)
from .seeding import (STREAM_MATCH_A, STREAM_MATCH_B, STREAM_OCCLUDE_A,
                      STREAM_OCCLUDE_B, mix64)

FORMATS = ("ascii-ply", "binary-f32")
_FORMAT_EXT = {"ascii-ply": "ply", "binary-f32": "bin"}


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the generation/evaluation pipeline.

    Numeric ranges are validated on construction; the config hash is a
    sha256 over the canonical JSON dump and identifies datasets.
    """

    n_scenes: int = 10
    n_objects_per_scene: int = 12
    points_per_object: int = 256
    epsilon: float = 0.1
    m_seeds: int = 100
    theta: float = 0.1
    tau: float = 0.03
    lambda_pts: float = 0.1
    lambda_rec: float = 100.0
    u: int = 3
    n_encoder_seeds: int = 64
    feature_dim: int = 32
    embed_dim: int = 128
    encoder_hidden: int = 64
    proj_hidden: int = 64
    decoder_hidden: int = 64
    grid_extent: float = 0.05
    master_seed: int = 0
    asset_source: str = "procedural"
    export_format: str = "binary-f32"
    room_size: float = 6.0
    scale_min: float = 0.9
    scale_max: float = 1.1
    yaw_only: bool = True
    include_floor: bool = False
    occlude: bool = True
    batch_pairs: int = 2
    distribution_file: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        checks = [
            (self.n_scenes >= 1, "n_scenes >= 1"),
            (self.n_objects_per_scene >= 1, "n_objects_per_scene >= 1"),
            (self.points_per_object >= 8, "points_per_object >= 8"),
            (0.0 <= self.epsilon <= 1.0, "epsilon in [0, 1]"),
            (self.m_seeds >= 1, "m_seeds >= 1"),
            (self.theta > 0, "theta > 0"),
            (self.tau > 0, "tau > 0"),
            (self.lambda_pts >= 0, "lambda_pts >= 0"),
            (self.lambda_rec >= 0, "lambda_rec >= 0"),
            (self.u >= 1, "u >= 1"),
            (self.n_encoder_seeds >= 1, "n_encoder_seeds >= 1"),
            (self.export_format in FORMATS,
             f"export_format in {FORMATS}"),
            (0 < self.scale_min <= self.scale_max, "valid scale range"),
            (self.batch_pairs >= 1, "batch_pairs >= 1"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"config violates: {what}")

    def config_hash(self) -> str:
        """sha256 over the semantic fields; where the dataset lives does not
        change what it contains, so output_dir is excluded."""
        doc = asdict(self)
        doc.pop("output_dir")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def layout(self) -> LayoutParams:
        return LayoutParams(room_size=self.room_size,
                            scale_range=(self.scale_min, self.scale_max),
                            yaw_only=self.yaw_only,
                            include_floor=self.include_floor)

    def make_asset_source(self):
        if self.asset_source == "procedural":
            return ProceduralAssetSource(n_points=self.points_per_object)
        return DirectoryAssetSource(self.asset_source)

    def load_distribution(self) -> SceneDistribution:
        if self.distribution_file:
            return SceneDistribution.load(self.distribution_file)
        return load_default_scannet_parameters(epsilon=self.epsilon)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(hidden=self.encoder_hidden,
                             feature_dim=self.feature_dim,
                             proj_hidden=self.proj_hidden,
                             embed_dim=self.embed_dim)

    def heads_config(self) -> HeadsConfig:
        return HeadsConfig(feature_dim=self.feature_dim,
                           hidden=self.decoder_hidden, u=self.u,
                           grid_extent=self.grid_extent)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        return cls(**doc)


def export_point_cloud(points: np.ndarray, path, fmt: str) -> None:
    """Write an (n, 3) cloud as ascii PLY or raw little-endian float32.

    binary-f32 layout: uint64 little-endian point count, then n*3 float32
    values in row-major order. Binary round-trips are bit-exact at float32
    precision; ascii round-trips are within 1e-6.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points shape {pts.shape}, expected (n, 3)")
    f32 = pts.astype("<f4")
    path = Path(path)
    if fmt == "ascii-ply":
        with open(path, "w", newline="\n") as f:
            f.write("ply\nformat ascii 1.0\n"
                    f"element vertex {f32.shape[0]}\n"
                    "property float x\nproperty float y\nproperty float z\n"
                    "end_header\n")
            for row in f32:
                f.write(f"{row[0]:.9g} {row[1]:.9g} {row[2]:.9g}\n")
    elif fmt == "binary-f32":
        with open(path, "wb") as f:
            f.write(struct.pack("<Q", f32.shape[0]))
            f.write(f32.tobytes(order="C"))
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_point_cloud(path, fmt: str) -> np.ndarray:
    path = Path(path)
    if fmt == "ascii-ply":
        with open(path) as f:
            if f.readline().strip() != "ply":
                raise CorruptManifest(f"{path}: not a PLY file")
            n = None
            for line in f:
                line = line.strip()
                if line.startswith("element vertex"):
                    n = int(line.split()[-1])
                if line == "end_header":
                    break
            else:
                raise CorruptManifest(f"{path}: missing end_header")
            if n is None:
                raise CorruptManifest(f"{path}: missing vertex element")
            rows = [f.readline().split() for _ in range(n)]
        return np.array(rows, dtype=np.float64).reshape(n, 3)
    if fmt == "binary-f32":
        raw = path.read_bytes()
        (n,) = struct.unpack("<Q", raw[:8])
        pts = np.frombuffer(raw[8:], dtype="<f4")
        if pts.size != 3 * n:
            raise CorruptManifest(
                f"{path}: {pts.size} floats for {n} points")
        return pts.reshape(n, 3).astype(np.float64)
    raise ValueError(f"unknown format {fmt!r}")


@dataclass
class PairManifest:
    """Replayable record of one generated pair."""

    pair_id: int
    pair_seed: int
    scene_type_id: int
    scene_type: str
    objects: list[dict]
    transforms_a: list[dict]
    transforms_b: list[dict]
    occlusion_a: dict
    occlusion_b: dict
    matches: list[dict]
    theta: float
    files: dict[str, str]
    export_format: str
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PairManifest":
        return cls(**doc)


def _pair_dir(out_dir: Path, pair_id: int) -> Path:
    return out_dir / "pairs" / f"pair_{pair_id:05d}"


def _write_pair(out_dir: Path, pair_id: int, pair: ScenePair,
                occluded_a: SceneInstance, occluded_b: SceneInstance,
                rec_a: OcclusionRecord, rec_b: OcclusionRecord,
                matches: MatchSet, dist: SceneDistribution,
                config: PipelineConfig) -> PairManifest:
    pdir = _pair_dir(out_dir, pair_id)
    pdir.mkdir(parents=True, exist_ok=True)
    ext = _FORMAT_EXT[config.export_format]
    files = {}
    for name, scene in (("scene_a_complete", pair.scene_a),
                        ("scene_b_complete", pair.scene_b),
                        ("scene_a_occluded", occluded_a),
                        ("scene_b_occluded", occluded_b)):
        fname = f"{name}.{ext}"
        export_point_cloud(scene.points, pdir / fname, config.export_format)
        files[name] = fname
    manifest = PairManifest(
        pair_id=pair_id,
        pair_seed=pair.pair_seed,
        scene_type_id=pair.scene_a.scene_type_id,
        scene_type=dist.scene_labels[pair.scene_a.scene_type_id],
        objects=[{"category_id": o.category_id,
                  "category": dist.category_labels[o.category_id],
                  "instance_id": o.instance_id,
                  "n_points": o.n_points}
                 for o in pair.scene_a.objects],
        transforms_a=[o.transform.to_dict() for o in pair.scene_a.objects],
        transforms_b=[o.transform.to_dict() for o in pair.scene_b.objects],
        occlusion_a=rec_a.to_dict(),
        occlusion_b=rec_b.to_dict(),
        matches=matches.to_records(),
        theta=config.theta,
        files=files,
        export_format=config.export_format,
        config_hash=config.config_hash(),
    )
    with open(pdir / "manifest.json", "w", newline="\n") as f:
        json.dump(manifest.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def generate_pair(config: PipelineConfig, dist: SceneDistribution,
                  asset_source, pair_id: int
                  ) -> tuple[ScenePair, SceneInstance, SceneInstance,
                             OcclusionRecord, OcclusionRecord, MatchSet]:
    """Generate one pair: draw, realize, occlude, match. Pure in the seed."""
    pair_seed = mix64(config.master_seed, pair_id)
    pair = make_scene_pair(dist, config.n_objects_per_scene, asset_source,
                           pair_seed, config.layout())
    if config.occlude:
        occ_a, rec_a = occlude_scene(pair.scene_a,
                                     mix64(pair_seed, STREAM_OCCLUDE_A))
        occ_b, rec_b = occlude_scene(pair.scene_b,
                                     mix64(pair_seed, STREAM_OCCLUDE_B))
    else:
        occ_a, rec_a = occlude_scene(
            pair.scene_a, mix64(pair_seed, STREAM_OCCLUDE_A),
            fractions=np.zeros(pair.scene_a.n_objects))
        occ_b, rec_b = occlude_scene(
            pair.scene_b, mix64(pair_seed, STREAM_OCCLUDE_B),
            fractions=np.zeros(pair.scene_b.n_objects))
    occluded_pair = ScenePair(occ_a, occ_b, pair_seed)
    m = min(config.m_seeds, occ_a.points.shape[0])
    seeds_a = sample_seed_set(occ_a, m, mix64(pair_seed, STREAM_MATCH_A))
    m_b = min(config.m_seeds, occ_b.points.shape[0])
    seeds_b = sample_seed_set(occ_b, m_b, mix64(pair_seed, STREAM_MATCH_B))
    matches = match_points(occluded_pair, seeds_a, seeds_b, config.theta)
    return pair, occ_a, occ_b, rec_a, rec_b, matches


def generate_dataset(config: PipelineConfig, out_dir=None,
                     progress: bool = True) -> dict:
    """Write n_scenes pair directories plus a dataset summary.

    Deterministic under the master seed: the same config always produces a
    byte-identical tree. Placement failures are counted and reported, not
    fatal. Returns the summary dict (also written as summary.json).
    ``out_dir`` overrides config.output_dir.
    """
    if out_dir is None:
        out_dir = config.output_dir
    if out_dir is None:
        raise ValueError("no output directory: set config.output_dir or "
                         "pass out_dir")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dist = config.load_distribution()
    asset_source = config.make_asset_source()
    scene_hist: dict[str, int] = {}
    cat_hist: dict[str, int] = {}
    occ_fracs: list[float] = []
    match_counts: list[int] = []
    failures = 0
    produced = 0
    for pair_id in range(config.n_scenes):
        try:
            pair, occ_a, occ_b, rec_a, rec_b, matches = generate_pair(
                config, dist, asset_source, pair_id)
        except PlacementFailure:
            failures += 1
            continue
        _write_pair(out_dir, pair_id, pair, occ_a, occ_b, rec_a, rec_b,
                    matches, dist, config)
        produced += 1
        label = dist.scene_labels[pair.scene_a.scene_type_id]
        scene_hist[label] = scene_hist.get(label, 0) + 1
        for o in pair.scene_a.objects:
            cl = dist.category_labels[o.category_id]
            cat_hist[cl] = cat_hist.get(cl, 0) + 1
        occ_fracs += rec_a.fractions.tolist() + rec_b.fractions.tolist()
        match_counts.append(len(matches))
        if progress and (pair_id + 1) % 50 == 0:
            print(f"  generated {pair_id + 1}/{config.n_scenes} pairs",
                  file=sys.stderr)
    summary = {
        "config": asdict(config),
        "config_hash": config.config_hash(),
        "pairs_produced": produced,
        "placement_failures": failures,
        "scene_type_histogram": dict(sorted(scene_hist.items())),
        "category_histogram": dict(sorted(cat_hist.items())),
        "mean_occlusion_fraction":
            float(np.mean(occ_fracs)) if occ_fracs else 0.0,
        "mean_matches": float(np.mean(match_counts)) if match_counts else 0.0,
    }
    with open(out_dir / "summary.json", "w", newline="\n") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    if progress:
        print(f"pairs: {produced}  placement failures: {failures}")
        print(f"mean occlusion fraction: "
              f"{summary['mean_occlusion_fraction']:.4f}")
        print(f"mean matches per pair: {summary['mean_matches']:.1f}")
        top = sorted(cat_hist.items(), key=lambda kv: -kv[1])[:8]
        print("category histogram (top): "
              + ", ".join(f"{k}={v}" for k, v in top))
    return summary


def _load_summary_config(dataset_dir: Path) -> PipelineConfig:
    summary_path = dataset_dir / "summary.json"
    if not summary_path.exists():
        raise CorruptManifest(f"{summary_path}: missing")
    with open(summary_path) as f:
        summary = json.load(f)
    return PipelineConfig.from_dict(summary["config"])


def load_pair(pair_dir, config: PipelineConfig | None = None
              ) -> tuple[ScenePair, PairManifest]:
    """Rebuild a ScenePair (complete scenes) from a pair directory.

    Canonical object clouds are recovered by inverting the recorded
    transforms on the stored complete geometry, so the returned pair
    replays occlusion and matching exactly as generated. Validates the
    config hash when a config is supplied.
    """
    pair_dir = Path(pair_dir)
    mpath = pair_dir / "manifest.json"
    if not mpath.exists():
        raise CorruptManifest(f"{mpath}: missing")
    with open(mpath) as f:
        manifest = PairManifest.from_dict(json.load(f))
    if config is not None and manifest.config_hash != config.config_hash():
        raise CorruptManifest(
            f"pair {manifest.pair_id}: config hash mismatch")
    for fname in manifest.files.values():
        if not (pair_dir / fname).exists():
            raise CorruptManifest(
                f"pair {manifest.pair_id}: missing file {fname}")
    scenes = {}
    for side in ("a", "b"):
        pts = load_point_cloud(
            pair_dir / manifest.files[f"scene_{side}_complete"],
            manifest.export_format)
        transforms = [Transform.from_dict(t) for t in
                      getattr(manifest, f"transforms_{side}")]
        objects = []
        start = 0
        for obj_doc, tf in zip(manifest.objects, transforms):
            n = obj_doc["n_points"]
            placed = pts[start:start + n]
            canonical = tf.inverse().apply(placed)
            objects.append(ObjectInstance(obj_doc["category_id"],
                                          obj_doc["instance_id"],
                                          canonical, tf))
            start += n
        if start != pts.shape[0]:
            raise CorruptManifest(
                f"pair {manifest.pair_id}: scene {side} has {pts.shape[0]} "
                f"points, objects account for {start}")
        scenes[side] = SceneInstance.from_objects(manifest.scene_type_id,
                                                  objects)
    return ScenePair(scenes["a"], scenes["b"], manifest.pair_seed), manifest


def list_pair_dirs(dataset_dir) -> list[Path]:
    pairs_root = Path(dataset_dir) / "pairs"
    if not pairs_root.is_dir():
        return []
    return sorted(p for p in pairs_root.iterdir()
                  if p.is_dir() and (p / "manifest.json").exists())


def evaluate_losses(dataset_dir, config: PipelineConfig | None = None,
                    checkpoint: str | None = None,
                    report_path=None, with_gradients: bool = False,
                    progress: bool = True) -> list[LossReport]:
    """Batch loss reports over a generated dataset.

    Pairs are grouped into batches of config.batch_pairs; each report is
    appended as one JSON line to report_path (when given). The encoder and
    heads come from the checkpoint if supplied, otherwise from a seeded
    random initialization derived from the master seed.
    """
    dataset_dir = Path(dataset_dir)
    if config is None:
        config = _load_summary_config(dataset_dir)
    pair_dirs = list_pair_dirs(dataset_dir)
    if not pair_dirs:
        raise CorruptManifest(f"{dataset_dir}: no pair manifests found")
    if checkpoint:
        encoder, heads = load_checkpoint(checkpoint)
    else:
        encoder = ToyEncoder(config.encoder_config(),
                             rng_seed=mix64(config.master_seed, 0xE0C))
        heads = DecoderHeads(config.heads_config(),
                             rng_seed=mix64(config.master_seed, 0xDEC))
    reports: list[LossReport] = []
    out = open(report_path, "w", newline="\n") if report_path else None
    try:
        batch: list[PreparedPair] = []
        batch_ids: list[int] = []

        def flush():
            if not batch:
                return
            report = forward_backward(batch, encoder, heads, config.tau,
                                      config.lambda_pts, config.lambda_rec,
                                      with_gradients=with_gradients)
            reports.append(report)
            if out is not None:
                doc = report.to_json_dict()
                doc["pair_ids"] = list(batch_ids)
                out.write(json.dumps(doc, sort_keys=True) + "\n")
            batch.clear()
            batch_ids.clear()

        for pdir in pair_dirs:
            pair, manifest = load_pair(pdir, config)
            prepared = prepare_scene_pair(
                pair, n_seeds=config.n_encoder_seeds,
                m_matches=config.m_seeds, theta=config.theta, u=config.u,
                rng_seed=manifest.pair_seed, occlude=config.occlude)
            batch.append(prepared)
            batch_ids.append(manifest.pair_id)
            if len(batch) >= config.batch_pairs:
                flush()
        flush()
    finally:
        if out is not None:
            out.close()
    if progress and reports:
        means = {k: float(np.mean([getattr(r, k) for r in reports]))
                 for k in ("l_obj", "l_pts", "l_rec_coarse",
                           "l_rec_detail", "l_overall")}
        for k, v in means.items():
            print(f"mean {k}: {v:.6f}")
    return reports


def match_pair_dir(pair_dir, config: PipelineConfig | None = None,
                   m_seeds: int | None = None, theta: float | None = None,
                   full_pool: bool = False) -> MatchSet:
    """Recompute the match set of a stored pair (CLI `match` backend)."""
    pair_dir = Path(pair_dir)
    pair, manifest = load_pair(pair_dir, config)
    with open(pair_dir / "manifest.json") as f:
        doc = json.load(f)
    occ_a = replay_occlusion(pair.scene_a,
                             OcclusionRecord.from_dict(doc["occlusion_a"]))
    occ_b = replay_occlusion(pair.scene_b,
                             OcclusionRecord.from_dict(doc["occlusion_b"]))
    occluded_pair = ScenePair(occ_a, occ_b, manifest.pair_seed)
    theta = theta if theta is not None else manifest.theta
    if m_seeds is None:
        m_seeds = config.m_seeds if config is not None else 100
    m = min(m_seeds, occ_a.points.shape[0])
    seeds_a = sample_seed_set(occ_a, m,
                              mix64(manifest.pair_seed, STREAM_MATCH_A))
    if full_pool:
        n_b = occ_b.points.shape[0]
        seeds_b = SeedSet(np.arange(n_b, dtype=np.intp), occ_b.points,
                          occ_b.point_object_ids)
    else:
        m_b = min(m, occ_b.points.shape[0])
        seeds_b = sample_seed_set(occ_b, m_b,
                                  mix64(manifest.pair_seed, STREAM_MATCH_B))
    return match_points(occluded_pair, seeds_a, seeds_b, theta)
