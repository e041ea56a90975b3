"""Dataset builder: category search, paired instance generation, manifest ops.

Every random decision is keyed by a stable hash of (global_seed, role tag,
category, instance, attempt), never by shared RNG state, so results are
independent of worker count and scheduling. Outputs are written atomically and
the manifest carries a content digest over everything except wall-clock
metadata.
"""

import copy
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import formats, ifs, perlin, projection
from .projection import ProjectionConfig

FORMAT_VERSION = 1
RESERVE_DONORS = 8
REJECTION_CAP = 1000
GENERATORS = ("fractal", "perlin")

_MASK64 = (1 << 64) - 1
_JOURNAL = ".journal.json"


class BuildError(RuntimeError):
    """Raised when dataset generation cannot proceed."""


@dataclass(frozen=True)
class BuildConfig:
    categories: int
    instances: int
    global_seed: int = 0
    generator: str = "fractal"
    points: int = ifs.DEFAULT_POINTS
    transforms: int = ifs.DEFAULT_TRANSFORMS
    threshold: float = ifs.VARIANCE_THRESHOLD
    mix_ratio: float = ifs.DEFAULT_MIX_RATIO
    camera_radius: float = projection.CAMERA_RADIUS
    rejection_cap: int = REJECTION_CAP
    workers: int = 1
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def __post_init__(self):
        if self.categories < 1:
            raise ValueError(f"categories must be >= 1, got {self.categories}")
        if self.instances < 1:
            raise ValueError(f"instances must be >= 1, got {self.instances}")
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.points < 1:
            raise ValueError(f"points must be >= 1, got {self.points}")
        if not 0.0 < self.mix_ratio < 1.0:
            raise ValueError(f"mix_ratio must be in (0, 1), got {self.mix_ratio}")
        if self.threshold < 0.0:
            raise ValueError(f"threshold must be non-negative, got {self.threshold}")
        if self.rejection_cap < 1:
            raise ValueError(f"rejection_cap must be >= 1, got {self.rejection_cap}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def params_dict(self) -> dict:
        """Build parameters echoed into the manifest and the journal."""
        p = self.projection
        return {
            "categories": self.categories,
            "instances": self.instances,
            "global_seed": int(self.global_seed) & _MASK64,
            "generator": self.generator,
            "points": self.points,
            "transforms": self.transforms,
            "threshold": self.threshold,
            "mix_ratio": self.mix_ratio,
            "camera_radius": self.camera_radius,
            "rejection_cap": self.rejection_cap,
            "projection": {
                "fov_y_degrees": p.fov_y_degrees,
                "aspect": p.aspect,
                "near": p.near,
                "far": p.far,
                "width": p.width,
                "height": p.height,
            },
        }


@dataclass(frozen=True)
class CategoryRecord:
    category_id: int
    category_seed: int
    run_seed: int  # seed of the accepted search cloud, reused as the donor cloud
    search_attempts: int
    reserve: bool
    perlin_candidate: int | None = None  # index into the (frequency, scale) sequence

    def as_dict(self) -> dict:
        d = {
            "category_id": self.category_id,
            "category_seed": self.category_seed,
            "run_seed": self.run_seed,
            "search_attempts": self.search_attempts,
            "reserve": self.reserve,
        }
        if self.perlin_candidate is not None:
            d["perlin_candidate"] = self.perlin_candidate
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CategoryRecord":
        return cls(
            category_id=d["category_id"],
            category_seed=d["category_seed"],
            run_seed=d["run_seed"],
            search_attempts=d["search_attempts"],
            reserve=d["reserve"],
            perlin_candidate=d.get("perlin_candidate"),
        )


def _total_slots(cfg: BuildConfig) -> int:
    # Fewer than two real categories leaves no donor pool, so a reserve block
    # of donor-only categories is searched after the real ones.
    return cfg.categories + (RESERVE_DONORS if cfg.categories < 2 else 0)


def _category_raw(cfg: BuildConfig, cat: CategoryRecord, run_seed: int) -> np.ndarray:
    """Regenerate a category cloud at generator-native scale from a run seed.

    This is the scale the variance threshold applies to: chaos-game output for
    fractal systems, the lifted (x, y, scale*height) grid for noise fields.
    Shape-normalized variance of random affine systems almost never clears the
    0.05 default (0 of 4000 sampled candidates), so filtering after
    normalization would make builds impossible; the threshold is checked here
    and normalization happens afterwards for storage and rendering.
    """
    if cfg.generator == "fractal":
        system = ifs.sample_ifs(cat.category_seed, cfg.transforms)
        return ifs.chaos_game(system, cfg.points, run_seed)
    params = perlin.candidate_params(cat.perlin_candidate, cat.category_seed)
    field_vals = perlin.perlin_field(params)
    return perlin.lift_points(field_vals, params, cfg.points, resample_seed=run_seed)


def _category_base(cfg: BuildConfig, cat: CategoryRecord, run_seed: int) -> np.ndarray:
    """Normalized category cloud (the stored / donor / render form)."""
    return ifs.normalize_cloud(_category_raw(cfg, cat, run_seed))


def search_category(cfg: BuildConfig, category_id: int) -> CategoryRecord:
    """Find the first candidate for this slot that passes the variance filter.

    Fractal candidates are fresh systems per attempt; gradient-noise candidates
    walk a per-slot arithmetic subsequence of the (frequency, scale) sequence
    so distinct slots land on distinct categories. Divergent chaos-game runs
    count as rejections.
    """
    slots = _total_slots(cfg)
    gs = cfg.global_seed
    for attempt in range(cfg.rejection_cap):
        cat_seed = formats.derive_seed(gs, "category", category_id, attempt)
        run_seed = formats.derive_seed(gs, "category-run", category_id, attempt)
        candidate = None if cfg.generator == "fractal" else category_id + attempt * slots
        trial = CategoryRecord(
            category_id=category_id,
            category_seed=cat_seed,
            run_seed=run_seed,
            search_attempts=attempt + 1,
            reserve=category_id >= cfg.categories,
            perlin_candidate=candidate,
        )
        try:
            raw = _category_raw(cfg, trial, run_seed)
        except ifs.DivergenceError:
            continue
        if ifs.variance_filter(raw, cfg.threshold):
            return trial
    raise BuildError(
        f"category {category_id}: no candidate passed the variance filter "
        f"in {cfg.rejection_cap} attempts"
    )


def _make_instance_base(cfg: BuildConfig, cat: CategoryRecord, instance_id: int):
    """Per-instance base cloud with deterministic retries; returns (cloud, run_seed, attempts)."""
    gs = cfg.global_seed
    for attempt in range(cfg.rejection_cap):
        run_seed = formats.derive_seed(gs, "run", cat.category_id, instance_id, attempt)
        try:
            raw = _category_raw(cfg, cat, run_seed)
        except ifs.DivergenceError:
            continue
        if ifs.variance_filter(raw, cfg.threshold):
            return ifs.normalize_cloud(raw), run_seed, attempt + 1
    raise BuildError(
        f"category {cat.category_id} instance {instance_id}: no base cloud passed "
        f"the variance filter in {cfg.rejection_cap} attempts"
    )


def _donor_ids(cfg: BuildConfig, category_id: int) -> list[int]:
    if cfg.categories < 2:
        return list(range(cfg.categories, _total_slots(cfg)))
    return [c for c in range(cfg.categories) if c != category_id]


def _rel_paths(category_id: int, instance_id: int) -> tuple[str, str]:
    return (
        f"clouds/{category_id:04d}/{instance_id:04d}.pcb",
        f"images/{category_id:04d}/{instance_id:04d}.png",
    )


def generate_instance(
    cfg: BuildConfig,
    categories: list[CategoryRecord],
    category_id: int,
    instance_id: int,
    donor_cache: dict | None = None,
) -> dict:
    """Produce one paired sample fully in memory.

    Returns a dict with the final cloud, the rendered image, the camera pose,
    and the seed/donor bookkeeping that goes into the manifest record.
    """
    gs = cfg.global_seed
    cat = categories[category_id]
    base, run_seed, attempts = _make_instance_base(cfg, cat, instance_id)

    pool = _donor_ids(cfg, category_id)
    donor_seed = formats.derive_seed(gs, "donor", category_id, instance_id)
    donor_cid = pool[int(np.random.default_rng(donor_seed).integers(0, len(pool)))]
    if donor_cache is not None and donor_cid in donor_cache:
        donor_cloud = donor_cache[donor_cid]
    else:
        donor_cat = categories[donor_cid]
        donor_cloud = _category_base(cfg, donor_cat, donor_cat.run_seed)
        if donor_cache is not None:
            donor_cache[donor_cid] = donor_cloud

    mix_seed = formats.derive_seed(gs, "mix", category_id, instance_id)
    mixed = ifs.fractal_noise_mix(base, donor_cloud, cfg.mix_ratio, mix_seed)
    final = ifs.normalize_cloud(mixed)

    cam_seed = formats.derive_seed(gs, "cam", category_id, instance_id)
    image, pose = projection.render_cloud(final, cam_seed, cfg.camera_radius, cfg.projection)
    return {
        "cloud": final,
        "image": image,
        "pose": pose,
        "run_seed": run_seed,
        "attempts": attempts,
        "mix_seed": mix_seed,
        "cam_seed": cam_seed,
        "donor_category": donor_cid,
    }


def _generate_category(args) -> list[dict]:
    """Worker: write every instance of one category; returns manifest records."""
    cfg, categories, category_id, root, resume = args
    root = Path(root)
    donor_cache: dict = {}
    records = []
    cat = categories[category_id]
    for instance_id in range(cfg.instances):
        pcb_rel, png_rel = _rel_paths(category_id, instance_id)
        pcb_path = root / pcb_rel
        png_path = root / png_rel
        pcb_path.parent.mkdir(parents=True, exist_ok=True)
        png_path.parent.mkdir(parents=True, exist_ok=True)
        # Records are always regenerated in memory (generation is cheap and
        # fully seed-driven); resume only skips rewriting files already on disk.
        gen = generate_instance(cfg, categories, category_id, instance_id, donor_cache)
        pcb_bytes = formats.encode_pcb(gen["cloud"])
        png_bytes = formats.encode_png(gen["image"])
        if not (resume and pcb_path.exists()):
            formats.atomic_write_bytes(pcb_path, pcb_bytes)
        if not (resume and png_path.exists()):
            formats.atomic_write_bytes(png_path, png_bytes)
        records.append(
            {
                "category_id": category_id,
                "instance_id": instance_id,
                "point_cloud": pcb_rel,
                "image": png_rel,
                "image_label": category_id,
                "cloud_label": category_id,
                "camera": gen["pose"].as_dict(),
                "mix_donor_category": gen["donor_category"],
                "seeds": {
                    "category_seed": cat.category_seed,
                    "run_seed": gen["run_seed"],
                    "mix_seed": gen["mix_seed"],
                    "cam_seed": gen["cam_seed"],
                },
                "base_attempts": gen["attempts"],
                "pcb_sha256": formats.sha256_bytes(pcb_bytes),
                "png_sha256": formats.sha256_bytes(png_bytes),
            }
        )
    return records


def _search_slot(args) -> CategoryRecord:
    cfg, category_id = args
    return search_category(cfg, category_id)


def compute_digest(manifest: dict) -> str:
    """Content digest over the manifest minus wall-clock and the digest itself."""
    scrubbed = {k: v for k, v in manifest.items() if k not in ("digest", "created")}
    return formats.sha256_bytes(formats.canonical_json(scrubbed).encode("utf-8"))


def save_manifest(path: str | Path, manifest: dict) -> None:
    formats.atomic_write_bytes(
        path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    )


def load_manifest(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise BuildError(
            f"unsupported manifest format_version {manifest.get('format_version')!r}"
        )
    return manifest


def build_dataset(cfg: BuildConfig, out_dir: str | Path, force: bool = False) -> dict:
    """Build (or deterministically resume) a dataset; returns the manifest.

    An existing output directory is resumed only when its journal records the
    same parameters; a parameter mismatch aborts unless force is set, which
    regenerates everything.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    journal_path = root / _JOURNAL
    params = cfg.params_dict()
    resume = False
    if journal_path.exists():
        try:
            journal = json.loads(journal_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise BuildError(f"corrupt journal {journal_path}: {e}") from e
        if journal.get("params") == params:
            resume = not force
        elif not force:
            raise BuildError(
                f"{root} was built with different parameters; use force to rebuild"
            )
    formats.atomic_write_bytes(
        journal_path,
        (json.dumps({"params": params, "status": "building"}, indent=2, sort_keys=True) + "\n").encode(),
    )

    slots = _total_slots(cfg)
    search_args = [(cfg, cid) for cid in range(slots)]
    gen_ids = list(range(cfg.categories))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            categories = list(pool.map(_search_slot, search_args))
            gen_args = [(cfg, categories, cid, str(root), resume) for cid in gen_ids]
            per_cat = list(pool.map(_generate_category, gen_args))
    else:
        categories = [_search_slot(a) for a in search_args]
        per_cat = [_generate_category((cfg, categories, cid, str(root), resume)) for cid in gen_ids]

    records = [rec for cat_records in per_cat for rec in cat_records]
    search_total = sum(c.search_attempts for c in categories)
    base_total = sum(r["base_attempts"] for r in records)
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator": cfg.generator,
        "params": params,
        "categories": [c.as_dict() for c in categories],
        "records": records,
        "stats": {
            "category_search_attempts": search_total,
            "category_acceptance_rate": slots / search_total,
            "instance_attempts": base_total,
            "instance_acceptance_rate": len(records) / base_total if records else 0.0,
        },
        "shuffle": None,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    manifest["digest"] = compute_digest(manifest)
    save_manifest(root / "manifest.json", manifest)
    formats.atomic_write_bytes(
        journal_path,
        (json.dumps({"params": params, "status": "complete"}, indent=2, sort_keys=True) + "\n").encode(),
    )
    return manifest


def shuffle_labels(manifest: dict, mode: str, shuffle_seed: int) -> dict:
    """Return a copy with permuted cloud labels; image labels stay put.

    ``category`` permutes the category ids with one draw, so every cloud keeps
    a categorically consistent (wrong) label. ``instance_category`` permutes the
    records globally and takes each donor record's category as the new label.
    Both are reproducible and invertible given the seed.
    """
    if mode not in ("category", "instance_category"):
        raise ValueError(f"unknown shuffle mode {mode!r}")
    out = copy.deepcopy(manifest)
    records = out["records"]
    rng = np.random.default_rng(shuffle_seed & _MASK64)
    if mode == "category":
        n_cat = out["params"]["categories"]
        perm = rng.permutation(n_cat)
        for rec in records:
            rec["cloud_label"] = int(perm[rec["category_id"]])
    else:
        perm = rng.permutation(len(records))
        new_labels = [records[int(p)]["category_id"] for p in perm]
        for rec, label in zip(records, new_labels):
            rec["cloud_label"] = int(label)
    out["shuffle"] = {"mode": mode, "seed": int(shuffle_seed) & _MASK64}
    out["digest"] = compute_digest(out)
    return out


def dataset_stats(root: str | Path) -> dict:
    """Distribution report over a built dataset; regenerates base clouds.

    Base-cloud variances are recomputed from the recorded seeds (pre-mix) to
    check the acceptance invariant; stored-cloud variances and white-pixel
    counts come from the files.
    """
    root = Path(root)
    manifest = load_manifest(root / "manifest.json")
    cfg = config_from_manifest(manifest)
    categories = [CategoryRecord.from_dict(d) for d in manifest["categories"]]
    per_cat_counts: dict[int, int] = {}
    stored_var_min = math.inf
    base_var_min = math.inf
    base_below_threshold = 0
    white_counts = []
    for rec in manifest["records"]:
        per_cat_counts[rec["category_id"]] = per_cat_counts.get(rec["category_id"], 0) + 1
        cloud = formats.read_pcb(root / rec["point_cloud"]).astype(np.float64)
        stored_var_min = min(stored_var_min, float(cloud.var(axis=0).min()))
        base = _category_raw(cfg, categories[rec["category_id"]], rec["seeds"]["run_seed"])
        with np.errstate(over="ignore"):  # huge finite coords may hit inf
            bmin = float(base.var(axis=0).min())
        base_var_min = min(base_var_min, bmin)
        if bmin <= cfg.threshold:
            base_below_threshold += 1
        img = formats.read_png(root / rec["image"])
        white_counts.append(int((img[:, :, 0] == 255).sum()))
    white = np.array(white_counts) if white_counts else np.zeros(1, dtype=int)
    return {
        "records": len(manifest["records"]),
        "categories": manifest["params"]["categories"],
        "per_category_counts": dict(sorted(per_cat_counts.items())),
        "balanced": len(set(per_cat_counts.values())) <= 1,
        "base_variance_min": base_var_min,
        "base_clouds_below_threshold": base_below_threshold,
        "stored_variance_min": stored_var_min,
        "white_pixels": {
            "min": int(white.min()),
            "mean": float(white.mean()),
            "max": int(white.max()),
        },
        "category_acceptance_rate": manifest["stats"]["category_acceptance_rate"],
        "instance_acceptance_rate": manifest["stats"]["instance_acceptance_rate"],
    }


def config_from_manifest(manifest: dict) -> BuildConfig:
    p = manifest["params"]
    return BuildConfig(
        categories=p["categories"],
        instances=p["instances"],
        global_seed=p["global_seed"],
        generator=manifest["generator"],
        points=p["points"],
        transforms=p["transforms"],
        threshold=p["threshold"],
        mix_ratio=p["mix_ratio"],
        camera_radius=p["camera_radius"],
        rejection_cap=p["rejection_cap"],
        projection=ProjectionConfig(**p["projection"]),
    )


def verify_dataset(root: str | Path, rerender: int = 3) -> tuple[list[str], dict]:
    """Structural and reproducibility checks; returns (violations, info).

    Rerenders ``rerender`` evenly spaced records from seeds alone and demands
    byte equality with the stored files. ``info`` carries the label-stream
    digest for seed 0 that out-of-process loaders must reproduce.
    """
    root = Path(root)
    mpath = root if root.is_file() else root / "manifest.json"
    root = mpath.parent
    problems: list[str] = []
    manifest = load_manifest(mpath)
    cfg = config_from_manifest(manifest)
    categories = [CategoryRecord.from_dict(d) for d in manifest["categories"]]
    records = manifest["records"]

    if compute_digest(manifest) != manifest.get("digest"):
        problems.append("manifest digest mismatch")
    expected = cfg.categories * cfg.instances
    if len(records) != expected:
        problems.append(f"expected {expected} records, found {len(records)}")
    seen = set()
    label_counts: dict[int, int] = {}
    for rec in records:
        key = (rec["category_id"], rec["instance_id"])
        if key in seen:
            problems.append(f"duplicate record for category {key[0]} instance {key[1]}")
        seen.add(key)
        label_counts[rec["cloud_label"]] = label_counts.get(rec["cloud_label"], 0) + 1
        if rec["image_label"] != rec["category_id"]:
            problems.append(f"record {key}: image label {rec['image_label']} != category")
        if manifest.get("shuffle") is None and rec["cloud_label"] != rec["category_id"]:
            problems.append(f"record {key}: cloud label shuffled but manifest says unshuffled")
    if records and len(set(label_counts.values())) > 1:
        problems.append(f"cloud labels unbalanced: {sorted(label_counts.values())}")

    for rec in records:
        key = (rec["category_id"], rec["instance_id"])
        pcb_path = root / rec["point_cloud"]
        png_path = root / rec["image"]
        for path, name in ((pcb_path, "point cloud"), (png_path, "image")):
            if not path.is_file():
                problems.append(f"record {key}: missing {name} file {path.name}")
        if not pcb_path.is_file() or not png_path.is_file():
            continue
        pcb_bytes = pcb_path.read_bytes()
        png_bytes = png_path.read_bytes()
        if formats.sha256_bytes(pcb_bytes) != rec["pcb_sha256"]:
            problems.append(f"record {key}: point-cloud hash mismatch")
        if formats.sha256_bytes(png_bytes) != rec["png_sha256"]:
            problems.append(f"record {key}: image hash mismatch")
        try:
            cloud = formats.decode_pcb(pcb_bytes)
        except formats.FormatError as e:
            problems.append(f"record {key}: bad point cloud: {e}")
            continue
        if cloud.shape[0] != cfg.points:
            problems.append(f"record {key}: {cloud.shape[0]} points, expected {cfg.points}")
        if not np.all(np.isfinite(cloud)):
            problems.append(f"record {key}: non-finite coordinates")
        elif float(np.abs(cloud).max()) > 1.0:
            problems.append(f"record {key}: coordinates outside [-1, 1]")
        try:
            img = formats.decode_png(png_bytes)
        except formats.FormatError as e:
            problems.append(f"record {key}: bad image: {e}")
            continue
        if img.shape != (cfg.projection.height, cfg.projection.width, 3):
            problems.append(f"record {key}: image shape {img.shape} unexpected")
        if not np.all(np.isin(img, (0, 255))):
            problems.append(f"record {key}: image has non-binary pixel values")
        if int((img == 255).sum()) == 0:
            problems.append(f"record {key}: image has no lit pixels")

    step = max(1, len(records) // max(1, rerender))
    for rec in records[::step][:rerender]:
        key = (rec["category_id"], rec["instance_id"])
        pcb_path = root / rec["point_cloud"]
        png_path = root / rec["image"]
        if not (pcb_path.is_file() and png_path.is_file()):
            continue  # already reported as missing above
        gen = generate_instance(cfg, categories, rec["category_id"], rec["instance_id"], {})
        if formats.encode_pcb(gen["cloud"]) != pcb_path.read_bytes():
            problems.append(f"record {key}: point cloud does not reproduce from seeds")
        if formats.encode_png(gen["image"]) != png_path.read_bytes():
            problems.append(f"record {key}: image does not reproduce from seeds")
        if gen["pose"].as_dict() != rec["camera"]:
            problems.append(f"record {key}: camera pose does not reproduce from seeds")

    info = {
        "records": len(records),
        "digest": manifest.get("digest"),
        "labels_digest_seed0": formats.label_stream_digest(
            [r["cloud_label"] for r in records], 0
        ),
        "rerendered": min(rerender, len(records)),
    }
    return problems, info
