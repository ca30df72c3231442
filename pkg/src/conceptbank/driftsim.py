"""Seeded synthetic worlds realizing the dual-drift setting.

Data drift is a rigid rotation of every class's visual direction toward a
seeded drift direction by angle rho * pi/4 while the prompt table stays put,
so the cosine between a stale base prompt and its drifted class direction is
exactly cos(rho * pi/4). Concept drift is a permutation of the prompt-to-
direction assignment while the visual ground truth stays. Both keep the
cosine geometry analytically predictable, so expected overlaps are derivable
in closed form.

Support sampling adds the pathologies bank construction must survive:
high-leverage outlier crops whose foreground sits near the distractor
direction (with deliberately oversized masks, mimicking background-dominated
annotation errors), and optional per-crop direction jitter modeling long-tail
appearance spread.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .backend.base import GridImage
from .backend.mock import MockWorld
from .bank.pipeline import SupportInstance
from .errors import InvalidPermutation, WorldInfeasible

DRIFT_MAX_ANGLE = math.pi / 4
ORTHO_LIMIT = 0.2  # pairwise |cosine| bound enforced between world directions
_SAMPLING_ATTEMPTS = 4000

_STREAM_DIRS = 0x574F524C
_STREAM_VARIANT = 0x56415249
_STREAM_CROP = 0x53555050
_STREAM_OUTLIER_PICK = 0x4F55544C

SUPPORT_STREAM = 1
TEST_STREAM = 2


@dataclass
class DriftSpec:
    """Full recipe for one synthetic world and its sampled splits.

    variant_cosines places, per class, one extra prompt at each given cosine
    to the class's final (post-drift) visual direction; the base prompt
    always sits exactly on the pre-drift direction. threshold of None derives
    a segmentation cut that separates the stale base prompt from the best
    variant (falling back to 0.5 for undrifted worlds).
    """

    dim: int = 32
    class_count: int = 3
    rho: float = 0.0
    permutation: list[int] | None = None
    outlier_rate: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    class_names: list[str] | None = None
    variant_cosines: list[float] = field(default_factory=list)
    include_background_prompt: bool = False
    crop_jitter: float = 0.0  # max per-crop rotation of the foreground direction, radians
    crop_jitter_min: float = 0.0  # lower bound of that rotation; > 0 keeps every crop off-axis
    threshold: float | None = None
    crop_size: int = 20
    supports_per_class: int = 12
    tests_per_class: int = 6
    clean_fg_range: tuple[float, float] = (0.2, 0.5)
    outlier_fg_range: tuple[float, float] = (0.75, 0.95)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier rate must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if not 0.0 <= self.crop_jitter_min <= max(self.crop_jitter, 0.0):
            raise ValueError("crop_jitter_min must lie in [0, crop_jitter]")
        if self.permutation is not None:
            _check_permutation(self.permutation, self.class_count)

    def names(self) -> list[str]:
        if self.class_names is not None:
            if len(self.class_names) != self.class_count:
                raise ValueError("class_names length must match class_count")
            return list(self.class_names)
        return [f"class{i:02d}" for i in range(self.class_count)]

    def to_json(self) -> str:
        payload = asdict(self)
        payload["clean_fg_range"] = list(self.clean_fg_range)
        payload["outlier_fg_range"] = list(self.outlier_fg_range)
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DriftSpec":
        payload = json.loads(text)
        for key in ("clean_fg_range", "outlier_fg_range"):
            if key in payload:
                payload[key] = tuple(payload[key])
        return DriftSpec(**payload)

    @staticmethod
    def load(path) -> "DriftSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return DriftSpec.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def _check_permutation(pi, n) -> None:
    if sorted(pi) != list(range(n)):
        raise InvalidPermutation(f"{pi!r} is not a permutation of 0..{n - 1}")


def rotate_toward(v: np.ndarray, target: np.ndarray, angle: float) -> np.ndarray:
    """Rotate unit vector v toward unit vector target by the given angle,
    inside their common plane."""
    if angle == 0.0:
        return v.copy()
    residual = target - np.dot(target, v) * v
    norm = float(np.linalg.norm(residual))
    if norm < 1e-12:
        return v.copy()
    return math.cos(angle) * v + math.sin(angle) * (residual / norm)


def _unit(rng, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _orthogonal_component(rng, d: int, anchor: np.ndarray) -> np.ndarray:
    raw = _unit(rng, d)
    residual = raw - np.dot(raw, anchor) * anchor
    norm = float(np.linalg.norm(residual))
    if norm < 1e-12:
        raise WorldInfeasible("random direction degenerate against anchor")
    return residual / norm


def _place_at_cosine(rng, anchor: np.ndarray, value: float) -> np.ndarray:
    """Unit vector at exactly the requested cosine to the unit anchor."""
    if not -1.0 <= value <= 1.0:
        raise ValueError("cosine placement outside [-1, 1]")
    perp = _orthogonal_component(rng, anchor.shape[0], anchor)
    return value * anchor + math.sqrt(max(0.0, 1.0 - value * value)) * perp


def _sample_separated_dirs(rng, d: int, count: int) -> list[np.ndarray]:
    dirs: list[np.ndarray] = []
    attempts = 0
    while len(dirs) < count:
        if attempts >= _SAMPLING_ATTEMPTS:
            raise WorldInfeasible(
                f"could not place {count} directions with pairwise |cos| < {ORTHO_LIMIT} "
                f"in dimension {d} after {attempts} attempts; "
                f"a dimension of at least 3x the class count is safe in practice"
            )
        attempts += 1
        candidate = _unit(rng, d)
        if all(abs(float(np.dot(candidate, prev))) < ORTHO_LIMIT for prev in dirs):
            dirs.append(candidate)
    return dirs


def derive_threshold(rho: float, variant_cosines) -> float:
    """Midpoint cut between the stale base prompt's drifted cosine and the
    best variant, when drift opens such a gap; 0.5 otherwise."""
    base_cos = math.cos(rho * DRIFT_MAX_ANGLE)
    best = max(variant_cosines) if variant_cosines else None
    if rho > 0 and best is not None and best > base_cos:
        return 0.5 * (base_cos + best)
    return 0.5


def make_world(spec: DriftSpec) -> MockWorld:
    """Construct the deterministic world a spec describes.

    Directions (class sources, distractor, drift target) are rejection
    sampled to pairwise near-orthogonality. The prompt table holds, per
    class, the base prompt pinned to the pre-drift direction of its assigned
    class, variants at the spec's cosines to the post-drift direction, and
    optionally a background prompt on the distractor.
    """
    names = spec.names()
    c = spec.class_count
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, _STREAM_DIRS])))
    dirs = _sample_separated_dirs(rng, spec.dim, c + 2)
    source_dirs = np.stack(dirs[:c])
    distractor = dirs[c]
    drift_dir = dirs[c + 1]

    angle = spec.rho * DRIFT_MAX_ANGLE
    class_dirs = np.stack([rotate_toward(g, drift_dir, angle) for g in source_dirs])

    pi = spec.permutation if spec.permutation is not None else list(range(c))
    _check_permutation(pi, c)

    prompts: dict[str, list[tuple[str, np.ndarray]]] = {}
    for idx, name in enumerate(names):
        assigned = pi[idx]
        entries: list[tuple[str, np.ndarray]] = [(name, source_dirs[assigned].copy())]
        for j, value in enumerate(spec.variant_cosines):
            vrng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([spec.seed, _STREAM_VARIANT, assigned, j]))
            )
            entries.append((f"{name} alt{j + 1}", _place_at_cosine(vrng, class_dirs[assigned], value)))
        if spec.include_background_prompt:
            entries.append((f"{name} backdrop", distractor.copy()))
        prompts[name] = entries

    threshold = spec.threshold if spec.threshold is not None else derive_threshold(
        spec.rho, spec.variant_cosines
    )
    return MockWorld(
        dim=spec.dim,
        seed=spec.seed,
        noise_sigma=spec.noise_sigma,
        threshold=threshold,
        class_names=names,
        class_dirs=class_dirs,
        source_dirs=source_dirs,
        distractor=distractor,
        drift_dir=drift_dir,
        prompts=prompts,
    )


def apply_data_drift(world: MockWorld, rho: float) -> MockWorld:
    """Rotate every visual class direction toward the world's drift direction
    by rho * pi/4; the prompt table stays untouched."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    angle = rho * DRIFT_MAX_ANGLE
    moved = np.stack([rotate_toward(g, world.drift_dir, angle) for g in world.class_dirs])
    return MockWorld(
        dim=world.dim,
        seed=world.seed,
        noise_sigma=world.noise_sigma,
        threshold=world.threshold,
        class_names=list(world.class_names),
        class_dirs=moved,
        source_dirs=world.source_dirs.copy(),
        distractor=world.distractor.copy(),
        drift_dir=world.drift_dir.copy(),
        prompts={n: [(t, v.copy()) for t, v in e] for n, e in world.prompts.items()},
    )


def apply_concept_drift(world: MockWorld, pi: list[int]) -> MockWorld:
    """Reassign prompt embeddings across classes: class c's prompt texts now
    carry the vectors that class pi[c]'s prompts carried. Visual ground truth
    is untouched."""
    _check_permutation(pi, len(world.class_names))
    new_prompts: dict[str, list[tuple[str, np.ndarray]]] = {}
    for idx, name in enumerate(world.class_names):
        donor = world.class_names[pi[idx]]
        own = world.prompts[name]
        donated = world.prompts[donor]
        if len(own) != len(donated):
            raise InvalidPermutation(
                f"classes {name!r} and {donor!r} hold different prompt counts"
            )
        new_prompts[name] = [(text, vec.copy()) for (text, _), (_, vec) in zip(own, donated)]
    return MockWorld(
        dim=world.dim,
        seed=world.seed,
        noise_sigma=world.noise_sigma,
        threshold=world.threshold,
        class_names=list(world.class_names),
        class_dirs=world.class_dirs.copy(),
        source_dirs=world.source_dirs.copy(),
        distractor=world.distractor.copy(),
        drift_dir=world.drift_dir.copy(),
        prompts=new_prompts,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _rect_mask(rng, height: int, width: int, fraction: float) -> np.ndarray:
    """Seeded axis-aligned rectangle covering roughly the given area fraction."""
    area = max(1.0, fraction * height * width)
    aspect = rng.uniform(0.75, 1.33)
    rh = int(np.clip(round(math.sqrt(area) * aspect), 1, height))
    rw = int(np.clip(round(area / rh), 1, width))
    top = int(rng.integers(0, height - rh + 1))
    left = int(rng.integers(0, width - rw + 1))
    mask = np.zeros((height, width), dtype=bool)
    mask[top : top + rh, left : left + rw] = True
    return mask


def sample_support_set(
    world: MockWorld,
    per_class: int,
    outlier_rate: float,
    crop_jitter: float = 0.0,
    crop_jitter_min: float = 0.0,
    crop_size: int = 20,
    clean_fg_range: tuple[float, float] = (0.2, 0.5),
    outlier_fg_range: tuple[float, float] = (0.75, 0.95),
    stream: int = SUPPORT_STREAM,
) -> list[SupportInstance]:
    """Draw per_class seeded crops for every class.

    Exactly round(outlier_rate * per_class) crops per class (half-up) are
    outliers: their foreground direction sits near the distractor and their
    masks are oversized, but they are labeled as ordinary supports; the
    pipeline has to discover them. Clean crops sit on the class direction,
    optionally jittered by a per-crop rotation of up to crop_jitter radians.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if not 0.0 <= outlier_rate < 1.0:
        raise ValueError("outlier rate must lie in [0, 1)")
    if not 0.0 <= crop_jitter_min <= max(crop_jitter, 0.0):
        raise ValueError("crop_jitter_min must lie in [0, crop_jitter]")
    instances: list[SupportInstance] = []
    n_outliers = _round_half_up(outlier_rate * per_class)
    for c_idx, name in enumerate(world.class_names):
        pick_rng = np.random.Generator(
            np.random.PCG64(
                np.random.SeedSequence([world.seed, _STREAM_OUTLIER_PICK, stream, c_idx])
            )
        )
        outlier_slots = set(
            int(i) for i in pick_rng.choice(per_class, size=n_outliers, replace=False)
        )
        for i in range(per_class):
            rng = np.random.Generator(
                np.random.PCG64(
                    np.random.SeedSequence([world.seed, _STREAM_CROP, stream, c_idx, i])
                )
            )
            is_outlier = i in outlier_slots
            lo, hi = outlier_fg_range if is_outlier else clean_fg_range
            fraction = rng.uniform(lo, hi)
            mask = _rect_mask(rng, crop_size, crop_size, fraction)
            if is_outlier:
                base = world.distractor
                angle = rng.uniform(0.0, 0.1)
            else:
                base = world.class_dirs[c_idx]
                angle = rng.uniform(crop_jitter_min, crop_jitter) if crop_jitter > 0 else 0.0
            if angle > 0:
                direction = rotate_toward(base, _orthogonal_component(rng, world.dim, base), angle)
            else:
                direction = base.copy()
            dirs = np.tile(world.distractor, (crop_size, crop_size, 1))
            dirs[mask] = direction
            image_id = (stream << 24) | (c_idx << 16) | i
            instances.append(
                SupportInstance(
                    class_name=name,
                    image=GridImage(image_id=image_id, dirs=dirs),
                    gt_mask=mask,
                    source_id=f"sim-{stream}-{name}-{i}",
                )
            )
    return instances


def export_simulation(spec: DriftSpec, out_dir) -> dict:
    """Realize a spec on disk: world JSON, support/test splits in the
    pipeline's manifest format, prompt pool files, and a palette.

    Returns the paths of everything written, keyed by role.
    """
    from pathlib import Path

    from .bank.manifest import Palette, save_label_map_png, save_mask_png, write_support_manifest

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    (out / "pools").mkdir(exist_ok=True)

    world = make_world(spec)
    world_path = out / "world.json"
    world.save(world_path)
    spec.save(out / "spec.json")

    supports = sample_from_spec(spec, world, SUPPORT_STREAM)
    support_records = []
    for inst in supports:
        image_rel = f"images/{inst.source_id}.npz"
        mask_rel = f"masks/{inst.source_id}.png"
        inst.image.save(out / image_rel)
        save_mask_png(inst.gt_mask, out / mask_rel)
        support_records.append(
            {
                "class": inst.class_name,
                "image_path": image_rel,
                "mask_path": mask_rel,
                "bbox": None,
                "id": inst.source_id,
            }
        )
    support_manifest = out / "support_manifest.jsonl"
    write_support_manifest(support_records, support_manifest)

    tests = sample_from_spec(spec, world, TEST_STREAM)
    test_records = []
    for inst in tests:
        image_rel = f"images/{inst.source_id}.npz"
        gt_rel = f"masks/{inst.source_id}_gt.png"
        inst.image.save(out / image_rel)
        class_idx = world.class_index(inst.class_name)
        labels = np.where(inst.gt_mask, class_idx, -1).astype(np.int64)
        save_label_map_png(labels, out / gt_rel)
        test_records.append({"image_path": image_rel, "gt_path": gt_rel})
    test_manifest = out / "test_manifest.jsonl"
    write_support_manifest(test_records, test_manifest)

    for name in world.class_names:
        with open(out / "pools" / f"{name}.txt", "w", encoding="utf-8") as fh:
            for text in world.prompt_texts(name):
                fh.write(text)
                fh.write("\n")

    palette_path = out / "palette.json"
    Palette(classes=list(world.class_names)).save(palette_path)
    return {
        "world": str(world_path),
        "support_manifest": str(support_manifest),
        "test_manifest": str(test_manifest),
        "pools": str(out / "pools"),
        "palette": str(palette_path),
    }


def sample_from_spec(spec: DriftSpec, world: MockWorld, stream: int) -> list[SupportInstance]:
    """Sample the spec's support or test split against an existing world.

    The test split is outlier-free: outliers are a support-set pathology,
    evaluation measures recovery on ordinary target data.
    """
    if stream == SUPPORT_STREAM:
        per_class, rate = spec.supports_per_class, spec.outlier_rate
    elif stream == TEST_STREAM:
        per_class, rate = spec.tests_per_class, 0.0
    else:
        raise ValueError(f"unknown stream {stream}")
    return sample_support_set(
        world,
        per_class=per_class,
        outlier_rate=rate,
        crop_jitter=spec.crop_jitter,
        crop_jitter_min=spec.crop_jitter_min,
        crop_size=spec.crop_size,
        clean_fg_range=spec.clean_fg_range,
        outlier_fg_range=spec.outlier_fg_range,
        stream=stream,
    )
