"""Three-stage bank construction: prototype estimation, representative
support mining, and score-weighted candidate fusion.

Stage I pools each support crop's dense features under its ground-truth mask
and averages the class's embeddings into a normalized prototype. Stage II
keeps the K crops most cosine-consistent with that prototype, trimming
high-leverage outliers. Stage III scores every candidate query by the overlap
it induces on the kept crops and fuses the candidates with tempered-softmax
weights into one anchor per class.

Everything here is a pure function of (model, supports, pools, config);
classes are independent, so the driver may shard them across workers without
changing any output.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import (
    BackendUnavailable,
    DegeneratePrototype,
    DimMismatch,
    NoCandidates,
    NoSupports,
)
from ..kernel import cosine, dice, iou, l2_normalize, mask_pooled_embedding, tempered_softmax
from ..backend.base import FrozenModel, Image, resize_mask_nearest, resize_nearest
from .config import BuildConfig
from .store import ConceptBank

log = logging.getLogger(__name__)

_METRICS = {"dice": dice, "iou": iou}


@dataclass
class SupportInstance:
    """One labeled crop: an image region plus its foreground mask."""

    class_name: str
    image: Image
    gt_mask: np.ndarray  # (H, W) bool
    source_id: str = ""


@dataclass
class ClassPrototype:
    """Normalized centroid of a class's crop embeddings."""

    class_name: str
    direction: np.ndarray  # (d,), unit norm
    count: int


@dataclass
class RepresentativeSet:
    """Indices of the crops most consistent with the prototype.

    Indices refer to the embedding list passed to mine_representatives and
    are ordered by non-increasing cosine; ties break toward the lower index.
    """

    class_name: str
    indices: list[int]
    cosines: list[float]
    budget: int | None


@dataclass
class ConceptPool:
    """Candidate prompt texts and their embeddings for one class."""

    class_name: str
    texts: list[str]
    embeddings: list[np.ndarray] = field(default_factory=list)
    scores: np.ndarray | None = None


@dataclass
class FusionResult:
    """Outcome of tempered-softmax fusion over the selected candidates."""

    class_name: str
    selected: list[int]
    weights: np.ndarray
    tau: float
    anchor: np.ndarray
    scores: np.ndarray


@dataclass
class ClassBuildRecord:
    """Full per-class provenance of one build."""

    class_name: str
    n_supports: int
    skipped_instances: list[str]
    embeddings: list[np.ndarray]
    prototype: np.ndarray
    rep_indices: list[int]
    rep_cosines: list[float]
    candidates: list[str]
    scores: list[float]
    selected: list[int]
    weights: list[float]
    anchor: np.ndarray
    empty_agreements: int


@dataclass
class BuildReport:
    """Provenance of a whole build; timings live apart from the deterministic
    payload so identical rebuilds compare equal."""

    model_id: str
    config: dict
    classes: list[str]
    per_class: dict[str, ClassBuildRecord]
    skipped_classes: dict[str, str]
    timings: dict[str, dict[str, float]]

    def deterministic_payload(self) -> dict:
        config = dict(self.config)
        config.pop("workers", None)  # execution detail; results are worker-invariant
        return {
            "model_id": self.model_id,
            "config": config,
            "classes": self.classes,
            "skipped_classes": self.skipped_classes,
            "per_class": {
                name: {
                    "n_supports": rec.n_supports,
                    "skipped_instances": rec.skipped_instances,
                    "prototype": rec.prototype.tolist(),
                    "rep_indices": rec.rep_indices,
                    "rep_cosines": rec.rep_cosines,
                    "candidates": rec.candidates,
                    "scores": rec.scores,
                    "selected": rec.selected,
                    "weights": rec.weights,
                    "anchor": rec.anchor.tolist(),
                    "empty_agreements": rec.empty_agreements,
                }
                for name, rec in self.per_class.items()
            },
        }

    def to_json_dict(self) -> dict:
        payload = self.deterministic_payload()
        payload["timings"] = self.timings
        return payload


def collect_crop_embeddings(
    model: FrozenModel,
    supports: Sequence[SupportInstance],
    epsilon: float = 1e-6,
) -> tuple[list[np.ndarray], list[int]]:
    """Mask-pool one embedding per support crop.

    Returns (embeddings, skipped_indices); instances with an empty mask are
    skipped with a warning rather than failing the class, since real
    annotation sets contain degenerate masks.
    """
    if not supports:
        raise NoSupports("no support instances given")
    embeddings: list[np.ndarray] = []
    skipped: list[int] = []
    for idx, inst in enumerate(supports):
        mask = np.asarray(inst.gt_mask, dtype=bool)
        if not mask.any():
            log.warning("skipping empty-mask support %s (class %s)", inst.source_id or idx, inst.class_name)
            skipped.append(idx)
            continue
        features = model.dense_features(inst.image)
        if features.shape[:2] != mask.shape:
            raise DimMismatch(
                f"support {inst.source_id or idx}: feature grid {features.shape[:2]} vs mask {mask.shape}"
            )
        embeddings.append(mask_pooled_embedding(features, mask, epsilon))
    return embeddings, skipped


def estimate_prototype(
    embeddings: Sequence[np.ndarray], class_name: str = ""
) -> ClassPrototype:
    """Normalized arithmetic mean of the crop embeddings."""
    if len(embeddings) == 0:
        raise NoSupports("cannot estimate a prototype from zero embeddings")
    mean = np.mean(np.stack(embeddings), axis=0)
    if float(np.linalg.norm(mean)) == 0.0:
        raise DegeneratePrototype("embeddings cancel exactly; mean has no direction")
    return ClassPrototype(class_name=class_name, direction=l2_normalize(mean), count=len(embeddings))


def mine_representatives(
    embeddings: Sequence[np.ndarray],
    proto: ClassPrototype,
    k: int | None,
) -> RepresentativeSet:
    """Keep the k crops with the largest cosine to the prototype.

    Fewer than k crops means all are retained; ties break toward the lower
    original index so the selection is deterministic.
    """
    if len(embeddings) == 0:
        raise NoSupports("cannot mine representatives from zero embeddings")
    if k is not None and k < 1:
        raise ValueError("k must be >= 1 or None")
    cos = np.array([cosine(z, proto.direction) for z in embeddings])
    order = np.argsort(-cos, kind="stable")
    keep = len(cos) if k is None else min(k, len(cos))
    chosen = order[:keep]
    return RepresentativeSet(
        class_name=proto.class_name,
        indices=[int(i) for i in chosen],
        cosines=[float(cos[i]) for i in chosen],
        budget=k,
    )


def _prepare_for_scoring(
    inst: SupportInstance, score_resize: int | None
) -> tuple[Image, np.ndarray]:
    mask = np.asarray(inst.gt_mask, dtype=bool)
    if score_resize is None:
        return inst.image, mask
    return resize_nearest(inst.image, score_resize), resize_mask_nearest(mask, score_resize)


def score_candidate(
    model: FrozenModel,
    query: np.ndarray,
    reps: Sequence[SupportInstance],
    metric: str = "dice",
    score_resize: int | None = None,
) -> float:
    """Mean overlap between the query-conditioned masks and the ground truth
    over the representative supports."""
    if not reps:
        raise NoSupports("scoring requires at least one representative support")
    overlap = _METRICS[metric]
    total = 0.0
    for inst in reps:
        image, mask = _prepare_for_scoring(inst, score_resize)
        try:
            pred, _ = model.predict_masks(image, [query])[0]
        except BackendUnavailable as exc:
            raise BackendUnavailable(
                f"class {inst.class_name}, support {inst.source_id or '?'}: {exc}"
            ) from exc
        total += overlap(pred, mask)
    return total / len(reps)


def score_pool(
    model: FrozenModel,
    pool: ConceptPool,
    reps: Sequence[SupportInstance],
    metric: str = "dice",
    score_resize: int | None = None,
) -> tuple[np.ndarray, int]:
    """Score every candidate in the pool over the representatives.

    All candidates are evaluated in one predict call per support, which
    leaves every value identical to scoring candidates one at a time.
    Returns (scores, empty_agreement_count); the counter records supports
    where a candidate correctly predicted total absence.
    """
    if not pool.embeddings:
        raise NoCandidates(f"class {pool.class_name}: empty candidate pool")
    if not reps:
        raise NoSupports(f"class {pool.class_name}: no representatives to score on")
    overlap = _METRICS[metric]
    totals = np.zeros(len(pool.embeddings))
    empty_agreements = 0
    for inst in reps:
        image, mask = _prepare_for_scoring(inst, score_resize)
        try:
            outputs = model.predict_masks(image, pool.embeddings)
        except BackendUnavailable as exc:
            raise BackendUnavailable(
                f"class {pool.class_name}, candidates {pool.texts!r}, "
                f"support {inst.source_id or '?'}: {exc}"
            ) from exc
        for m, (pred, _) in enumerate(outputs):
            if not pred.any() and not mask.any():
                empty_agreements += 1
            totals[m] += overlap(pred, mask)
    return totals / len(reps), empty_agreements


def fuse_candidates(
    pool: ConceptPool,
    top_j: int | None,
    tau: float,
    score_floor: float = 0.0,
    renorm: bool = False,
) -> FusionResult:
    """Tempered-softmax fusion of the selected candidates into one anchor.

    top_j of None fuses every candidate; otherwise the top-J by score are
    kept (ties toward the lower index). The anchor is the weighted sum of
    the normalized candidate embeddings and is deliberately not
    re-normalized unless renorm is set.
    """
    if not pool.texts or not pool.embeddings:
        raise NoCandidates(f"class {pool.class_name}: nothing to fuse")
    if pool.scores is None:
        raise ValueError("pool scores must be filled before fusion")
    scores = np.asarray(pool.scores, dtype=np.float64)

    eligible = [i for i in range(len(scores)) if scores[i] >= score_floor]
    if not eligible:
        # the optional gate never empties the pool: keep the best scorer
        eligible = [int(np.argmax(scores))]

    if top_j is None:
        selected = eligible
    else:
        order = sorted(eligible, key=lambda i: (-scores[i], i))
        selected = order[: min(top_j, len(order))]

    weights = tempered_softmax(scores[selected], tau)
    anchor = np.zeros(len(pool.embeddings[0]))
    for w, i in zip(weights, selected):
        anchor += w * l2_normalize(pool.embeddings[i])
    if renorm:
        anchor = l2_normalize(anchor)
    return FusionResult(
        class_name=pool.class_name,
        selected=list(selected),
        weights=weights,
        tau=tau,
        anchor=anchor,
        scores=scores,
    )


def _build_one_class(
    name: str,
    model: FrozenModel,
    supports: list[SupportInstance],
    texts: list[str],
    cfg: BuildConfig,
) -> tuple[ClassBuildRecord, dict[str, float]]:
    timings: dict[str, float] = {}
    if not supports:
        raise NoSupports(f"class {name}: no support instances")
    if not texts:
        raise NoCandidates(f"class {name}: no candidate prompts")

    t0 = time.perf_counter()
    embeddings, skipped = collect_crop_embeddings(model, supports, cfg.epsilon)
    if not embeddings:
        raise NoSupports(f"class {name}: every support had an empty mask")
    kept = [supports[i] for i in range(len(supports)) if i not in set(skipped)]
    proto = estimate_prototype(embeddings, name)
    timings["stage1"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    reps = mine_representatives(embeddings, proto, cfg.k)
    rep_instances = [kept[i] for i in reps.indices]
    timings["stage2"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    pool = ConceptPool(class_name=name, texts=list(texts))
    pool.embeddings = [np.asarray(model.encode_text(t), dtype=np.float64) for t in pool.texts]
    scores, empty_agreements = score_pool(
        model, pool, rep_instances, cfg.metric, cfg.score_resize
    )
    pool.scores = scores
    fusion = fuse_candidates(pool, cfg.top_j, cfg.tau, cfg.score_floor, cfg.renorm_anchor)
    timings["stage3"] = time.perf_counter() - t2

    record = ClassBuildRecord(
        class_name=name,
        n_supports=len(embeddings),
        skipped_instances=[supports[i].source_id or str(i) for i in skipped],
        embeddings=embeddings,
        prototype=proto.direction,
        rep_indices=reps.indices,
        rep_cosines=reps.cosines,
        candidates=pool.texts,
        scores=[float(s) for s in scores],
        selected=fusion.selected,
        weights=[float(w) for w in fusion.weights],
        anchor=fusion.anchor,
        empty_agreements=empty_agreements,
    )
    return record, timings


def build_concept_bank(
    model: FrozenModel,
    supports: Sequence[SupportInstance],
    pools: Mapping[str, Sequence[str]],
    cfg: BuildConfig | None = None,
    classes: Sequence[str] | None = None,
) -> tuple[ConceptBank, BuildReport]:
    """Run the three stages for every class and assemble the bank.

    pools maps class name to its candidate prompt texts. classes pins the
    bank row order; by default it is the sorted pool key set. Classes are
    independent, so cfg.workers > 1 shards them across threads without
    changing any output.
    """
    cfg = cfg or BuildConfig()
    class_list = list(classes) if classes is not None else sorted(pools.keys())
    by_class: dict[str, list[SupportInstance]] = {name: [] for name in class_list}
    for inst in supports:
        if inst.class_name in by_class:
            by_class[inst.class_name].append(inst)

    def run(name: str):
        return _build_one_class(name, model, by_class[name], list(pools.get(name, [])), cfg)

    results: dict[str, tuple[ClassBuildRecord, dict[str, float]]] = {}
    skipped_classes: dict[str, str] = {}
    if cfg.workers == 1:
        for name in class_list:
            try:
                results[name] = run(name)
            except Exception as exc:
                if not cfg.skip_failing:
                    raise
                skipped_classes[name] = f"{type(exc).__name__}: {exc}"
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool_exec:
            futures = {name: pool_exec.submit(run, name) for name in class_list}
            for name in class_list:
                try:
                    results[name] = futures[name].result()
                except Exception as exc:
                    if not cfg.skip_failing:
                        raise
                    skipped_classes[name] = f"{type(exc).__name__}: {exc}"

    built = [name for name in class_list if name in results]
    if not built:
        raise NoSupports("no class survived the build")
    anchors = np.stack([results[name][0].anchor for name in built])
    bank = ConceptBank(
        class_names=built,
        anchors=anchors,
        metric=cfg.metric,
        tau=cfg.tau,
        k=cfg.k,
        model_id=model.model_id,
        timestamp=cfg.timestamp,
    )
    report = BuildReport(
        model_id=model.model_id,
        config=cfg.to_dict(),
        classes=built,
        per_class={name: results[name][0] for name in built},
        skipped_classes=skipped_classes,
        timings={name: results[name][1] for name in built},
    )
    return bank, report
