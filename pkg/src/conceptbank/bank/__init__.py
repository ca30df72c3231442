from .config import BuildConfig
from .pipeline import (
    BuildReport,
    ClassPrototype,
    ConceptPool,
    FusionResult,
    RepresentativeSet,
    SupportInstance,
    build_concept_bank,
    collect_crop_embeddings,
    estimate_prototype,
    fuse_candidates,
    mine_representatives,
    score_candidate,
    score_pool,
)
from .store import ConceptBank, deserialize_bank, load_bank, save_bank, serialize_bank

__all__ = [
    "BuildConfig",
    "BuildReport",
    "SupportInstance",
    "ClassPrototype",
    "RepresentativeSet",
    "ConceptPool",
    "FusionResult",
    "ConceptBank",
    "collect_crop_embeddings",
    "estimate_prototype",
    "mine_representatives",
    "score_candidate",
    "score_pool",
    "fuse_candidates",
    "build_concept_bank",
    "serialize_bank",
    "deserialize_bank",
    "save_bank",
    "load_bank",
]
