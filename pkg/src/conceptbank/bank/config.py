"""Build-time configuration for bank construction."""
from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class BuildConfig:
    """Knobs of the three-stage construction pipeline.

    k             per-class budget of representative supports (None = keep all)
    top_j         fusion breadth: None fuses every candidate, an int keeps the
                  top-J scorers
    tau           softmax temperature of the fusion weights; 0.1 keeps weights
                  score-sensitive on the [0, 1] overlap scale without one-hot
                  collapse
    metric        candidate scoring overlap: "dice" or "iou"
    epsilon       stability constant of mask pooling
    score_floor   drop candidates scoring below this before fusion (0 = off);
                  if the floor would drop everything the top scorer is kept
    renorm_anchor re-normalize the fused anchor (off by default: the fusion
                  rule stores the raw convex combination)
    score_resize  resample crops to a square canvas of this size for scoring
                  (None = score at stored resolution)
    workers       class-level parallelism; results are worker-count invariant
    skip_failing  omit classes that fail a stage instead of aborting
    timestamp     value recorded in bank metadata; empty string keeps rebuilds
                  byte-identical
    """

    k: int | None = 10
    top_j: int | None = None
    tau: float = 0.1
    metric: str = "dice"
    epsilon: float = 1e-6
    score_floor: float = 0.0
    renorm_anchor: bool = False
    score_resize: int | None = None
    workers: int = 1
    skip_failing: bool = False
    timestamp: str = ""

    def __post_init__(self):
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1 or None for all supports")
        if self.top_j is not None and self.top_j < 1:
            raise ValueError("top_j must be >= 1 or None for all candidates")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.metric not in ("dice", "iou"):
            raise ValueError(f"unknown scoring metric {self.metric!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "BuildConfig":
        known = {f.name for f in fields(BuildConfig)}
        return BuildConfig(**{k: v for k, v in d.items() if k in known})
