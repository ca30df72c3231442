"""Model providers the adapter can serve.

Conformance mode wraps the toolkit's deterministic synthetic backend around
a world description carried in a checked-in fixture file, so the protocol
surface is testable with no weights, network, or accelerator. Checkpoint
mode dynamically imports a user-supplied factory around a real model and
normalizes its multi-instance mask output to one mask per query under a
configurable policy.
"""
from __future__ import annotations

import importlib
import json
from dataclasses import dataclass

import numpy as np

from conceptbank.backend.mock import MockModel, MockWorld

FIXTURE_FORMAT = "conceptbank-adapter-conformance"
UNION_POLICIES = ("union", "best")


@dataclass
class SelfTestSpec:
    prompt: str
    vector: list[float]


class ConformanceProvider:
    """Serves the synthetic world embedded in a conformance fixture."""

    def __init__(self, fixture_path):
        with open(fixture_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != FIXTURE_FORMAT:
            raise ValueError(f"{fixture_path} is not a conformance fixture")
        if payload.get("version") != 1:
            raise ValueError(f"unsupported fixture version {payload.get('version')!r}")
        self.world = MockWorld.from_json(json.dumps(payload["world"]))
        self.model = MockModel(self.world)
        st = payload.get("selftest") or {}
        self.selftest = SelfTestSpec(prompt=st["prompt"], vector=st["vector"]) if st else None

    def run_selftest(self) -> list[str]:
        """Recompute the pinned vector from the world; report mismatches."""
        problems = []
        if self.selftest is None:
            problems.append("fixture carries no selftest block")
            return problems
        actual = self.model.encode_text(self.selftest.prompt)
        expected = np.asarray(self.selftest.vector, dtype=np.float64)
        if actual.shape != expected.shape:
            problems.append(
                f"selftest vector dimension {expected.shape} vs world {actual.shape}"
            )
        elif not np.array_equal(actual, expected):
            problems.append("selftest vector does not match recomputation from the world")
        return problems


def make_fixture(world: MockWorld, selftest_prompt: str) -> dict:
    """Build a fixture payload whose pinned vector comes from the world itself."""
    vector = MockModel(world).encode_text(selftest_prompt)
    return {
        "format": FIXTURE_FORMAT,
        "version": 1,
        "world": json.loads(world.to_json()),
        "selftest": {"prompt": selftest_prompt, "vector": [float(x) for x in vector]},
    }


class _PolicyModel:
    """Normalizes a checkpoint's per-query output to one (mask, confidence).

    Real promptable segmenters may emit several instance masks per concept
    query; the toolkit's contract is one mask per query. "union" ORs the
    instances and takes the pixel-wise max confidence; "best" keeps the
    instance with the highest peak confidence.
    """

    def __init__(self, inner, policy: str):
        if policy not in UNION_POLICIES:
            raise ValueError(f"unknown union policy {policy!r}")
        self.inner = inner
        self.policy = policy

    @property
    def dimension(self):
        return self.inner.dimension

    @property
    def resolution(self):
        return getattr(self.inner, "resolution", None)

    @property
    def model_id(self):
        return getattr(self.inner, "model_id", "checkpoint")

    def dense_features(self, image):
        return self.inner.dense_features(image)

    def encode_text(self, prompt):
        return self.inner.encode_text(prompt)

    def predict_masks(self, image, queries):
        outputs = self.inner.predict_masks(image, queries)
        normalized = []
        for out in outputs:
            instances = out if isinstance(out, list) else [out]
            if self.policy == "union" or len(instances) == 1:
                mask = instances[0][0].astype(bool)
                conf = np.asarray(instances[0][1], dtype=np.float64)
                for m, c in instances[1:]:
                    mask = mask | m.astype(bool)
                    conf = np.maximum(conf, np.asarray(c, dtype=np.float64))
                normalized.append((mask, conf))
            else:
                peak = [float(np.max(c)) for _, c in instances]
                best = int(np.argmax(peak))
                normalized.append(
                    (instances[best][0].astype(bool), np.asarray(instances[best][1], dtype=np.float64))
                )
        return normalized


def load_checkpoint_provider(spec: str, union_policy: str = "union"):
    """Import "module:attr" and call it to obtain the model object.

    The factory must return an object with dimension, dense_features,
    encode_text, and predict_masks; predict_masks may yield several
    (mask, confidence) instances per query, reduced here per policy.
    """
    module_name, _, attr = spec.partition(":")
    if not module_name or not attr:
        raise ValueError(f"checkpoint spec {spec!r} is not module:attr")
    module = importlib.import_module(module_name)
    factory = getattr(module, attr)
    model = factory() if callable(factory) else factory
    return _PolicyModel(model, union_policy)
