"""Deterministic synthetic backend: a test double for the frozen model.

A MockWorld pins the geometry (per-class visual directions, a distractor
direction for background texture, a text-prompt table) and a MockModel
evaluates the three frozen-model operations against it. The segmentation
rule is thresholded cosine: a pixel is foreground for a query exactly when
the cosine between its feature and the query exceeds the world's threshold.
Under that rule "better query => better overlap" is provable, which makes
the whole scoring pipeline testable end to end.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DegenerateVector, UnknownPrompt
from .base import GridImage, Image, check_query_dims

_NOISE_STREAM = 0x4E4F4953  # disambiguates the per-image noise RNG stream
_FEATURE_CACHE_LIMIT = 512


@dataclass
class MockWorld:
    """Fixed geometry of a synthetic world.

    prompts maps each class name to an ordered list of (text, embedding)
    pairs; by convention entry 0 is the bare class name. noise_sigma is the
    magnitude of the per-pixel isotropic feature perturbation, threshold the
    cosine cut of the segmentation rule.
    """

    dim: int
    seed: int
    noise_sigma: float
    threshold: float
    class_names: list[str]
    class_dirs: np.ndarray  # (C, d) current visual directions
    source_dirs: np.ndarray  # (C, d) pre-drift directions
    distractor: np.ndarray  # (d,)
    drift_dir: np.ndarray  # (d,)
    prompts: dict[str, list[tuple[str, np.ndarray]]] = field(default_factory=dict)

    def class_index(self, name: str) -> int:
        return self.class_names.index(name)

    def class_dir(self, name: str) -> np.ndarray:
        return self.class_dirs[self.class_index(name)]

    def prompt_vector(self, text: str) -> np.ndarray:
        for entries in self.prompts.values():
            for candidate, vec in entries:
                if candidate == text:
                    return vec
        raise UnknownPrompt(f"no prompt table entry for {text!r}")

    def prompt_texts(self, name: str) -> list[str]:
        return [text for text, _ in self.prompts[name]]

    def to_json(self) -> str:
        payload = {
            "format": "conceptbank-mock-world",
            "version": 1,
            "dim": self.dim,
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "threshold": self.threshold,
            "class_names": list(self.class_names),
            "class_dirs": self.class_dirs.tolist(),
            "source_dirs": self.source_dirs.tolist(),
            "distractor": self.distractor.tolist(),
            "drift_dir": self.drift_dir.tolist(),
            "prompts": {
                name: [[text, vec.tolist()] for text, vec in entries]
                for name, entries in self.prompts.items()
            },
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MockWorld":
        payload = json.loads(text)
        if payload.get("format") != "conceptbank-mock-world":
            raise ValueError("not a mock world file")
        if payload.get("version") != 1:
            raise ValueError(f"unsupported world version {payload.get('version')!r}")
        return MockWorld(
            dim=int(payload["dim"]),
            seed=int(payload["seed"]),
            noise_sigma=float(payload["noise_sigma"]),
            threshold=float(payload["threshold"]),
            class_names=list(payload["class_names"]),
            class_dirs=np.asarray(payload["class_dirs"], dtype=np.float64),
            source_dirs=np.asarray(payload["source_dirs"], dtype=np.float64),
            distractor=np.asarray(payload["distractor"], dtype=np.float64),
            drift_dir=np.asarray(payload["drift_dir"], dtype=np.float64),
            prompts={
                name: [(text, np.asarray(vec, dtype=np.float64)) for text, vec in entries]
                for name, entries in payload["prompts"].items()
            },
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @staticmethod
    def load(path) -> "MockWorld":
        with open(path, "r", encoding="utf-8") as fh:
            return MockWorld.from_json(fh.read())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:12]


class MockModel:
    """FrozenModel implementation over a MockWorld.

    Bitwise deterministic: features depend only on (world seed, image id,
    pixel index), so results are independent of call order, caching, and
    worker count.
    """

    def __init__(self, world: MockWorld):
        self.world = world
        self._model_id = f"mock:{world.fingerprint()}"
        self._cache: dict[tuple, np.ndarray] = {}
        self._cache_lock = threading.Lock()

    @property
    def dimension(self) -> int:
        return self.world.dim

    @property
    def resolution(self) -> tuple[int, int] | None:
        return None  # grid images are consumed at their stored size

    @property
    def model_id(self) -> str:
        return self._model_id

    def dense_features(self, image: Image) -> np.ndarray:
        if not isinstance(image, GridImage):
            raise TypeError("mock backend consumes GridImage inputs only")
        return self._features(image).copy()

    def _features(self, image: GridImage) -> np.ndarray:
        key = (image.image_id, image.view_tag, image.dirs.shape)
        with self._cache_lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        feats = self._synthesize(image)
        with self._cache_lock:
            if len(self._cache) >= _FEATURE_CACHE_LIMIT:
                self._cache.clear()
            self._cache[key] = feats
        return feats

    def _synthesize(self, image: GridImage) -> np.ndarray:
        sigma = self.world.noise_sigma
        if sigma == 0.0:
            return image.dirs.copy()
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.world.seed, _NOISE_STREAM, image.image_id]))
        )
        noise = rng.standard_normal(image.dirs.shape)
        noise /= np.linalg.norm(noise, axis=2, keepdims=True)
        perturbed = image.dirs + sigma * noise
        perturbed /= np.linalg.norm(perturbed, axis=2, keepdims=True)
        return perturbed

    def encode_text(self, prompt: str) -> np.ndarray:
        text = prompt.strip()
        if not text:
            raise UnknownPrompt("empty prompt")
        return self.world.prompt_vector(text).copy()

    def predict_masks(
        self, image: Image, queries: Sequence[np.ndarray]
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        if not isinstance(image, GridImage):
            raise TypeError("mock backend consumes GridImage inputs only")
        check_query_dims(queries, self.world.dim)
        feats = self._features(image)
        feat_norms = np.linalg.norm(feats, axis=2)
        out = []
        for q in queries:
            q = np.asarray(q, dtype=np.float64)
            qn = float(np.linalg.norm(q))
            if qn == 0.0:
                raise DegenerateVector("zero-norm query")
            conf = np.einsum("hwd,d->hw", feats, q) / (feat_norms * qn)
            out.append((conf > self.world.threshold, conf))
        return out
