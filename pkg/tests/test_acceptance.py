"""Acceptance suite: every release criterion, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Budgets and tolerances are pinned here, not configurable.
"""
import json
import random
import time

import numpy as np
import pytest

from conceptbank.backend.mock import MockModel
from conceptbank.bank.config import BuildConfig
from conceptbank.bank.pipeline import (
    ClassPrototype,
    build_concept_bank,
    mine_representatives,
    score_candidate,
)
from conceptbank.bank.store import ConceptBank, deserialize_bank, serialize_bank
from conceptbank.cli import main
from conceptbank.driftsim import (
    DriftSpec,
    SUPPORT_STREAM,
    TEST_STREAM,
    make_world,
    sample_from_spec,
)
from conceptbank.errors import BankFormatError, UnsupportedVersion
from conceptbank.evaluation import evaluate_miou
from conceptbank.inference import infer_image, infer_image_onthefly
from conceptbank.kernel import (
    dice,
    iou,
    l2_normalize,
    mask_pooled_embedding,
    tempered_softmax,
)

SEEDS = range(20)


def report(line: str) -> None:
    print(f"\n[PASS] {line}")


def heldout_mean_dice(model, bank, tests) -> float:
    per = []
    for inst in tests:
        idx = bank.class_names.index(inst.class_name)
        mask, _ = model.predict_masks(inst.image, [bank.anchors[idx]])[0]
        per.append(dice(mask, inst.gt_mask))
    return float(np.mean(per))


def drift_spec(seed, **kw):
    base = dict(
        dim=32, class_count=3, rho=0.6, noise_sigma=0.05,
        crop_jitter=0.4363, crop_jitter_min=0.1745,
        supports_per_class=20, tests_per_class=8, seed=seed,
    )
    base.update(kw)
    return DriftSpec(**base)


def build_worlds(seed, **kw):
    spec = drift_spec(seed, **kw)
    world = make_world(spec)
    model = MockModel(world)
    supports = sample_from_spec(spec, world, SUPPORT_STREAM)
    tests = sample_from_spec(spec, world, TEST_STREAM)
    return world, model, supports, tests


class TestKernelOracles:
    def test_kernel_oracle_suite(self):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)

        # dice/iou against brute-force set counts, 1000 random mask pairs
        for _ in range(1000):
            h, w = rng.integers(1, 13, size=2)
            pred = rng.random((h, w)) < rng.uniform(0.1, 0.9)
            gt = rng.random((h, w)) < rng.uniform(0.1, 0.9)
            p_set = {(r, c) for r in range(h) for c in range(w) if pred[r, c]}
            g_set = {(r, c) for r in range(h) for c in range(w) if gt[r, c]}
            inter = len(p_set & g_set)
            union = len(p_set | g_set)
            expect_dice = 1.0 if not p_set and not g_set else 2 * inter / (len(p_set) + len(g_set))
            expect_iou = 1.0 if union == 0 else inter / union
            d, j = dice(pred, gt), iou(pred, gt)
            assert d == expect_dice and j == expect_iou
            assert abs(d - 2 * j / (1 + j)) <= 1e-12

        # softmax normalization + shift invariance
        for _ in range(300):
            n = int(rng.integers(1, 12))
            scores = rng.uniform(-20, 20, n)
            tau = float(rng.uniform(1e-3, 1e3))
            w_ = tempered_softmax(scores, tau)
            assert abs(w_.sum() - 1.0) <= 1e-9
            shifted = tempered_softmax(scores + rng.uniform(-10, 10), tau)
            assert np.abs(shifted - w_).max() <= 1e-9

        # mask pooling against naive per-pixel accumulation
        for _ in range(300):
            h, w, d_ = int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 10))
            fm = rng.standard_normal((h, w, d_))
            mask = rng.random((h, w)) < 0.5
            if not mask.any():
                mask[0, 0] = True
            acc = np.zeros(d_)
            count = 0
            for r in range(h):
                for c in range(w):
                    if mask[r, c]:
                        acc = acc + fm[r, c]
                        count += 1
            expected = acc / (count + 1e-6)
            expected = expected / np.linalg.norm(expected)
            assert np.abs(mask_pooled_embedding(fm, mask) - expected).max() <= 1e-10

        elapsed = time.perf_counter() - start
        assert elapsed < 10.0
        report(f"kernel oracle suite: 1000 mask pairs + softmax + pooling oracles in {elapsed:.1f}s")


class TestTopKOracle:
    def test_topk_matches_full_sort(self):
        start = time.perf_counter()
        rng = np.random.default_rng(7)
        checked = 0
        for trial in range(1000):
            n = int(rng.integers(1, 201))
            k = int(rng.integers(1, 51))
            d = 8
            p = l2_normalize(rng.standard_normal(d))
            base = [l2_normalize(rng.standard_normal(d)) for _ in range(n)]
            if trial % 3 == 0 and n >= 2:
                # force exact ties with duplicated embeddings
                for _ in range(min(n // 2, 10)):
                    i, j = rng.integers(0, n, size=2)
                    base[i] = base[j].copy()
            proto = ClassPrototype("c", p, 1)
            reps = mine_representatives(base, proto, k)
            cos = [float(min(1.0, max(-1.0, np.dot(z, p) / (np.linalg.norm(z) * np.linalg.norm(p)))))
                   for z in base]
            oracle = sorted(range(n), key=lambda i: (-cos[i], i))[: min(k, n)]
            assert reps.indices == oracle
            checked += 1
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0
        report(f"top-K oracle: {checked} trials equal full-sort selection in {elapsed:.1f}s")


class TestConstructionTraceFidelity:
    def test_three_class_trace(self):
        """Stage outputs equal an independent straight-line reimplementation."""
        spec = DriftSpec(dim=24, class_count=3, seed=113, rho=0.3, outlier_rate=0.25,
                         noise_sigma=0.02, variant_cosines=[0.95, 0.8],
                         crop_jitter=0.3, supports_per_class=8)
        world = make_world(spec)
        model = MockModel(world)
        supports = sample_from_spec(spec, world, SUPPORT_STREAM)
        by_class = {n: [s for s in supports if s.class_name == n] for n in world.class_names}
        pool_texts = {n: world.prompt_texts(n) for n in world.class_names}
        K, J, tau = 4, 2, 0.1

        # straight-line reference: plain loops, inline arithmetic
        ref = {}
        for c, instances in by_class.items():
            Z = []
            for inst in instances:
                feats = model.dense_features(inst.image)
                pooled = feats[inst.gt_mask].sum(axis=0) / (inst.gt_mask.sum() + 1e-6)
                Z.append(pooled / np.linalg.norm(pooled))
            mean = np.mean(np.stack(Z), axis=0)
            P = mean / np.linalg.norm(mean)
            cos = [float(np.dot(z, P) / (np.linalg.norm(z) * np.linalg.norm(P))) for z in Z]
            R = sorted(range(len(cos)), key=lambda i: (-cos[i], i))[: min(K, len(cos))]
            E = [model.encode_text(t) for t in pool_texts[c]]
            S = []
            for e in E:
                dices = []
                for idx in R:
                    inst = instances[idx]
                    pred, _ = model.predict_masks(inst.image, [e])[0]
                    inter = np.count_nonzero(pred & inst.gt_mask)
                    denom = np.count_nonzero(pred) + np.count_nonzero(inst.gt_mask)
                    dices.append(1.0 if denom == 0 else 2.0 * inter / denom)
                S.append(float(np.mean(dices)))
            Jc = sorted(range(len(S)), key=lambda i: (-S[i], i))[: min(J, len(S))]
            logits = np.array([S[j] / tau for j in Jc])
            raw = np.exp(logits - logits.max())
            w = raw / raw.sum()
            e_star = np.zeros_like(E[0], dtype=float)
            for wi, j in zip(w, Jc):
                e_star += wi * (E[j] / np.linalg.norm(E[j]))
            ref[c] = (Z, P, R, S, Jc, w, e_star)

        _, rep = build_concept_bank(model, supports, pool_texts,
                                    BuildConfig(k=K, top_j=J, tau=tau),
                                    classes=world.class_names)
        for name in world.class_names:
            rec = rep.per_class[name]
            Z, P, R, S, Jc, w, e_star = ref[name]
            for a, b in zip(rec.embeddings, Z):
                assert np.abs(a - b).max() <= 1e-9
            assert np.abs(rec.prototype - P).max() <= 1e-9
            assert rec.rep_indices == R
            assert np.abs(np.array(rec.scores) - S).max() <= 1e-9
            assert rec.selected == Jc
            assert np.abs(np.array(rec.weights) - w).max() <= 1e-9
            assert np.abs(rec.anchor - e_star).max() <= 1e-9
        report("construction trace: Z, P, R, scores, J, w, e* match the straight-line reference within 1e-9")


class TestDriftRecovery:
    def test_calibrated_beats_stale_base_in_all_seeds(self):
        start = time.perf_counter()
        wins = 0
        margins = []
        for seed in SEEDS:
            world, model, supports, tests = build_worlds(
                seed, outlier_rate=0.3, variant_cosines=[0.95, 0.7, 0.4]
            )
            pools_full = {n: world.prompt_texts(n) for n in world.class_names}
            pools_base = {n: [n] for n in world.class_names}
            cfg = BuildConfig(workers=1)
            calibrated, _ = build_concept_bank(model, supports, pools_full, cfg)
            stale, _ = build_concept_bank(model, supports, pools_base, cfg)
            margin = heldout_mean_dice(model, calibrated, tests) - heldout_mean_dice(model, stale, tests)
            margins.append(margin)
            wins += margin > 0
        elapsed = time.perf_counter() - start
        assert wins == len(list(SEEDS))
        assert elapsed < 120.0
        report(
            f"drift recovery: calibrated bank beats stale base prompts in {wins}/20 seeds, "
            f"margins [{min(margins):.3f}, {max(margins):.3f}] (mean {np.mean(margins):.3f}), {elapsed:.1f}s"
        )


class TestKTrend:
    def test_mining_budget_direction(self):
        k10_ge_k1 = 0
        k10_ge_all = 0
        for seed in SEEDS:
            world, model, supports, tests = build_worlds(
                seed, outlier_rate=0.4, variant_cosines=[0.95, 0.93, 0.7],
                include_background_prompt=True,
            )
            pools = {n: world.prompt_texts(n) for n in world.class_names}
            scores = {}
            for label, k in (("k1", 1), ("k10", 10), ("kall", None)):
                bank, _ = build_concept_bank(model, supports, pools, BuildConfig(k=k))
                scores[label] = heldout_mean_dice(model, bank, tests)
            k10_ge_k1 += scores["k10"] >= scores["k1"]
            k10_ge_all += scores["k10"] >= scores["kall"]
        assert k10_ge_k1 >= 18
        assert k10_ge_all >= 14
        report(f"K-trend: K=10 >= K=1 in {k10_ge_k1}/20 seeds (need 18), K=10 >= K=all in {k10_ge_all}/20 (need 14)")


class TestJTrend:
    def test_fusion_breadth_direction(self):
        fused_ge_single = 0
        for seed in SEEDS:
            world, model, supports, tests = build_worlds(
                seed, outlier_rate=0.3, variant_cosines=[0.95, 0.93, 0.88]
            )
            pools = {n: world.prompt_texts(n) for n in world.class_names}
            assert all(len(p) >= 4 for p in pools.values())
            fused, _ = build_concept_bank(model, supports, pools, BuildConfig(top_j=None))
            single, _ = build_concept_bank(model, supports, pools, BuildConfig(top_j=1))
            fused_ge_single += heldout_mean_dice(model, fused, tests) >= heldout_mean_dice(
                model, single, tests
            )
        assert fused_ge_single >= 16
        report(f"J-trend: fused-all >= single-prompt in {fused_ge_single}/20 seeds (need 16)")


class _CountingModel:
    def __init__(self, inner):
        self.inner = inner
        self.encode_text_calls = 0

    dimension = property(lambda self: self.inner.dimension)
    resolution = property(lambda self: self.inner.resolution)
    model_id = property(lambda self: self.inner.model_id)

    def dense_features(self, image):
        return self.inner.dense_features(image)

    def encode_text(self, prompt):
        self.encode_text_calls += 1
        return self.inner.encode_text(prompt)

    def predict_masks(self, image, queries):
        return self.inner.predict_masks(image, queries)


class TestTextEncoderBypass:
    def test_zero_text_encoding_and_relative_speed(self):
        world, model, supports, tests = build_worlds(
            11, outlier_rate=0.3,
            variant_cosines=[0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65],
        )
        pools = {n: world.prompt_texts(n) for n in world.class_names}
        m_prompts = max(len(p) for p in pools.values())
        bank, _ = build_concept_bank(model, supports, pools, BuildConfig())

        counting = _CountingModel(model)
        for inst in tests:
            infer_image(counting, bank, inst.image)
        assert counting.encode_text_calls == 0

        # warm the feature cache so both paths time protocol-shaped work only
        for inst in tests:
            model.dense_features(inst.image)

        repeats = 3
        t0 = time.perf_counter()
        for _ in range(repeats):
            for inst in tests:
                infer_image(model, bank, inst.image)
        bank_time = time.perf_counter() - t0

        t0 = time.perf_counter()
        for _ in range(repeats):
            for inst in tests:
                infer_image_onthefly(model, pools, inst.image)
        baseline_time = time.perf_counter() - t0

        limit = baseline_time / max(1.0, m_prompts / 2.0)
        assert bank_time <= limit
        report(
            f"text-encoder bypass: 0 encode_text calls during inference; bank inference "
            f"{bank_time * 1000:.0f}ms vs {m_prompts}-prompt baseline {baseline_time * 1000:.0f}ms "
            f"(limit {limit * 1000:.0f}ms)"
        )


class TestSerializationAcceptance:
    def test_thousand_round_trips(self):
        rng = np.random.default_rng(555)
        for _ in range(1000):
            c = int(rng.integers(1, 6))
            d = int(rng.integers(1, 17))
            bank = ConceptBank(
                class_names=[f"c{i}-{rng.integers(1e6)}" for i in range(c)],
                anchors=rng.standard_normal((c, d)),
                metric=("dice", "iou")[int(rng.integers(2))],
                tau=float(rng.uniform(0.01, 1)),
                k=None if rng.integers(4) == 0 else int(rng.integers(1, 100)),
                model_id=f"m{rng.integers(1e9):x}",
            )
            data = serialize_bank(bank)
            assert serialize_bank(deserialize_bank(data)) == data
        report("serialization: 1000 random banks round-trip byte-exact")

    def test_fuzz_structured_errors_only(self):
        start = time.perf_counter()
        rng = random.Random(99)
        template = serialize_bank(
            ConceptBank(class_names=["alpha", "beta"], anchors=np.arange(8.0).reshape(2, 4))
        )
        crashes = 0
        trials = 0
        while time.perf_counter() - start < 20.0 and trials < 20000:
            trials += 1
            if trials % 2:
                blob = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 200)))
            else:
                blob = bytearray(template)
                for _ in range(rng.randrange(1, 10)):
                    blob[rng.randrange(len(blob))] = rng.randrange(256)
                blob = bytes(blob)
            try:
                deserialize_bank(blob)
            except (BankFormatError, UnsupportedVersion):
                pass
            except Exception:  # noqa: BLE001
                crashes += 1
        # a few full-size inputs: up to 1 MiB of random bytes
        big_rng = np.random.default_rng(1234)
        for _ in range(10):
            blob = big_rng.integers(0, 256, size=int(big_rng.integers(1, 1 << 20)),
                                    dtype=np.uint8).tobytes()
            trials += 1
            try:
                deserialize_bank(blob)
            except (BankFormatError, UnsupportedVersion):
                pass
            except Exception:  # noqa: BLE001
                crashes += 1
        elapsed = time.perf_counter() - start
        assert crashes == 0
        assert elapsed < 60.0
        report(f"serialization fuzz: {trials} inputs (incl. 1 MiB blobs), structured errors only, {elapsed:.1f}s")


class TestMiouOracle:
    def test_thousand_random_pairs(self):
        rng = np.random.default_rng(202)
        for _ in range(1000):
            n_classes = int(rng.integers(1, 6))
            pred = rng.integers(0, n_classes, (16, 16))
            gt = rng.integers(0, n_classes, (16, 16))
            gt[rng.random((16, 16)) < 0.05] = 255
            rep = evaluate_miou([pred], [gt], [str(i) for i in range(n_classes)])
            inter = [0] * n_classes
            union = [0] * n_classes
            for r in range(16):
                for c in range(16):
                    if gt[r, c] == 255:
                        continue
                    for k in range(n_classes):
                        pk, gk = pred[r, c] == k, gt[r, c] == k
                        inter[k] += pk and gk
                        union[k] += pk or gk
            for k in range(n_classes):
                assert rep.counts[k].intersection == inter[k]
                assert rep.counts[k].union == union[k]
        report("mIoU oracle: 1000 random 16x16 pairs equal the per-pixel double-loop tally exactly")


class TestChainDeterminism:
    def _chain(self, root, workers):
        root.mkdir(parents=True, exist_ok=True)
        spec = drift_spec(13, outlier_rate=0.25, variant_cosines=[0.95, 0.7],
                          supports_per_class=8, tests_per_class=4)
        spec.save(root / "spec.json")
        sim = root / "sim"
        assert main(["simulate", "--spec", str(root / "spec.json"), "--out-dir", str(sim)]) == 0
        bank = root / "bank.cbnk"
        assert main([
            "--workers", str(workers), "build",
            "--backend", f"mock:{sim / 'world.json'}",
            "--manifest", str(sim / "support_manifest.jsonl"),
            "--pools", str(sim / "pools"),
            "--out", str(bank),
        ]) == 0
        preds = root / "preds"
        assert main([
            "infer", "--backend", f"mock:{sim / 'world.json'}", "--bank", str(bank),
            "--images", str(sim / "test_manifest.jsonl"), "--out-dir", str(preds),
        ]) == 0
        rep = root / "report.json"
        assert main([
            "eval", "--preds", str(preds / "index.json"),
            "--palette", str(sim / "palette.json"), "--out", str(rep),
            "--dataset-id", "chain",
        ]) == 0
        return bank.read_bytes(), json.loads(rep.read_text())

    def test_chain_bitwise_reproducible(self, tmp_path):
        bank1, report1 = self._chain(tmp_path / "w1", workers=1)
        bank2, report2 = self._chain(tmp_path / "w4", workers=4)
        assert bank1 == bank2
        assert report1 == report2
        report(
            f"determinism: simulate->build->infer->eval chain byte-identical across worker counts "
            f"(bank {len(bank1)} bytes, mean IoU {report1['mean_iou']:.4f})"
        )
