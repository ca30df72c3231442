import json
import subprocess
import sys

from conceptbank.cli import main
from conceptbank.driftsim import DriftSpec


def write_spec(path, **kw):
    defaults = dict(dim=24, class_count=3, seed=17, rho=0.4, outlier_rate=0.25,
                    noise_sigma=0.03, variant_cosines=[0.95, 0.7], crop_jitter=0.3,
                    supports_per_class=6, tests_per_class=3)
    defaults.update(kw)
    DriftSpec(**defaults).save(path)
    return path


def run_chain(tmp_path, workers=1, seed=None):
    """simulate -> build -> infer -> eval; returns paths of artifacts."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    spec_path = write_spec(tmp_path / "spec.json")
    sim_dir = tmp_path / "sim"
    argv = ["simulate", "--spec", str(spec_path), "--out-dir", str(sim_dir)]
    if seed is not None:
        argv = ["--seed", str(seed)] + argv
    assert main(argv) == 0
    bank_path = tmp_path / "bank.cbnk"
    assert main([
        "--workers", str(workers),
        "build",
        "--backend", f"mock:{sim_dir / 'world.json'}",
        "--manifest", str(sim_dir / "support_manifest.jsonl"),
        "--pools", str(sim_dir / "pools"),
        "--out", str(bank_path),
    ]) == 0
    preds_dir = tmp_path / "preds"
    assert main([
        "infer",
        "--backend", f"mock:{sim_dir / 'world.json'}",
        "--bank", str(bank_path),
        "--images", str(sim_dir / "test_manifest.jsonl"),
        "--out-dir", str(preds_dir),
    ]) == 0
    report_path = tmp_path / "report.json"
    table_path = tmp_path / "report.txt"
    assert main([
        "eval",
        "--preds", str(preds_dir / "index.json"),
        "--palette", str(sim_dir / "palette.json"),
        "--out", str(report_path),
        "--table", str(table_path),
    ]) == 0
    return bank_path, report_path, table_path


class TestChain:
    def test_full_chain_produces_artifacts(self, tmp_path):
        bank_path, report_path, table_path = run_chain(tmp_path)
        assert bank_path.exists()
        assert (str(bank_path) + ".meta.json",)
        report = json.loads(report_path.read_text())
        assert report["mean_iou"] is not None and report["mean_iou"] > 0.5
        assert "mean IoU" in table_path.read_text()

    def test_inspect(self, tmp_path, capsys):
        bank_path, _, _ = run_chain(tmp_path)
        assert main(["inspect", str(bank_path)]) == 0
        out = capsys.readouterr().out
        assert "classes: 3" in out
        assert "best candidate" in out

    def test_inspect_corrupted_bank(self, tmp_path, capsys):
        bank_path, _, _ = run_chain(tmp_path)
        data = bytearray(bank_path.read_bytes())
        data[-1] ^= 0xFF
        bank_path.write_bytes(bytes(data))
        code = main(["inspect", str(bank_path)])
        assert code == 5
        assert "CrcMismatch" in capsys.readouterr().err

    def test_structured_json_errors(self, tmp_path, capsys):
        code = main(["--error-format", "json", "inspect", str(tmp_path / "missing.cbnk")])
        assert code == 3
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["code"] == "FileNotFoundError"


class TestConfig:
    def test_print_effective_config(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"build.k": 5, "build.tau": 0.2}))
        code = main(["--config", str(cfg), "--set", "build.tau=0.3",
                     "--print-effective-config"])
        assert code == 0
        merged = json.loads(capsys.readouterr().out)
        assert merged["build.k"] == 5
        assert merged["build.tau"] == 0.3  # --set beats config file

    def test_flag_beats_set_and_file(self, tmp_path, capsys):
        code = main(["--set", "workers=3", "--workers", "7", "--print-effective-config"])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["workers"] == 7

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        code = main(["--set", "no.such.key=1", "--print-effective-config"])
        assert code == 3

    def test_unknown_backend_selector(self, tmp_path, capsys):
        code = main(["build", "--backend", "bogus:x", "--manifest", "m", "--pools", "p",
                     "--out", str(tmp_path / "b.cbnk")])
        assert code == 3


class TestPoolQc:
    def test_pool_qc_writes_validated_files(self, tmp_path, capsys):
        raw = tmp_path / "raw"
        raw.mkdir()
        (raw / "cat.txt").write_text("tabby\nthing\ntabby\nvery long phrase over limit\n")
        out = tmp_path / "clean"
        assert main(["pool-qc", "--in", str(raw), "--out", str(out)]) == 0
        assert (out / "cat.txt").read_text().splitlines() == ["cat", "tabby"]
        log = json.loads((out / "rejections.json").read_text())
        reasons = {entry["reason"] for entry in log["cat"]}
        assert "denylist" in reasons and "duplicate" in reasons

    def test_budget_override(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        (raw / "cat.txt").write_text("\n".join(f"kind {i}" for i in range(10)) + "\n")
        out = tmp_path / "clean"
        assert main(["--set", "pool.budget=3", "pool-qc", "--in", str(raw), "--out", str(out)]) == 0
        assert len((out / "cat.txt").read_text().splitlines()) == 3


class TestDeterminism:
    def test_chain_reproducible_across_worker_counts(self, tmp_path):
        bank1, report1, _ = run_chain(tmp_path / "run1", workers=1)
        bank2, report2, _ = run_chain(tmp_path / "run2", workers=4)
        assert bank1.read_bytes() == bank2.read_bytes()
        assert json.loads(report1.read_text()) == json.loads(report2.read_text())

    def test_mock_selector_accepts_spec_or_world(self, tmp_path):
        spec_path = write_spec(tmp_path / "spec.json", supports_per_class=4, tests_per_class=2)
        sim = tmp_path / "sim"
        assert main(["simulate", "--spec", str(spec_path), "--out-dir", str(sim)]) == 0
        banks = []
        for label, backend in (("w", sim / "world.json"), ("s", spec_path)):
            out = tmp_path / f"bank_{label}.cbnk"
            assert main([
                "build", "--backend", f"mock:{backend}",
                "--manifest", str(sim / "support_manifest.jsonl"),
                "--pools", str(sim / "pools"), "--out", str(out),
            ]) == 0
            banks.append(out.read_bytes())
        assert banks[0] == banks[1]

    def test_seed_flag_overrides_spec(self, tmp_path, capsys):
        spec_path = write_spec(tmp_path / "spec.json")
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["--seed", "99", "simulate", "--spec", str(spec_path),
                     "--out-dir", str(out1)]) == 0
        assert main(["--seed", "100", "simulate", "--spec", str(spec_path),
                     "--out-dir", str(out2)]) == 0
        w1 = (out1 / "world.json").read_text()
        w2 = (out2 / "world.json").read_text()
        assert w1 != w2


class TestEntryPoint:
    def test_console_script_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "conceptbank.cli", "--help"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "simulate" in proc.stdout and "pool-qc" in proc.stdout

    def test_bank_bytes_reproducible_across_processes(self, tmp_path):
        spec_path = write_spec(tmp_path / "spec.json", supports_per_class=4, tests_per_class=2)
        banks = []
        for run in ("p1", "p2"):
            root = tmp_path / run
            root.mkdir()
            for argv in (
                ["simulate", "--spec", str(spec_path), "--out-dir", str(root / "sim")],
                ["build", "--backend", f"mock:{root / 'sim' / 'world.json'}",
                 "--manifest", str(root / "sim" / "support_manifest.jsonl"),
                 "--pools", str(root / "sim" / "pools"),
                 "--out", str(root / "bank.cbnk")],
            ):
                proc = subprocess.run(
                    [sys.executable, "-m", "conceptbank.cli", *argv],
                    capture_output=True, text=True,
                )
                assert proc.returncode == 0, proc.stderr
            banks.append((root / "bank.cbnk").read_bytes())
        assert banks[0] == banks[1]
