#!/usr/bin/env python3
"""Generate the checked-in conformance fixture.

Run once; the result is committed and later validated by recomputation via
`conceptbank-adapter selftest`.
"""
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from conceptbank.driftsim import DriftSpec, make_world
from conceptbank_adapter.providers import make_fixture


def main() -> int:
    spec = DriftSpec(
        dim=24,
        class_count=3,
        seed=20250810,
        rho=0.4,
        noise_sigma=0.03,
        variant_cosines=[0.95, 0.8],
        class_names=["alpha", "beta", "gamma"],
    )
    world = make_world(spec)
    fixture = make_fixture(world, selftest_prompt="alpha")
    out = Path(__file__).resolve().parents[1] / "fixtures" / "conformance.json"
    out.parent.mkdir(exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(fixture, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
