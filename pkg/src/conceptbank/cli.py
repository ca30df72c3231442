"""Command-line entry point for the offline workflow.

Subcommands: simulate (drift spec -> world + manifests), build (supports +
pools + backend -> bank), infer (bank + images -> label maps), eval
(predictions + ground truth -> IoU report), inspect (bank dump), pool-qc
(raw candidate files -> validated pools).

Every config value has one source of truth: dedicated flag and --set
overrides beat the --config file, which beats the documented default;
--print-effective-config dumps the merged result and exits. All randomness
flows from --seed. Exit codes: 0 success, 2 usage, 3 unreadable or invalid
input, 4 backend failure, 5 bank format error, 6 evaluation mismatch,
1 unexpected.
"""
from __future__ import annotations

import argparse
import json
import shlex
import sys
import zlib
from pathlib import Path

import numpy as np

from . import errors
from .backend.mock import MockModel, MockWorld
from .backend.remote import RemoteModel
from .bank.config import BuildConfig
from .bank.manifest import (
    Palette,
    load_eval_manifest,
    load_label_map_png,
    load_support_manifest,
    save_label_map_png,
)
from .bank.pipeline import build_concept_bank
from .bank.store import load_bank, load_sidecar, save_bank, save_sidecar
from .backend.base import load_image
from .driftsim import DriftSpec, export_simulation, make_world
from .evaluation import evaluate_miou
from .inference import infer_semantic
from .pools import QCRules, ingest_prompt_pool, load_pool_dir, load_pool_file, save_pool_file, save_rejection_log

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_BACKEND = 4
EXIT_BANK_FORMAT = 5
EXIT_EVAL = 6
EXIT_UNEXPECTED = 1

DEFAULTS = {
    "build.k": 10,
    "build.top_j": "all",
    "build.tau": 0.1,
    "build.metric": "dice",
    "build.epsilon": 1e-6,
    "build.score_floor": 0.0,
    "build.renorm_anchor": False,
    "build.score_resize": None,
    "build.skip_failing": False,
    "build.timestamp": "",
    "infer.background_mode": "with",
    "pool.budget": 16,
    "pool.max_words": 4,
    "pool.denylist": sorted(QCRules().denylist),
    "workers": 1,
    "seed": 0,
}


def _parse_override(text: str):
    if "=" not in text:
        raise ValueError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in DEFAULTS:
        raise ValueError(f"unknown config key {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def merge_config(config_path, overrides, flag_values) -> dict:
    """flag override (> --set) > config file > default."""
    merged = dict(DEFAULTS)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        for key, value in file_cfg.items():
            if key not in DEFAULTS:
                raise ValueError(f"unknown config key {key!r} in {config_path}")
            merged[key] = value
    for item in overrides or []:
        key, value = _parse_override(item)
        merged[key] = value
    for key, value in (flag_values or {}).items():
        if value is not None:
            merged[key] = value
    return merged


def _int_or_all(value, what: str):
    if value in ("all", None):
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be an integer or 'all', got {value!r}")


def build_config_from(merged: dict) -> BuildConfig:
    return BuildConfig(
        k=_int_or_all(merged["build.k"], "build.k"),
        top_j=_int_or_all(merged["build.top_j"], "build.top_j"),
        tau=float(merged["build.tau"]),
        metric=str(merged["build.metric"]),
        epsilon=float(merged["build.epsilon"]),
        score_floor=float(merged["build.score_floor"]),
        renorm_anchor=bool(merged["build.renorm_anchor"]),
        score_resize=merged["build.score_resize"] if merged["build.score_resize"] is None else int(merged["build.score_resize"]),
        workers=int(merged["workers"]),
        skip_failing=bool(merged["build.skip_failing"]),
        timestamp=str(merged["build.timestamp"]),
    )


def qc_rules_from(merged: dict) -> QCRules:
    return QCRules(
        budget=int(merged["pool.budget"]),
        max_words=int(merged["pool.max_words"]),
        denylist=frozenset(str(x).casefold() for x in merged["pool.denylist"]),
    )


def open_backend(selector: str):
    """mock:<world-or-spec.json> | remote:<host>:<port> | remote:stdio:<command>"""
    if selector.startswith("mock:"):
        path = selector[len("mock:"):]
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") == "conceptbank-mock-world":
            return MockModel(MockWorld.from_json(json.dumps(payload)))
        # a drift spec realizes the same world deterministically
        return MockModel(make_world(DriftSpec.from_json(json.dumps(payload))))
    if selector.startswith("remote:stdio:"):
        return RemoteModel.connect_stdio(shlex.split(selector[len("remote:stdio:"):]))
    if selector.startswith("remote:"):
        rest = selector[len("remote:"):]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"remote selector {selector!r} is not remote:<host>:<port>")
        return RemoteModel.connect_tcp(host, int(port))
    raise ValueError(f"unknown backend selector {selector!r}")


def _bank_file_id(path) -> str:
    with open(path, "rb") as fh:
        return f"crc32:{zlib.crc32(fh.read()) & 0xFFFFFFFF:08x}"


# --- subcommands --------------------------------------------------------------

def cmd_simulate(args, merged) -> int:
    spec = DriftSpec.load(args.spec)
    if merged["seed"] != DEFAULTS["seed"] or args.seed is not None:
        spec.seed = int(merged["seed"])
    paths = export_simulation(spec, args.out_dir)
    print(json.dumps(paths, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_build(args, merged) -> int:
    cfg = build_config_from(merged)
    rules = qc_rules_from(merged)
    model = open_backend(args.backend)
    supports = load_support_manifest(args.manifest)
    validated = load_pool_dir(args.pools, rules)
    pools = {name: pool.accepted for name, pool in validated.items()}
    classes = args.classes.split(",") if args.classes else None
    bank, report = build_concept_bank(model, supports, pools, cfg, classes)
    save_bank(bank, args.out)
    save_sidecar(report.to_json_dict(), args.out)
    print(f"built bank: {len(bank.class_names)} classes, d={bank.dim} -> {args.out}")
    if report.skipped_classes:
        print(f"skipped classes: {json.dumps(report.skipped_classes, sort_keys=True)}")
    return EXIT_OK


def cmd_infer(args, merged) -> int:
    model = open_backend(args.backend)
    bank = load_bank(args.bank)
    records = load_eval_manifest(args.images)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Path(args.images).parent
    index = {"bank_id": _bank_file_id(args.bank), "bank_classes": bank.class_names, "items": []}
    mode = str(merged["infer.background_mode"])
    for rec in records:
        image = load_image(root / rec["image_path"])
        prediction = infer_semantic(model, bank, image, background_mode=mode)
        stem = Path(rec["image_path"]).stem
        pred_rel = f"{stem}_pred.png"
        save_label_map_png(prediction.labels, out_dir / pred_rel)
        item = {"image_path": rec["image_path"], "pred_path": pred_rel}
        if "gt_path" in rec:
            item["gt_path"] = str((root / rec["gt_path"]).resolve())
        index["items"].append(item)
    with open(out_dir / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(index['items'])} prediction maps -> {out_dir}")
    return EXIT_OK


def cmd_eval(args, merged) -> int:
    with open(args.preds, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    palette = Palette.load(args.palette)
    if index.get("bank_classes") and list(index["bank_classes"]) != list(palette.classes):
        raise errors.EvalInputMismatch(
            "bank class list does not match the palette; refusing to compare label indices"
        )
    preds_dir = Path(args.preds).parent
    preds, gts = [], []
    for item in index["items"]:
        if "gt_path" not in item:
            raise errors.EvalInputMismatch(f"no ground truth recorded for {item['image_path']}")
        preds.append(load_label_map_png(preds_dir / item["pred_path"]))
        gts.append(load_label_map_png(item["gt_path"]))
    report = evaluate_miou(
        preds,
        gts,
        palette.classes,
        dataset_id=args.dataset_id or Path(args.preds).parent.name,
        bank_id=index.get("bank_id", ""),
        ignore_index=palette.ignore_index,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write(report.to_table())
    mean = report.mean_iou
    print(f"mean IoU: {mean:.4f}" if mean is not None else "mean IoU: undefined (no class evaluated)")
    return EXIT_OK


def cmd_inspect(args, merged) -> int:
    bank = load_bank(args.bank)
    print(f"bank: {args.bank}")
    print(f"  classes: {len(bank.class_names)}  dimension: {bank.dim}")
    print(f"  metric: {bank.metric}  tau: {bank.tau}  K: {'all' if bank.k is None else bank.k}")
    print(f"  model: {bank.model_id}  timestamp: {bank.timestamp or '(none)'}")
    sidecar = load_sidecar(args.bank)
    for i, name in enumerate(bank.class_names):
        norm = float(np.linalg.norm(bank.anchors[i]))
        line = f"  [{i:3d}] {name}  |anchor|={norm:.4f}"
        if sidecar and name in sidecar.get("per_class", {}):
            rec = sidecar["per_class"][name]
            scores = rec.get("scores", [])
            cands = rec.get("candidates", [])
            if scores:
                best = int(np.argmax(scores))
                line += f"  best candidate: {cands[best]!r} (score {scores[best]:.4f})"
        print(line)
    if sidecar is None:
        print("  (no provenance sidecar found)")
    return EXIT_OK


def cmd_pool_qc(args, merged) -> int:
    rules = qc_rules_from(merged)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pools = {}
    for path in sorted(Path(args.input).glob("*.txt")):
        pool = ingest_prompt_pool(path.stem, load_pool_file(path), rules)
        save_pool_file(pool, out_dir / path.name)
        pools[path.stem] = pool
    save_rejection_log(pools, out_dir / "rejections.json")
    kept = sum(len(p.accepted) for p in pools.values())
    dropped = sum(len(p.rejections) for p in pools.values())
    print(f"validated {len(pools)} pools: kept {kept}, rejected {dropped}")
    return EXIT_OK


# --- driver --------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conceptbank",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="JSON config file with flat dotted keys")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", dest="overrides",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--workers", type=int, default=None, help="worker threads for build")
    parser.add_argument("--print-effective-config", action="store_true",
                        help="dump the merged config and exit")
    parser.add_argument("--error-format", choices=("text", "json"), default="text")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="realize a drift spec into world + manifests")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("build", help="construct a bank from supports + pools")
    p.add_argument("--backend", required=True, help="mock:<world.json> | remote:<host>:<port> | remote:stdio:<cmd>")
    p.add_argument("--manifest", required=True, help="support manifest (JSONL)")
    p.add_argument("--pools", required=True, help="directory of <class>.txt candidate files")
    p.add_argument("--out", required=True, help="output .cbnk path")
    p.add_argument("--classes", help="comma-separated class order (default: sorted pools)")
    p.add_argument("--k", dest="flag_k", default=None, help="representative budget (int or 'all')")
    p.add_argument("--top-j", dest="flag_top_j", default=None, help="fusion breadth (int or 'all')")
    p.add_argument("--tau", dest="flag_tau", type=float, default=None)
    p.add_argument("--metric", dest="flag_metric", choices=("dice", "iou"), default=None)
    p.add_argument("--score-resize", dest="flag_score_resize", type=int, default=None)
    p.add_argument("--skip-failing", dest="flag_skip_failing", action="store_const", const=True, default=None)
    p.add_argument("--renorm-anchor", dest="flag_renorm", action="store_const", const=True, default=None)
    p.add_argument("--timestamp", dest="flag_timestamp", default=None)

    p = sub.add_parser("infer", help="bank-conditioned inference over an image manifest")
    p.add_argument("--backend", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--images", required=True, help="JSONL manifest of {image_path[, gt_path]}")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--background-mode", dest="flag_bg", choices=("with", "without"), default=None)

    p = sub.add_parser("eval", help="mIoU report from predictions + ground truth")
    p.add_argument("--preds", required=True, help="index.json written by infer")
    p.add_argument("--palette", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--table", help="also write a fixed-width text table")
    p.add_argument("--dataset-id", default="")

    p = sub.add_parser("inspect", help="human-readable dump of a bank file")
    p.add_argument("bank")

    p = sub.add_parser("pool-qc", help="validate raw candidate pools")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    return parser


_FLAG_KEYS = {
    "flag_k": "build.k",
    "flag_top_j": "build.top_j",
    "flag_tau": "build.tau",
    "flag_metric": "build.metric",
    "flag_score_resize": "build.score_resize",
    "flag_skip_failing": "build.skip_failing",
    "flag_renorm": "build.renorm_anchor",
    "flag_timestamp": "build.timestamp",
    "flag_bg": "infer.background_mode",
}

_HANDLERS = {
    "simulate": cmd_simulate,
    "build": cmd_build,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "pool-qc": cmd_pool_qc,
}


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, errors.BankFormatError):
        return EXIT_BANK_FORMAT
    if isinstance(exc, (errors.BackendUnavailable, errors.ProtocolViolation,
                        errors.UnsupportedVersion, errors.UnknownPrompt)):
        return EXIT_BACKEND
    if isinstance(exc, (errors.EvalInputMismatch,)):
        return EXIT_EVAL
    if isinstance(exc, (errors.ConceptBankError, OSError, ValueError, KeyError,
                        json.JSONDecodeError)):
        return EXIT_INPUT
    return EXIT_UNEXPECTED


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)

    flag_values = {}
    for attr, key in _FLAG_KEYS.items():
        if hasattr(args, attr) and getattr(args, attr) is not None:
            flag_values[key] = getattr(args, attr)
    if args.seed is not None:
        flag_values["seed"] = args.seed
    if args.workers is not None:
        flag_values["workers"] = args.workers

    try:
        merged = merge_config(args.config, args.overrides, flag_values)
        if args.print_effective_config:
            print(json.dumps(merged, indent=2, sort_keys=True))
            return EXIT_OK
        if not args.command:
            parser.print_help()
            return EXIT_USAGE
        return _HANDLERS[args.command](args, merged)
    except Exception as exc:  # noqa: BLE001 - single CLI error funnel
        code = _exit_code_for(exc)
        if args.error_format == "json":
            print(json.dumps({"error": {"code": type(exc).__name__, "msg": str(exc)}}),
                  file=sys.stderr)
        else:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
