"""Candidate prompt ingestion with quality control.

Candidates arrive as plain text, one per line in files named <class>.txt.
QC trims and collapses whitespace, case-folds for deduplication, drops
phrases past a word-count ceiling or on the generic-term denylist, and
enforces a fixed per-class budget by keeping the earliest survivors. The
original class name always stays as candidate 0: it is the identity of the
pool, and scoring (not QC) is the stage that judges quality.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyPoolAfterQC

DEFAULT_DENYLIST = frozenset({"thing", "object", "stuff", "item", "entity"})
DEFAULT_BUDGET = 16
DEFAULT_MAX_WORDS = 4


@dataclass(frozen=True)
class QCRules:
    budget: int = DEFAULT_BUDGET
    max_words: int = DEFAULT_MAX_WORDS
    denylist: frozenset[str] = DEFAULT_DENYLIST

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.max_words < 1:
            raise ValueError("max_words must be >= 1")


@dataclass
class ValidatedPool:
    class_name: str
    accepted: list[str]
    rejections: list[tuple[str, str]] = field(default_factory=list)  # (text, reason)


def _canonical(text: str) -> str:
    return " ".join(text.split())


def ingest_prompt_pool(
    class_name: str,
    texts,
    rules: QCRules | None = None,
) -> ValidatedPool:
    """Validate raw candidates into a deduplicated, budgeted pool.

    Idempotent: feeding a pool's accepted list back through yields the same
    pool. Raises EmptyPoolAfterQC only when even the class name is blank.
    """
    rules = rules or QCRules()
    name = _canonical(class_name)
    if not name:
        raise EmptyPoolAfterQC("class name is blank; nothing can anchor the pool")

    accepted = [name]
    seen = {name.casefold()}
    rejections: list[tuple[str, str]] = []
    for raw in texts:
        text = _canonical(str(raw))
        if not text:
            rejections.append((raw, "blank"))
            continue
        folded = text.casefold()
        if folded in seen:
            rejections.append((text, "duplicate"))
            continue
        if len(text.split()) > rules.max_words:
            rejections.append((text, f"longer than {rules.max_words} words"))
            continue
        if folded in rules.denylist:
            rejections.append((text, "denylist"))
            continue
        if len(accepted) >= rules.budget:
            rejections.append((text, "over budget"))
            continue
        accepted.append(text)
        seen.add(folded)
    return ValidatedPool(class_name=name, accepted=accepted, rejections=rejections)


def load_pool_file(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def save_pool_file(pool: ValidatedPool, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for text in pool.accepted:
            fh.write(text)
            fh.write("\n")


def load_pool_dir(directory, rules: QCRules | None = None) -> dict[str, ValidatedPool]:
    """Read every <class>.txt in a directory through QC."""
    pools = {}
    for path in sorted(Path(directory).glob("*.txt")):
        class_name = path.stem
        pools[class_name] = ingest_prompt_pool(class_name, load_pool_file(path), rules)
    return pools


def save_rejection_log(pools: dict[str, ValidatedPool], path) -> None:
    payload = {
        name: [{"text": text, "reason": reason} for text, reason in pool.rejections]
        for name, pool in pools.items()
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
