"""Synthetic corpora: generation, file I/O, and task definitions.

Pairs are stored one JSON object per line: {"src": [ids], "tgt": [ids]},
with a sidecar vocabulary file mapping ids to display strings.  Splits are
disjoint by construction and byte-identical across runs for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

from .errors import ConfigError
from .seeding import substream
from .vocab import FIRST_CONTENT_ID, write_vocab_file

TASKS = ("copy", "reverse", "sort", "lexmap")


@dataclass
class DatasetSpec:
    task: str = "lexmap"
    vocab_size: int = 32
    min_len: int = 4
    max_len: int = 12
    n_train: int = 10000
    n_valid: int = 500
    n_test: int = 500
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.task not in TASKS:
            problems.append(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.vocab_size <= FIRST_CONTENT_ID + 1:
            problems.append("vocab_size leaves no content ids")
        if not 1 <= self.min_len <= self.max_len:
            problems.append("need 1 <= min_len <= max_len")
        if min(self.n_train, self.n_valid, self.n_test) < 1:
            problems.append("split sizes must be positive")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)


def lexmap_target(source: Sequence[int], mapping: dict[int, int],
                  reorder: bool = True) -> list[int]:
    """Apply a token bijection, then rotate each window of three left by one.

    With the identity mapping and reorder disabled this degenerates to copy.
    """
    out = [mapping[t] for t in source]
    if reorder:
        for i in range(0, len(out) - 2, 3):
            out[i], out[i + 1], out[i + 2] = out[i + 1], out[i + 2], out[i]
    return out


def make_lexmap(vocab_size: int, seed: int) -> dict[int, int]:
    ids = list(range(FIRST_CONTENT_ID, vocab_size))
    perm = substream(seed, "lexmap").permutation(len(ids))
    return {ids[i]: ids[perm[i]] for i in range(len(ids))}


def target_for(task: str, source: list[int], mapping: dict[int, int] | None) -> list[int]:
    if task == "copy":
        return list(source)
    if task == "reverse":
        return list(reversed(source))
    if task == "sort":
        return sorted(source)
    return lexmap_target(source, mapping)  # type: ignore[arg-type]


def gen_pairs(spec: DatasetSpec) -> dict[str, list[tuple[list[int], list[int]]]]:
    spec.validate()
    rng = substream(spec.seed, "data")
    mapping = make_lexmap(spec.vocab_size, spec.seed) if spec.task == "lexmap" else None
    lo, hi = FIRST_CONTENT_ID, spec.vocab_size
    seen: set[tuple[int, ...]] = set()
    splits: dict[str, list[tuple[list[int], list[int]]]] = {}
    for name, count in (("train", spec.n_train), ("valid", spec.n_valid),
                        ("test", spec.n_test)):
        pairs = []
        attempts = 0
        while len(pairs) < count:
            attempts += 1
            if attempts > 50 * count + 1000:
                raise ConfigError(
                    "cannot generate enough distinct sources; "
                    "increase vocab_size or length range")
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            src = tuple(int(t) for t in rng.integers(lo, hi, size=length))
            if src in seen:
                continue
            seen.add(src)
            pairs.append((list(src), target_for(spec.task, list(src), mapping)))
        splits[name] = pairs
    return splits


def write_pairs(path: Path | str, pairs: Sequence[tuple[list[int], list[int]]]) -> None:
    with open(path, "w") as fh:
        for src, tgt in pairs:
            fh.write(json.dumps({"src": src, "tgt": tgt}) + "\n")


def load_pairs(path: Path | str) -> list[tuple[list[int], list[int]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    pairs = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            pairs.append((list(obj["src"]), list(obj["tgt"])))
    return pairs


def gen_dataset(spec: DatasetSpec, out_dir: Path | str) -> dict[str, str]:
    """Write train/valid/test JSONL files plus vocab and spec sidecars."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = gen_pairs(spec)
    paths = {}
    for name, pairs in splits.items():
        p = out_dir / f"{name}.jsonl"
        write_pairs(p, pairs)
        paths[name] = str(p)
    write_vocab_file(out_dir / "vocab.json", spec.vocab_size)
    (out_dir / "dataset_spec.json").write_text(
        json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    paths["vocab"] = str(out_dir / "vocab.json")
    return paths
