"""Reserved token ids and the display vocabulary.

Id layout is fixed: PAD=0, BOS=1, EOS=2, PLH=3, UNK=4; content ids start at
FIRST_CONTENT_ID.  PAD exists only for batching, PLH only between the insert
and replace phases of an edit iteration.
"""

from __future__ import annotations

import json
from pathlib import Path

PAD = 0
BOS = 1
EOS = 2
PLH = 3
UNK = 4
FIRST_CONTENT_ID = 5

SPECIAL_STRINGS = {PAD: "<pad>", BOS: "<s>", EOS: "</s>", PLH: "<plh>", UNK: "<unk>"}

# ids a replace action may never write
SENTINEL_IDS = frozenset({PAD, BOS, EOS, PLH})


def content_ids(vocab_size: int) -> range:
    return range(FIRST_CONTENT_ID, vocab_size)


def default_id_to_str(vocab_size: int) -> dict[int, str]:
    out = dict(SPECIAL_STRINGS)
    for i in content_ids(vocab_size):
        out[i] = f"w{i - FIRST_CONTENT_ID:02d}"
    return out


def write_vocab_file(path: Path | str, vocab_size: int) -> None:
    mapping = {str(k): v for k, v in sorted(default_id_to_str(vocab_size).items())}
    Path(path).write_text(json.dumps(mapping, indent=0, sort_keys=True) + "\n")


def read_vocab_file(path: Path | str) -> dict[int, str]:
    raw = json.loads(Path(path).read_text())
    return {int(k): v for k, v in raw.items()}
