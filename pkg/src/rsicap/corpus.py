"""Caption dataset loading, text normalization, vocabulary, padded index sequences."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass

import numpy as np

PAD_TOKEN = "<pad>"
START_TOKEN = "startseq"
END_TOKEN = "endseq"
SPLITS = ("train", "val", "test")

_PUNCT_TABLE = str.maketrans({ch: " " for ch in string.punctuation})


class DatasetError(ValueError):
    """Raised when a dataset or rules file violates its format."""


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    split: str
    sentences: tuple[str, ...]


def load_dataset(path) -> list[CaptionRecord]:
    """Read a caption dataset JSON file (RSICD-style layout).

    Expected shape: {"images": [{"filename": ..., "split": ...,
    "sentences": [{"raw": ...}, ...]}, ...]}.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(
                f"{path}: JSON parse failure at byte offset {exc.pos}: {exc.msg}"
            ) from exc
    if not isinstance(data, dict) or "images" not in data:
        raise DatasetError(f"{path}: missing top-level 'images' list")
    records = []
    seen = set()
    for idx, img in enumerate(data["images"]):
        for key in ("filename", "split", "sentences"):
            if key not in img:
                raise DatasetError(f"{path}: image {idx} missing required field '{key}'")
        image_id = img["filename"]
        if not image_id:
            raise DatasetError(f"{path}: image {idx} has an empty filename")
        if image_id in seen:
            raise DatasetError(f"{path}: duplicate image id '{image_id}'")
        seen.add(image_id)
        split = img["split"]
        if split not in SPLITS:
            raise DatasetError(
                f"{path}: image {idx} ('{image_id}') has unknown split '{split}'"
            )
        raw = []
        for sidx, sent in enumerate(img["sentences"]):
            if "raw" not in sent:
                raise DatasetError(
                    f"{path}: image {idx} sentence {sidx} missing required field 'raw'"
                )
            raw.append(sent["raw"])
        if not raw:
            raise DatasetError(f"{path}: image {idx} ('{image_id}') has no sentences")
        records.append(CaptionRecord(image_id, split, tuple(raw)))
    return records


def load_rules(path) -> dict[str, str]:
    """Read token substitutions: one 'from<TAB>to' pair per line, '#' comments."""
    rules: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DatasetError(f"{path}:{lineno}: expected 'from<TAB>to', got {line!r}")
            rules[parts[0]] = parts[1]
    return rules


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace runs."""
    return text.lower().translate(_PUNCT_TABLE).split()


def normalize_caption(text: str, rules: dict[str, str] | None = None) -> str:
    """Tokenize and apply whole-token substitutions; returns the joined string.

    Idempotent as long as rule outputs are not themselves rule inputs.
    """
    tokens = tokenize(text)
    if rules:
        tokens = [rules.get(tok, tok) for tok in tokens]
    return " ".join(tokens)


class Vocabulary:
    """Contiguous token<->index bijection with pad/start/end pseudo-tokens.

    Index 0 is always the padding token; start/end are fixed strings that
    can never collide with tokenizer output. `max_len` is the longest
    start+tokens+end sequence observed when the vocabulary was built.
    """

    def __init__(self, tokens, max_len):
        tokens = list(tokens)
        if tokens[:3] != [PAD_TOKEN, START_TOKEN, END_TOKEN]:
            raise ValueError("vocabulary must start with pad, start, end tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.index_to_token = tokens
        self.token_to_index = {tok: i for i, tok in enumerate(tokens)}
        self.pad_index = 0
        self.start_index = self.token_to_index[START_TOKEN]
        self.end_index = self.token_to_index[END_TOKEN]
        self.max_len = int(max_len)

    def __len__(self):
        return len(self.index_to_token)

    def __contains__(self, token):
        return token in self.token_to_index

    def index(self, token: str) -> int:
        return self.token_to_index[token]

    def token(self, index: int) -> str:
        return self.index_to_token[index]


def build_vocabulary(records, min_count: int = 1, rules=None) -> Vocabulary:
    """Build the vocabulary from the train+val captions of `records`.

    Tokens with corpus frequency >= min_count are kept, inserted in order of
    descending frequency with lexicographic tie-break. Test-split records
    are ignored. `max_len` covers start + tokens + end.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    pool = [r for r in records if r.split in ("train", "val")]
    if not pool:
        raise DatasetError("cannot build a vocabulary from an empty train+val corpus")
    counts: dict[str, int] = {}
    max_len = 2
    for record in pool:
        for sentence in record.sentences:
            tokens = tokenize(normalize_caption(sentence, rules))
            max_len = max(max_len, len(tokens) + 2)
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary([PAD_TOKEN, START_TOKEN, END_TOKEN] + kept, max_len)


@dataclass
class TokenSequence:
    """Fixed-length zero-padded index array plus its true length."""

    indices: np.ndarray
    true_length: int
    oov_dropped: int = 0
    truncated: bool = False


def encode_sequence(tokens, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Map tokens to a right-padded index array of length `max_len`.

    Out-of-vocabulary tokens are dropped (counted in `oov_dropped`); inputs
    longer than `max_len` are truncated and flagged.
    """
    ids = []
    dropped = 0
    for tok in tokens:
        idx = vocab.token_to_index.get(tok)
        if idx is None:
            dropped += 1
        else:
            ids.append(idx)
    truncated = len(ids) > max_len
    if truncated:
        ids = ids[:max_len]
    indices = np.zeros(max_len, dtype=np.int64)
    indices[: len(ids)] = ids
    return TokenSequence(indices, len(ids), dropped, truncated)


def decode_sequence(seq, vocab: Vocabulary) -> list[str]:
    """Inverse of encode_sequence for in-vocabulary inputs (pads skipped)."""
    if isinstance(seq, TokenSequence):
        ids = seq.indices[: seq.true_length]
    else:
        ids = seq
    return [vocab.index_to_token[int(i)] for i in ids]


def tokenized_sentences(records, rules=None) -> list[list[str]]:
    """Normalized token lists for every caption in `records` (all splits)."""
    out = []
    for record in records:
        for sentence in record.sentences:
            out.append(tokenize(normalize_caption(sentence, rules)))
    return out
