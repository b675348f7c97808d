"""Whitespace/punctuation tokenizer with a frozen 4096-entry vocabulary.

The vocabulary is built deterministically from the static template assets
plus digit tokens (box coordinates serialize as three-decimal strings, so
all zero-padded three-digit fraction parts are in-vocabulary). Unknown
words fall into the [UNK] bucket.

Special token text forms in serialized data are exactly "<image>" and
"[SEG]"; both survive tokenization as single ids.
"""

from __future__ import annotations

import re
import string

import numpy as np

from . import templates

PAD, BOS, EOS, UNK, CLS, IMAGE, SEG = range(7)
SPECIAL_TOKENS = ["[PAD]", "[BOS]", "[EOS]", "[UNK]", "[CLS]", "<image>", "[SEG]"]
VOCAB_SIZE = 4096

_SPECIAL_SPLIT = re.compile(r"(\[SEG\]|<image>)")
_WORD = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")
_NO_SPACE_BEFORE = set(".,;:!?)]}%'")
_NO_SPACE_AFTER = set("([{")


def _base_words() -> list[str]:
    words: list[str] = []
    seen: set[str] = set()

    def add(tok: str):
        if tok not in seen:
            seen.add(tok)
            words.append(tok)

    for ch in ".,;:!?()[]{}<>/%&*+=_'\"-":
        add(ch)
    for ch in string.ascii_lowercase:
        add(ch)
    for ch in string.digits:
        add(ch)
    for text in templates.all_template_text():
        for tok in _WORD.findall(text.lower()):
            add(tok)
    for i in range(1000):
        add(f"{i:03d}")
    for i in range(10, 100):
        add(str(i))
    add("100")
    return words


class Tokenizer:
    """Frozen-vocabulary tokenizer shared by the text encoder and the LM."""

    def __init__(self):
        words = _base_words()
        vocab = SPECIAL_TOKENS + words
        if len(vocab) > VOCAB_SIZE:
            raise ValueError(f"static vocabulary overflow: {len(vocab)} > {VOCAB_SIZE}")
        self.id_to_token = vocab + [f"[RES{i}]" for i in range(VOCAB_SIZE - len(vocab))]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    @property
    def vocab_size(self) -> int:
        return VOCAB_SIZE

    def tokenize(self, text: str) -> list[str]:
        toks: list[str] = []
        for chunk in _SPECIAL_SPLIT.split(text):
            if not chunk:
                continue
            if chunk in ("[SEG]", "<image>"):
                toks.append(chunk)
            else:
                toks.extend(_WORD.findall(chunk.lower()))
        return toks

    def encode(self, text: str, max_len: int | None = None) -> np.ndarray:
        ids = [self.token_to_id.get(t, UNK) for t in self.tokenize(text)]
        if max_len is not None:
            ids = ids[:max_len]
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids, skip_special: bool = True) -> str:
        drop = {PAD, BOS, EOS, CLS} if skip_special else set()
        toks = [self.id_to_token[int(i)] for i in ids if int(i) not in drop]
        return detokenize(toks)


def detokenize(tokens: list[str]) -> str:
    """Join tokens with spaces, reattaching punctuation and decimals."""
    out: list[str] = []
    prev2, prev = None, None
    for tok in tokens:
        if not out:
            out.append(tok)
        elif tok in _NO_SPACE_BEFORE and not (tok == "'" and prev is None):
            out.append(tok)
        elif prev in _NO_SPACE_AFTER:
            out.append(tok)
        elif prev == "." and tok.isdigit() and prev2 is not None and prev2.isdigit():
            out.append(tok)
        else:
            out.append(" " + tok)
        prev2, prev = prev, tok
    return "".join(out)


_DEFAULT: Tokenizer | None = None


def default_tokenizer() -> Tokenizer:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = Tokenizer()
    return _DEFAULT
