"""Word-level tokenizer shared by the chunker, embedder, metrics, and LM.

Tokenization is lowercase + split on whitespace and punctuation, with
punctuation runs kept as single-character tokens, so "token" means the
same thing in every module that counts, hashes, or models them.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"
EOS = "<eos>"
SEP = "<sep>"

SPECIALS = (PAD, UNK, BOS, EOS, SEP)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_PUNCT_RE = re.compile(r"^[^\w\s]$", re.UNICODE)


def split_text(text: str) -> list[str]:
    """Split text into lowercase word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def join_tokens(tokens: list[str]) -> str:
    """Inverse of split_text up to casing/whitespace: words separated by
    single spaces, punctuation attached to the preceding token."""
    parts: list[str] = []
    for tok in tokens:
        if parts and _PUNCT_RE.match(tok):
            parts[-1] += tok
        else:
            parts.append(tok)
    return " ".join(parts)


@dataclass
class Tokenizer:
    """Vocabulary mapping token strings to dense ids in [0, |V|).

    The five specials occupy ids 0..4; out-of-vocabulary tokens encode
    to UNK. decode() drops specials and re-joins the remaining tokens.
    """

    vocab: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.vocab:
            self.vocab = {tok: i for i, tok in enumerate(SPECIALS)}
        self._id_to_token = {i: t for t, i in self.vocab.items()}

    @property
    def size(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return self.vocab[PAD]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    @property
    def bos_id(self) -> int:
        return self.vocab[BOS]

    @property
    def eos_id(self) -> int:
        return self.vocab[EOS]

    @property
    def sep_id(self) -> int:
        return self.vocab[SEP]

    def encode(self, text: str) -> list[int]:
        unk = self.unk_id
        return [self.vocab.get(tok, unk) for tok in split_text(text)]

    def decode(self, ids: list[int]) -> str:
        special_ids = {self.vocab[s] for s in SPECIALS}
        tokens = [self._id_to_token[i] for i in ids if i not in special_ids]
        return join_tokens(tokens)

    def token(self, token_id: int) -> str:
        return self._id_to_token[token_id]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.vocab, ensure_ascii=False, indent=0, sort_keys=False),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        vocab = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(vocab={str(k): int(v) for k, v in vocab.items()})


def build_vocab(texts: list[str], max_size: int = 4096) -> Tokenizer:
    """Build a tokenizer over the most frequent tokens of a corpus.

    Ties are broken alphabetically so the vocabulary is a deterministic
    function of the corpus, independent of dict iteration order.
    """
    counts: dict[str, int] = {}
    for text in texts:
        for tok in split_text(text):
            counts[tok] = counts.get(tok, 0) + 1
    budget = max_size - len(SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:budget]
    vocab = {tok: i for i, tok in enumerate(SPECIALS)}
    for tok, _ in ranked:
        vocab[tok] = len(vocab)
    return Tokenizer(vocab=vocab)
