"""Token vectors: a trainable lookup table plus optional frozen vectors."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import CorpusError, Sentence, placeholder
from .neural import Parameter

UNK = "<UNK>"


class Vocab:
    """Token index with UNK at 0 and one placeholder per PHI class after it."""

    def __init__(self, tokens: Sequence[str], phi_classes: Sequence[str] = (), lowercase: bool = False,
                 singletons: Iterable[str] = ()):
        self.lowercase = lowercase
        self.phi_classes = tuple(phi_classes)
        specials = [UNK] + [placeholder(c) for c in self.phi_classes]
        self.itos: list[str] = list(specials)
        seen = set(specials)
        for tok in tokens:
            tok = self.normalize(tok)
            if tok not in seen:
                seen.add(tok)
                self.itos.append(tok)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.num_specials = len(specials)
        self.singletons = frozenset(self.stoi[self.normalize(t)] for t in singletons
                                    if self.normalize(t) in self.stoi) - set(range(self.num_specials))

    @classmethod
    def build(cls, sentences: Iterable[Sentence], phi_classes: Sequence[str] = (), lowercase: bool = False) -> "Vocab":
        counts: Counter[str] = Counter()
        order: list[str] = []
        for sent in sentences:
            for tok in sent.tokens:
                key = tok.lower() if lowercase else tok
                if key not in counts:
                    order.append(key)
                counts[key] += 1
        return cls(order, phi_classes, lowercase, [t for t in order if counts[t] == 1])

    def normalize(self, token: str) -> str:
        # Placeholders are case-significant special forms
        if self.lowercase and not token.startswith("<PHI:"):
            return token.lower()
        return token

    def __len__(self) -> int:
        return len(self.itos)

    def index(self, token: str) -> int:
        return self.stoi.get(self.normalize(token), 0)

    def to_dict(self) -> dict:
        return {
            "tokens": self.itos[self.num_specials:],
            "phi_classes": list(self.phi_classes),
            "lowercase": self.lowercase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(d["tokens"], d["phi_classes"], d["lowercase"])


class TrainableTable:
    kind = "trainable"

    def __init__(self, name: str, vocab: Vocab, dim: int, rng: np.random.Generator, group: str = "main"):
        self.vocab = vocab
        self.dim = dim
        self.table = Parameter(f"{name}.table", rng.normal(0.0, 1.0, (len(vocab), dim)), group=group)

    @property
    def params(self) -> list[Parameter]:
        return [self.table]

    def indices(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.vocab.index(t) for t in tokens], dtype=np.int64)


class FrozenTable:
    """Pretrained vectors; unknown words map to a zero vector."""

    kind = "frozen"

    def __init__(self, name: str, words: Sequence[str], vectors: np.ndarray):
        self.words = list(words)
        self.dim = vectors.shape[1]
        self.stoi = {w: i + 1 for i, w in enumerate(self.words)}
        table = np.vstack([np.zeros((1, self.dim)), np.asarray(vectors, dtype=np.float64)])
        self.table = Parameter(f"{name}.table", table, trainable=False, group="frozen")

    @property
    def params(self) -> list[Parameter]:
        return [self.table]

    def indices(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, 0) for t in tokens], dtype=np.int64)


@dataclass
class EmbedCache:
    indices: list[np.ndarray]
    mask: np.ndarray


class EmbeddingStack:
    """Concatenates every source's vector for each token, in source order."""

    def __init__(self, sources: Sequence[TrainableTable | FrozenTable]):
        if not sources:
            raise ValueError("embedding stack needs at least one source")
        self.sources = list(sources)

    @property
    def total_dim(self) -> int:
        return sum(s.dim for s in self.sources)

    @property
    def params(self) -> list[Parameter]:
        return [p for s in self.sources for p in s.params]

    def forward(self, batch: Sequence[Sequence[str]], unk_prob: float = 0.0,
                rng: np.random.Generator | None = None):
        """Embed a batch of token lists into a zero-padded ``(B, T, D)`` array."""
        B = len(batch)
        T = max((len(toks) for toks in batch), default=0)
        mask = np.zeros((B, T), dtype=bool)
        for b, toks in enumerate(batch):
            mask[b, :len(toks)] = True
        out = np.zeros((B, T, self.total_dim))
        all_idx = []
        offset = 0
        for src in self.sources:
            idx = np.zeros((B, T), dtype=np.int64)
            for b, toks in enumerate(batch):
                idx[b, :len(toks)] = src.indices(toks)
            if src.kind == "trainable" and unk_prob > 0 and rng is not None and src.vocab.singletons:
                single = np.isin(idx, list(src.vocab.singletons)) & mask
                drop = rng.random((B, T)) < unk_prob
                idx = np.where(single & drop, 0, idx)
            out[:, :, offset:offset + src.dim] = src.table.value[idx] * mask[..., None]
            all_idx.append(idx)
            offset += src.dim
        return out, EmbedCache(all_idx, mask)

    def backward(self, dE: np.ndarray, cache: EmbedCache) -> None:
        """Scatter-add into trainable tables; frozen tables get nothing."""
        offset = 0
        for src, idx in zip(self.sources, cache.indices):
            if src.kind == "trainable":
                g = dE[:, :, offset:offset + src.dim][cache.mask]
                np.add.at(src.table.grad, idx[cache.mask], g)
            offset += src.dim


def embed_sentence(stack: EmbeddingStack, tokens: Sequence[str]):
    E, cache = stack.forward([tokens])
    return E[0], cache


def load_pretrained(path) -> tuple[list[str], np.ndarray]:
    """Read the ``<count> <dim>`` header word-vector text format."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_pretrained(text)


def parse_pretrained(text: str) -> tuple[list[str], np.ndarray]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorpusError("empty vector file")
    header = lines[0].split()
    try:
        count, dim = int(header[0]), int(header[1])
        if len(header) != 2:
            raise ValueError
    except (ValueError, IndexError):
        raise CorpusError(f"line 1: malformed header {lines[0]!r}") from None
    if len(lines) - 1 != count:
        raise CorpusError(f"header declares {count} words, found {len(lines) - 1}")
    words: list[str] = []
    seen: set[str] = set()
    vectors = np.zeros((count, dim))
    for i, line in enumerate(lines[1:]):
        fields = line.split(" ")
        if len(fields) != dim + 1:
            raise CorpusError(f"line {i + 2}: expected {dim} values, got {len(fields) - 1}")
        word = fields[0]
        if word in seen:
            raise CorpusError(f"line {i + 2}: duplicate word {word!r}")
        seen.add(word)
        try:
            vectors[i] = [float(v) for v in fields[1:]]
        except ValueError:
            raise CorpusError(f"line {i + 2}: non-numeric field") from None
        words.append(word)
    return words, vectors


def format_pretrained(words: Sequence[str], vectors: np.ndarray) -> str:
    rows = [f"{len(words)} {vectors.shape[1]}"]
    for w, v in zip(words, vectors):
        rows.append(" ".join([w] + [repr(float(x)) for x in v]))
    return "\n".join(rows) + "\n"


def save_pretrained(path, words: Sequence[str], vectors: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_pretrained(words, vectors))
