"""Token sequences with parallel BIO annotations, and their CoNLL-style I/O.

A corpus file carries one token per line followed by one label column per
task (``token<TAB>anon_label<TAB>ce_label``). Blank lines end sentences and
``-DOCSTART- <id>`` lines open documents.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

ANON = "ANON"
CE = "CE"
OUTSIDE = "O"
DOCSTART = "-DOCSTART-"
PLACEHOLDER_PREFIX = "<PHI:"


class CorpusError(ValueError):
    """Malformed corpus input or an invalid label sequence."""


class BIOError(CorpusError):
    pass


def placeholder(class_name: str) -> str:
    """Surface form that replaces a PHI span of ``class_name``."""
    return f"{PLACEHOLDER_PREFIX}{class_name}>"


def is_placeholder(token: str) -> bool:
    return token.startswith(PLACEHOLDER_PREFIX) and token.endswith(">")


def split_tag(tag: str) -> tuple[str, str | None]:
    """``"B-PAT"`` -> ``("B", "PAT")``, ``"O"`` -> ``("O", None)``."""
    if tag == OUTSIDE:
        return OUTSIDE, None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    raise BIOError(f"malformed tag {tag!r}")


def bio_violation(labels: Sequence[str]) -> tuple[int, str] | None:
    """Return ``(position, message)`` of the first BIO violation, or None."""
    prev_class = None
    for i, tag in enumerate(labels):
        try:
            prefix, cls = split_tag(tag)
        except BIOError as exc:
            return i, str(exc)
        if prefix == "I" and cls != prev_class:
            return i, f"{tag} without preceding B-{cls}"
        prev_class = cls
    return None


def check_bio(labels: Sequence[str]) -> None:
    found = bio_violation(labels)
    if found is not None:
        pos, msg = found
        raise BIOError(f"BIO violation at position {pos}: {msg}")


@dataclass(frozen=True)
class LabelScheme:
    """Tagset of one task: ``O`` followed by ``B-c``/``I-c`` for every class."""

    task_name: str
    classes: tuple[str, ...]
    negative_label: str = OUTSIDE

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.negative_label != OUTSIDE:
            raise ValueError('negative_label must be "O"')
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"duplicate class names in {self.task_name}")
        for c in self.classes:
            if not c or re.search(r"[\s-]", c):
                raise ValueError(f"invalid class name {c!r}")

    @property
    def tags(self) -> tuple[str, ...]:
        out = [OUTSIDE]
        for c in self.classes:
            out += [f"B-{c}", f"I-{c}"]
        return tuple(out)

    @property
    def num_tags(self) -> int:
        return 2 * len(self.classes) + 1

    def tag_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tags)}

    def encode(self, labels: Sequence[str]) -> list[int]:
        index = self.tag_index()
        try:
            return [index[t] for t in labels]
        except KeyError as exc:
            raise CorpusError(f"unknown tag {exc.args[0]!r} for task {self.task_name}") from None

    def decode(self, indices: Iterable[int]) -> list[str]:
        tags = self.tags
        return [tags[i] for i in indices]

    def tag_classes(self) -> list[int]:
        """Class index per tag (``-1`` for ``O``); B-x and I-x share x."""
        return [-1] + [i for i in range(len(self.classes)) for _ in range(2)]


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    labels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        labels = {task: tuple(seq) for task, seq in self.labels.items()}
        object.__setattr__(self, "labels", labels)
        for task, seq in labels.items():
            if len(seq) != len(self.tokens):
                raise CorpusError(
                    f"task {task}: {len(seq)} labels for {len(self.tokens)} tokens"
                )
            found = bio_violation(seq)
            if found is not None:
                raise BIOError(f"BIO violation at position {found[0]} (task {task}): {found[1]}")

    def __len__(self) -> int:
        return len(self.tokens)

    def with_labels(self, **labels: Sequence[str]) -> "Sentence":
        merged = dict(self.labels)
        merged.update(labels)
        return Sentence(self.tokens, merged)


@dataclass(frozen=True)
class Document:
    id: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise CorpusError(f"document {self.id!r} has no sentences")


@dataclass(frozen=True, order=True)
class Span:
    start: int
    end: int
    class_name: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span bounds [{self.start}, {self.end})")


def sentences_of(docs: Iterable[Document]) -> list[Sentence]:
    return [s for d in docs for s in d.sentences]


def bio_to_spans(labels: Sequence[str]) -> list[Span]:
    check_bio(labels)
    spans = []
    start = cls = None
    for i, tag in enumerate(list(labels) + [OUTSIDE]):
        prefix, c = split_tag(tag)
        if prefix != "I" and start is not None:
            spans.append(Span(start, i, cls))
            start = None
        if prefix == "B":
            start, cls = i, c
    return spans


def spans_to_bio(spans: Sequence[Span], length: int) -> list[str]:
    tags = [OUTSIDE] * length
    for span in sorted(spans):
        if span.end > length:
            raise ValueError(f"span {span} out of bounds for length {length}")
        if any(t != OUTSIDE for t in tags[span.start:span.end]):
            raise ValueError(f"span {span} overlaps another span")
        tags[span.start] = f"B-{span.class_name}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.class_name}"
    return tags


def split_underscore_tokens(sentence: Sentence) -> Sentence:
    """Split tokens that a tokenizer glued together with underscores.

    Each part inherits the source label; a ``B-x`` source yields ``B-x``
    followed by ``I-x`` parts.  Underscore runs are treated as a single
    separator and empty parts are dropped; a token made only of
    underscores is left alone.
    """
    tokens: list[str] = []
    labels: dict[str, list[str]] = {task: [] for task in sentence.labels}
    for i, token in enumerate(sentence.tokens):
        parts = [p for p in re.split(r"_+", token) if p] if "_" in token else [token]
        if not parts:
            parts = [token]
        tokens += parts
        for task, seq in sentence.labels.items():
            tag = seq[i]
            prefix, cls = split_tag(tag)
            if prefix == "B":
                labels[task] += [tag] + [f"I-{cls}"] * (len(parts) - 1)
            else:
                labels[task] += [tag] * len(parts)
    return Sentence(tokens, labels)


def parse_conll(text: str, schemes: Sequence[LabelScheme]) -> list[Document]:
    """Parse the TSV corpus format; errors carry 1-based line numbers."""
    n_cols = 1 + len(schemes)
    known = [set(s.classes) for s in schemes]
    docs: list[Document] = []
    seen_ids: set[str] = set()
    doc_id: str | None = None
    doc_line = 0
    sents: list[Sentence] = []
    rows: list[list[str]] = []

    def flush_sentence():
        if rows:
            tokens = [r[0] for r in rows]
            labels = {s.task_name: [r[j + 1] for r in rows] for j, s in enumerate(schemes)}
            sents.append(Sentence(tokens, labels))
            rows.clear()

    def flush_document():
        nonlocal doc_id
        flush_sentence()
        if doc_id is None and not sents:
            return
        ident = doc_id if doc_id is not None else str(len(docs))
        if not sents:
            raise CorpusError(f"empty document {ident!r} at line {doc_line}")
        if ident in seen_ids:
            raise CorpusError(f"duplicate document id {ident!r} at line {doc_line}")
        seen_ids.add(ident)
        docs.append(Document(ident, sents.copy()))
        sents.clear()
        doc_id = None

    # Track the previous class per task to report BIO violations by line
    prev: list[str | None] = [None] * len(schemes)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        if line.startswith(DOCSTART):
            flush_document()
            doc_id = line[len(DOCSTART):].strip()
            doc_line = lineno
            prev = [None] * len(schemes)
            continue
        if line.strip() == "":
            flush_sentence()
            prev = [None] * len(schemes)
            continue
        cols = line.split("\t")
        if len(cols) != n_cols or not cols[0]:
            raise CorpusError(
                f"malformed line {lineno}: expected {n_cols} tab-separated columns, got {len(cols)}"
            )
        for j, scheme in enumerate(schemes):
            tag = cols[j + 1]
            try:
                prefix, cls = split_tag(tag)
            except BIOError:
                raise CorpusError(f"malformed tag {tag!r} at line {lineno} (task {scheme.task_name})") from None
            if cls is not None and cls not in known[j]:
                raise CorpusError(
                    f"unknown class {cls!r} at line {lineno} (task {scheme.task_name})"
                )
            if prefix == "I" and prev[j] != cls:
                raise BIOError(
                    f"BIO violation at line {lineno}: {tag} without preceding B-{cls} "
                    f"(task {scheme.task_name})"
                )
            prev[j] = cls
        if not rows and doc_id is None and not sents:
            doc_line = lineno
        rows.append(cols)
    flush_document()
    return docs


def read_tokens(text: str) -> list[Document]:
    """Parse only the token column, keeping document and sentence structure."""
    lines = []
    for line in text.split("\n"):
        if line.startswith(DOCSTART) or not line.strip():
            lines.append(line)
        else:
            lines.append(line.split("\t", 1)[0])
    return parse_conll("\n".join(lines), [])


def infer_schemes(texts: Iterable[str], task_names: Sequence[str]) -> list[LabelScheme]:
    """Collect class names per label column, in order of first appearance."""
    classes: list[dict[str, None]] = [{} for _ in task_names]
    for text in texts:
        for line in text.split("\n"):
            if not line.strip() or line.startswith(DOCSTART):
                continue
            cols = line.split("\t")
            for j, tag in enumerate(cols[1:1 + len(task_names)]):
                if tag[:2] in ("B-", "I-"):
                    classes[j].setdefault(tag[2:], None)
    return [LabelScheme(t, tuple(c)) for t, c in zip(task_names, classes)]


def write_conll(docs: Sequence[Document], tasks: Sequence[str] | None = None) -> str:
    """Serialize documents; label columns follow ``tasks`` (default: label order)."""
    out: list[str] = []
    for doc in docs:
        out.append(f"{DOCSTART} {doc.id}\n")
        for sent in doc.sentences:
            order = list(tasks) if tasks is not None else list(sent.labels)
            for i, token in enumerate(sent.tokens):
                out.append("\t".join([token] + [sent.labels[t][i] for t in order]) + "\n")
            out.append("\n")
    return "".join(out)
