"""Placeholder substitution (text path) and Gumbel-gated masked embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import ANON, OUTSIDE, Sentence, Span, bio_to_spans, check_bio, placeholder, spans_to_bio, split_tag


def substitution_alignment(anon_labels: Sequence[str]) -> list[tuple[int, int]]:
    """Original ``[start, end)`` token range behind each output token."""
    check_bio(anon_labels)
    align = []
    spans = {s.start: s for s in bio_to_spans(anon_labels)}
    i = 0
    while i < len(anon_labels):
        if i in spans:
            align.append((i, spans[i].end))
            i = spans[i].end
        else:
            align.append((i, i + 1))
            i += 1
    return align


def _realign(labels: Sequence[str], align: list[tuple[int, int]], replaced: set[int]) -> list[str]:
    new_pos = {}
    for j, (s, e) in enumerate(align):
        if e - s == 1 and s not in replaced:
            new_pos[s] = j
    out = []
    for span in bio_to_spans(labels):
        kept = [new_pos[i] for i in range(span.start, span.end) if i in new_pos]
        if kept:
            out.append(Span(kept[0], kept[-1] + 1, span.class_name))
    return spans_to_bio(out, len(align))


def substitute_placeholders(sentence: Sentence, anon_labels: Sequence[str], anon_task: str = ANON) -> Sentence:
    """Collapse each PHI span into a single ``<PHI:class>`` token.

    Other tasks' spans lose the tokens that were replaced: one lying wholly
    inside a PHI span disappears, one crossing its boundary keeps only its
    surviving tokens.  The ANON column of the result is all ``O``.
    """
    if len(anon_labels) != len(sentence):
        raise ValueError("anon_labels length differs from the sentence length")
    align = substitution_alignment(anon_labels)
    replaced = {i for s in bio_to_spans(anon_labels) for i in range(s.start, s.end)}
    tokens = []
    for s, e in align:
        if s in replaced:
            tokens.append(placeholder(split_tag(anon_labels[s])[1]))
        else:
            tokens.append(sentence.tokens[s])
    labels = {}
    for task, seq in sentence.labels.items():
        if task == anon_task:
            labels[task] = [OUTSIDE] * len(tokens)
        else:
            labels[task] = _realign(seq, align, replaced)
    return Sentence(tokens, labels)


def expand_labels(labels: Sequence[str], align: list[tuple[int, int]]) -> list[str]:
    """Map labels predicted on substituted text back onto the original tokens."""
    out: list[str] = []
    for tag, (s, e) in zip(labels, align):
        prefix, cls = split_tag(tag)
        out.append(tag)
        out += [OUTSIDE if prefix == OUTSIDE else f"I-{cls}"] * (e - s - 1)
    return out


@dataclass
class GumbelConfig:
    """Temperature and sampling mode for the masked embedding gate."""

    tau: float = 1.0
    hard: bool = True
    anneal: bool = False
    tau_min: float = 0.1
    anneal_rate: float = 0.9
    source: str = "emissions"
    stream: str = "gumbel"

    def __post_init__(self):
        if self.tau <= 0 or self.tau_min <= 0:
            raise ValueError("Gumbel temperature must be positive")
        if self.source not in ("emissions", "marginals"):
            raise ValueError(f"unknown Gumbel score source {self.source!r}")

    def tau_at(self, epoch: int) -> float:
        """Temperature for a 0-based count of joint-training epochs."""
        if not self.anneal:
            return self.tau
        return max(self.tau_min, self.tau * self.anneal_rate**epoch)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: np.ndarray, tau: float, noise: np.ndarray | None = None,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """``softmax((logits + G) / tau)`` over the last axis.

    Raw scores are used as the logits, i.e. they play the role of the log
    of the unnormalized scores.  ``noise`` fixes G; otherwise it is drawn
    from ``rng`` (or zero when neither is given).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if noise is None:
        noise = sample_gumbel(rng, logits.shape) if rng is not None else 0.0
    z = (logits + noise) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gumbel_softmax_backward(dy: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True)) / tau


def hard_sample(y: np.ndarray) -> np.ndarray:
    """One-hot at the argmax (lowest index on ties).

    Straight-through: callers pass the gradient w.r.t. the one-hot output
    unchanged to ``y``.
    """
    out = np.zeros_like(y)
    np.put_along_axis(out, np.argmax(y, axis=-1)[..., None], 1.0, axis=-1)
    return out


def tag_class_matrix(tag_classes: Sequence[int], num_classes: int) -> np.ndarray:
    """``(K, C)`` 0/1 matrix sending each B-x/I-x tag to class x and O to nothing."""
    M = np.zeros((len(tag_classes), num_classes))
    for t, c in enumerate(tag_classes):
        if c >= 0:
            M[t, c] = 1.0
    return M


def masked_embed(original: np.ndarray, y: np.ndarray, phi_table: np.ndarray, class_map: np.ndarray):
    """``y_O * original + sum_t y_t * phi_table[class(t)]`` over the last axis.

    ``class_map`` comes from :func:`tag_class_matrix`; tag 0 must be ``O``.
    """
    if original.shape[-1] != phi_table.shape[1]:
        raise ValueError(f"embedding dim {original.shape[-1]} != PHI table dim {phi_table.shape[1]}")
    if y.shape[-1] != class_map.shape[0] or phi_table.shape[0] != class_map.shape[1]:
        raise ValueError("tag distribution / class map / PHI table sizes disagree")
    class_weights = y @ class_map
    return y[..., :1] * original + class_weights @ phi_table, (original, y, class_weights)


def masked_embed_backward(dout: np.ndarray, cache, phi_table: np.ndarray, class_map: np.ndarray):
    """Return ``(d_original, d_y, d_phi_table)``."""
    original, y, class_weights = cache
    d_original = y[..., :1] * dout
    d_class = dout @ phi_table.T
    d_y = d_class @ class_map.T
    d_y[..., 0] = np.sum(dout * original, axis=-1)
    d_phi = class_weights.reshape(-1, class_weights.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
    return d_original, d_y, d_phi


def masked_embed_reference(original: np.ndarray, tag: int, phi_table: np.ndarray, tag_classes: Sequence[int]):
    """Branching form of the hard mask for a single token."""
    if tag_classes[tag] < 0:
        return original
    return phi_table[tag_classes[tag]]
