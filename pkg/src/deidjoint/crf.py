"""Linear-chain CRF with virtual START/STOP states.

Transition matrices have shape ``(K + 2, K + 2)``; index ``K`` is START and
``K + 1`` is STOP.  ``trans[i, j]`` scores moving from tag ``i`` to tag ``j``.
Batched routines take zero-padded ``(B, T, K)`` emissions plus lengths.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .corpus import LabelScheme, split_tag
from .neural import Parameter

NEG_INF = -np.inf


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _split(trans: np.ndarray, K: int):
    if trans.shape != (K + 2, K + 2):
        raise ValueError(f"transitions must be {(K + 2, K + 2)}, got {trans.shape}")
    return trans[:K, :K], trans[K, :K], trans[:K, K + 1]


def _mask(lengths, T: int) -> np.ndarray:
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


def sequence_score(emissions: np.ndarray, trans: np.ndarray, labels: Sequence[int]) -> float:
    T, K = emissions.shape
    labels = list(labels)
    if len(labels) != T or T < 1:
        raise ValueError("labels must have one entry per time step (T >= 1)")
    if any(not 0 <= y < K for y in labels):
        raise ValueError(f"label out of range [0, {K})")
    tr, start, stop = _split(trans, K)
    # Same left-to-right association as the Viterbi recursion, so the
    # decoded score and the enumerated maximum agree bit for bit
    score = start[labels[0]] + emissions[0, labels[0]]
    for t in range(1, T):
        score = score + tr[labels[t - 1], labels[t]] + emissions[t, labels[t]]
    return float(score + stop[labels[-1]])


def forward_backward(emissions: np.ndarray, lengths, trans: np.ndarray):
    """Log-space alpha/beta tables and log-partition for a padded batch."""
    B, T, K = emissions.shape
    tr, start, stop = _split(trans, K)
    mask = _mask(lengths, T)
    alpha = np.empty((B, T, K))
    alpha[:, 0] = start + emissions[:, 0]
    for t in range(1, T):
        a = _logsumexp(alpha[:, t - 1, :, None] + tr[None], axis=1) + emissions[:, t]
        alpha[:, t] = np.where(mask[:, t, None], a, alpha[:, t - 1])
    log_z = _logsumexp(alpha[:, T - 1] + stop, axis=1)
    beta = np.empty((B, T, K))
    beta[:, T - 1] = stop
    for t in range(T - 2, -1, -1):
        b = _logsumexp(tr[None] + (emissions[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        beta[:, t] = np.where(mask[:, t + 1, None], b, stop)
    return alpha, beta, log_z


def nll_batch(emissions: np.ndarray, lengths, trans: np.ndarray, labels: np.ndarray):
    """Per-sentence NLL, its emission gradient, and the summed transition gradient."""
    B, T, K = emissions.shape
    lengths = np.asarray(lengths)
    tr, start, stop = _split(trans, K)
    mask = _mask(lengths, T)
    labels = np.where(mask, labels, 0)
    alpha, beta, log_z = forward_backward(emissions, lengths, trans)

    rows = np.arange(B)
    last = labels[rows, lengths - 1]
    gold = start[labels[:, 0]] + stop[last]
    gold = gold + np.sum(np.take_along_axis(emissions, labels[..., None], axis=2)[..., 0] * mask, axis=1)
    if T > 1:
        pair = tr[labels[:, :-1], labels[:, 1:]]
        gold = gold + np.sum(pair * mask[:, 1:], axis=1)

    unary = np.exp(alpha + beta - log_z[:, None, None]) * mask[..., None]
    onehot = np.zeros((B, T, K))
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=2)
    onehot *= mask[..., None]
    d_em = unary - onehot

    d_trans = np.zeros_like(trans)
    d_start = unary[:, 0].sum(axis=0) - onehot[:, 0].sum(axis=0)
    d_stop = unary[rows, lengths - 1].sum(axis=0) - onehot[rows, lengths - 1].sum(axis=0)
    d_tr = np.zeros((K, K))
    for t in range(1, T):
        m = mask[:, t]
        if not m.any():
            break
        p = np.exp(alpha[m, t - 1, :, None] + tr[None] + (emissions[m, t] + beta[m, t])[:, None, :]
                   - log_z[m, None, None])
        d_tr += p.sum(axis=0)
        np.add.at(d_tr, (labels[m, t - 1], labels[m, t]), -1.0)
    d_trans[:K, :K] = d_tr
    d_trans[K, :K] = d_start
    d_trans[:K, K + 1] = d_stop
    nll = np.maximum(log_z - gold, 0.0)
    return nll, d_em, d_trans


def log_marginals(emissions: np.ndarray, lengths, trans: np.ndarray) -> np.ndarray:
    alpha, beta, log_z = forward_backward(emissions, lengths, trans)
    return alpha + beta - log_z[:, None, None]


def viterbi_batch(emissions: np.ndarray, lengths, trans: np.ndarray, allowed: np.ndarray | None = None):
    """Best path per sentence; ties resolve to the lowest tag index."""
    B, T, K = emissions.shape
    lengths = np.asarray(lengths)
    if allowed is not None:
        trans = np.where(allowed, trans, NEG_INF)
    tr, start, stop = _split(trans, K)
    mask = _mask(lengths, T)
    delta = np.empty((B, T, K))
    back = np.zeros((B, T, K), dtype=np.int64)
    delta[:, 0] = start + emissions[:, 0]
    for t in range(1, T):
        scores = delta[:, t - 1, :, None] + tr[None]
        back[:, t] = np.argmax(scores, axis=1)
        best = np.take_along_axis(scores, back[:, t][:, None, :], axis=1)[:, 0] + emissions[:, t]
        delta[:, t] = np.where(mask[:, t, None], best, delta[:, t - 1])
    final = delta[:, T - 1] + stop
    last = np.argmax(final, axis=1)
    scores = final[np.arange(B), last]
    paths = []
    for b in range(B):
        path = [int(last[b])]
        for t in range(lengths[b] - 1, 0, -1):
            path.append(int(back[b, t, path[-1]]))
        paths.append(path[::-1])
    return paths, scores


def log_partition(emissions: np.ndarray, trans: np.ndarray) -> float:
    if emissions.shape[0] < 1:
        raise ValueError("need T >= 1")
    return float(forward_backward(emissions[None], [emissions.shape[0]], trans)[2][0])


def nll_and_grad(emissions: np.ndarray, trans: np.ndarray, labels: Sequence[int]):
    T, K = emissions.shape
    if any(not 0 <= y < K for y in labels):
        raise ValueError(f"label out of range [0, {K})")
    nll, d_em, d_trans = nll_batch(emissions[None], [T], trans, np.asarray(labels)[None])
    return float(nll[0]), d_em[0], d_trans


def viterbi(emissions: np.ndarray, trans: np.ndarray, allowed: np.ndarray | None = None):
    if emissions.shape[0] < 1:
        raise ValueError("need T >= 1")
    paths, scores = viterbi_batch(emissions[None], [emissions.shape[0]], trans, allowed)
    return paths[0], float(scores[0])


def brute_force_oracle(emissions: np.ndarray, trans: np.ndarray, max_paths: int = 10**6):
    """Enumerate every tag sequence: ``(log_partition, best_sequence, best_score)``."""
    T, K = emissions.shape
    if K**T > max_paths:
        raise ValueError(f"{K}^{T} sequences exceeds the enumeration limit {max_paths}")
    scores = []
    best, best_score = None, NEG_INF
    for seq in itertools.product(range(K), repeat=T):
        s = sequence_score(emissions, trans, seq)
        scores.append(s)
        if s > best_score:
            best, best_score = list(seq), s
    scores = np.array(scores)
    m = scores.max()
    return float(m + np.log(np.sum(np.exp(scores - m)))), best, best_score


def bio_allowed(scheme: LabelScheme) -> np.ndarray:
    """Boolean ``(K+2, K+2)`` mask of transitions a BIO-valid path may use."""
    tags = scheme.tags
    K = len(tags)
    allowed = np.ones((K + 2, K + 2), dtype=bool)
    allowed[:, K] = False
    allowed[K + 1, :] = False
    for j, tag in enumerate(tags):
        prefix, cls = split_tag(tag)
        if prefix != "I":
            continue
        allowed[K, j] = False
        for i, prev in enumerate(tags):
            if split_tag(prev)[1] != cls:
                allowed[i, j] = False
    return allowed


class CrfLayer:
    def __init__(self, name: str, num_tags: int, group: str = "main"):
        if num_tags < 1:
            raise ValueError("CRF needs at least one tag")
        self.num_tags = num_tags
        self.transitions = Parameter(f"{name}.transitions", np.zeros((num_tags + 2, num_tags + 2)), group=group)

    @property
    def params(self) -> list[Parameter]:
        return [self.transitions]

    def nll(self, emissions: np.ndarray, lengths, labels: np.ndarray, weight: float = 1.0):
        """Per-sentence NLL; adds ``weight`` times the summed transition gradient."""
        nll, d_em, d_trans = nll_batch(emissions, lengths, self.transitions.value, labels)
        self.transitions.grad += weight * d_trans
        return nll, d_em

    def decode(self, emissions: np.ndarray, lengths, allowed: np.ndarray | None = None):
        return viterbi_batch(emissions, lengths, self.transitions.value, allowed)[0]
