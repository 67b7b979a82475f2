"""Exact-match span F1 and a paired permutation significance test."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Span

DEFAULT_PERMUTATIONS = 2**20


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return _prf(self.tp, self.fp, self.fn)[2]


@dataclass
class EvalResult(Counts):
    per_class: dict[str, Counts] = field(default_factory=dict)

    def report(self) -> str:
        """Fixed-width table: micro row first, then classes alphabetically."""
        rows = [f"{'class':<16}{'tp':>7}{'fp':>7}{'fn':>7}{'precision':>11}{'recall':>9}{'f1':>9}"]

        def row(name, c):
            return (f"{name:<16}{c.tp:>7}{c.fp:>7}{c.fn:>7}"
                    f"{c.precision:>11.4f}{c.recall:>9.4f}{c.f1:>9.4f}")

        rows.append(row("micro", self))
        for name in sorted(self.per_class):
            rows.append(row(name, self.per_class[name]))
        return "\n".join(rows) + "\n"


def sentence_counts(gold: Sequence[Span], pred: Sequence[Span]) -> dict[str, Counts]:
    """Exact matches; every gold span can absorb at most one prediction."""
    remaining = Counter((s.start, s.end, s.class_name) for s in gold)
    out: dict[str, Counts] = {}
    for s in pred:
        c = out.setdefault(s.class_name, Counts())
        key = (s.start, s.end, s.class_name)
        if remaining[key] > 0:
            remaining[key] -= 1
            c.tp += 1
        else:
            c.fp += 1
    for (_, _, cls), n in remaining.items():
        if n:
            out.setdefault(cls, Counts()).fn += n
    return out


def exact_f1(gold: Sequence[Sequence[Span]], pred: Sequence[Sequence[Span]]) -> EvalResult:
    if len(gold) != len(pred):
        raise ValueError(f"sentence count mismatch: {len(gold)} gold vs {len(pred)} predicted")
    result = EvalResult()
    for g, p in zip(gold, pred):
        for cls, c in sentence_counts(g, p).items():
            acc = result.per_class.setdefault(cls, Counts())
            acc.tp += c.tp
            acc.fp += c.fp
            acc.fn += c.fn
    result.tp = sum(c.tp for c in result.per_class.values())
    result.fp = sum(c.fp for c in result.per_class.values())
    result.fn = sum(c.fn for c in result.per_class.values())
    return result


def f1_from_counts(counts: np.ndarray) -> np.ndarray:
    """Vectorized micro F1 over ``(..., 3)`` arrays of (tp, fp, fn)."""
    tp, fp, fn = counts[..., 0], counts[..., 1], counts[..., 2]
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


@dataclass
class SignificanceResult:
    observed_diff: float
    p_value: float
    n_permutations: int = DEFAULT_PERMUTATIONS
    alpha: float = 0.05

    @property
    def significant(self) -> bool:
        return self.p_value < self.alpha

    def report(self) -> str:
        return (f"observed_diff {self.observed_diff:.4f}\n"
                f"p_value {self.p_value:.4f}\n"
                f"n_permutations {self.n_permutations}\n"
                f"alpha {self.alpha:.4f}\n"
                f"significant {'yes' if self.significant else 'no'}\n")


def unit_counts(gold_units, pred_units) -> np.ndarray:
    """(tp, fp, fn) per unit; a unit is a list of per-sentence span lists."""
    if len(gold_units) != len(pred_units):
        raise ValueError("gold and predictions cover different numbers of units")
    rows = []
    for g, p in zip(gold_units, pred_units):
        r = exact_f1(g, p)
        rows.append((r.tp, r.fp, r.fn))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def paired_permutation_test(gold_units, pred_a, pred_b, n: int = DEFAULT_PERMUTATIONS, seed: int = 0,
                            alpha: float = 0.05,
                            metric_fn: Callable[[np.ndarray], np.ndarray] = f1_from_counts,
                            chunk: int = 1 << 16) -> SignificanceResult:
    """Two-sided test swapping A/B outputs unit by unit with probability 1/2.

    ``metric_fn`` maps summed sufficient statistics ``(..., 3)`` to a metric,
    so corpus-level F1 is recomputed for every permutation.  The p-value is
    add-one smoothed: ``(1 + #{diff >= observed}) / (1 + n)``.
    """
    ca = unit_counts(gold_units, pred_a)
    cb = unit_counts(gold_units, pred_b)
    observed = float(abs(metric_fn(ca.sum(axis=0)) - metric_fn(cb.sum(axis=0))))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    delta = cb - ca
    base = ca.sum(axis=0)
    total = ca.sum(axis=0) + cb.sum(axis=0)
    hits = 0
    done = 0
    tol = 1e-12
    while done < n:
        m = min(chunk, n - done)
        swaps = rng.integers(0, 2, size=(m, len(ca))).astype(np.float64)
        sum_a = base + swaps @ delta
        sum_b = total - sum_a
        diff = np.abs(metric_fn(sum_a) - metric_fn(sum_b))
        hits += int(np.count_nonzero(diff >= observed - tol))
        done += m
    return SignificanceResult(observed, (1 + hits) / (1 + n), n, alpha)


def exact_permutation_p(gold_units, pred_a, pred_b, metric_fn=f1_from_counts) -> float:
    """Enumerate all 2^U swap patterns (no smoothing); for small U only."""
    ca = unit_counts(gold_units, pred_a)
    cb = unit_counts(gold_units, pred_b)
    U = len(ca)
    if U > 20:
        raise ValueError("too many units to enumerate")
    observed = abs(metric_fn(ca.sum(axis=0)) - metric_fn(cb.sum(axis=0)))
    patterns = ((np.arange(2**U)[:, None] >> np.arange(U)[None, :]) & 1).astype(np.float64)
    sum_a = ca.sum(axis=0) + patterns @ (cb - ca)
    sum_b = ca.sum(axis=0) + cb.sum(axis=0) - sum_a
    diff = np.abs(metric_fn(sum_a) - metric_fn(sum_b))
    return float(np.mean(diff >= observed - 1e-12))
