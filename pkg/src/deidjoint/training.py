"""SGD training with plateau halving, early stopping and joint pretraining."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import ANON, CE, Document, Sentence, bio_to_spans, sentences_of
from .evaluation import exact_f1
from .models import ModelGraph, predict
from .neural import NumericalError, clip_grad_norm, rng_stream, sgd_step

Evaluator = Callable[[ModelGraph, Sequence[Sentence]], Mapping[str, float]]


@dataclass
class TrainConfig:
    base_lr: float = 0.1
    batch_size: int = 32
    anneal_factor: float = 0.5
    patience: int = 3
    max_epochs: int = 100
    min_lr: float = 1e-4
    pretrain_anon_epochs: int = 3
    ce_branch_lr: float = 0.2
    dev_fraction: float = 0.10
    unk_prob: float = 0.1
    clip_norm: float = 0.0
    monitor: str = CE
    seed: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if min(self.base_lr, self.ce_branch_lr, self.min_lr) <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.anneal_factor < 1:
            raise ValueError("anneal_factor must lie in (0, 1)")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")
        if self.pretrain_anon_epochs < 0:
            raise ValueError("pretrain_anon_epochs must be >= 0")
        if not 0 < self.dev_fraction < 1:
            raise ValueError("dev_fraction must lie in (0, 1)")
        if not 0 <= self.unk_prob < 1:
            raise ValueError("unk_prob must lie in [0, 1)")
        if self.monitor not in (ANON, CE):
            raise ValueError(f"monitor must be {ANON} or {CE}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev: dict[str, float]
    lr: dict[str, float]
    wall_time: float = 0.0


@dataclass
class TrainHistory:
    initial_dev: dict[str, float] = field(default_factory=dict)
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = -math.inf
    monitor: str = ""
    split: dict[str, int] = field(default_factory=dict)

    def lr_trace(self, group: str) -> list[float | None]:
        return [e.lr.get(group) for e in self.epochs]

    def to_jsonl(self, with_time: bool = False) -> str:
        lines = [json.dumps({"type": "setup", "initial_dev": self.initial_dev, "monitor": self.monitor,
                             "split": self.split}, sort_keys=True)]
        for e in self.epochs:
            rec = asdict(e)
            if not with_time:
                rec.pop("wall_time")
            lines.append(json.dumps({"type": "epoch", **rec}, sort_keys=True))
        lines.append(json.dumps({"type": "best", "epoch": self.best_epoch, "metric": self.best_metric},
                                sort_keys=True))
        return "\n".join(lines) + "\n"


def make_dev_split(docs: Sequence[Document], dev_fraction: float = 0.10, seed: int = 0,
                   stream: str = "dev_split"):
    """Hold out ``round(fraction * n)`` (at least one) whole documents."""
    if len(docs) < 10:
        raise ValueError(f"need at least 10 documents to fabricate a dev split, got {len(docs)}")
    if not 0 < dev_fraction < 1:
        raise ValueError("dev_fraction must lie in (0, 1)")
    n_dev = max(1, int(math.floor(dev_fraction * len(docs) + 0.5)))
    chosen = set(rng_stream(seed, stream).permutation(len(docs))[:n_dev].tolist())
    train = [d for i, d in enumerate(docs) if i not in chosen]
    dev = [d for i, d in enumerate(docs) if i in chosen]
    return train, dev


def f1_evaluator(graph: ModelGraph, sentences: Sequence[Sentence]) -> dict[str, float]:
    """Micro exact-match F1 per task the graph predicts."""
    out = predict(graph, sentences)
    scores = {}
    for task, pred in out.labels.items():
        gold = [bio_to_spans(s.labels[task]) for s in sentences]
        scores[task] = exact_f1(gold, [bio_to_spans(p) for p in pred]).f1
    return scores


@dataclass
class _Group:
    name: str
    task: str
    lr: float
    start_epoch: int
    best: float = -math.inf
    bad_epochs: int = 0


def _selection_key(dev: Mapping[str, float], monitor: str, joint: bool) -> tuple[float, float]:
    """Monitored F1 first; joint graphs break ties with the other task's F1."""
    other = (CE if monitor == ANON else ANON) if joint else None
    return dev.get(monitor, -math.inf), dev.get(other, -math.inf) if other else 0.0


def _as_sentences(data) -> list[Sentence]:
    data = list(data)
    if data and isinstance(data[0], Document):
        return sentences_of(data)
    return data


def train(graph: ModelGraph, train_set, dev_set, config: TrainConfig | None = None,
          evaluator: Evaluator | None = None, on_epoch: Callable[[EpochRecord], None] | None = None,
          on_best: Callable[[ModelGraph, int], None] | None = None):
    """Train in place; the graph ends holding its best-dev parameters.

    The dev metric of the untrained graph is the baseline each parameter
    group has to beat.  A group halves its rate after ``patience``
    consecutive epochs without a strict improvement of its task's dev F1.
    Joint graphs first train only the ANON side for
    ``pretrain_anon_epochs``; the CE side then joins at ``ce_branch_lr``.
    """
    config = config or TrainConfig()
    evaluator = evaluator or f1_evaluator
    train_sents = [s for s in _as_sentences(train_set) if len(s) > 0]
    dev_sents = _as_sentences(dev_set)
    if not train_sents:
        raise ValueError("empty training set")
    if graph.kind == "pipeline":
        raise ValueError("train pipeline stages individually (see experiment.train_pipeline)")

    joint = graph.kind in ("multitask", "stacked")
    groups_params = graph.param_groups()
    if joint:
        groups = [_Group("anon", ANON, config.base_lr, 1),
                  _Group("ce", CE, config.ce_branch_lr, config.pretrain_anon_epochs + 1)]
        monitor = config.monitor
    else:
        groups = [_Group("main", graph.task, config.base_lr, 1)]
        monitor = graph.task
    graph.unk_prob = config.unk_prob
    streams = {name: rng_stream(config.seed, name) for name in ("shuffle", "unk", "dropout", graph.gumbel.stream)}

    history = TrainHistory(monitor=monitor)
    dev = dict(evaluator(graph, dev_sents))
    history.initial_dev = dev
    for g in groups:
        g.best = dev.get(g.task, -math.inf)
    history.best_metric = dev.get(monitor, -math.inf)
    best_key = _selection_key(dev, monitor, joint)
    best_state = graph.state()
    if on_best is not None:
        on_best(graph, 0)

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        active = [g for g in groups if g.start_epoch <= epoch]
        for g in active:
            if g.start_epoch == epoch and epoch > 1:
                g.best, g.bad_epochs = dev.get(g.task, -math.inf), 0
        weights = {g.task: 1.0 if g in active else 0.0 for g in groups} if joint else None
        tau = graph.gumbel.tau_at(epoch - groups[-1].start_epoch) if joint else None

        order = streams["shuffle"].permutation(len(train_sents))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_sents[i] for i in order[start:start + config.batch_size]]
            graph.zero_grad()
            # Overflow surfaces as the NumericalError below rather than as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                result = (graph.loss(batch, weights, streams=streams, tau=tau) if joint
                          else graph.loss(batch, streams=streams))
            if not math.isfinite(result.loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b + 1}")
            losses.append(result.loss * len(batch))
            for g in groups:
                params = groups_params.get(g.name, [])
                if g in active:
                    if config.clip_norm > 0:
                        clip_grad_norm(params, config.clip_norm)
                    try:
                        with np.errstate(over="ignore", invalid="ignore"):
                            sgd_step(params, g.lr)
                    except NumericalError as exc:
                        raise NumericalError(f"epoch {epoch}, batch {b + 1}: {exc}") from None
                else:
                    for p in params:
                        p.zero_grad()

        lr_used = {g.name: g.lr for g in active}
        dev = dict(evaluator(graph, dev_sents))
        record = EpochRecord(epoch, float(np.sum(losses) / len(train_sents)), dev, lr_used,
                             time.perf_counter() - t0)
        history.epochs.append(record)
        for g in active:
            score = dev.get(g.task, -math.inf)
            if score > g.best:
                g.best, g.bad_epochs = score, 0
            else:
                g.bad_epochs += 1
                if g.bad_epochs >= config.patience:
                    g.lr *= config.anneal_factor
                    g.bad_epochs = 0
        key = _selection_key(dev, monitor, joint)
        if key > best_key:
            best_key = key
            history.best_metric = dev[monitor]
            history.best_epoch = epoch
            best_state = graph.state()
            if on_best is not None:
                on_best(graph, epoch)
        if on_epoch is not None:
            on_epoch(record)
        if len(active) == len(groups) and all(g.lr < config.min_lr for g in groups):
            break

    graph.restore(best_state)
    graph.unk_prob = 0.0
    return graph, history


def train_joint(graph: ModelGraph, train_set, dev_set, config: TrainConfig | None = None, **kwargs):
    if graph.kind not in ("multitask", "stacked"):
        raise ValueError("train_joint expects a multitask or stacked graph")
    return train(graph, train_set, dev_set, config, **kwargs)
