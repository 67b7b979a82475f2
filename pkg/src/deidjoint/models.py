"""The four tagger graphs: single-task, pipeline, multitask and stacked.

All graphs share the same building blocks: an embedding stack, BiLSTM
encoders, and per-task heads (optional ReLU hidden layer, emission
projection, CRF).  Loss functions run forward and backward together and
accumulate gradients into the graph's parameters; the returned loss is the
mean over sentences of the weighted per-task CRF NLLs.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import anonymize as anon
from .corpus import ANON, CE, LabelScheme, Sentence
from .crf import CrfLayer, bio_allowed, log_marginals
from .embeddings import EmbeddingStack, FrozenTable, TrainableTable, Vocab
from .neural import (
    BiLstm,
    Linear,
    Parameter,
    dropout,
    dropout_backward,
    dumps_checkpoint,
    load_into,
    relu,
    relu_backward,
    rng_stream,
)

KINDS = ("single", "pipeline", "multitask", "stacked")
CHECKPOINT_FILE = "model.ckpt"
MANIFEST_FILE = "manifest.json"


@dataclass
class Dims:
    emb_dim: int = 32
    hidden: int = 32
    task_hidden: int = 32
    dropout: float = 0.0

    def __post_init__(self):
        if self.emb_dim < 1 or self.hidden < 1 or self.task_hidden < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


class TaskHead:
    def __init__(self, name: str, in_dim: int, scheme: LabelScheme, rng, hidden: int | None, group: str):
        self.scheme = scheme
        self.hidden = Linear(f"{name}.hidden", in_dim, hidden, rng, group) if hidden else None
        self.emission = Linear(f"{name}.emission", hidden or in_dim, scheme.num_tags, rng, group)
        self.crf = CrfLayer(f"{name}.crf", scheme.num_tags, group)
        self.allowed = bio_allowed(scheme)

    @property
    def params(self) -> list[Parameter]:
        out = self.hidden.params if self.hidden else []
        return out + self.emission.params + self.crf.params

    def forward(self, H: np.ndarray):
        cache = {}
        if self.hidden is not None:
            Z, cache["hidden"] = self.hidden.forward(H)
            H, cache["relu"] = relu(Z)
        em, cache["emission"] = self.emission.forward(H)
        return em, cache

    def backward(self, d_em: np.ndarray, cache) -> np.ndarray:
        d = self.emission.backward(d_em, cache["emission"])
        if self.hidden is not None:
            d = self.hidden.backward(relu_backward(d, cache["relu"]), cache["hidden"])
        return d


@dataclass
class PredictOutput:
    labels: dict[str, list[list[str]]]
    scores: dict[str, list[np.ndarray]] = field(default_factory=dict)


@dataclass
class LossResult:
    loss: float
    task_losses: dict[str, float]
    ce_input: np.ndarray | None = None
    mask_y: np.ndarray | None = None


class ModelGraph:
    """A built architecture plus the registry of its parameters."""

    def __init__(self, kind: str, schemes: Mapping[str, LabelScheme], vocab: Vocab, dims: Dims,
                 gumbel: anon.GumbelConfig | None = None, task: str | None = None):
        self.kind = kind
        self.schemes = dict(schemes)
        self.vocab = vocab
        self.dims = dims
        self.gumbel = gumbel or anon.GumbelConfig()
        self.task = task
        self.embed: EmbeddingStack | None = None
        self.encoders: dict[str, BiLstm] = {}
        self.heads: dict[str, TaskHead] = {}
        self.phi: Parameter | None = None
        self.stages: dict[str, ModelGraph] = {}
        self.pretrained_words: list[str] | None = None
        self.unk_prob = 0.0

    @property
    def tasks(self) -> list[str]:
        if self.kind == "single":
            return [self.task]
        return [ANON, CE]

    @property
    def primary_task(self) -> str:
        return self.task if self.kind == "single" else CE

    @property
    def params(self) -> list[Parameter]:
        if self.kind == "pipeline":
            return [p for stage in self.stages.values() for p in stage.params]
        out = list(self.embed.params)
        for enc in self.encoders.values():
            out += enc.params
        for head in self.heads.values():
            out += head.params
        if self.phi is not None:
            out.append(self.phi)
        return out

    def param_groups(self) -> dict[str, list[Parameter]]:
        groups: dict[str, list[Parameter]] = {}
        for p in self.params:
            if p.trainable:
                groups.setdefault(p.group, []).append(p)
        return groups

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params]

    def restore(self, state: Sequence[np.ndarray]) -> None:
        for p, v in zip(self.params, state):
            p.value[...] = v

    def loss(self, sentences: Sequence[Sentence], weights: Mapping[str, float] | None = None,
             streams: Mapping[str, np.random.Generator] | None = None, backward: bool = True,
             tau: float | None = None) -> LossResult:
        if self.kind == "single":
            return forward_loss_single(self, sentences, backward=backward, streams=streams)
        if self.kind == "multitask":
            return forward_loss_multitask(self, sentences, weights, backward=backward, streams=streams)
        if self.kind == "stacked":
            return forward_loss_stacked(self, sentences, weights, backward=backward, streams=streams, tau=tau)
        raise ValueError("pipeline stages are trained separately")

    def predict(self, sentences: Sequence[Sentence], constrained: bool = True) -> PredictOutput:
        return predict(self, sentences, constrained)


def build(kind: str, schemes: Mapping[str, LabelScheme], vocab: Vocab, dims: Dims | None = None,
          seed: int = 0, task: str | None = None, gumbel: anon.GumbelConfig | None = None,
          pretrained: tuple[Sequence[str], np.ndarray] | None = None) -> ModelGraph:
    """Construct a graph with deterministic initialization from ``seed``."""
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    dims = dims or Dims()
    if kind == "single":
        if task not in schemes:
            raise ValueError(f"single-task model needs a task among {sorted(schemes)}")
    elif ANON not in schemes or CE not in schemes:
        raise ValueError(f"{kind} model needs both {ANON} and {CE} schemes")
    if vocab.phi_classes and ANON in schemes and tuple(vocab.phi_classes) != schemes[ANON].classes:
        raise ValueError("vocabulary placeholders do not match the ANON classes")

    graph = ModelGraph(kind, schemes, vocab, dims, gumbel, task if kind == "single" else None)
    if kind == "pipeline":
        for i, t in enumerate((ANON, CE)):
            stage = build("single", schemes, vocab, dims, seed + i, t, pretrained=pretrained)
            for p in stage.params:
                p.name = f"{t.lower()}.{p.name}"
            graph.stages[t] = stage
        return graph

    rng = rng_stream(seed, "init")
    shared = "main" if kind == "single" else "anon"
    sources = [TrainableTable("embed.trainable", vocab, dims.emb_dim, rng, shared)]
    if pretrained is not None:
        words, vectors = pretrained
        sources.append(FrozenTable("embed.pretrained", words, vectors))
        graph.pretrained_words = list(words)
    graph.embed = EmbeddingStack(sources)
    D = graph.embed.total_dim

    if kind == "single":
        graph.encoders["main"] = BiLstm("encoder", D, dims.hidden, rng, shared)
        graph.heads[task] = TaskHead(f"head.{task}", 2 * dims.hidden, schemes[task], rng, None, shared)
    elif kind == "multitask":
        graph.encoders["shared"] = BiLstm("encoder.shared", D, dims.hidden, rng, "anon")
        graph.heads[ANON] = TaskHead("head.ANON", 2 * dims.hidden, schemes[ANON], rng, dims.task_hidden, "anon")
        graph.heads[CE] = TaskHead("head.CE", 2 * dims.hidden, schemes[CE], rng, dims.task_hidden, "ce")
    else:
        graph.encoders[ANON] = BiLstm("encoder.ANON", D, dims.hidden, rng, "anon")
        graph.heads[ANON] = TaskHead("head.ANON", 2 * dims.hidden, schemes[ANON], rng, None, "anon")
        graph.encoders[CE] = BiLstm("encoder.CE", D, dims.hidden, rng, "ce")
        graph.heads[CE] = TaskHead("head.CE", 2 * dims.hidden, schemes[CE], rng, None, "ce")
        n_cls = len(schemes[ANON].classes)
        graph.phi = Parameter("phi_table", rng.uniform(-np.sqrt(1.0 / D), np.sqrt(1.0 / D), (n_cls, D)), group="ce")
        graph.class_map = anon.tag_class_matrix(schemes[ANON].tag_classes(), n_cls)

    names = [p.name for p in graph.params]
    if len(set(names)) != len(names):
        raise AssertionError("parameter registered twice")
    return graph


def _lengths(sentences: Sequence[Sentence]) -> np.ndarray:
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    if len(lengths) == 0 or lengths.min() < 1:
        raise ValueError("every sentence in a batch needs at least one token")
    return lengths


def _gold(sentences: Sequence[Sentence], scheme: LabelScheme) -> np.ndarray:
    T = max(len(s) for s in sentences)
    out = np.zeros((len(sentences), T), dtype=np.int64)
    for b, s in enumerate(sentences):
        if scheme.task_name not in s.labels:
            raise ValueError(f"sentence lacks {scheme.task_name} labels")
        out[b, :len(s)] = scheme.encode(s.labels[scheme.task_name])
    return out


def _embed(graph: ModelGraph, sentences, streams):
    train = streams is not None
    E, cache = graph.embed.forward([s.tokens for s in sentences], unk_prob=graph.unk_prob if train else 0.0,
                                   rng=streams.get("unk") if train else None)
    return E, cache


def _encoder_input(graph, X, streams):
    return dropout(X, graph.dims.dropout, streams.get("dropout") if streams else None)


def forward_loss_single(graph: ModelGraph, sentences: Sequence[Sentence], task: str | None = None,
                        backward: bool = True, streams=None) -> LossResult:
    """Embed, encode, project and score one task with the CRF NLL."""
    task = task or graph.task
    if graph.kind == "pipeline":
        return forward_loss_single(graph.stages[task], sentences, task, backward, streams)
    lengths = _lengths(sentences)
    B = len(sentences)
    head = graph.heads[task]
    enc = graph.encoders["main"] if graph.kind == "single" else graph.encoders.get("shared", graph.encoders.get(task))
    y = _gold(sentences, head.scheme)
    E, ecache = _embed(graph, sentences, streams)
    X, keep = _encoder_input(graph, E, streams)
    H, hcache = enc.forward(X, lengths)
    em, head_cache = head.forward(H)
    nll, d_em = head.crf.nll(em, lengths, y, weight=1.0 / B if backward else 0.0)
    if backward:
        dH = head.backward(d_em / B, head_cache)
        dX = enc.backward(dH, hcache)
        graph.embed.backward(dropout_backward(dX, keep), ecache)
    loss = float(nll.mean())
    return LossResult(loss, {task: loss})


def _weights(weights):
    w = {ANON: 1.0, CE: 1.0}
    if weights:
        w.update(weights)
    return w


def forward_loss_multitask(graph: ModelGraph, sentences: Sequence[Sentence], weights=None,
                           backward: bool = True, streams=None) -> LossResult:
    """Shared embedding + BiLSTM, two ReLU heads; loss is the weighted NLL sum."""
    w = _weights(weights)
    lengths = _lengths(sentences)
    B = len(sentences)
    E, ecache = _embed(graph, sentences, streams)
    X, keep = _encoder_input(graph, E, streams)
    enc = graph.encoders["shared"]
    H, hcache = enc.forward(X, lengths)
    dH = np.zeros_like(H)
    task_losses = {}
    total = np.zeros(B)
    for task in (ANON, CE):
        if w[task] == 0.0:
            continue
        head = graph.heads[task]
        em, cache = head.forward(H)
        nll, d_em = head.crf.nll(em, lengths, _gold(sentences, head.scheme),
                                 weight=w[task] / B if backward else 0.0)
        task_losses[task] = float(nll.mean())
        total += w[task] * nll
        if backward:
            dH += head.backward(d_em * (w[task] / B), cache)
    if backward:
        graph.embed.backward(dropout_backward(enc.backward(dH, hcache), keep), ecache)
    return LossResult(float(total.mean()), task_losses)


def forward_loss_stacked(graph: ModelGraph, sentences: Sequence[Sentence], weights=None,
                         backward: bool = True, streams=None, noise: np.ndarray | None = None,
                         mask_override: str | np.ndarray | None = None, tau: float | None = None,
                         hard: bool | None = None) -> LossResult:
    """ANON branch on raw embeddings; CE branch only on masked embeddings.

    ``mask_override="gold"`` (or an explicit ``(B, T, K)`` distribution)
    replaces the Gumbel sample that drives the mask, cutting the gradient
    path from the CE loss into the ANON branch.
    """
    w = _weights(weights)
    cfg = graph.gumbel
    tau = cfg.tau if tau is None else tau
    hard = cfg.hard if hard is None else hard
    lengths = _lengths(sentences)
    B = len(sentences)
    mask = np.arange(lengths.max())[None, :] < lengths[:, None]
    s_anon = graph.schemes[ANON]
    E, ecache = _embed(graph, sentences, streams)

    Xa, keep_a = _encoder_input(graph, E, streams)
    enc_a, head_a = graph.encoders[ANON], graph.heads[ANON]
    Ha, hcache_a = enc_a.forward(Xa, lengths)
    em_a, cache_a = head_a.forward(Ha)
    nll_a, d_em_a_crf = head_a.crf.nll(em_a, lengths, _gold(sentences, s_anon),
                                       weight=w[ANON] / B if backward else 0.0)
    task_losses = {ANON: float(nll_a.mean())}
    total = w[ANON] * nll_a
    d_em_a = d_em_a_crf * (w[ANON] / B)
    dE = np.zeros_like(E)
    ce_input = y = None

    if w[CE] != 0.0:
        through = mask_override is None
        if mask_override is None:
            if cfg.source == "marginals":
                logits = log_marginals(em_a, lengths, head_a.crf.transitions.value)
                through = False
            else:
                logits = em_a
            if noise is None:
                rng = streams.get(cfg.stream) if streams else None
                noise = anon.sample_gumbel(rng, logits.shape) if rng is not None else np.zeros(logits.shape)
            y_soft = anon.gumbel_softmax(logits, tau, noise)
            y = anon.hard_sample(y_soft) if hard else y_soft
        elif isinstance(mask_override, str) and mask_override == "gold":
            gold = _gold(sentences, s_anon)
            y = np.zeros(em_a.shape)
            np.put_along_axis(y, gold[..., None], 1.0, axis=2)
        else:
            y = np.asarray(mask_override, dtype=float)
        M, mcache = anon.masked_embed(E, y, graph.phi.value, graph.class_map)
        M = M * mask[..., None]
        ce_input = M
        Xc, keep_c = _encoder_input(graph, M, streams)
        enc_c, head_c = graph.encoders[CE], graph.heads[CE]
        Hc, hcache_c = enc_c.forward(Xc, lengths)
        em_c, cache_c = head_c.forward(Hc)
        nll_c, d_em_c = head_c.crf.nll(em_c, lengths, _gold(sentences, graph.schemes[CE]),
                                       weight=w[CE] / B if backward else 0.0)
        task_losses[CE] = float(nll_c.mean())
        total = total + w[CE] * nll_c
        if backward:
            dM = dropout_backward(enc_c.backward(head_c.backward(d_em_c * (w[CE] / B), cache_c), hcache_c), keep_c)
            dM = dM * mask[..., None]
            d_orig, d_y, d_phi = anon.masked_embed_backward(dM, mcache, graph.phi.value, graph.class_map)
            graph.phi.grad += d_phi
            dE += d_orig
            if through:
                # Straight-through: the one-hot's gradient is handed to the soft sample
                d_em_a = d_em_a + anon.gumbel_softmax_backward(d_y, y_soft, tau) * mask[..., None]

    if backward:
        dXa = enc_a.backward(head_a.backward(d_em_a, cache_a), hcache_a)
        dE += dropout_backward(dXa, keep_a)
        graph.embed.backward(dE, ecache)
    return LossResult(float(total.mean()), task_losses, ce_input=ce_input, mask_y=y)


def _decode(head: TaskHead, em, lengths, constrained: bool) -> list[list[str]]:
    paths = head.crf.decode(em, lengths, head.allowed if constrained else None)
    return [head.scheme.decode(p) for p in paths]


def _predict_batch(graph: ModelGraph, sentences: Sequence[Sentence], constrained: bool):
    lengths = _lengths(sentences)
    E, _ = graph.embed.forward([s.tokens for s in sentences])
    out: dict[str, list[list[str]]] = {}
    if graph.kind == "single":
        H, _ = graph.encoders["main"].forward(E, lengths)
        em, _ = graph.heads[graph.task].forward(H)
        out[graph.task] = _decode(graph.heads[graph.task], em, lengths, constrained)
    elif graph.kind == "multitask":
        H, _ = graph.encoders["shared"].forward(E, lengths)
        for task in (ANON, CE):
            em, _ = graph.heads[task].forward(H)
            out[task] = _decode(graph.heads[task], em, lengths, constrained)
    else:
        head_a = graph.heads[ANON]
        Ha, _ = graph.encoders[ANON].forward(E, lengths)
        em_a, _ = head_a.forward(Ha)
        paths = head_a.crf.decode(em_a, lengths, head_a.allowed if constrained else None)
        y = np.zeros(em_a.shape)
        for b, p in enumerate(paths):
            y[b, np.arange(len(p)), p] = 1.0
        mask = np.arange(lengths.max())[None, :] < lengths[:, None]
        M, _ = anon.masked_embed(E, y, graph.phi.value, graph.class_map)
        Hc, _ = graph.encoders[CE].forward(M * mask[..., None], lengths)
        em_c, _ = graph.heads[CE].forward(Hc)
        out[ANON] = [head_a.scheme.decode(p) for p in paths]
        out[CE] = _decode(graph.heads[CE], em_c, lengths, constrained)
    return out


def predict(graph: ModelGraph, sentences: Sequence[Sentence], constrained: bool = True,
            batch_size: int = 64) -> PredictOutput:
    """Viterbi labels per task; deterministic, no sampling."""
    if graph.kind == "pipeline":
        return predict_pipeline(graph, sentences, constrained)
    labels: dict[str, list[list[str]]] = {t: [[] for _ in sentences] for t in graph.tasks}
    order = [i for i, s in enumerate(sentences) if len(s) > 0]
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        out = _predict_batch(graph, [sentences[i] for i in idx], constrained)
        for task, seqs in out.items():
            for i, seq in zip(idx, seqs):
                labels[task][i] = seq
    return PredictOutput(labels)


def anonymize_with(labels: Sequence[Sequence[str]], sentences: Sequence[Sentence]) -> list[Sentence]:
    return [anon.substitute_placeholders(s, l) for s, l in zip(sentences, labels)]


def predict_pipeline(graph: ModelGraph, sentences: Sequence[Sentence], constrained: bool = True) -> PredictOutput:
    """ANON tagger, placeholder substitution, then CE on the substituted text.

    CE labels are mapped back onto the original tokens.
    """
    anon_labels = predict(graph.stages[ANON], sentences, constrained).labels[ANON]
    plain = [Sentence(s.tokens) for s in sentences]
    substituted = anonymize_with(anon_labels, plain)
    ce_sub = predict(graph.stages[CE], substituted, constrained).labels[CE]
    ce = [anon.expand_labels(l, anon.substitution_alignment(a)) for l, a in zip(ce_sub, anon_labels)]
    return PredictOutput({ANON: anon_labels, CE: ce})


def manifest(graph: ModelGraph) -> dict:
    return {
        "format": "deidjoint-model",
        "version": 1,
        "kind": graph.kind,
        "task": graph.task,
        "schemes": {t: list(s.classes) for t, s in graph.schemes.items()},
        "dims": asdict(graph.dims),
        "gumbel": asdict(graph.gumbel),
        "vocab": graph.vocab.to_dict(),
        "pretrained_words": graph.pretrained_words,
        "params": [[p.name, list(p.shape)] for p in graph.params],
    }


def save_model(graph: ModelGraph, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, CHECKPOINT_FILE), "wb") as fh:
        fh.write(dumps_checkpoint(graph.params))
    with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(manifest(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(directory) -> ModelGraph:
    with open(os.path.join(directory, MANIFEST_FILE), encoding="utf-8") as fh:
        m = json.load(fh)
    if m.get("format") != "deidjoint-model":
        raise ValueError("not a deidjoint model manifest")
    schemes = {t: LabelScheme(t, tuple(c)) for t, c in m["schemes"].items()}
    pretrained = None
    if m.get("pretrained_words"):
        shape = dict(m["params"]).get("embed.pretrained.table") or \
            dict(m["params"]).get("anon.embed.pretrained.table")
        pretrained = (m["pretrained_words"], np.zeros((len(m["pretrained_words"]), shape[1])))
    graph = build(m["kind"], schemes, Vocab.from_dict(m["vocab"]), Dims(**m["dims"]), 0, m["task"],
                  anon.GumbelConfig(**m["gumbel"]), pretrained)
    with open(os.path.join(directory, CHECKPOINT_FILE), "rb") as fh:
        load_into(graph.params, fh.read())
    return graph

