"""Pipeline orchestration and the train-on / test-on anonymization grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from . import anonymize as anon
from .corpus import ANON, CE, Document, LabelScheme, Sentence, bio_to_spans, sentences_of
from .embeddings import Vocab
from .evaluation import exact_f1
from .models import Dims, ModelGraph, build, predict
from .training import TrainConfig, TrainHistory, train

NON_ANON = "non-anon."
ANON_PRED = "anon-predicted"
ANON_GOLD = "anon-gold"
MATRIX_ROWS = [
    (NON_ANON, NON_ANON),
    (NON_ANON, ANON_PRED),
    (ANON_PRED, NON_ANON),
    (ANON_PRED, ANON_PRED),
    (ANON_GOLD, ANON_PRED),
    (ANON_GOLD, ANON_GOLD),
]


def anonymize_docs(docs: Sequence[Document], labels: Sequence[Sequence[str]] | None = None) -> list[Document]:
    """Substitute placeholders using ``labels`` per sentence, or the gold ANON labels."""
    out = []
    k = 0
    for doc in docs:
        sents = []
        for s in doc.sentences:
            tags = labels[k] if labels is not None else s.labels[ANON]
            sents.append(anon.substitute_placeholders(s, tags))
            k += 1
        out.append(Document(doc.id, sents))
    return out


def ce_f1_original_space(graph: ModelGraph, sentences: Sequence[Sentence], variant: str,
                         anon_labels: Sequence[Sequence[str]] | None = None) -> float:
    """CE F1 against gold on the original tokens, feeding the tagger ``variant`` text."""
    if variant == NON_ANON:
        pred = predict(graph, sentences).labels[CE]
    else:
        tags = [s.labels[ANON] for s in sentences] if variant == ANON_GOLD else anon_labels
        substituted = [anon.substitute_placeholders(Sentence(s.tokens), t) for s, t in zip(sentences, tags)]
        sub_pred = predict(graph, substituted).labels[CE]
        pred = [anon.expand_labels(p, anon.substitution_alignment(t)) for p, t in zip(sub_pred, tags)]
    gold = [bio_to_spans(s.labels[CE]) for s in sentences]
    return exact_f1(gold, [bio_to_spans(p) for p in pred]).f1


def train_single(task: str, schemes: dict[str, LabelScheme], vocab: Vocab, train_docs, dev_docs,
                 config: TrainConfig, dims: Dims, **kwargs):
    graph = build("single", schemes, vocab, dims, config.seed, task)
    return train(graph, train_docs, dev_docs, config, **kwargs)


def train_pipeline(schemes: dict[str, LabelScheme], vocab: Vocab, train_docs, dev_docs,
                   config: TrainConfig, dims: Dims | None = None):
    """Train ANON, substitute its predictions into the CE data, train CE."""
    dims = dims or Dims()
    graph = build("pipeline", schemes, vocab, dims, config.seed)
    _, h_anon = train(graph.stages[ANON], train_docs, dev_docs, config)
    sub_train = _predicted_variant(graph.stages[ANON], train_docs)
    sub_dev = _predicted_variant(graph.stages[ANON], dev_docs)
    _, h_ce = train(graph.stages[CE], sub_train, sub_dev, config)
    return graph, {ANON: h_anon, CE: h_ce}


def _predicted_variant(anon_graph: ModelGraph, docs: Sequence[Document]) -> list[Document]:
    labels = predict(anon_graph, sentences_of(docs)).labels[ANON]
    return anonymize_docs(docs, labels)


@dataclass
class MatrixRow:
    train_on: str
    test_on: str
    dev_f1: float
    test_f1: float


@dataclass
class MatrixResult:
    rows: list[MatrixRow]
    anon_test_f1: float
    histories: dict[str, TrainHistory] = field(default_factory=dict)

    def row(self, train_on: str, test_on: str) -> MatrixRow:
        return next(r for r in self.rows if (r.train_on, r.test_on) == (train_on, test_on))

    def table(self) -> str:
        lines = [f"{'':<5}{'train on':<16}{'test on':<16}{'dev':>8}{'test':>8}"]
        for i, r in enumerate(self.rows, start=1):
            lines.append(f"{f'({i})':<5}{r.train_on:<16}{r.test_on:<16}{r.dev_f1:>8.4f}{r.test_f1:>8.4f}")
        lines.append(f"ANON tagger test F1 {self.anon_test_f1:.4f}")
        return "\n".join(lines) + "\n"


def run_matrix(schemes: dict[str, LabelScheme], train_docs, dev_docs, test_docs,
               config: TrainConfig, dims: Dims | None = None) -> MatrixResult:
    """Six CE train/test combinations over raw, predicted-anonymized and gold-anonymized text."""
    dims = dims or Dims()
    for d in list(train_docs) + list(dev_docs) + list(test_docs):
        for s in d.sentences:
            if ANON not in s.labels or CE not in s.labels:
                raise ValueError(f"document {d.id}: the grid needs gold {ANON} and {CE} labels")
    vocab = Vocab.build(sentences_of(train_docs), schemes[ANON].classes)
    anon_graph, h_anon = train_single(ANON, schemes, vocab, train_docs, dev_docs, config, dims)
    histories = {ANON: h_anon}

    dev_s, test_s = sentences_of(dev_docs), sentences_of(test_docs)
    pred_dev = predict(anon_graph, dev_s).labels[ANON]
    pred_test = predict(anon_graph, test_s).labels[ANON]
    anon_test = exact_f1([bio_to_spans(s.labels[ANON]) for s in test_s], [bio_to_spans(p) for p in pred_test]).f1

    variants = {
        NON_ANON: (train_docs, dev_docs),
        ANON_PRED: (_predicted_variant(anon_graph, train_docs), _predicted_variant(anon_graph, dev_docs)),
        ANON_GOLD: (anonymize_docs(train_docs), anonymize_docs(dev_docs)),
    }
    ce_models = {}
    for name in (NON_ANON, ANON_PRED, ANON_GOLD):
        tr, dv = variants[name]
        ce_models[name], histories[f"{CE}:{name}"] = train_single(CE, schemes, vocab, tr, dv, config, dims)

    rows = []
    for train_on, test_on in MATRIX_ROWS:
        g = ce_models[train_on]
        rows.append(MatrixRow(
            train_on, test_on,
            ce_f1_original_space(g, dev_s, test_on, pred_dev),
            ce_f1_original_space(g, test_s, test_on, pred_test),
        ))
    return MatrixResult(rows, anon_test, histories)
