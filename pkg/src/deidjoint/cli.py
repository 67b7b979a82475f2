"""Command-line entry point.

Exit codes: 0 success, 1 data or configuration error, 2 I/O error,
3 numerical failure during training.

Configuration precedence, lowest first: built-in defaults, the ``--config``
file, ``--set section.key=value`` flags, then dedicated flags like ``--seed``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Sequence

from . import anonymize as anon
from .config import ConfigError, RunConfig, describe_defaults, parse_config
from .corpus import (ANON, CE, DOCSTART, CorpusError, Document, Sentence, bio_to_spans,
                     infer_schemes, parse_conll, read_tokens, sentences_of, write_conll)
from .embeddings import Vocab, load_pretrained
from .evaluation import DEFAULT_PERMUTATIONS, exact_f1, paired_permutation_test
from .experiment import run_matrix, train_pipeline
from .models import KINDS, build, load_model, predict, save_model
from .neural import NumericalError
from .synthgen import default_spec, generate, load_spec
from .training import f1_evaluator, make_dev_split, train

EXIT_OK, EXIT_DATA, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
HISTORY_FILE = "history.jsonl"


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _columns(spec: str | None) -> list[str] | None:
    if spec is None:
        return None
    return [c.strip() for c in spec.split(",") if c.strip()]


def _label_column_count(text: str) -> int:
    for line in text.split("\n"):
        if line.strip() and not line.startswith(DOCSTART):
            return line.count("\t")
    return 0


def _resolve_columns(text: str, given: list[str] | None, single: str | None = None) -> list[str]:
    """Explicit columns win; otherwise guess from the first token line."""
    if given is not None:
        return given
    n = _label_column_count(text)
    if n == 0:
        return []
    if n == 2:
        return [ANON, CE]
    if n == 1 and single is not None:
        return [single]
    raise CorpusError(f"cannot infer label columns for {n} label column(s); pass --columns")


def _load(texts: Sequence[str], columns: list[str]):
    schemes = infer_schemes(texts, columns)
    return {s.task_name: s for s in schemes}, [parse_conll(t, schemes) for t in texts]


def _overrides(pairs: Sequence[str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        out.setdefault(section, {})[name] = value.strip()
    return out


def _run_config(args) -> RunConfig:
    text = _read(args.config) if args.config else ""
    overrides = _overrides(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("train", {})["seed"] = str(args.seed)
    for section in overrides:
        if section not in ("train", "model", "gumbel"):
            raise ConfigError(f"unknown config section {section!r}")
    return parse_config(text, overrides)


def _check_aligned(a: list[Document], b: list[Document], what: str) -> None:
    sa, sb = sentences_of(a), sentences_of(b)
    if len(sa) != len(sb):
        raise CorpusError(f"{what}: {len(sa)} vs {len(sb)} sentences")
    for i, (x, y) in enumerate(zip(sa, sb)):
        if x.tokens != y.tokens:
            raise CorpusError(f"{what}: tokens differ in sentence {i + 1}")


def _relabel(docs: Sequence[Document], labels: dict[str, list[list[str]]]) -> list[Document]:
    out, k = [], 0
    for doc in docs:
        sents = []
        for s in doc.sentences:
            sents.append(Sentence(s.tokens, {t: labels[t][k] for t in labels}))
            k += 1
        out.append(Document(doc.id, sents))
    return out


def cmd_synth(args) -> int:
    if args.sentences < 0:
        raise ValueError("--sentences must be >= 0")
    spec = load_spec(_read(args.spec)) if args.spec else default_spec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    docs = generate(spec, args.sentences)
    _write(args.out, write_conll(docs, [s.task_name for s in spec.schemes()]))
    print(f"wrote {sum(len(d.sentences) for d in docs)} sentences in {len(docs)} documents to {args.out}")
    return EXIT_OK


def _train_once(kind, task, schemes, vocab, train_docs, dev_docs, cfg: RunConfig, seed, pretrained):
    tc = dataclasses.replace(cfg.train, seed=seed)
    if kind == "pipeline":
        graph, hists = train_pipeline(schemes, vocab, train_docs, dev_docs, tc, cfg.model)
        return graph, hists, hists[CE].best_metric
    graph = build(kind, schemes, vocab, cfg.model, seed, task, cfg.gumbel, pretrained)
    graph, hist = train(graph, train_docs, dev_docs, tc)
    return graph, {graph.primary_task: hist}, hist.best_metric


def cmd_train(args) -> int:
    cfg = _run_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.train.seed]
    if args.model == "single" and args.task not in (ANON, CE):
        raise ValueError("--model single needs --task ANON or --task CE")
    texts = [_read(args.train)] + ([_read(args.dev)] if args.dev else [])
    columns = _resolve_columns(texts[0], _columns(args.columns), args.task)
    needed = [args.task] if args.model == "single" else [ANON, CE]
    missing = [t for t in needed if t not in columns]
    if missing:
        raise CorpusError(f"--model {args.model} needs label columns {missing}; have {columns}")
    schemes, parsed = _load(texts, columns)
    train_docs = parsed[0]
    fabricated = not args.dev
    if fabricated:
        train_docs, dev_docs = make_dev_split(train_docs, cfg.train.dev_fraction, cfg.train.seed)
    else:
        dev_docs = parsed[1]
    pretrained = load_pretrained(args.pretrained) if args.pretrained else None
    if pretrained is not None and args.model == "pipeline":
        raise ValueError("--pretrained is not supported for the pipeline model")
    phi = schemes[ANON].classes if ANON in schemes else ()
    vocab = Vocab.build(sentences_of(train_docs), phi)
    split = {"train_docs": len(train_docs), "dev_docs": len(dev_docs),
             "train_sentences": len(sentences_of(train_docs)), "dev_sentences": len(sentences_of(dev_docs)),
             "fabricated": int(fabricated)}

    best = None
    scores = []
    for seed in seeds:
        graph, hists, score = _train_once(args.model, args.task, schemes, vocab, train_docs, dev_docs,
                                          cfg, seed, pretrained)
        scores.append(score)
        if best is None or score > best[2]:
            best = (graph, hists, score, seed)
    graph, hists, _, chosen = best

    os.makedirs(args.out_dir, exist_ok=True)
    save_model(graph, args.out_dir)
    if args.model == "pipeline":
        for task, stage in graph.stages.items():
            save_model(stage, os.path.join(args.out_dir, task.lower()))
    lines = [json.dumps({"type": "run", "model": args.model, "task": args.task, "seeds": seeds,
                         "dev_scores": scores, "chosen_seed": chosen}, sort_keys=True)]
    for stage, h in hists.items():
        h.split = split
        lines.append(json.dumps({"type": "stage", "stage": stage}, sort_keys=True))
        lines.append(h.to_jsonl(cfg.train.record_wall_time).rstrip("\n"))
    _write(os.path.join(args.out_dir, HISTORY_FILE), "\n".join(lines) + "\n")

    if fabricated:
        print(f"fabricated dev split: {split['train_docs']} train / {split['dev_docs']} dev documents")
    if len(seeds) > 1:
        print(f"kept seed {chosen} of {seeds}")
    for task, f1 in sorted(f1_evaluator(graph, sentences_of(dev_docs)).items()):
        print(f"dev {task} F1 {f1:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    graph = load_model(args.model_dir)
    docs = read_tokens(_read(args.input))
    labels = predict(graph, sentences_of(docs)).labels
    _write(args.out, write_conll(_relabel(docs, labels), graph.tasks))
    return EXIT_OK


def cmd_anonymize(args) -> int:
    graph = load_model(args.model_dir)
    tagger = graph.stages[ANON] if graph.kind == "pipeline" else graph
    if ANON not in tagger.tasks:
        raise ValueError(f"model in {args.model_dir} has no {ANON} tagger")
    text = _read(args.input)
    columns = _resolve_columns(text, _columns(args.columns))
    _, (docs,) = _load([text], columns)
    tags = predict(tagger, sentences_of(docs)).labels[ANON]
    out, k = [], 0
    for doc in docs:
        sents = []
        for s in doc.sentences:
            sents.append(anon.substitute_placeholders(s, tags[k]))
            k += 1
        out.append(Document(doc.id, sents))
    _write(args.out, write_conll(out, columns))
    return EXIT_OK


def _gold_and_preds(args, pred_paths: Sequence[str]):
    gold_text = _read(args.gold)
    gold_cols = _resolve_columns(gold_text, _columns(args.columns), args.task)
    if args.task not in gold_cols:
        raise CorpusError(f"gold file has no {args.task} column (columns {gold_cols})")
    _, (gold,) = _load([gold_text], gold_cols)
    preds = []
    for path in pred_paths:
        text = _read(path)
        cols = _resolve_columns(text, _columns(args.pred_columns), args.task)
        if args.task not in cols:
            raise CorpusError(f"{path} has no {args.task} column (columns {cols})")
        _, (docs,) = _load([text], cols)
        _check_aligned(gold, docs, f"{args.gold} vs {path}")
        preds.append(docs)
    return gold, preds


def cmd_eval(args) -> int:
    gold, (pred,) = _gold_and_preds(args, [args.pred])
    g = [bio_to_spans(s.labels[args.task]) for s in sentences_of(gold)]
    p = [bio_to_spans(s.labels[args.task]) for s in sentences_of(pred)]
    print(exact_f1(g, p).report(), end="")
    return EXIT_OK


def _units(docs: Sequence[Document], task: str, unit: str):
    if unit == "document":
        return [[bio_to_spans(s.labels[task]) for s in d.sentences] for d in docs]
    return [[bio_to_spans(s.labels[task])] for s in sentences_of(docs)]


def cmd_signif(args) -> int:
    if args.n < 1:
        raise ValueError("--n must be >= 1")
    gold, (a, b) = _gold_and_preds(args, [args.pred_a, args.pred_b])
    result = paired_permutation_test(_units(gold, args.task, args.unit), _units(a, args.task, args.unit),
                                     _units(b, args.task, args.unit), n=args.n, seed=args.seed,
                                     alpha=args.alpha)
    print(result.report(), end="")
    return EXIT_OK


def cmd_matrix(args) -> int:
    cfg = _run_config(args)
    texts = [_read(args.corpus)] + [_read(p) for p in (args.dev, args.test) if p]
    columns = _resolve_columns(texts[0], _columns(args.columns))
    if ANON not in columns or CE not in columns:
        raise CorpusError(f"the matrix needs gold {ANON} and {CE} columns; have {columns}")
    schemes, parsed = _load(texts, columns)
    docs = parsed.pop(0)
    dev_docs = parsed.pop(0) if args.dev else None
    test_docs = parsed.pop(0) if args.test else None
    seed = cfg.train.seed
    if test_docs is None:
        docs, test_docs = make_dev_split(docs, 0.10, seed, stream="test_split")
    if dev_docs is None:
        docs, dev_docs = make_dev_split(docs, cfg.train.dev_fraction, seed)
    result = run_matrix(schemes, docs, dev_docs, test_docs, cfg.train, cfg.model)
    table = result.table()
    if args.out:
        _write(args.out, table)
    print(table, end="")
    return EXIT_OK


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="sectioned key=value file ([train], [model], [gumbel])")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--seed", type=int, help="overrides [train] seed")


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys and defaults:\n" + describe_defaults()
    parser = argparse.ArgumentParser(prog="deidjoint", description=__doc__, formatter_class=_HelpFormatter,
                                     epilog=epilog)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, formatter_class=_HelpFormatter,
                              epilog=epilog if name in ("train", "matrix") else None)

    p = add("synth", "generate a synthetic two-task corpus")
    p.add_argument("--spec", help="generator spec file; built-in templates when omitted")
    p.add_argument("--sentences", type=int, required=True)
    p.add_argument("--seed", type=int, help="overrides the seed given in --spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = add("train", "train a tagger and write checkpoint, manifest and history")
    p.add_argument("--model", choices=KINDS, default="single")
    p.add_argument("--task", choices=(ANON, CE), default=CE, help="task of a single-task model")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", help="dev corpus; a split of --train is held out when omitted")
    p.add_argument("--columns", help="label column names, comma separated (inferred when omitted)")
    p.add_argument("--pretrained", help="frozen word vectors in '<count> <dim>' text format")
    p.add_argument("--seeds", help="comma-separated seeds; keeps the best-dev run")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (("predict", cmd_predict, "tag a corpus with a trained model"),
                                  ("anonymize", cmd_anonymize, "replace predicted PHI with placeholders")):
        p = add(name, help_text)
        p.add_argument("--model-dir", required=True)
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--out", required=True)
        if name == "anonymize":
            p.add_argument("--columns", help="label columns of the input, kept and realigned")
        p.set_defaults(func=func)

    for name, func, help_text in (("eval", cmd_eval, "exact-match span F1 against gold"),
                                  ("signif", cmd_signif, "paired permutation test of two systems")):
        p = add(name, help_text)
        p.add_argument("--gold", required=True)
        if name == "eval":
            p.add_argument("--pred", required=True)
        else:
            p.add_argument("--pred-a", required=True)
            p.add_argument("--pred-b", required=True)
            p.add_argument("--n", type=int, default=DEFAULT_PERMUTATIONS, help="number of permutations")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--alpha", type=float, default=0.05)
            p.add_argument("--unit", choices=("document", "sentence"), default="document")
        p.add_argument("--task", choices=(ANON, CE), default=CE)
        p.add_argument("--columns", help="gold label columns (inferred when omitted)")
        p.add_argument("--pred-columns", help="prediction label columns (inferred when omitted)")
        p.set_defaults(func=func)

    p = add("matrix", "CE train-on/test-on grid over raw and anonymized text")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dev", help="dev corpus; held out from --corpus when omitted")
    p.add_argument("--test", help="test corpus; 10%% of --corpus documents when omitted")
    p.add_argument("--columns", help="label column names (inferred when omitted)")
    p.add_argument("--out", help="also write the table here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_matrix)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
