from collections import Counter
from dataclasses import replace

import pytest

from deidjoint.anonymize import substitute_placeholders
from deidjoint.corpus import ANON, CE, Document, bio_to_spans, check_bio, write_conll
from deidjoint.synthgen import TemplateSpec, default_spec, generate, leakage_oracle, load_spec


def test_zero_sentences():
    assert generate(default_spec(), 0) == []


def test_deterministic():
    spec = default_spec(seed=5)
    assert write_conll(generate(spec, 123)) == write_conll(generate(spec, 123))
    assert write_conll(generate(spec, 50)) != write_conll(generate(replace(spec, seed=6), 50))


def test_prefix_stable():
    spec = default_spec(seed=5)
    assert generate(spec, 40) == generate(spec, 45)[:4]


def test_default_spec_shape():
    spec = default_spec()
    assert len(spec.classes(ANON)) == 24
    assert len(spec.classes(CE)) == 3
    assert len(spec.vocabulary()) <= 512


def test_class_coverage_in_1000_sentences():
    spec = default_spec()
    counts = Counter()
    for doc in generate(spec, 1000):
        for s in doc.sentences:
            for task in (ANON, CE):
                check_bio(s.labels[task])
                counts.update(sp.class_name for sp in bio_to_spans(s.labels[task]))
    for cls in spec.classes(ANON) + spec.classes(CE):
        assert counts[cls] >= 20, cls


def test_leakage_oracle_matches_slots():
    spec = default_spec(seed=3)
    lex = spec.phi_lexicons()
    doc = generate(spec, 10)[0]
    expected = [((i, t), sp.class_name) for i, s in enumerate(doc.sentences)
                for sp in bio_to_spans(s.labels[ANON]) for t in range(sp.start, sp.end)]
    assert sorted(leakage_oracle(doc, lex)) == sorted(expected)
    assert expected


def test_leakage_oracle_after_substitution_and_restore():
    spec = default_spec(seed=3)
    lex = spec.phi_lexicons()
    doc = generate(spec, 10)[0]
    clean = Document(doc.id, [substitute_placeholders(s, s.labels[ANON]) for s in doc.sentences])
    assert leakage_oracle(clean, lex) == []
    # Revert one single-token substitution
    i, sent = next((i, s) for i, s in enumerate(doc.sentences)
                   if any(sp.end - sp.start == 1 for sp in bio_to_spans(s.labels[ANON])))
    span = next(sp for sp in bio_to_spans(sent.labels[ANON]) if sp.end - sp.start == 1)
    partial = ["O" if span.start <= j < span.end else t for j, t in enumerate(sent.labels[ANON])]
    restored = substitute_placeholders(sent, partial)
    sents = list(clean.sentences)
    sents[i] = restored
    hits = leakage_oracle(Document(doc.id, sents), lex)
    assert len(hits) == 1
    (si, ti), slot = hits[0]
    assert si == i and slot == span.class_name
    assert restored.tokens[ti] == sent.tokens[span.start]


def test_spec_validation():
    with pytest.raises(ValueError, match="collides"):
        TemplateSpec(["the {A} ran"], {"A": ["the"]}, {"A": ANON})
    with pytest.raises(ValueError, match="appears in lexicons"):
        TemplateSpec(["{A} {B}"], {"A": ["x"], "B": ["x"]}, {"A": ANON, "B": CE})
    with pytest.raises(ValueError, match="unknown slot"):
        TemplateSpec(["{C}"], {"A": ["x"]}, {"A": ANON})
    ok = TemplateSpec(["the {A} ran"], {"A": ["the"]}, {"A": ANON}, allow_filler_overlap=True)
    assert ok.classes(ANON) == ("A",)


def test_load_spec():
    text = """
[generator]
seed = 9
[slots]
PAT = ANON
DRUG = CE
[lexicon]
PAT = Ann Lee | Bob
DRUG = aspirin
[templates]
t1 = {PAT} takes {DRUG} daily
"""
    spec = load_spec(text)
    assert spec.seed == 9 and spec.lexicons["PAT"] == ["Ann Lee", "Bob"]
    s = generate(spec, 1)[0].sentences[0]
    assert s.tokens[-3:] == ("takes", "aspirin", "daily")
    with pytest.raises(ValueError):
        load_spec("[generator]\nseed = 1\n")
