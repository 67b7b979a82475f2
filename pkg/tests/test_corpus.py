import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deidjoint.corpus import (ANON, CE, BIOError, CorpusError, Document, LabelScheme, Sentence, Span,
                              bio_to_spans, infer_schemes, parse_conll, read_tokens, spans_to_bio,
                              split_underscore_tokens, write_conll)
from deidjoint.synthgen import default_spec, generate

SCHEMES = [LabelScheme(ANON, ("PAT", "AGE", "HOSP")), LabelScheme(CE, ("DRUG",))]


def test_label_scheme_tags():
    s = LabelScheme(ANON, ("PAT", "AGE"))
    assert s.tags == ("O", "B-PAT", "I-PAT", "B-AGE", "I-AGE")
    assert s.num_tags == 2 * 2 + 1
    assert s.tag_classes() == [-1, 0, 0, 1, 1]
    assert s.decode(s.encode(["B-AGE", "I-AGE", "O"])) == ["B-AGE", "I-AGE", "O"]


@pytest.mark.parametrize("classes", [("A", "A"), ("",), ("a b",), ("B-X",)])
def test_label_scheme_rejects_bad_classes(classes):
    with pytest.raises(ValueError):
        LabelScheme(ANON, classes)


def test_sentence_invariants():
    with pytest.raises(CorpusError):
        Sentence(["a", "b"], {ANON: ["O"]})
    with pytest.raises(BIOError):
        Sentence(["a"], {ANON: ["I-PAT"]})
    with pytest.raises(BIOError):
        Sentence(["a", "b"], {ANON: ["B-AGE", "I-PAT"]})


def test_parse_minimal():
    docs = parse_conll("Peter\tB-PAT\tO\n", SCHEMES)
    assert len(docs) == 1 and len(docs[0].sentences) == 1
    s = docs[0].sentences[0]
    assert s.tokens == ("Peter",)
    assert s.labels[ANON] == ("B-PAT",) and s.labels[CE] == ("O",)


def test_parse_empty():
    assert parse_conll("", SCHEMES) == []


def test_parse_bio_violation_message():
    with pytest.raises(BIOError, match="BIO violation at line 1: I-PAT without preceding B-PAT"):
        parse_conll("x\tI-PAT\tO\n", SCHEMES)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(CorpusError, match="line 2"):
        parse_conll("a\tO\tO\nb\tO\n", SCHEMES)
    with pytest.raises(CorpusError, match="unknown class 'ZZZ' at line 1"):
        parse_conll("a\tB-ZZZ\tO\n", SCHEMES)
    with pytest.raises(CorpusError, match="duplicate document id"):
        parse_conll("-DOCSTART- d\na\tO\tO\n\n-DOCSTART- d\nb\tO\tO\n", SCHEMES)
    with pytest.raises(CorpusError, match="empty document"):
        parse_conll("-DOCSTART- d\n\n-DOCSTART- e\nb\tO\tO\n", SCHEMES)


def test_parse_documents_and_sentences():
    text = "-DOCSTART- a\nx\tB-PAT\tO\ny\tI-PAT\tO\n\nz\tO\tB-DRUG\n\n-DOCSTART- b\nw\tO\tO\n"
    docs = parse_conll(text, SCHEMES)
    assert [d.id for d in docs] == ["a", "b"]
    assert [len(s) for s in docs[0].sentences] == [2, 1]


def test_bio_to_spans_examples():
    assert bio_to_spans(["B-PAT", "I-PAT", "O"]) == [Span(0, 2, "PAT")]
    assert bio_to_spans(["O", "O"]) == []
    assert bio_to_spans(["B-PAT", "B-AGE", "I-AGE"]) == [Span(0, 1, "PAT"), Span(1, 3, "AGE")]


def test_spans_to_bio_examples():
    assert spans_to_bio([], 3) == ["O", "O", "O"]
    assert spans_to_bio([Span(1, 2, "AGE")], 3) == ["O", "B-AGE", "O"]
    with pytest.raises(ValueError):
        spans_to_bio([Span(0, 2, "A"), Span(1, 3, "B")], 3)


@st.composite
def span_sets(draw):
    length = draw(st.integers(0, 12))
    spans, pos = [], 0
    while pos < length:
        if draw(st.booleans()):
            end = draw(st.integers(pos + 1, length))
            spans.append(Span(pos, end, draw(st.sampled_from(["PAT", "AGE", "HOSP"]))))
            pos = end
        else:
            pos += 1
    return spans, length


@settings(max_examples=1000, deadline=None)
@given(span_sets())
def test_span_round_trip(case):
    spans, length = case
    assert bio_to_spans(spans_to_bio(spans, length)) == spans


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(["O", "B-PAT", "I-PAT", "B-AGE", "I-AGE"]), max_size=10))
def test_bio_round_trip_on_valid_sequences(labels):
    try:
        spans = bio_to_spans(labels)
    except BIOError:
        return
    assert spans_to_bio(spans, len(labels)) == list(labels)


def test_split_underscore_examples():
    s = split_underscore_tokens(Sentence(["Hospital_General"], {ANON: ["B-HOSP"]}))
    assert s.tokens == ("Hospital", "General") and s.labels[ANON] == ("B-HOSP", "I-HOSP")
    s = split_underscore_tokens(Sentence(["a_b"], {ANON: ["O"]}))
    assert s.tokens == ("a", "b") and s.labels[ANON] == ("O", "O")
    s = Sentence(["x"], {ANON: ["B-PAT"]})
    assert split_underscore_tokens(s) == s


def test_split_underscore_dirty_tokens():
    s = split_underscore_tokens(Sentence(["_a__b_", "___"], {ANON: ["B-PAT", "O"]}))
    assert s.tokens == ("a", "b", "___")
    assert s.labels[ANON] == ("B-PAT", "I-PAT", "O")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.text(alphabet="ab_", min_size=1, max_size=6), min_size=1, max_size=6))
def test_split_underscore_idempotent(tokens):
    s = Sentence(tokens, {ANON: ["B-PAT"] + ["I-PAT"] * (len(tokens) - 1)})
    once = split_underscore_tokens(s)
    assert split_underscore_tokens(once) == once


def test_write_round_trip_minimal():
    docs = parse_conll("Peter\tB-PAT\tO\n", SCHEMES)
    assert parse_conll(write_conll(docs), SCHEMES) == docs
    assert write_conll([]) == ""


def test_write_round_trip_synthetic():
    spec = default_spec(seed=4)
    docs = generate(spec, 1000)
    assert len(docs) == 100
    text = write_conll(docs, [ANON, CE])
    assert parse_conll(text, spec.schemes()) == docs


def test_infer_schemes_and_read_tokens():
    text = "a\tB-PAT\tO\nb\tO\tB-DRUG\n\nc\tB-AGE\tB-DRUG\n"
    schemes = infer_schemes([text], [ANON, CE])
    assert schemes[0].classes == ("PAT", "AGE") and schemes[1].classes == ("DRUG",)
    docs = read_tokens(text)
    assert [s.tokens for s in docs[0].sentences] == [("a", "b"), ("c",)]
    assert docs[0].sentences[0].labels == {}


def test_document_needs_sentences():
    with pytest.raises(CorpusError):
        Document("x", [])
