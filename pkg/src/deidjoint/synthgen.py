"""Deterministic synthetic clinical notes co-annotated for ANON and CE."""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import ANON, CE, OUTSIDE, Document, LabelScheme, Sentence

SLOT = re.compile(r"^\{([A-Za-z0-9_]+)\}$")
SENTENCES_PER_DOC = 10


@dataclass
class TemplateSpec:
    """Templates are whitespace-tokenized; ``{TYPE}`` tokens are slots.

    ``slot_tasks`` assigns every slot type to ANON or CE.  Lexicon entries are
    whitespace-tokenized surface forms (several tokens allowed).
    """

    templates: list[str]
    lexicons: dict[str, list[str]]
    slot_tasks: dict[str, str]
    seed: int = 0
    allow_filler_overlap: bool = False
    _parsed: list[list[tuple[str, str]]] = field(init=False, repr=False, default_factory=list)

    def __post_init__(self):
        for slot, task in self.slot_tasks.items():
            if task not in (ANON, CE):
                raise ValueError(f"slot {slot}: task must be {ANON} or {CE}, got {task!r}")
            if not self.lexicons.get(slot):
                raise ValueError(f"slot type {slot} has an empty lexicon")
        owner: dict[str, str] = {}
        for slot in self.slot_tasks:
            for entry in self.lexicons[slot]:
                for tok in entry.split():
                    if owner.setdefault(tok, slot) != slot:
                        raise ValueError(f"token {tok!r} appears in lexicons {owner[tok]} and {slot}")
        self._parsed = []
        for tpl in self.templates:
            parsed = []
            for tok in tpl.split():
                m = SLOT.match(tok)
                if m:
                    if m.group(1) not in self.slot_tasks:
                        raise ValueError(f"template references unknown slot type {m.group(1)}")
                    parsed.append(("slot", m.group(1)))
                else:
                    if tok in owner and not self.allow_filler_overlap:
                        raise ValueError(f"filler word {tok!r} collides with lexicon {owner[tok]}")
                    parsed.append(("word", tok))
            self._parsed.append(parsed)
        if not self._parsed:
            raise ValueError("no templates")

    def classes(self, task: str) -> tuple[str, ...]:
        return tuple(s for s, t in self.slot_tasks.items() if t == task)

    def schemes(self) -> list[LabelScheme]:
        return [LabelScheme(ANON, self.classes(ANON)), LabelScheme(CE, self.classes(CE))]

    def phi_lexicons(self) -> dict[str, list[str]]:
        return {s: self.lexicons[s] for s, t in self.slot_tasks.items() if t == ANON}

    def vocabulary(self) -> set[str]:
        words = {tok for parsed in self._parsed for kind, tok in parsed if kind == "word"}
        for slot in self.slot_tasks:
            for entry in self.lexicons[slot]:
                words.update(entry.split())
        return words


def _fill(spec: TemplateSpec, rng: np.random.Generator) -> Sentence:
    parsed = spec._parsed[int(rng.integers(len(spec._parsed)))]
    tokens: list[str] = []
    labels = {ANON: [], CE: []}
    for kind, value in parsed:
        if kind == "word":
            tokens.append(value)
            labels[ANON].append(OUTSIDE)
            labels[CE].append(OUTSIDE)
            continue
        lexicon = spec.lexicons[value]
        surface = lexicon[int(rng.integers(len(lexicon)))].split()
        task = spec.slot_tasks[value]
        other = CE if task == ANON else ANON
        tokens += surface
        labels[task] += [f"B-{value}"] + [f"I-{value}"] * (len(surface) - 1)
        labels[other] += [OUTSIDE] * len(surface)
    return Sentence(tokens, labels)


def generate(spec: TemplateSpec, n_sentences: int) -> list[Document]:
    """Documents of ten sentences each; document ``i`` draws from its own stream."""
    if n_sentences < 0:
        raise ValueError("n_sentences must be >= 0")
    docs = []
    for d, start in enumerate(range(0, n_sentences, SENTENCES_PER_DOC)):
        seq = np.random.SeedSequence(entropy=spec.seed & (2**64 - 1), spawn_key=(d,))
        rng = np.random.Generator(np.random.PCG64(seq))
        count = min(SENTENCES_PER_DOC, n_sentences - start)
        docs.append(Document(f"synth-{d:05d}", [_fill(spec, rng) for _ in range(count)]))
    return docs


def _token_owner(lexicons: Mapping[str, Sequence[str]]) -> dict[str, str]:
    owner = {}
    for slot, entries in lexicons.items():
        for entry in entries:
            for tok in entry.split():
                owner[tok] = slot
    return owner


def leakage_oracle(doc: Document, lexicons: Mapping[str, Sequence[str]]):
    """Every ``((sentence, token), slot_type)`` whose surface form is PHI."""
    owner = _token_owner(lexicons)
    hits = []
    for s, sent in enumerate(doc.sentences):
        for t, tok in enumerate(sent.tokens):
            if tok in owner:
                hits.append(((s, t), owner[tok]))
    return hits


DEFAULT_LEXICONS: dict[str, list[str]] = {
    # PHI classes, after the i2b2 2014 categories
    "PATIENT": ["John Smith", "Maria Garcia", "Mr. Kowalski", "Emma Lindqvist", "Ahmed", "Lucy Chen"],
    "DOCTOR": ["Dr. Patel", "Dr. Okafor", "Dr. Brennan", "Dr. Moreau", "Nakamura"],
    "USERNAME": ["jsmith81", "mgarcia", "nurse_kb", "tlee4"],
    "PROFESSION": ["carpenter", "teacher", "electrician", "accountant", "farmer"],
    "ROOM": ["Room 412", "Bed 7B", "Suite 9", "Room 2209"],
    "DEPARTMENT": ["cardiology", "oncology", "nephrology", "radiology"],
    "HOSPITAL": ["St. Mary's", "Mercy General", "Riverside Clinic", "Hope Medical Center"],
    "ORGANIZATION": ["Acme Corp", "Red Cross", "Bluebird Logistics", "Northwind Ltd"],
    "STREET": ["12 Elm Street", "Baker Road", "44 Harbor Lane", "Pine Avenue"],
    "CITY": ["Boston", "Springfield", "Madrid", "Portland", "Leeds"],
    "STATE": ["Ohio", "Texas", "Vermont", "Oregon"],
    "COUNTRY": ["Canada", "Spain", "Germany", "Brazil"],
    "ZIP": ["02115", "73301", "97201", "10001"],
    "LOCOTHER": ["Lake Tahoe", "Yellowstone", "Central Park", "Alps"],
    "AGE": ["67", "45-year-old", "82", "fifty-three", "19"],
    "DATE": ["March 3", "2019-04-12", "Tuesday", "12/05/2018", "last June"],
    "PHONE": ["555-0199", "(617) 555-0142", "555-0123"],
    "FAX": ["fax-555-0100", "fax-555-7788", "fax-555-3321"],
    "EMAIL": ["jsmith@mail.com", "care@mercy.org", "info@clinic.net"],
    "URL": ["www.mercy.org", "portal.health.com", "www.rivclinic.net"],
    "MEDICALRECORD": ["MRN-4421", "MRN-9034", "MRN-1187"],
    "HEALTHPLAN": ["HP-77120", "HP-30318", "HP-56291"],
    "DEVICE": ["pacemaker-SN883", "pump-ID204", "ICD-77Z"],
    "IDNUM": ["ID-55021", "ID-88310", "ID-10473"],
    # Concept classes, after the i2b2 2010 categories
    "PROBLEM": ["pneumonia", "chest pain", "diabetes", "hypertension", "renal failure", "fever",
                "dyspnea", "atrial fibrillation", "anemia", "sepsis"],
    "TEST": ["radiograph", "ECG", "blood cultures", "CT scan", "troponin level", "MRI",
             "urinalysis", "echocardiography", "lipid panel"],
    "TREATMENT": ["aspirin", "metoprolol", "insulin", "antibiotics", "heparin", "surgery", "dialysis",
                  "lisinopril", "oxygen therapy", "furosemide"],
}

DEFAULT_TEMPLATES: list[str] = [
    "{PATIENT} is a {AGE} patient admitted on {DATE} with {PROBLEM} .",
    "{PATIENT} , aged {AGE} , presented with {PROBLEM} and was started on {TREATMENT} .",
    "{DOCTOR} ordered {TEST} to evaluate {PROBLEM} .",
    "The patient was seen by {DOCTOR} in {DEPARTMENT} on {DATE} .",
    "{TEST} showed {PROBLEM} , so {TREATMENT} was given .",
    "He works as a {PROFESSION} for {ORGANIZATION} in {CITY} .",
    "She is a retired {PROFESSION} living on {STREET} , {CITY} , {STATE} {ZIP} .",
    "Transferred from {HOSPITAL} to {ROOM} for {TREATMENT} .",
    "Contact {PATIENT} at {PHONE} or by email at {EMAIL} .",
    "Records were faxed to {FAX} and posted to {URL} .",
    "Record {MEDICALRECORD} , health plan {HEALTHPLAN} .",
    "Device {DEVICE} was checked by {DOCTOR} .",
    "Patient identifier {IDNUM} , seen on {DATE} .",
    "The patient recently travelled to {COUNTRY} and hiked at {LOCOTHER} .",
    "Login {USERNAME} accessed the chart on {DATE} .",
    "No evidence of {PROBLEM} on {TEST} .",
    "We will continue {TREATMENT} and repeat {TEST} tomorrow .",
    "{TREATMENT} was held because of {PROBLEM} .",
    "History is notable for {PROBLEM} treated with {TREATMENT} .",
    "{AGE} y/o {PROFESSION} from {CITY} with {PROBLEM} .",
    "Follow up with {DOCTOR} at {HOSPITAL} on {DATE} .",
    "Call {PHONE} to reach {DEPARTMENT} .",
    "Admitted to {ROOM} at {HOSPITAL} with {PROBLEM} .",
    "Discharged home to {STREET} in {CITY} on {TREATMENT} .",
    "Insurance {HEALTHPLAN} through {ORGANIZATION} covers {TREATMENT} .",
    "{PATIENT} reports {PROBLEM} since {DATE} .",
    "Results of {TEST} were sent to {EMAIL} .",
    "See {URL} for the {DEPARTMENT} protocol .",
    "Old records from {COUNTRY} list {PROBLEM} .",
    "The family lives near {LOCOTHER} in {STATE} .",
    "Chart {MEDICALRECORD} lists {IDNUM} as secondary identifier .",
    "Interrogation of {DEVICE} was normal on {DATE} .",
    "User {USERNAME} documented {TEST} results .",
    "Fax {FAX} was used to send the {DEPARTMENT} note .",
    "Zip code {ZIP} is outside the service area of {HOSPITAL} .",
    "She denies {PROBLEM} .",
    "Plan : start {TREATMENT} , obtain {TEST} .",
    "{DOCTOR} discussed {TREATMENT} with {PATIENT} .",
    "The patient is {AGE} and has {PROBLEM} .",
    "Vitals were stable after {TREATMENT} .",
]

DEFAULT_SLOT_TASKS: dict[str, str] = {
    **{c: ANON for c in [
        "PATIENT", "DOCTOR", "USERNAME", "PROFESSION", "ROOM", "DEPARTMENT", "HOSPITAL", "ORGANIZATION",
        "STREET", "CITY", "STATE", "COUNTRY", "ZIP", "LOCOTHER", "AGE", "DATE", "PHONE", "FAX", "EMAIL",
        "URL", "MEDICALRECORD", "HEALTHPLAN", "DEVICE", "IDNUM"]},
    "PROBLEM": CE,
    "TEST": CE,
    "TREATMENT": CE,
}


def default_spec(seed: int = 0) -> TemplateSpec:
    return TemplateSpec(
        templates=list(DEFAULT_TEMPLATES),
        lexicons={k: list(v) for k, v in DEFAULT_LEXICONS.items()},
        slot_tasks=dict(DEFAULT_SLOT_TASKS),
        seed=seed,
    )


def load_spec(text: str) -> TemplateSpec:
    """Read a generator spec from sectioned ``key = value`` text.

    Sections: ``[generator]`` (``seed``), ``[slots]`` (``TYPE = ANON|CE``),
    ``[lexicon]`` (``TYPE = entry | entry``), ``[templates]`` (any key,
    one template per value).
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed spec: {exc}") from None
    unknown = set(parser.sections()) - {"generator", "slots", "lexicon", "templates"}
    if unknown:
        raise ValueError(f"unknown spec sections: {sorted(unknown)}")
    gen = dict(parser["generator"]) if parser.has_section("generator") else {}
    bad = set(gen) - {"seed", "allow_filler_overlap"}
    if bad:
        raise ValueError(f"unknown [generator] keys: {sorted(bad)}")
    for sec in ("slots", "lexicon", "templates"):
        if not parser.has_section(sec):
            raise ValueError(f"spec lacks a [{sec}] section")
    lexicons = {k: [e.strip() for e in v.split("|") if e.strip()] for k, v in parser["lexicon"].items()}
    return TemplateSpec(
        templates=[v for v in parser["templates"].values()],
        lexicons=lexicons,
        slot_tasks=dict(parser["slots"]),
        seed=int(gen.get("seed", 0)),
        allow_filler_overlap=gen.get("allow_filler_overlap", "false").lower() in ("1", "true", "yes"),
    )
