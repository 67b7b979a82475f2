import numpy as np
import pytest

from deidjoint.corpus import ANON, CE, LabelScheme, Sentence
from deidjoint.synthgen import default_spec, generate


@pytest.fixture
def tiny_schemes():
    return {ANON: LabelScheme(ANON, ("PAT", "AGE")), CE: LabelScheme(CE, ("DRUG",))}


@pytest.fixture
def tiny_sentences():
    return [
        Sentence(["Peter", "took", "aspirin"], {ANON: ["B-PAT", "O", "O"], CE: ["O", "O", "B-DRUG"]}),
        Sentence(["aged", "45"], {ANON: ["O", "B-AGE"], CE: ["O", "O"]}),
    ]


@pytest.fixture(scope="session")
def synth_small():
    """300 train / 50 dev sentences from the default generator."""
    spec = default_spec(seed=11)
    docs = generate(spec, 350)
    return spec, docs[:30], docs[30:]


def perturb(params, scale=0.5, seed=0):
    rng = np.random.default_rng(seed)
    for p in params:
        p.value += rng.normal(0.0, scale, p.shape)
