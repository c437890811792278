import numpy as np
import pytest

from dmacos import corpus, toy
from dmacos.model import DMACOS, ModelConfig, encode_sample


def tiny_world(n=4, seed=0, hidden=8, emb=6, type_emb=3, summary_cap=12):
    """A handful of toy samples, their vocabularies and a small random model."""
    samples = [corpus.make_sample(r) for r in toy.toy_corpus(n, seed=seed)]
    bv = corpus.build_vocab([s.body_tokens for s in samples], 5000)
    # drop some words from the summary vocabulary so copying must use extended ids
    sv = corpus.build_vocab([s.name_tokens + s.summary_tokens for s in samples], summary_cap)
    cfg = ModelConfig(len(bv), len(sv), hidden=hidden, body_emb=emb, summary_emb=emb, type_emb=type_emb,
                      body_len=40, summary_len=8, name_len=5)
    model = DMACOS(cfg, seed=seed)
    inputs = [encode_sample(s, bv, sv, cfg) for s in samples]
    return samples, bv, sv, cfg, model, inputs


def perturb(model, scale=0.5, seed=1):
    """Push every parameter away from its small init so gradients are not tiny."""
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.values += rng.normal(0, scale, size=p.values.shape)


@pytest.fixture
def world():
    return tiny_world()


ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str):
    """Remember one acceptance verdict for the end-of-run summary."""
    ACCEPTANCE[criterion] = "criterion %2d: %s  %s" % (criterion, "PASS" if ok else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
