import datetime as dt

import numpy as np
import pytest

from deepclaim import ingest, synth
from deepclaim.featurize import ClaimVectorizer
from deepclaim.model import ModelConfig, Targets, init_params
from deepclaim.train import TrainConfig, train


def make_claim(**kw) -> ingest.ClaimRecord:
    base = dict(
        patient_control_number="PCN1",
        payer_id="PY01",
        payer_state="CA",
        subscriber_gender="F",
        relationship_code="18",
        subscriber_age=40,
        patient_age=34,
        service_start_date=dt.date(2019, 6, 1),
        service_end_date=dt.date(2019, 6, 4),
        submission_date=dt.date(2019, 6, 3),
        total_charge=123456,
        procedures=("A", "A", "B"),
        diagnoses=("D1",),
    )
    base.update(kw)
    return ingest.ClaimRecord(**base)


def random_targets(rng, n, k1=3, k2=4) -> Targets:
    y0 = rng.integers(0, 2, n).astype(float)
    y1 = rng.dirichlet(np.ones(k1), n)
    y2 = rng.dirichlet(np.ones(k2), n)
    y3 = rng.integers(0, 30, n).astype(float)
    return Targets(y0, y1, y2, y3)


@pytest.fixture
def claim_factory():
    return make_claim


@pytest.fixture(scope="session")
def small_corpus():
    cfg = synth.SynthConfig(n_claims=600, seed=3)
    corpus = synth.generate(cfg)
    denial = ingest.parse_denial_set(corpus.denial_set_text())
    result = ingest.join_and_label(corpus.claims, corpus.remits, denial)
    return corpus, denial, result.labeled


@pytest.fixture(scope="session")
def small_model(small_corpus):
    """A briefly trained DeepClaim2 with narrow layers, plus its inputs."""
    _, _, labeled = small_corpus
    vec = ClaimVectorizer(5, 5, 5).fit([l.claim for l in labeled])
    X = vec.transform([l.claim for l in labeled])
    y = Targets.from_vectors([l.target for l in labeled])
    cfg = ModelConfig.for_variant(
        "deepclaim2", segments=vec.segments_, n_claim_codes=y.y1.shape[1], n_service_codes=y.y2.shape[1],
        context_dim=12, embed_dim=10,
    )
    result = train(X, y, cfg, TrainConfig(epochs=2, batch_size=64))
    return vec, X, y, cfg, result.params


@pytest.fixture
def tiny_config():
    return ModelConfig.for_variant("deepclaim2", segments=(4, 5, 6), n_claim_codes=3, n_service_codes=4,
                                   context_dim=6, embed_dim=5, seed=1)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config)
