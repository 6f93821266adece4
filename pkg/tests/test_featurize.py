import datetime as dt

import numpy as np
import pytest
from sklearn.base import clone

from deepclaim import featurize as fz

from conftest import make_claim


@pytest.mark.parametrize(
    "cents, digits",
    [(123400, (1, 2, 3, 4)), (0, (0, 0, 0, 0)), (1250500, (12, 5, 0, 5)), (123499, (1, 2, 3, 4))],
)
def test_quantize_charge(cents, digits):
    names = ("th", "hu", "te", "on")
    assert fz.quantize_charge(cents) == [f"charge_{n}={d}" for n, d in zip(names, digits)]


def test_quantize_charge_negative():
    with pytest.raises(ValueError):
        fz.quantize_charge(-5)


def test_tokenize_other():
    toks = fz.tokenize_other(make_claim())
    assert "patient_age=34" in toks
    assert {"sub_y=2019", "sub_m=06", "sub_d=03"} <= set(toks)
    assert "svc_dur_days=3" in toks
    assert {"gender=F", "relationship=18", "payer_state=CA", "payer_id=PY01", "subscriber_age=40"} <= set(toks)
    # same claim, same order
    assert toks == fz.tokenize_other(make_claim())


def _claims_with_procedure_count(code, count, filler=600):
    claims = [make_claim(patient_control_number=f"a{i}", procedures=(code,)) for i in range(count)]
    claims += [make_claim(patient_control_number=f"b{i}", procedures=("Z",)) for i in range(filler)]
    return claims


def test_threshold_499_folds_to_oov():
    vocab = fz.build_vocab(_claims_with_procedure_count("X", 499), {"procedure": 500, "diagnosis": 1, "other": 1})
    assert vocab.lookup("procedure", "X") == 0
    assert vocab.lookup("procedure", "Z") != 0


def test_threshold_500_keeps_token():
    vocab = fz.build_vocab(_claims_with_procedure_count("X", 500), {"procedure": 500, "diagnosis": 1, "other": 1})
    assert vocab.lookup("procedure", "X") != 0


def test_threshold_one_keeps_everything(small_corpus):
    _, _, labeled = small_corpus
    claims = [l.claim for l in labeled]
    vocab = fz.build_vocab(claims, {"procedure": 1, "diagnosis": 1, "other": 1})
    for c in claims:
        v = fz.vectorize(c, vocab)
        assert 0 not in v.x_c[0] and 0 not in v.x_d[0] and 0 not in v.x_o[0]


def test_build_vocab_errors():
    with pytest.raises(ValueError):
        fz.build_vocab([])
    with pytest.raises(ValueError):
        fz.build_vocab([make_claim()], {"procedure": 0, "diagnosis": 1, "other": 1})


def test_vocabulary_is_frozen_and_dense():
    vocab = fz.build_vocab([make_claim()], {"procedure": 1, "diagnosis": 1, "other": 1})
    with pytest.raises(RuntimeError):
        vocab.add("procedure", "NEW")
    for cat in fz.CATEGORIES:
        assert sorted(vocab.index[cat].values()) == list(range(vocab.size(cat)))
        assert vocab.tokens[cat][0] == fz.OOV


def test_vectorize_relative_frequency():
    vocab = fz.build_vocab([make_claim()], {"procedure": 1, "diagnosis": 1, "other": 1})
    v = fz.vectorize(make_claim(), vocab)
    xc = v.segment_dense(0)
    assert xc[vocab.lookup("procedure", "A")] == pytest.approx(2 / 3)
    assert xc[vocab.lookup("procedure", "B")] == pytest.approx(1 / 3)


def test_vectorize_empty_diagnoses():
    vocab = fz.build_vocab([make_claim()], {"procedure": 1, "diagnosis": 1, "other": 1})
    v = fz.vectorize(make_claim(diagnoses=()), vocab)
    assert not v.segment_dense(1).any()


def test_unseen_other_token_sets_oov():
    vocab = fz.build_vocab([make_claim()], {"procedure": 1, "diagnosis": 1, "other": 1})
    v = fz.vectorize(make_claim(payer_state="ZZ"), vocab)
    assert v.segment_dense(2)[0] == 1.0


def test_vector_invariants(small_corpus):
    _, _, labeled = small_corpus
    claims = [l.claim for l in labeled]
    vocab = fz.build_vocab(claims, {"procedure": 20, "diagnosis": 20, "other": 5})
    for c in claims[:200]:
        v = fz.vectorize(c, vocab)
        assert v.dim == sum(vocab.segments)
        for k in (0, 1):
            s = v.segment_dense(k).sum()
            assert s == 0 or abs(s - 1) < 1e-9
        assert set(np.unique(v.segment_dense(2))) <= {0.0, 1.0}
        n_tokens = len(c.procedures) + len(c.diagnoses) + len(fz.tokenize_other(c))
        assert v.nnz() <= n_tokens


def test_field_names_parallel_to_indices():
    vocab = fz.build_vocab([make_claim()], {"procedure": 1, "diagnosis": 1, "other": 1})
    names = vocab.field_names()
    assert len(names) == sum(vocab.segments)
    assert names[0] == "c:<OOV>"
    assert names[vocab.segments[0] + vocab.segments[1]] == "o:<OOV>"
    assert "o:patient_age=34" in names


def test_vocab_json_round_trip(tmp_path):
    vocab = fz.build_vocab([make_claim()], {"procedure": 1, "diagnosis": 1, "other": 1})
    vocab.save(tmp_path / "v.json")
    again = fz.Vocabulary.load(tmp_path / "v.json")
    assert again.tokens == vocab.tokens
    assert again.digest() == vocab.digest()
    other = fz.build_vocab([make_claim(payer_id="PY99")], {"procedure": 1, "diagnosis": 1, "other": 1})
    assert other.digest() != vocab.digest()


def test_vectors_jsonl_round_trip(tmp_path, small_corpus):
    _, _, labeled = small_corpus
    claims = [l.claim for l in labeled[:50]]
    vocab = fz.build_vocab(claims, {"procedure": 2, "diagnosis": 2, "other": 2})
    vecs = [fz.vectorize(c, vocab) for c in claims]
    fz.write_vectors_jsonl(tmp_path / "f.jsonl", vecs, ({"pcn": c.patient_control_number} for c in claims))
    back, extras = fz.read_vectors_jsonl(tmp_path / "f.jsonl", vocab)
    assert [e["pcn"] for e in extras] == [c.patient_control_number for c in claims]
    np.testing.assert_array_equal(fz.stack(back).toarray(), fz.stack(vecs).toarray())


def test_stack_matches_dense():
    vocab = fz.build_vocab([make_claim(), make_claim(procedures=("C",))], {"procedure": 1, "diagnosis": 1, "other": 1})
    vecs = [fz.vectorize(make_claim(), vocab), fz.vectorize(make_claim(procedures=("C",)), vocab)]
    np.testing.assert_array_equal(fz.stack(vecs).toarray(), np.vstack([v.dense() for v in vecs]))


def test_claim_vectorizer_sklearn_api(small_corpus):
    _, _, labeled = small_corpus
    claims = [l.claim for l in labeled]
    vec = fz.ClaimVectorizer(procedure_min_count=5, diagnosis_min_count=5, other_min_count=5)
    X = vec.fit_transform(claims)
    assert X.shape == (len(claims), sum(vec.segments_))
    assert len(vec.get_feature_names_out()) == X.shape[1]
    assert clone(vec).get_params() == vec.get_params()
    assert fz.DEFAULT_THRESHOLDS["procedure"] == 500 and fz.DEFAULT_THRESHOLDS["diagnosis"] == 400
    assert fz.ClaimVectorizer().get_params()["procedure_min_count"] == 500


def test_service_dates_and_submission_dates_are_distinct_tokens():
    c = make_claim(service_start_date=dt.date(2019, 6, 3), service_end_date=dt.date(2019, 6, 3))
    toks = fz.tokenize_other(c)
    assert "svc_d=03" in toks and "sub_d=03" in toks
