import numpy as np
import pytest

from deepclaim import diffkit as dk
from deepclaim import featurize, ingest, synth
from deepclaim.model import ModelConfig, forward, init_params, total_loss
from deepclaim.train import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    train,
    train_pairs,
    write_trace_csv,
)

from conftest import random_targets


def test_train_config_defaults_and_validation():
    tc = TrainConfig()
    assert (tc.lr, tc.beta1, tc.beta2, tc.eps) == (0.001, 0.9, 0.999, 1e-8)
    for bad in (dict(lr=0), dict(beta1=1.0), dict(beta2=-0.1), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_adam_zero_gradient_is_fixed_point():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(params, {"w": np.zeros(2)}, state, TrainConfig())
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_magnitude_is_lr():
    for g in (3.7, -0.002, 1e4):
        params = {"w": np.array([0.0])}
        adam_step(params, {"w": np.array([g])}, AdamState(), TrainConfig(eps=1e-16))
        assert params["w"][0] == pytest.approx(-np.sign(g) * 0.001, rel=1e-9)


def test_adam_two_steps_closed_form():
    # m1 = 0.1, v1 = 0.001 -> m_hat = v_hat = 1; m2 = 0.19, v2 = 0.001999 -> again 1
    params = {"w": np.array([5.0])}
    state = AdamState()
    for _ in range(2):
        adam_step(params, {"w": np.array([1.0])}, state, TrainConfig())
    assert 5.0 - params["w"][0] == pytest.approx(0.002, abs=1e-6)
    assert state.t == 2
    assert np.all(state.v["w"] >= 0)


def test_adam_missing_gradient():
    with pytest.raises(KeyError):
        adam_step({"a": np.zeros(1), "b": np.zeros(1)}, {"a": np.zeros(1)}, AdamState(), TrainConfig())


def _data(seed=0, n=40):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig.for_variant("deepclaim2", segments=(4, 5, 6), n_claim_codes=3, n_service_codes=4,
                                  context_dim=6, embed_dim=5, seed=seed)
    X = rng.uniform(size=(n, 15))
    return X, random_targets(rng, n), cfg


def test_zero_epochs_returns_initial_params():
    X, y, cfg = _data()
    res = train(X, y, cfg, TrainConfig(epochs=0))
    assert res.trace == []
    init = init_params(cfg)
    for name, arr in init.arrays.items():
        if name != "head3.b":
            np.testing.assert_array_equal(res.params[name], arr)
    assert res.params["head3.b"][0] == np.median(y.y3)


def test_training_is_deterministic():
    X, y, cfg = _data()
    a = train(X, y, cfg, TrainConfig(epochs=3, batch_size=8))
    b = train(X, y, cfg, TrainConfig(epochs=3, batch_size=8))
    assert a.trace == b.trace
    for name in a.params.arrays:
        assert np.array_equal(a.params[name], b.params[name])


def test_different_seed_changes_result():
    X, y, cfg = _data()
    a = train(X, y, cfg, TrainConfig(epochs=2, batch_size=8, seed=0))
    b = train(X, y, cfg, TrainConfig(epochs=2, batch_size=8, seed=1))
    assert a.trace != b.trace


def test_bn_stats_recorded_and_eval_mode():
    X, y, cfg = _data()
    res = train(X, y, cfg, TrainConfig(epochs=1, batch_size=8))
    for st in res.params.bn.values():
        assert st.n_updates == 5 and not st.training
        assert np.all(st.running_var >= 0)


def test_zero_lambdas_disconnect_auxiliary_heads():
    X, y, cfg = _data()
    params = init_params(cfg)
    fwd = forward(params, X[:8], cfg, training=True)
    loss, _ = total_loss(fwd, y.take(np.arange(8)), (0, 0, 0))
    grads = dk.backward(loss, wrt=fwd.params.values())
    for j in (1, 2, 3):
        assert not grads[f"head{j}.W"].any()
    assert grads["head0.W"].any()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_location():
    X, y, cfg = _data()
    params = init_params(cfg)
    params.arrays["head3.W"][:] = 1e308
    with pytest.raises(TrainingError, match="epoch 1, batch 0"):
        train(X, y, cfg, TrainConfig(epochs=1), params=params)


def test_rejects_mismatched_or_empty_data():
    X, y, cfg = _data()
    with pytest.raises(ValueError):
        train(X[:3], y, cfg)
    with pytest.raises(ValueError):
        train_pairs([], cfg)


def test_separable_planted_data_loss_halves():
    corpus = synth.generate(synth.SynthConfig(
        n_claims=200, rules=(synth.PlantedRule(("procedure=P0007",), "50", prevalence=0.3),), seed=4,
    ))
    denial = ingest.parse_denial_set(corpus.denial_set_text())
    labeled = ingest.join_and_label(corpus.claims, corpus.remits, denial).labeled
    vocab = featurize.build_vocab([l.claim for l in labeled], {"procedure": 1, "diagnosis": 1, "other": 1})
    pairs = [(featurize.vectorize(l.claim, vocab), l.target) for l in labeled]
    cfg = ModelConfig.for_variant("deepclaim2", segments=vocab.segments, n_claim_codes=denial.n_classes,
                                  n_service_codes=denial.n_classes)
    res = train_pairs(pairs, cfg, TrainConfig(epochs=20))
    first, last = res.trace[0]["total"], res.trace[-1]["total"]
    assert last <= 0.5 * first, (first, last)
    assert last < first


def test_trace_csv(tmp_path):
    X, y, cfg = _data()
    res = train(X, y, cfg, TrainConfig(epochs=2, batch_size=16))
    write_trace_csv(tmp_path / "t.csv", res.trace)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,bce,cce_claim,cce_service,l1,total"
    assert len(lines) == 3
