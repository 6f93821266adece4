import datetime as dt

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from deepclaim import diffkit as dk
from deepclaim import evaluation as ev
from deepclaim import explain, featurize, ingest

from conftest import make_claim

DENIAL = ingest.DenialCodeSet(("50", "197", "16"))
carcs = st.lists(st.sampled_from(["50", "197", "16", "45", "23", "2"]), max_size=6).map(tuple)
dates = st.dates(dt.date(2019, 1, 1), dt.date(2019, 12, 31))


@given(carcs, carcs, st.integers(0, 60))
def test_targets_are_distributions(claim_level, service_level, delay):
    submitted = dt.date(2019, 3, 1)
    remit = ingest.RemittanceRecord("P", submitted + dt.timedelta(days=delay), claim_level, service_level)
    t = ingest.make_target(remit, submitted, DENIAL)
    assert abs(t.y1.sum() - 1) < 1e-12 and abs(t.y2.sum() - 1) < 1e-12
    assert t.y0 == int(any(c in DENIAL for c in claim_level + service_level))
    assert t.y3 == delay
    assert (t.y1[-1] == 1) == (not any(c in DENIAL for c in claim_level))


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 20), carcs, carcs), min_size=1, max_size=12),
       st.randoms(use_true_random=False))
def test_labeling_ignores_remit_order(rows, rnd):
    base = dt.date(2019, 6, 3)
    claims = [make_claim(patient_control_number=f"C{i}", submission_date=base) for i in range(4)]
    remits = [ingest.RemittanceRecord(f"C{p}", base + dt.timedelta(days=d), a, b) for p, d, a, b in rows]
    first = ingest.join_and_label(claims, remits, DENIAL)
    shuffled = list(remits)
    rnd.shuffle(shuffled)
    again = ingest.join_and_label(claims, shuffled, DENIAL)
    assert first.unmatched == again.unmatched
    assert len(first.labeled) == len(again.labeled)
    for a, b in zip(first.labeled, again.labeled):
        assert a.claim == b.claim and a.remit_date == b.remit_date
        assert np.array_equal(a.target.y1, b.target.y1) and np.array_equal(a.target.y2, b.target.y2)


@given(st.lists(st.sampled_from(["P1", "P2", "P3", "P9"]), min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_vectorize_ignores_procedure_order(procs, rnd):
    vocab = featurize.build_vocab([make_claim(procedures=("P1", "P2", "P3"))], {"c": 1, "d": 1, "o": 1})
    shuffled = list(procs)
    rnd.shuffle(shuffled)
    a = featurize.vectorize(make_claim(procedures=tuple(procs)), vocab).dense()
    b = featurize.vectorize(make_claim(procedures=tuple(shuffled)), vocab).dense()
    np.testing.assert_array_equal(a, b)
    c = a[: vocab.segments[0]]
    assert abs(c.sum() - 1) < 1e-12


@given(st.integers(0, 10**9))
def test_charge_tokens_reconstruct_dollars(cents):
    toks = featurize.quantize_charge(cents)
    digits = [int(t.split("=")[1]) for t in toks]
    assert all(0 <= d <= 9 for d in digits[1:])
    assert digits[0] * 1000 + digits[1] * 100 + digits[2] * 10 + digits[3] == cents // 100


finite = st.floats(-50, 50, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=10), finite)
def test_softmax_sums_to_one_and_ignores_shift(row, shift):
    x = np.array([row])
    y = dk.softmax(dk.Tensor(x)).value
    assert abs(y.sum() - 1) < 1e-12 and (y >= 0).all()
    np.testing.assert_allclose(dk.softmax(dk.Tensor(x + shift)).value, y, rtol=1e-9, atol=1e-15)


@settings(max_examples=200)
@given(st.lists(dates, min_size=3, max_size=60), st.integers(1, 5))
def test_splits_never_leak_and_expand(ds, k):
    try:
        splits = ev.time_series_splits(ds, k)
    except ValueError:
        assert len(set(ds)) < k + 1
        return
    assert len(splits) == k
    prev: set = set()
    for s in splits:
        assert max(ds[i] for i in s.train) < min(ds[i] for i in s.test)
        assert prev <= set(s.train)
        assert not set(s.train) & set(s.test)
        prev = set(s.train)


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=1, max_size=30),
       st.floats(0, 1), st.floats(0, 1))
def test_recall_at_precision_monotone(pairs, t1, t2):
    scores = [s for s, _ in pairs]
    labels = [l for _, l in pairs]
    if not any(labels):
        labels[0] = 1
    curve = ev.pr_curve(scores, labels)
    lo, hi = sorted((t1, t2))
    assert ev.recall_at_precision(curve, lo) >= ev.recall_at_precision(curve, hi)
    assert 0 <= ev.pr_auc(curve) <= 1


# magnitudes stay far from the subnormal range, where scaling by 2**e rounds
magnitudes = st.one_of(st.just(0.0), st.floats(1e-100, 1e3), st.floats(-1e3, -1e-100))


@given(st.lists(magnitudes, min_size=1, max_size=20), st.integers(-10, 10))
def test_normalize_invariant_to_power_of_two_scale(g, e):
    g = np.array(g)
    s = explain.normalize(g)
    np.testing.assert_array_equal(explain.normalize(g * 2.0**e), s)
    if np.abs(g).max() > 0:
        assert s.max() == 1.0
    assert ((s >= 0) & (s <= 1)).all()
