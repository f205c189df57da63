import json
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pemant.errors import MetricDomainError, UndefinedKappaError
from pemant.metrics import (
    MetricsReport,
    PredictionSet,
    acc_within,
    histogram,
    mae,
    qwk,
    rmse,
    smape,
    spearman,
    structural_alignment,
    wasserstein_ordinal,
)

pairs_st = st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), min_size=1, max_size=30)
likert_st = st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=2, max_size=30)


def test_mae_rmse_examples():
    assert mae([(3, 3), (5, 5)]) == rmse([(3, 3), (5, 5)]) == 0
    assert mae([(0, 2), (4, 4)]) == 1.0
    assert rmse([(0, 2), (4, 4)]) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert mae([(3, 7)]) == rmse([(3, 7)]) == 4


def test_smape_examples():
    assert smape([(5, 5)]) == 0
    assert smape([(0, 2)]) == 200.0
    assert smape([(0, 0)]) == 0


def test_acc_examples():
    assert acc_within([(5, 5), (6, 6)], 0) == 1.0
    assert acc_within([(5, 7), (5, 8)], 2) == 0.5


def test_empty_is_domain_error():
    for f in (mae, rmse, smape):
        with pytest.raises(MetricDomainError):
            f([])
    with pytest.raises(MetricDomainError):
        acc_within([], 2)
    with pytest.raises(MetricDomainError):
        PredictionSet.from_pairs([])


def test_prediction_set_validation():
    with pytest.raises(MetricDomainError):
        PredictionSet.from_pairs([("a", 1, 2), ("a", 3, 4)])
    with pytest.raises(MetricDomainError):
        PredictionSet.from_pairs([("a", -1, 2)])
    ps = PredictionSet.from_pairs([("a", 0, 2), ("b", 4, 4)])
    assert mae(ps) == 1.0


@given(pairs_st)
def test_point_metrics_match_oracle(pairs):
    assert abs(mae(pairs) - oracles.mae(pairs)) <= 1e-9
    assert abs(rmse(pairs) - oracles.rmse(pairs)) <= 1e-9
    assert abs(smape(pairs) - oracles.smape(pairs)) <= 1e-9
    for tol in (0, 1, 2):
        assert abs(acc_within(pairs, tol) - oracles.acc_within(pairs, tol)) <= 1e-9
    assert rmse(pairs) >= mae(pairs) - 1e-12


def test_qwk_examples():
    assert qwk([(1, 5), (5, 1)]) == pytest.approx(-1.0, abs=1e-12)
    assert qwk([(1, 1), (2, 2), (5, 5), (3, 3)]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UndefinedKappaError):
        qwk([(3, 3), (3, 3)])


def test_qwk_near_zero_under_independence():
    rng = random.Random(0)
    pairs = [(rng.randint(1, 5), rng.randint(1, 5)) for _ in range(20000)]
    assert abs(qwk(pairs)) < 0.03


@given(likert_st)
def test_qwk_matches_pairwise_oracle(pairs):
    expected = oracles.qwk(pairs)
    if expected is None:
        with pytest.raises(UndefinedKappaError):
            qwk(pairs)
    else:
        assert abs(qwk(pairs) - expected) <= 1e-9
        assert -1 - 1e-9 <= qwk(pairs) <= 1 + 1e-9


def test_wasserstein_examples():
    u = [0.2, 0.2, 0.2, 0.2, 0.2]
    assert wasserstein_ordinal(u, u) == 0
    assert wasserstein_ordinal([1, 0, 0, 0, 0], [0, 0, 0, 0, 1]) == 4.0
    assert wasserstein_ordinal([0.5, 0.5, 0, 0, 0], [0, 0.5, 0.5, 0, 0]) == 1.0
    with pytest.raises(MetricDomainError):
        wasserstein_ordinal([0.5, 0.2, 0, 0, 0], u)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=30), st.lists(st.integers(1, 5), min_size=1, max_size=30))
def test_wasserstein_matches_transport_oracle(a, b):
    u, v = histogram(a), histogram(b)
    w = wasserstein_ordinal(u, v)
    assert abs(w - oracles.emd_greedy(u, v)) <= 1e-9
    assert w == wasserstein_ordinal(v, u)
    assert wasserstein_ordinal(u, u) == 0


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=2, max_size=25))
def test_spearman_matches_rank_oracle(xy):
    xs, ys = [a for a, _ in xy], [b for _, b in xy]
    expected = oracles.spearman(xs, ys)
    got = spearman(xs, ys)
    if expected is None:
        assert math.isnan(got)
    else:
        assert abs(got - expected) <= 1e-9


def _population(rng, n=40):
    age = [rng.randint(18, 90) for _ in range(n)]
    income = [rng.randint(1, 11) for _ in range(n)]
    density = [rng.choice((50, 300, 1500, 7000, 30000)) for _ in range(n)]
    resp = {
        "health": [min(5, max(1, 1 + a // 25 + rng.choice((-1, 0, 1)))) for a in age],
        "price": [min(5, max(1, 1 + i // 3 + rng.choice((-1, 0, 1)))) for i in income],
        "place": [rng.randint(1, 5) for _ in range(n)],
    }
    return resp, {"age": age, "income": income, "density": density}


def test_alignment_identity_and_negation():
    resp, cov = _population(random.Random(1))
    assert structural_alignment(resp, cov, resp, cov) == pytest.approx(1.0)
    flipped = {k: [6 - v for v in vals] for k, vals in resp.items()}
    assert structural_alignment(resp, cov, flipped, cov) == pytest.approx(-1.0)


def test_alignment_needs_three_pairs():
    resp = {"health": [1, 2, 3, 4]}
    cov = {"age": [20, 30, 40, 50], "income": [1, 1, 1, 1]}
    with pytest.raises(MetricDomainError):
        structural_alignment(resp, cov, resp, cov)


@given(st.integers(0, 10 ** 6))
def test_alignment_matches_oracle(seed):
    rng = random.Random(seed)
    obs, cov = _population(rng, rng.randint(6, 30))
    sim, _ = _population(rng, len(cov["age"]))
    expected = oracles.alignment(obs, cov, sim, cov)
    if expected is None:
        with pytest.raises(MetricDomainError):
            structural_alignment(obs, cov, sim, cov)
    else:
        assert abs(structural_alignment(obs, cov, sim, cov) - expected) <= 1e-9


def test_report():
    r = MetricsReport.from_predictions(PredictionSet.from_pairs([("a", 0, 2), ("b", 4, 4)]), {"failed": 1})
    d = json.loads(r.to_json())
    assert d["mae"] == 1.0 and d["n"] == 2 and d["excluded"] == {"failed": 1}
    assert "MAE" in r.to_table()
