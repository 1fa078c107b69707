import math

import pytest

from dasdrop.sessionize import sessionize_all
from dasdrop.synth import HazardSpec, bayes_auc, generate


def test_same_seed_same_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    generate(30, 50, seed=5).write(a, tmp_path / "ta.csv")
    generate(30, 50, seed=5).write(b, tmp_path / "tb.csv")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "ta.csv").read_bytes() == (tmp_path / "tb.csv").read_bytes()
    generate(30, 50, seed=6).write(b)
    assert a.read_bytes() != b.read_bytes()


def test_zero_coefficients_give_constant_rate():
    h = HazardSpec(base=-1.5, et_coef=0, sp_coef=0, correct_coef=0)
    data = generate(300, 40, h, seed=2)
    d = [g.dropout for gs in data.truth.values() for g in gs]
    n, p = len(d), 1 / (1 + math.exp(1.5))
    assert all(g.hazard == pytest.approx(p) for gs in data.truth.values() for g in gs)
    # 4-sigma binomial interval
    assert abs(sum(d) / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_hazard_is_clamped():
    assert HazardSpec(base=-100).prob(1, 0, 0) == 0.01
    assert HazardSpec(base=100).prob(1, 0, 0) == 0.99


def test_sessionizer_recovers_planted_sessions():
    data = generate(200, 60, seed=3)
    seqs = sessionize_all(data.records, 3600)
    for uid, seq in seqs.items():
        truth = data.truth[uid]
        assert [x.session_id for x in seq] == [g.session for g in truth]
        assert [x.dropout for x in seq] == [g.dropout for g in truth]


def test_bayes_auc_is_informative():
    data = generate(300, 60, seed=4)
    assert 0.8 < bayes_auc(data.truth) <= 1.0
