import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from puforge import losses
from puforge.errors import ConfigError, DataError, ShapeError
from puforge.nn import forward, grad_check, init_model

finite = st.floats(-50, 50, allow_nan=False)


def loop_sigmoid(z):
    return 1 / (1 + math.exp(-z)) if z >= 0 else math.exp(z) / (1 + math.exp(z))


def loop_upu(sp, su, prior):
    pos = sum(loop_sigmoid(-s) for s in sp) / len(sp)
    neg_u = sum(loop_sigmoid(s) for s in su) / len(su)
    neg_p = sum(loop_sigmoid(s) for s in sp) / len(sp)
    return prior * pos, neg_u - prior * neg_p


# --- surrogate ------------------------------------------------------------------------

def test_surrogate_values():
    assert losses.surrogate(0.0) == 0.5
    assert losses.surrogate(2.3) + losses.surrogate(-2.3) == pytest.approx(1.0, abs=1e-15)
    # 1 / (1 + e^40) = 4.248e-18
    assert losses.surrogate(40.0) < 1e-17
    assert losses.surrogate(40.0) == pytest.approx(4.2483542552915890e-18, rel=1e-12)


def test_surrogate_extremes_do_not_overflow():
    with np.errstate(over="raise"):
        vals = losses.surrogate(np.array([-700.0, 700.0]))
    assert vals[0] == pytest.approx(1.0) and 0 <= vals[1] < 1e-300


@given(finite)
def test_surrogate_symmetry(z):
    assert losses.surrogate(z) + losses.surrogate(-z) == pytest.approx(1.0, abs=1e-12)


@given(finite, finite)
def test_surrogate_decreasing(a, b):
    if a < b:
        assert losses.surrogate(a) >= losses.surrogate(b)


# --- uPU / nnPU ------------------------------------------------------------------------

def test_upu_hand_example():
    risk = losses.upu_risk([0.0], [0.0], 0.5)
    assert risk.total == pytest.approx(0.25 + 0.5 - 0.25)
    assert not risk.correction_clipped


def test_upu_perfect_classifier_has_zero_risk():
    # U holds a prior-sized fraction of positives; scores are perfectly separated
    prior = 0.3
    su = np.array([60.0] * 3 + [-60.0] * 7)
    risk = losses.upu_risk(np.full(4, 60.0), su, prior)
    assert abs(risk.total) < 1e-20


def test_upu_goes_negative_when_unlabeled_pushed_negative():
    # P memorised as positive, all of U (including its positives) pushed negative
    risk = losses.upu_risk(np.full(3, 30.0), np.full(5, -30.0), 0.9)
    assert risk.total == pytest.approx(-0.9, abs=1e-9)


def test_nnpu_equals_upu_when_not_clipped():
    risk = losses.nnpu_risk([0.0], [0.0], 0.5)
    assert risk.total == 0.5 and not risk.correction_clipped


def test_nnpu_clipped_example():
    # correction = l(10) - 0.9 * l(-10) = -0.8999137...
    risk = losses.nnpu_risk([10.0, 10.0], [-10.0], 0.9)
    assert risk.correction_clipped
    assert risk.negative_correction == pytest.approx(-0.89991374404946537, rel=1e-12)
    assert risk.total == risk.positive_term == pytest.approx(4.0858081832190955e-05, rel=1e-12)


def test_nnpu_unclipped_large_scores():
    # P scored very negative: positive term ~ 0.9, correction positive -> no clipping
    risk = losses.nnpu_risk([-10.0, -10.0], [10.0], 0.9)
    assert not risk.correction_clipped
    assert risk.positive_term == pytest.approx(0.89995914191816781, rel=1e-12)
    assert risk.total == pytest.approx(1.8998728859676332, rel=1e-12)


@pytest.mark.parametrize("sp,su,prior,exc", [([], [0.0], 0.5, DataError), ([0.0], [], 0.5, DataError),
                                             ([0.0], [0.0], 0.0, ConfigError), ([0.0], [0.0], 1.0, ConfigError)])
def test_risk_errors(sp, su, prior, exc):
    with pytest.raises(exc):
        losses.nnpu_risk(sp, su, prior)
    with pytest.raises(exc):
        losses.upu_risk(sp, su, prior)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=10), st.lists(finite, min_size=1, max_size=10),
       st.floats(0.01, 0.99))
def test_risk_invariants(sp, su, prior):
    nn = losses.nnpu_risk(sp, su, prior)
    up = losses.upu_risk(sp, su, prior)
    assert nn.total >= nn.positive_term >= 0
    if not nn.correction_clipped:
        assert nn.total == up.total
    else:
        assert nn.negative_correction < 0 and nn.total == nn.positive_term
    rng = np.random.default_rng(len(sp) + len(su))
    perm = losses.nnpu_risk(rng.permutation(sp), rng.permutation(su), prior)
    assert perm.total == pytest.approx(nn.total, abs=1e-12)


def test_risks_match_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        sp, su = rng.normal(0, 3, size=10), rng.normal(0, 3, size=10)
        prior = rng.uniform(0.05, 0.95)
        pos, corr = loop_upu(sp, su, prior)
        assert losses.upu_risk(sp, su, prior).total == pytest.approx(pos + corr, abs=1e-10)
        assert losses.nnpu_risk(sp, su, prior).total == pytest.approx(pos + max(0.0, corr), abs=1e-10)


# --- per-sample, CE, hybrid -------------------------------------------------------------

def test_per_sample_pu():
    assert losses.per_sample_pu(0.0) == 0.5
    assert losses.per_sample_pu(-10.0) == pytest.approx(4.5397868702434395e-05, rel=1e-12)
    assert losses.per_sample_pu(10.0) == pytest.approx(0.99995460213129757, rel=1e-12)


def test_ce_values():
    assert losses.ce_loss(0.0, 1) == pytest.approx(math.log(2))
    assert losses.ce_loss(0.0, -1) == pytest.approx(math.log(2))
    assert losses.ce_loss(5.0, 1) == pytest.approx(0.0067153484891180686, rel=1e-12)
    assert losses.ce_loss(5.0, -1) == pytest.approx(5.0067153484891181, rel=1e-12)
    assert losses.ce_loss(1000.0, -1) == pytest.approx(1000.0)


@given(finite)
def test_ce_label_flip_symmetry(s):
    assert losses.ce_loss(s, 1) == pytest.approx(losses.ce_loss(-s, -1), abs=1e-12)


def test_ce_rejects_bad_label():
    with pytest.raises(DataError):
        losses.ce_loss(0.0, 0)


def test_hybrid_reduces_to_nnpu():
    sp, su = np.array([0.3, -1.0]), np.array([0.5, 2.0, -0.7])
    assert losses.hybrid_loss([], [], sp, su, 0.3) == losses.nnpu_risk(sp, su, 0.3).total


def test_hybrid_example():
    assert losses.hybrid_loss([0.0], [1], [0.0], [0.0], 0.5) == pytest.approx(math.log(2) + 0.5)


def test_hybrid_empty_pool():
    with pytest.raises(DataError):
        losses.hybrid_loss([0.0], [1], [0.0], [], 0.5)


# --- gated MSE and teacher consistency ---------------------------------------------------

def test_gated_identical_students():
    value, records = losses.gated_mse([1.0, -2.0], [1.0, -2.0], [0.3, 0.1], 20.0, trace=True)
    assert value == 0.0
    assert all(r.active and r.mse_term == 0.0 for r in records)


def test_gated_example():
    # probability gap 0.1: 0.5 > 20 * 0.01 -> active, contributes 0.01
    s1 = math.log(0.6 / 0.4)
    s2 = math.log(0.5 / 0.5)
    value, (rec,) = losses.gated_mse([s1], [s2], [0.5], 20.0, trace=True)
    assert rec.active
    assert value == pytest.approx(0.01, abs=1e-12)


def test_gated_closed_gate():
    s1, s2 = math.log(0.6 / 0.4), 0.0
    value, (rec,) = losses.gated_mse([s1], [s2], [0.1], 20.0, trace=True)
    assert not rec.active and value == 0.0


def test_gated_errors():
    with pytest.raises(ConfigError):
        losses.gated_mse([0.0], [0.0], [0.1], 0.0)
    with pytest.raises(ShapeError):
        losses.gated_mse([0.0], [0.0, 1.0], [0.1], 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite, st.floats(0, 1)), min_size=1, max_size=10),
       st.floats(0.1, 50), st.floats(0.1, 50))
def test_gated_symmetry_and_monotonicity(rows, a1, a2):
    s1, s2, pu = (np.array(c) for c in zip(*rows))
    assert losses.gated_mse(s1, s2, pu, a1) == losses.gated_mse(s2, s1, pu, a1)
    lo, hi = sorted((a1, a2))
    _, rec_lo = losses.gated_mse(s1, s2, pu, lo, trace=True)
    _, rec_hi = losses.gated_mse(s1, s2, pu, hi, trace=True)
    active_lo = {r.sample_index for r in rec_lo if r.active}
    active_hi = {r.sample_index for r in rec_hi if r.active}
    assert active_hi <= active_lo
    for r in rec_lo:
        assert r.active == (r.pu_term > lo * r.mse_term)


def test_gated_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        s1, s2 = rng.normal(0, 2, 10), rng.normal(0, 2, 10)
        pu = rng.uniform(0, 0.2, 10)
        alpha = rng.uniform(1, 30)
        expect = 0.0
        for a, b, p in zip(s1, s2, pu):
            m = (loop_sigmoid(a) - loop_sigmoid(b)) ** 2
            if p > alpha * m:
                expect += m
        assert losses.gated_mse(s1, s2, pu, alpha) == pytest.approx(expect / 10, abs=1e-10)


def test_teacher_consistency_values():
    assert losses.teacher_consistency_loss([0.3, -1.0], [0.3, -1.0]) == 0.0
    g = math.log(0.5 / 0.5)
    t = math.log(0.9 / 0.1)
    assert losses.teacher_consistency_loss([t], [g]) == pytest.approx(0.16, abs=1e-12)
    assert losses.teacher_consistency_loss([0.0], [4.0]) == pytest.approx(0.23233729378670888, rel=1e-12)
    with pytest.raises(ShapeError):
        losses.teacher_consistency_loss([0.0], [0.0, 1.0])


def test_teacher_consistency_matches_loop_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        t, s = rng.normal(0, 2, 10), rng.normal(0, 2, 10)
        expect = sum((loop_sigmoid(a) - loop_sigmoid(b)) ** 2 for a, b in zip(t, s)) / 10
        assert losses.teacher_consistency_loss(t, s) == pytest.approx(expect, abs=1e-10)


def test_total_loss():
    assert losses.total_loss([0.0, 0.0, 0.0]) == 0.0
    assert losses.total_loss({"hybrid": 1.19, "student": 0.01, "teacher": 0.16}) == pytest.approx(1.36)


# --- score gradients -----------------------------------------------------------------------

def _fd(fn, s, eps=1e-6):
    out = np.empty_like(s)
    for i in range(s.size):
        up, down = s.copy(), s.copy()
        up[i] += eps
        down[i] -= eps
        out[i] = (fn(up) - fn(down)) / (2 * eps)
    return out


def test_score_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    sp, su = rng.normal(size=4), rng.normal(size=6)
    gp, gu = losses.upu_grad(sp, su, 0.3)
    np.testing.assert_allclose(gp, _fd(lambda v: losses.upu_risk(v, su, 0.3).total, sp), atol=1e-8)
    np.testing.assert_allclose(gu, _fd(lambda v: losses.upu_risk(sp, v, 0.3).total, su), atol=1e-8)
    labels = np.array([1, -1, 1, -1])
    np.testing.assert_allclose(losses.ce_mean_grad(sp, labels), _fd(lambda v: losses.ce_mean(v, labels), sp),
                               atol=1e-8)
    t = rng.normal(size=6)
    np.testing.assert_allclose(losses.teacher_consistency_grad(t, su),
                               _fd(lambda v: losses.teacher_consistency_loss(t, v), su), atol=1e-8)


def test_nnpu_clipped_gradient_is_ascent_on_correction():
    sp, su = np.array([10.0, 9.0]), np.array([-10.0, -8.0])
    assert losses.nnpu_risk(sp, su, 0.9).correction_clipped
    gp, gu = losses.nnpu_grad(sp, su, 0.9)

    def neg_corr(p, u):
        return -losses.upu_risk(p, u, 0.9).negative_correction

    np.testing.assert_allclose(gp, _fd(lambda v: neg_corr(v, su), sp), atol=1e-9)
    np.testing.assert_allclose(gu, _fd(lambda v: neg_corr(sp, v), su), atol=1e-9)


def test_loss_grad_check_through_model():
    rng = np.random.default_rng(2)
    model = init_model([3, 6, 1], seed=1)
    X = rng.normal(size=(8, 3))
    labels = np.where(rng.random(8) > 0.5, 1, -1)

    def loss(s):
        return losses.ce_mean(s, labels), losses.ce_mean_grad(s, labels)

    assert grad_check(model, loss, X) < 1e-4
    s = forward(model, X)
    assert np.all(np.isfinite(s))
