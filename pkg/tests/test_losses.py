import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from motionctx import autodiff as ad
from motionctx.losses import (
    angle_distance,
    combined_loss,
    format_error_table,
    gram_loss,
    gram_matrix,
    mean_angle_error,
    mse_loss,
    parse_error_table,
)


def frames(values):
    return [np.array([v]) for v in values]


def test_gram_identical_sequences_is_zero(rng):
    x = rng.normal(size=(5, 4))
    assert gram_loss(list(x), list(x), x[0], x[0]).item() == 0.0


@pytest.mark.parametrize("pred,want", [((1.0, 1.0), 0.0), ((2.0, 1.0), 5.5)])
def test_gram_hand_values(pred, want):
    # only t=0 contributes; the last frame is excluded and the sum is divided by T=2
    got = gram_loss(frames(pred), frames((1.0, 0.0)), np.array([1.0]), np.array([1.0])).item()
    assert got == want


def test_gram_matrix_structure(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    G = gram_matrix(a, b).data
    c = np.concatenate([a, b])
    npt.assert_array_equal(G, G.T)
    assert np.linalg.matrix_rank(G) <= 1
    npt.assert_allclose(np.trace(G), c @ c, rtol=1e-14)
    npt.assert_array_equal(gram_matrix(-a, -b).data, G)


def test_gram_sign_flip_invariance(rng):
    p, q = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    p0, q0 = rng.normal(size=3), rng.normal(size=3)
    base = gram_loss(list(p), list(q), p0, q0).item()
    assert gram_loss(list(-p), list(q), -p0, q0).item() == pytest.approx(base, rel=1e-14)


@settings(max_examples=30)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
def test_gram_matches_loop(T, D, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.normal(size=(T, D)), rng.normal(size=(T, D))
    p0, q0 = rng.normal(size=D), rng.normal(size=D)
    want = oracles.gram_loss(p.tolist(), q.tolist(), p0.tolist(), q0.tolist())
    assert abs(gram_loss(list(p), list(q), p0, q0).item() - want) <= 1e-10 * max(1.0, abs(want))


def test_gram_batch_is_mean_of_samples(rng):
    p, q, p0 = rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 2, 4)), rng.normal(size=(2, 4))
    batched = gram_loss(list(p), list(q), p0, p0).item()
    single = [gram_loss(list(p[:, b]), list(q[:, b]), p0[b], p0[b]).item() for b in range(2)]
    assert batched == pytest.approx(np.mean(single), rel=1e-14)


def test_gram_length_mismatch():
    with pytest.raises(ad.ShapeError):
        gram_loss(frames((1.0, 2.0)), frames((1.0,)), np.zeros(1), np.zeros(1))


def test_mse_examples():
    assert mse_loss([np.array([1.0, 1.0])], [np.zeros(2)]).item() == 1.0
    x = np.array([0.3, -2.0])
    assert mse_loss([x], [x]).item() == 0.0


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.integers(0, 2**31))
def test_mse_symmetric_and_nonnegative(values, seed):
    a = np.array(values)
    b = np.random.default_rng(seed).normal(size=a.shape)
    ab, ba = mse_loss([a], [b]).item(), mse_loss([b], [a]).item()
    assert ab >= 0 and ab == ba


def test_combined_loss_weights(rng):
    p, q, p0 = list(rng.normal(size=(3, 4))), list(rng.normal(size=(3, 4))), rng.normal(size=4)
    g = gram_loss(p, q, p0, p0).item()
    m = mse_loss(p, q).item()
    assert combined_loss(p, q, p0).item() == g
    assert combined_loss(p, q, p0, 0.0, 1.0).item() == m
    assert combined_loss(p, q, p0, 2.0, 3.0).item() == pytest.approx(2 * g + 3 * m, rel=1e-14)


def test_combined_loss_gradient_fd(rng):
    q, p0 = rng.normal(size=(3, 4)), rng.normal(size=4)

    def f(params):
        pred = [ad.take(ad.reshape(params["p"], (-1,)), 4 * t, 4 * t + 4) for t in range(3)]
        return combined_loss(pred, list(q), p0, 1.0, 0.5)

    assert ad.grad_check(f, {"p": rng.normal(size=(3, 4))}) < 1e-6


# -- angle metric --------------------------------------------------------------

def test_angle_distance_examples():
    assert angle_distance(0.0, 2 * math.pi) == 0.0
    assert angle_distance(0.0, math.pi) == math.pi
    assert angle_distance(0.1, 2 * math.pi - 0.1) == pytest.approx(0.2, abs=1e-15)


angles = st.floats(-20, 20, allow_nan=False)


@given(angles, angles, angles)
def test_angle_distance_is_a_metric_on_the_circle(a, b, c):
    ab = angle_distance(a, b)
    assert 0 <= ab <= math.pi
    assert ab == angle_distance(b, a)
    assert ab <= angle_distance(a, c) + angle_distance(c, b) + 1e-12


@given(angles, st.integers(-3, 3))
def test_angle_distance_period(a, k):
    assert angle_distance(a, a + 2 * math.pi * k) < 1e-12


def test_mean_angle_error_identical_is_zero(rng):
    x = rng.uniform(-2, 2, (4, 6))
    for mode in ("euler", "raw-expmap"):
        assert mean_angle_error(x, x, mode) == {40: 0.0, 80: 0.0, 120: 0.0, 160: 0.0}


@pytest.mark.parametrize("mode", ["euler", "raw-expmap"])
def test_mean_angle_error_matches_loop(mode, rng):
    p, q = rng.uniform(-2, 2, (3, 5, 9)), rng.uniform(-2, 2, (3, 5, 9))
    want = oracles.mean_angle_error(p.tolist(), q.tolist(), mode)
    got = mean_angle_error(p, q, mode)
    assert got.keys() == want.keys()
    for ms in want:
        assert abs(got[ms] - want[ms]) <= 1e-10


def test_raw_mode_ignores_full_turns(rng):
    q = rng.uniform(-2, 2, (3, 6))
    shifted = q + 2 * math.pi * rng.integers(-2, 3, size=q.shape)
    for err in mean_angle_error(shifted, q, "raw-expmap").values():
        assert err < 1e-12


def test_metric_single_joint_hand_value():
    # raw mode, one joint off by (0.3, 0.4, 0): distance 0.5
    got = mean_angle_error(np.array([[0.3, 0.4, 0.0]]), np.zeros((1, 3)), "raw-expmap")
    assert got == {40: pytest.approx(0.5, abs=1e-15)}


def test_metric_rejects_bad_input(rng):
    with pytest.raises(ad.ShapeError):
        mean_angle_error(np.zeros((2, 6)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="mode"):
        mean_angle_error(np.zeros((2, 6)), np.zeros((2, 6)), "quaternion")


def test_error_table_round_trip(rng):
    table = mean_angle_error(rng.uniform(-1, 1, (10, 6)), rng.uniform(-1, 1, (10, 6)))
    text = format_error_table(table)
    assert text.startswith("horizon_ms,error\n40,")
    assert parse_error_table(text) == table
    with pytest.raises(ValueError):
        parse_error_table("a,b\n1,2\n")
