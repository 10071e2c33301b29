import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracles
from conftest import sinusoid_sequence
from motionctx.skeleton import (
    DataFormatError,
    MotionSequence,
    NormalizationStats,
    denormalize,
    downsample,
    euler_to_rotmat,
    expmap_to_euler,
    expmap_to_rotmat,
    fit_normalizer,
    load_sequences,
    make_windows,
    normalize,
    read_sequence,
    rotmat_to_euler,
    write_sequence,
)

vec3 = st.tuples(*[st.floats(-6, 6, allow_nan=False)] * 3).map(np.array)


def test_load_csv_shape(tmp_path, rng):
    path = tmp_path / "seq.csv"
    np.savetxt(path, rng.normal(size=(100, 99)), delimiter=",")
    seqs = load_sequences(path)
    assert len(seqs) == 1
    assert len(seqs[0]) == 100 and seqs[0].joints == 33


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert load_sequences(path) == []


def test_round_trip_is_bit_exact(tmp_path, rng):
    seq = MotionSequence(rng.normal(size=(7, 6)) * 10.0 ** rng.integers(-8, 8, size=(7, 6)), fps=25, label="walking", subject="S1")
    write_sequence(seq, tmp_path / "a.csv")
    back = read_sequence(tmp_path / "a.csv")
    assert np.array_equal(back.frames, seq.frames)
    assert (back.fps, back.label, back.subject) == (25, "walking", "S1")


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("# fps=50\n1,2,3\n1,x,3\n")
    with pytest.raises(DataFormatError, match=":3:"):
        load_sequences(path)


def test_inconsistent_width(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1,2,3\n1,2,3,4,5,6\n")
    with pytest.raises(DataFormatError, match="expected 3"):
        load_sequences(path)


def test_directory_with_mixed_widths(tmp_path):
    (tmp_path / "a.csv").write_text("1,2,3\n")
    (tmp_path / "b.csv").write_text("1,2,3,4,5,6\n")
    with pytest.raises(DataFormatError, match="inconsistent"):
        load_sequences(tmp_path)


def test_downsample_examples():
    seq = sinusoid_sequence(50, fps=50)
    assert np.array_equal(downsample(seq, 1).frames, seq.frames)
    half = downsample(seq, 2)
    assert len(half) == 25 and half.fps == 25
    with pytest.raises(ValueError):
        downsample(seq, 0)


@given(st.integers(1, 60), st.integers(1, 7))
def test_downsample_keeps_multiples(length, factor):
    seq = MotionSequence(np.arange(length * 3, dtype=float).reshape(length, 3))
    kept = [i for i in range(length) if i % factor == 0]
    npt.assert_array_equal(downsample(seq, factor).frames, seq.frames[kept])


@given(st.integers(1, 5), st.integers(1, 5))
def test_downsample_composes(a, b):
    seq = MotionSequence(np.arange(90, dtype=float).reshape(30, 3))
    npt.assert_array_equal(downsample(downsample(seq, a), b).frames, downsample(seq, a * b).frames)


def test_normalize_linear_map():
    stats = NormalizationStats(np.array([0.0]), np.array([2.0]))
    npt.assert_array_equal(normalize(np.array([[0.0], [2.0], [1.0]]), stats), [[-1.0], [1.0], [0.0]])


def test_normalize_constant_dimension():
    seq = MotionSequence(np.column_stack([np.full(5, 0.7), np.arange(5.0), np.zeros(5)]))
    stats = fit_normalizer([seq])
    y = normalize(seq.frames, stats)
    npt.assert_array_equal(y[:, 0], 0.0)
    npt.assert_array_equal(denormalize(y, stats)[:, 0], 0.7)


def test_normalized_training_data_attains_bounds(rng):
    seqs = [MotionSequence(rng.normal(size=(20, 6))), MotionSequence(rng.normal(size=(9, 6)))]
    stats = fit_normalizer(seqs)
    y = normalize(np.concatenate([s.frames for s in seqs]), stats)
    assert y.min() >= -1 and y.max() <= 1
    npt.assert_array_equal(y.min(axis=0), -1.0)
    npt.assert_array_equal(y.max(axis=0), 1.0)


def test_normalize_round_trip(rng):
    x = rng.normal(size=(50, 9))
    stats = fit_normalizer([MotionSequence(x)])
    npt.assert_allclose(denormalize(normalize(x, stats), stats), x, rtol=0, atol=1e-12)


def test_window_counts():
    seq = sinusoid_sequence(40)
    assert len(make_windows(seq, 30, 10, 1)) == 1
    assert len(make_windows(sinusoid_sequence(45), 30, 10, 1)) == 45 - 40 + 1
    assert [w.start for w in make_windows(sinusoid_sequence(50), 30, 10, 5)] == [0, 5, 10]
    assert make_windows(sinusoid_sequence(39), 30, 10) == []


@given(st.integers(1, 60), st.integers(1, 8), st.integers(1, 6), st.integers(1, 7))
def test_windows_are_contiguous_and_sorted(length, obs, hor, stride):
    seq = MotionSequence(np.arange(length * 3, dtype=float).reshape(length, 3))
    wins = make_windows(seq, obs, hor, stride)
    expected = [s for s in range(length) if s % stride == 0 and s + obs + hor <= length]
    assert [w.start for w in wins] == expected
    for w in wins:
        npt.assert_array_equal(np.vstack([w.observed, w.target]), seq.frames[w.start : w.start + obs + hor])


def test_expmap_examples():
    npt.assert_array_equal(expmap_to_rotmat([0.0, 0.0, 0.0]), np.eye(3))
    npt.assert_allclose(expmap_to_rotmat([math.pi, 0.0, 0.0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)


@given(vec3)
def test_expmap_is_proper_rotation(v):
    R = expmap_to_rotmat(v)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
    assert abs(np.linalg.det(R) - 1) < 1e-10


@given(vec3)
def test_expmap_matches_independent_rodrigues(v):
    npt.assert_allclose(expmap_to_rotmat(v), oracles.rodrigues(list(v)), rtol=0, atol=1e-12)


@given(vec3)
def test_expmap_angle_wrap(v):
    n = np.linalg.norm(v)
    assume(n > 1e-3)
    npt.assert_allclose(expmap_to_rotmat(v * (1 + 2 * math.pi / n)), expmap_to_rotmat(v), rtol=0, atol=1e-9)


def test_small_angle_branch_is_continuous():
    v = np.array([3e-9, -1e-9, 2e-9])
    npt.assert_allclose(expmap_to_rotmat(v), oracles.rodrigues(list(v)), atol=1e-16)


def test_euler_identity():
    npt.assert_array_equal(rotmat_to_euler(np.eye(3)), [0.0, 0.0, 0.0])


@given(st.floats(-math.pi + 0.01, math.pi - 0.01), st.floats(-math.pi / 2 + 0.1, math.pi / 2 - 0.1), st.floats(-math.pi + 0.01, math.pi - 0.01))
def test_euler_round_trip(a, b, g):
    npt.assert_allclose(rotmat_to_euler(euler_to_rotmat([a, b, g])), [a, b, g], rtol=0, atol=1e-9)


@pytest.mark.parametrize("beta", [math.pi / 2, -math.pi / 2])
@pytest.mark.parametrize("alpha,gamma", [(0.3, 0.0), (-1.2, 0.7), (2.5, -2.0)])
def test_euler_gimbal_reconstruction(alpha, beta, gamma):
    R = euler_to_rotmat([alpha, beta, gamma])
    angles = rotmat_to_euler(R)
    assert angles[2] == 0.0
    npt.assert_allclose(euler_to_rotmat(angles), R, rtol=0, atol=1e-8)


def test_euler_rejects_non_rotation():
    with pytest.raises(ValueError):
        rotmat_to_euler(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        rotmat_to_euler(2 * np.eye(3))


@settings(max_examples=50)
@given(st.lists(vec3, min_size=1, max_size=4))
def test_vectorized_euler_matches_scalar_path(vs):
    frame = np.concatenate(vs)
    want = np.concatenate([rotmat_to_euler(expmap_to_rotmat(v)) for v in vs])
    npt.assert_allclose(expmap_to_euler(frame), want, rtol=0, atol=1e-9)
