import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from camera_manifold.align2d import (
    ANCHOR_MINUS,
    ANCHOR_PLUS,
    LEFT_EYE,
    MOUTH,
    RIGHT_EYE,
    DegenerateFeaturesError,
    FeaturePoints2D,
    SimilarityTransform2D,
    aggregate_features,
    alignment_transform,
    compute_crop_window,
    resample_aligned,
    rot90,
)


def ffhq_reference(x_l, x_r, x_m):
    """Crop quad center and half-extent as built by the FFHQ dataset script."""
    eye_avg = (x_l + x_r) * 0.5
    eye_to_eye = x_r - x_l
    eye_to_mouth = x_m - eye_avg
    x = eye_to_eye - np.flipud(eye_to_mouth) * [-1, 1]
    x /= np.hypot(*x)
    x *= max(np.hypot(*eye_to_eye) * 2.0, np.hypot(*eye_to_mouth) * 1.8)
    c = eye_avg + eye_to_mouth * 0.1
    return c, x


faces = st.tuples(
    st.floats(-50, 50), st.floats(-50, 50),      # eye midpoint
    st.floats(0.5, 20), st.floats(-0.6, 0.6),    # half interocular, roll
    st.floats(0.5, 40), st.floats(-5, 5),        # mouth drop, lateral mouth offset
)


def make_face(cx, cy, half, roll, drop, lateral):
    c, s = math.cos(roll), math.sin(roll)
    R = np.array([[c, -s], [s, c]])
    pts = np.array([[-half, 0.0], [half, 0.0], [lateral, drop]]) @ R.T + [cx, cy]
    return FeaturePoints2D(*pts)


def test_aggregate_subset_means():
    raw = np.random.default_rng(0).normal(size=(68, 2)) * 100
    raw[list(LEFT_EYE)] = (-1, 0)
    raw[list(RIGHT_EYE)] = (1, 0)
    raw[list(MOUTH)] = (0, 1)
    f = aggregate_features(raw)
    np.testing.assert_array_equal(f.as_array(), [[-1, 0], [1, 0], [0, 1]])


def test_aggregate_matches_independent_mean():
    raw = np.random.default_rng(3).uniform(0, 512, size=(68, 2))
    f = aggregate_features(raw)
    np.testing.assert_allclose(f.x_l, raw[36:42].sum(0) / 6, rtol=1e-14)
    np.testing.assert_allclose(f.x_r, raw[42:48].sum(0) / 6, rtol=1e-14)
    np.testing.assert_allclose(f.x_m, raw[48:68].sum(0) / 20, rtol=1e-14)


def test_constant_landmarks_are_degenerate():
    f = aggregate_features(np.tile([3.0, 4.0], (68, 1)))
    np.testing.assert_array_equal(f.x_l, f.x_r)
    with pytest.raises(DegenerateFeaturesError):
        compute_crop_window(f)


def test_aggregate_rejects_short_input():
    with pytest.raises(ValueError):
        aggregate_features(np.zeros((67, 2)))


def test_window_hand_example():
    w = compute_crop_window(FeaturePoints2D((-1, 0), (1, 0), (0, 1)))
    np.testing.assert_allclose(w.c, [0.0, 0.1])
    np.testing.assert_allclose(w.s, [4.0, 0.0])


def test_transform_hand_example():
    t = alignment_transform(FeaturePoints2D((-1, 0), (1, 0), (0, 1)))
    np.testing.assert_allclose(t([-4, 0.1]), [0, 0.5], atol=1e-15)
    np.testing.assert_allclose(t([4, 0.1]), [1, 0.5], atol=1e-15)
    assert t.scale == pytest.approx(1 / 8)


def test_identity_inducing_features():
    h = 0.5 / 1.8
    y0 = 0.5 - 0.1 * h
    f = FeaturePoints2D((0.4375, y0), (0.5625, y0), (0.5, y0 + h))
    t = alignment_transform(f)
    assert t.scale == pytest.approx(1.0, abs=1e-12)
    assert abs(t.rotation) < 1e-12
    np.testing.assert_allclose(t.translation, 0.0, atol=1e-12)


def test_rot90_is_visual_counter_clockwise_in_y_down():
    # +x (right) turns to -y (up on screen)
    np.testing.assert_array_equal(rot90([1.0, 0.0]), [0.0, -1.0])
    np.testing.assert_array_equal(rot90([0.0, 1.0]), [1.0, 0.0])


def test_upright_face_window_follows_eye_axis():
    # mouth below the eyes in y-down coordinates: s must point along +x
    w = compute_crop_window(FeaturePoints2D((100, 100), (140, 100), (120, 150)))
    assert w.s[0] > 0
    assert abs(w.s[1]) < 1e-12


@settings(max_examples=200, deadline=None)
@given(faces)
def test_matches_ffhq_script(params):
    f = make_face(*params)
    w = compute_crop_window(f)
    c, s = ffhq_reference(f.x_l, f.x_r, f.x_m)
    np.testing.assert_allclose(w.c, c, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(w.s, s, rtol=1e-12, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(faces)
def test_anchor_pinning(params):
    f = make_face(*params)
    w = compute_crop_window(f)
    t = alignment_transform(f)
    np.testing.assert_allclose(t(w.minus), ANCHOR_MINUS, atol=1e-12)
    np.testing.assert_allclose(t(w.plus), ANCHOR_PLUS, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(faces, st.floats(0.1, 10), st.floats(-math.pi, math.pi), st.floats(-100, 100), st.floats(-100, 100))
def test_window_equivariance(params, k, ang, tx, ty):
    f = make_face(*params)
    t = SimilarityTransform2D(k, ang, (tx, ty))
    w0 = compute_crop_window(f)
    w1 = compute_crop_window(FeaturePoints2D(*t(f.as_array())))
    np.testing.assert_allclose(w1.c, t(w0.c), atol=1e-9 * max(1, k * 100))
    np.testing.assert_allclose(w1.s, t.matrix() @ w0.s, atol=1e-9 * max(1, k * 100))


def test_rotation_and_scale_examples():
    f = FeaturePoints2D((-1, 0), (1, 0), (0, 1))
    w = compute_crop_window(f)
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    w_rot = compute_crop_window(FeaturePoints2D(*(f.as_array() @ R.T)))
    np.testing.assert_allclose(w_rot.c, R @ w.c, atol=1e-15)
    np.testing.assert_allclose(w_rot.s, R @ w.s, atol=1e-15)
    w2 = compute_crop_window(FeaturePoints2D(*(2 * f.as_array())))
    np.testing.assert_allclose(w2.c, 2 * w.c)
    np.testing.assert_allclose(w2.s, 2 * w.s)


def test_continuity():
    f = make_face(200, 180, 30, 0.1, 60, 2)
    t0 = alignment_transform(f)
    p0 = np.array([t0.scale, t0.rotation, *t0.translation])
    rng = np.random.default_rng(5)
    for eps in (1e-3, 1e-5, 1e-7):
        d = rng.normal(size=(3, 2)) * eps
        t1 = alignment_transform(FeaturePoints2D(*(f.as_array() + d)))
        p1 = np.array([t1.scale, t1.rotation, *t1.translation])
        assert np.abs(p1 - p0).max() < 100 * eps


def test_similarity_inverse_and_compose(rng):
    a = SimilarityTransform2D(2.5, 0.7, (3, -1))
    b = SimilarityTransform2D(0.3, -1.2, (0.5, 8))
    p = rng.normal(size=(10, 2))
    np.testing.assert_allclose(a.inverse()(a(p)), p, atol=1e-12)
    np.testing.assert_allclose(a.compose(b)(p), a(b(p)), atol=1e-12)
    with pytest.raises(ValueError):
        SimilarityTransform2D(0.0, 0.0, (0, 0))


def test_resample_identity_normalized(rng):
    img = rng.random((20, 30, 3))
    t = SimilarityTransform2D(1.0, 0.0, (0.0, 0.0))
    out = resample_aligned(img, t, (30, 20), src_units="normalized")
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_resample_integer_shift(rng):
    img = rng.random((16, 16))
    # normalized aligned coords of a 16px output; shift by 3 px to the right
    t = SimilarityTransform2D(1 / 16, 0.0, (-3 / 16, 0.0))
    out = resample_aligned(img, t, 16)
    np.testing.assert_allclose(out[:, :13], img[:, 3:], atol=1e-12)


def test_resample_rotation_matches_map_coordinates():
    n = 64
    yy, xx = np.mgrid[0:n, 0:n]
    board = ((xx // 8 + yy // 8) % 2).astype(float)
    ang = math.pi / 4
    t = SimilarityTransform2D(1 / n, ang, (0.3, -0.2))
    out = resample_aligned(board, t, n)
    # independent oracle: inverse-map output pixel centers and sample with scipy
    inv = t.inverse()
    g = (np.stack(np.meshgrid(np.arange(n), np.arange(n)), -1) + 0.5) / n
    src = np.asarray(inv(g)) - 0.5
    ref = ndimage.map_coordinates(board, [src[..., 1].ravel(), src[..., 0].ravel()], order=1,
                                  mode="nearest").reshape(n, n)
    np.testing.assert_allclose(out, ref, atol=1e-6)


def test_resample_zero_size():
    with pytest.raises(ValueError):
        resample_aligned(np.zeros((4, 4)), SimilarityTransform2D(1, 0, (0, 0)), 0)


DATA = Path(__file__).parent / "data"


@pytest.mark.parametrize("name", ["landmarks_view01.txt", "landmarks_view01.json"])
def test_recorded_landmark_file(name):
    from camera_manifold.pipeline import read_landmarks

    exp = json.loads((DATA / "landmarks_view01_expected.json").read_text())
    f = aggregate_features(read_landmarks(DATA / name))
    np.testing.assert_allclose(f.x_l, exp["left_eye"], atol=1e-9)
    np.testing.assert_allclose(f.x_r, exp["right_eye"], atol=1e-9)
    np.testing.assert_allclose(f.x_m, exp["mouth"], atol=1e-9)
