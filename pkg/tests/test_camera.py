import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from camera_manifold.camera import (
    DEFAULT_FACE,
    CanonicalFeatures3D,
    ManifoldCoefficients,
    ManifoldCoord,
    PinholeCamera,
    ProjectionError,
    euler_rotation,
    look_at,
    manifold_camera,
    project_point,
    spherical_coords,
    spherical_position,
    trackball_camera,
)

angles = st.floats(-60, 60)
dists = st.floats(1, 100)
fovs = st.floats(1, 170)


def Ry(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), 0, math.sin(a), 0], [0, 1, 0, 0], [-math.sin(a), 0, math.cos(a), 0], [0, 0, 0, 1]])


def Rx(deg):
    a = math.radians(deg)
    return np.array([[1, 0, 0, 0], [0, math.cos(a), -math.sin(a), 0], [0, math.sin(a), math.cos(a), 0], [0, 0, 0, 1]])


def Rz(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), -math.sin(a), 0, 0], [math.sin(a), math.cos(a), 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])


def Tz(d):
    M = np.eye(4)
    M[2, 3] = d
    return M


def P(fov):
    """Homogeneous normalized-image projection for a -z looking camera, y-down."""
    f = 0.5 / math.tan(math.radians(fov) / 2)
    return np.array([[f, 0, -0.5, 0], [0, -f, -0.5, 0], [0, 0, -1, 0]])


def oracle_trackball(theta, phi, d, psi, extra=(0, 0, 0)):
    # world -> camera: orbit yaw then pitch, push back along the view axis, optional in-place turn
    a, b, g = extra
    return P(psi) @ Rz(g) @ Rx(b) @ Ry(-a) @ Tz(-d) @ Rx(phi) @ Ry(-theta)


def oracle_project(M, p):
    h = M @ np.append(p, 1.0)
    return h[:2] / h[2]


def test_trackball_frontal():
    cam = trackball_camera(0, 0, 10, 30)
    np.testing.assert_allclose(cam.position, [0, 0, 10], atol=1e-15)
    uv, front = project_point(cam, [0, 0, 0])
    assert front
    np.testing.assert_allclose(uv, [0.5, 0.5], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(angles, angles, dists, fovs)
def test_eye_midpoint_projects_to_center(theta, phi, d, psi):
    uv, front = project_point(trackball_camera(theta, phi, d, psi), [0, 0, 0])
    assert front
    np.testing.assert_allclose(uv, [0.5, 0.5], atol=1e-12)


def test_trackball_side_view_matches_matrix_oracle():
    cam = trackball_camera(90, 0, 10, 30)
    np.testing.assert_allclose(cam.position, [10, 0, 0], atol=1e-12)
    M = oracle_trackball(90, 0, 10, 30)
    center = np.linalg.inv(Tz(-10) @ Rx(0) @ Ry(-90)) @ [0, 0, 0, 1]
    np.testing.assert_allclose(center[:3], cam.position, atol=1e-12)
    p = np.array([0.3, -0.7, 1.1])
    np.testing.assert_allclose(project_point(cam, p)[0], oracle_project(M, p), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(angles, angles, st.floats(5, 50), st.floats(10, 90),
       st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10)),
       st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2)))
def test_manifold_camera_matches_matrix_oracle(theta, phi, d, psi, extra, p):
    cam = manifold_camera(ManifoldCoord(theta, phi, d), ManifoldCoefficients(*extra, psi))
    M = oracle_trackball(theta, phi, d, psi, extra)
    p = np.asarray(p)
    uv, front = cam.project(p)
    if front:
        np.testing.assert_allclose(uv, oracle_project(M, p), atol=1e-9)


def test_manifold_with_zero_rotation_equals_trackball():
    m = ManifoldCoord(12.0, -7.0, 15.0)
    a = manifold_camera(m, ManifoldCoefficients(0, 0, 0, 25.0))
    b = trackball_camera(12.0, -7.0, 15.0, 25.0)
    np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(angles, angles, dists, st.floats(-30, 30), st.floats(-30, 30), st.floats(-30, 30), fovs)
def test_center_invariance(theta, phi, d, a, b, g, psi):
    m = ManifoldCoord(theta, phi, d)
    cam = manifold_camera(m, ManifoldCoefficients(a, b, g, psi))
    assert np.linalg.norm(cam.position - trackball_camera(theta, phi, d, 30).position) < 1e-10


def test_projection_examples():
    cam = PinholeCamera(np.eye(3), np.zeros(3), 90.0)
    np.testing.assert_allclose(cam.project([0, 0, -5])[0], [0.5, 0.5])
    uv, front = cam.project([1.0, 0.0, -1.0])
    assert front
    assert uv[0] == pytest.approx(1.0, abs=1e-15)
    uv, front = cam.project([0.0, 0.0, 2.0])
    assert not front
    with pytest.raises(ProjectionError):
        cam.project([1.0, 1.0, 0.0])


def test_random_projection_matches_homogeneous_oracle(rng):
    for _ in range(50):
        cam = look_at(rng.normal(size=3) * 10, rng.normal(size=3), fov=rng.uniform(10, 120),
                      roll=rng.uniform(-90, 90))
        p = rng.normal(size=3)
        M = cam.matrix()
        h = M @ np.append(p, 1.0)
        uv, _ = cam.project(p)
        np.testing.assert_allclose(uv, h[:2] / h[2], atol=1e-12)
        # homogeneous scale invariance
        h2 = (3.7 * M) @ np.append(p, 1.0)
        np.testing.assert_allclose(h2[:2] / h2[2], uv, atol=1e-12)


def test_ray_directions_reproject(rng):
    cam = look_at([3, 2, 9], [0, 0, 0], fov=40)
    uv = rng.uniform(0, 1, size=(20, 2))
    pts = cam.position + 7.0 * cam.ray_directions(uv)
    np.testing.assert_allclose(cam.project(pts)[0], uv, atol=1e-12)


def test_spherical_round_trip():
    for t, p, d in [(0, 0, 10), (30, -20, 12), (-45, 10, 40)]:
        np.testing.assert_allclose(spherical_coords(spherical_position(t, p, d)), (t, p, d), atol=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        PinholeCamera(np.eye(3), np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        PinholeCamera(np.eye(3), np.zeros(3), 180.0)
    with pytest.raises(ValueError):
        PinholeCamera(np.diag([1.0, 1.0, -1.0]), np.zeros(3), 30.0)
    with pytest.raises(ValueError):
        PinholeCamera(np.eye(3) * 1.001, np.zeros(3), 30.0)
    with pytest.raises(ValueError):
        ManifoldCoefficients(0, 0, 0, 180)
    with pytest.raises(ValueError):
        trackball_camera(0, 0, 0, 30)
    with pytest.raises(ValueError):
        CanonicalFeatures3D((-1, 0, 0), (1, 0, 0), (3, 0, 0))


def test_camera_json_round_trip():
    cam = manifold_camera(ManifoldCoord(5, 3, 14), ManifoldCoefficients(0.1, 0.7, -0.3, 31.0))
    rec = json.loads(json.dumps(cam.to_json()))
    assert set(rec) == {"position", "rotation", "fov_deg", "manifold"}
    assert len(rec["rotation"]) == 9
    back = PinholeCamera.from_json(rec)
    np.testing.assert_allclose(back.matrix(), cam.matrix(), atol=1e-15)
    assert back.manifold["coeffs"] == pytest.approx([0.1, 0.7, -0.3, 31.0])
    with pytest.raises(ValueError):
        PinholeCamera.from_json({"position": [0, 0, 0]})


def test_euler_rotation_is_proper(rng):
    for a, b, g in rng.uniform(-180, 180, size=(20, 3)):
        R = euler_rotation(a, b, g)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(R) == pytest.approx(1.0)


def test_default_face_is_canonical():
    np.testing.assert_array_equal(DEFAULT_FACE.p_l, [-1, 0, 0])
    np.testing.assert_array_equal(DEFAULT_FACE.p_r, [1, 0, 0])
