import numpy as np
import pytest

from phasorfields import cameras

INTR = cameras.Intrinsics(fx=4.0, fy=4.0, cx=4.0, cy=3.0, width=8, height=6)
CAM = cameras.Camera(INTR)


def test_intrinsics_centered_and_dict_roundtrip():
    c = cameras.Intrinsics.centered(width=8, height=6, focal=4.0)
    assert c == INTR
    assert cameras.Intrinsics.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        cameras.Intrinsics(fx=4.0, fy=4.0, cx=4.0, cy=3.0, width=0, height=6)
    with pytest.raises(ValueError):
        cameras.Intrinsics(fx=-1.0, fy=4.0, cx=4.0, cy=3.0, width=8, height=6)


def test_principal_point_ray_is_optical_axis():
    ray = cameras.generate_ray(CAM, (4.0, 3.0), 0.1, 10.0)
    np.testing.assert_allclose(ray.origin, np.zeros(3), atol=1e-12)
    np.testing.assert_allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)


def test_one_focal_length_off_axis_is_45_degrees():
    s = 1.0 / np.sqrt(2.0)
    cam = cameras.Camera(cameras.Intrinsics.centered(10, 10, focal=4.0))
    ray = cameras.generate_ray(cam, (9.0, 5.0), 0.1, 10.0)
    np.testing.assert_allclose(ray.direction, [s, 0.0, s], atol=1e-12)
    ray = cameras.generate_ray(cam, (5.0, 9.0), 0.1, 10.0)
    np.testing.assert_allclose(ray.direction, [0.0, s, s], atol=1e-12)


def test_translation_moves_origin_not_direction():
    pose = cameras.Pose(np.eye(3), np.array([1.0, -2.0, 0.5]))
    ray = cameras.generate_ray(cameras.Camera(INTR, pose), (4.0, 3.0), 0.1, 10.0)
    np.testing.assert_allclose(ray.origin, [1.0, -2.0, 0.5])
    np.testing.assert_allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)


def test_ray_directions_are_unit_norm():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pixel = (rng.uniform(0.0, INTR.width), rng.uniform(0.0, INTR.height))
        ray = cameras.generate_ray(CAM, pixel, 0.1, 10.0)
        assert np.linalg.norm(ray.direction) == pytest.approx(1.0, abs=1e-12)


def test_generate_ray_bounds():
    with pytest.raises(ValueError):
        cameras.generate_ray(CAM, (-0.1, 3.0), 0.1, 10.0)
    with pytest.raises(ValueError):
        cameras.generate_ray(CAM, (4.0, 6.1), 0.1, 10.0)


def test_pose_validation():
    with pytest.raises(ValueError):
        cameras.Pose(np.eye(3) * 1.001, np.zeros(3))
    with pytest.raises(ValueError):
        # reflection: orthonormal but det -1
        cameras.Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_pose_compose_inverse_and_dict():
    from scipy.spatial.transform import Rotation
    rng = np.random.default_rng(1)
    a = cameras.Pose(Rotation.random(random_state=2).as_matrix(),
                     rng.normal(size=3))
    b = cameras.Pose(Rotation.random(random_state=3).as_matrix(),
                     rng.normal(size=3))
    ab = a.compose(b)
    x = rng.normal(size=3)
    chained = a.rotation @ (b.rotation @ x + b.translation) + a.translation
    np.testing.assert_allclose(ab.rotation @ x + ab.translation, chained,
                               rtol=1e-12)
    ident = a.compose(a.inverse())
    np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-12)
    again = cameras.Pose.from_dict(a.to_dict())
    np.testing.assert_allclose(again.rotation, a.rotation)
    assert a.to_dict()["convention"] == "camera-to-world"
    with pytest.raises(ValueError):
        cameras.Pose.from_dict({"rotation": np.eye(3).tolist(),
                                "translation": [0, 0, 0],
                                "convention": "world-to-camera"})


def test_look_at_properties():
    pose = cameras.look_at(np.array([0.0, 0.0, -2.0]), np.zeros(3))
    assert np.linalg.det(pose.rotation) == pytest.approx(1.0)
    # third column is the viewing direction
    np.testing.assert_allclose(pose.rotation[:, 2], [0.0, 0.0, 1.0], atol=1e-12)
    ray = cameras.generate_ray(cameras.Camera(INTR, pose), (4.0, 3.0), 0.1, 10.0)
    np.testing.assert_allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)
    with pytest.raises(ValueError):
        cameras.look_at(np.zeros(3), np.array([0.0, 1.0, 0.0]))


def test_camera_ray_grid_matches_generate_ray():
    pose = cameras.look_at(np.array([1.0, 0.5, -3.0]), np.array([0.0, 0.0, 2.0]))
    cam = cameras.Camera(INTR, pose)
    origins, dirs = cameras.camera_ray_grid(cam, 0.1, 10.0)
    assert origins.shape == (6, 8, 3) and dirs.shape == (6, 8, 3)
    for i, j in [(0, 0), (3, 4), (5, 7)]:
        ray = cameras.generate_ray(cam, (j + 0.5, i + 0.5), 0.1, 10.0)
        np.testing.assert_allclose(origins[i, j], ray.origin, atol=1e-12)
        np.testing.assert_allclose(dirs[i, j], ray.direction, atol=1e-12)


def test_ray_near_far_validation():
    with pytest.raises(ValueError):
        cameras.Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]),
                    t_near=2.0, t_far=1.0)
    with pytest.raises(ValueError):
        cameras.Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]),
                    t_near=0.0, t_far=1.0)
