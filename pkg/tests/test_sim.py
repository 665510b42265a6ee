import numpy as np
import pytest

from phasorfields import sim, tof
from phasorfields.cameras import Camera, Intrinsics, Pose, look_at

MODEL = tof.ToFModel(mod_frequency=30e6)
ORIGIN = np.zeros((1, 3))
PLUS_Z = np.array([[0.0, 0.0, 1.0]])


def test_motion_interpolation_and_clamping():
    m = sim.Motion(times=[0.0, 1.0], offsets=[[0, 0, 0], [2.0, 0, 0]])
    np.testing.assert_allclose(m.offset_at(0.5), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(m.offset_at(-1.0), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(m.offset_at(2.0), [2.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        sim.Motion(times=[0.0, 0.0], offsets=[[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ValueError):
        sim.Motion(times=[], offsets=np.zeros((0, 3)))


def test_plane_head_on_hit():
    scene = sim.Scene([sim.Plane(point=(0, 0, 2), normal=(0, 0, -1),
                                 ir_albedo=1.0)])
    t, n, idx = sim.trace_first_hit(scene, ORIGIN, PLUS_Z)
    assert t[0] == pytest.approx(2.0)
    np.testing.assert_allclose(n[0], [0, 0, -1])
    assert idx[0] == 0
    delays, energies, *_ = sim.impulse_response(scene, MODEL, ORIGIN, PLUS_Z)
    assert delays[0, 0] == pytest.approx(4.0 / MODEL.light_speed)
    assert energies[0, 0] == pytest.approx(1.0 / 4.0)  # cos 1, 1/d^2
    assert energies[0, 1] == 0.0


def test_plane_oblique_hit_cosine_falloff():
    scene = sim.Scene([sim.Plane(point=(0, 0, 2), normal=(0, 0, -1),
                                 ir_albedo=1.0)])
    s = 1.0 / np.sqrt(2.0)
    d = np.array([[0.0, s, s]])
    _, energies, t, _, _ = sim.impulse_response(scene, MODEL, ORIGIN, d)
    assert t[0] == pytest.approx(2.0 / s)
    assert energies[0, 0] == pytest.approx(s / (2.0 / s) ** 2, rel=1e-12)


def test_miss_reports_infinite_range():
    scene = sim.Scene([sim.Plane(point=(0, 0, 2), normal=(0, 0, -1))])
    t, n, idx = sim.trace_first_hit(scene, ORIGIN, np.array([[0.0, 0.0, -1.0]]))
    assert np.isinf(t[0]) and idx[0] == -1
    delays, energies, *_ = sim.impulse_response(
        scene, MODEL, ORIGIN, np.array([[0.0, 0.0, -1.0]]))
    assert np.all(energies == 0.0) and np.all(delays == 0.0)


def test_empty_scene():
    scene = sim.Scene([])
    delays, energies, t, _, idx = sim.impulse_response(scene, MODEL, ORIGIN,
                                                       PLUS_Z)
    assert np.all(energies == 0.0) and np.isinf(t[0]) and idx[0] == -1


def test_sphere_exterior_and_interior():
    scene = sim.Scene([sim.Sphere(center=(0, 0, 2), radius=1.0)])
    t, n, _ = sim.trace_first_hit(scene, ORIGIN, PLUS_Z)
    assert t[0] == pytest.approx(1.0)
    np.testing.assert_allclose(n[0], [0, 0, -1], atol=1e-12)
    # from the center the first crossing is the far shell, normal flipped inward
    t, n, _ = sim.trace_first_hit(scene, np.array([[0.0, 0.0, 2.0]]), PLUS_Z)
    assert t[0] == pytest.approx(1.0)
    np.testing.assert_allclose(n[0], [0, 0, -1], atol=1e-12)
    with pytest.raises(ValueError):
        sim.Sphere(radius=0.0)


def test_box_faces_and_interior():
    scene = sim.Scene([sim.Box(bbox_min=(-1, -1, 2), bbox_max=(1, 1, 3))])
    t, n, _ = sim.trace_first_hit(scene, ORIGIN, PLUS_Z)
    assert t[0] == pytest.approx(2.0)
    np.testing.assert_allclose(n[0], [0, 0, -1], atol=1e-12)
    inside = np.array([[0.0, 0.0, 2.5]])
    t, n, _ = sim.trace_first_hit(scene, inside, PLUS_Z)
    assert t[0] == pytest.approx(0.5)
    np.testing.assert_allclose(n[0], [0, 0, -1], atol=1e-12)
    side = np.array([[-3.0, 0.2, 2.5]])
    t, n, _ = sim.trace_first_hit(scene, side, np.array([[1.0, 0.0, 0.0]]))
    assert t[0] == pytest.approx(2.0)
    np.testing.assert_allclose(n[0], [-1, 0, 0], atol=1e-12)
    with pytest.raises(ValueError):
        sim.Box(bbox_min=(0, 0, 0), bbox_max=(0, 1, 1))


def test_normals_face_the_ray_everywhere():
    rng = np.random.default_rng(0)
    scene = sim.Scene([
        sim.Plane(point=(0, 0, 5), normal=(0.2, -0.3, -1)),
        sim.Sphere(center=(0.5, 0.0, 3.0), radius=0.8),
        sim.Box(bbox_min=(-2, -2, 1), bbox_max=(-1, 2, 4)),
    ])
    origins = rng.normal(0.0, 0.5, (200, 3))
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    t, n, idx = sim.trace_first_hit(scene, origins, dirs)
    hit = np.isfinite(t)
    assert np.any(hit)
    dots = np.sum(n[hit] * dirs[hit], axis=-1)
    assert np.all(dots <= 1e-12)
    np.testing.assert_allclose(np.linalg.norm(n[hit], axis=-1), 1.0, rtol=1e-9)


def test_motion_moves_hits_between_frames():
    sphere = sim.Sphere(center=(-1.0, 0.0, 3.0), radius=0.5,
                        motion=sim.Motion(times=[0.0, 1.0],
                                          offsets=[[0, 0, 0], [2.0, 0, 0]]))
    scene = sim.Scene([sphere])
    t0, _, i0 = sim.trace_first_hit(scene, ORIGIN, PLUS_Z, tau=0.0)
    t5, _, i5 = sim.trace_first_hit(scene, ORIGIN, PLUS_Z, tau=0.5)
    t1, _, i1 = sim.trace_first_hit(scene, ORIGIN, PLUS_Z, tau=1.0)
    assert np.isinf(t0[0]) and np.isinf(t1[0])  # sphere off-axis at the ends
    assert i5[0] == 0 and t5[0] == pytest.approx(2.5)


def test_mirror_zero_reflectivity_matches_plain_surface():
    mirror = sim.Plane(point=(0, 0, 2), normal=(0, 0, -1), ir_albedo=0.6,
                       mirror=True, reflectivity=0.0)
    plain = sim.Plane(point=(0, 0, 2), normal=(0, 0, -1), ir_albedo=0.6)
    wall = sim.Plane(point=(0, 0, -1.5), normal=(0, 0, 1), ir_albedo=0.9)
    d_a = sim.impulse_response(sim.Scene([mirror, wall]), MODEL, ORIGIN, PLUS_Z)
    d_b = sim.impulse_response(sim.Scene([plain, wall]), MODEL, ORIGIN, PLUS_Z)
    np.testing.assert_array_equal(d_a[0], d_b[0])
    np.testing.assert_array_equal(d_a[1], d_b[1])


def test_mirror_one_bounce_oracle():
    rho, ir_wall = 0.3, 0.9
    mirror = sim.Plane(point=(0, 0, 2), normal=(0, 0, -1), ir_albedo=0.6,
                       mirror=True, reflectivity=rho)
    wall = sim.Plane(point=(0, 0, -1.5), normal=(0, 0, 1), ir_albedo=ir_wall)
    scene = sim.Scene([mirror, wall])
    delays, energies, *_ = sim.impulse_response(scene, MODEL, ORIGIN, PLUS_Z)
    # direct: the mirror itself
    assert delays[0, 0] == pytest.approx(4.0 / MODEL.light_speed)
    assert energies[0, 0] == pytest.approx(0.6 / 4.0)
    # bounce: 2 m to the mirror, 3.5 m back past the camera to the wall
    total = 2.0 + 3.5
    assert delays[0, 1] == pytest.approx(2.0 * total / MODEL.light_speed,
                                         rel=1e-6)
    assert energies[0, 1] == pytest.approx(rho * ir_wall / total ** 2, rel=1e-5)


def test_mirror_mixture_depth_between_real_and_virtual():
    # oblique view so the one-bounce path stays inside the unambiguous range
    s = 1.0 / np.sqrt(2.0)
    mirror = sim.Plane(point=(0, 0, 2), normal=(0, 0, -1), ir_albedo=0.4,
                       mirror=True, reflectivity=0.5)
    wall = sim.Plane(point=(3, 0, 0), normal=(-1, 0, 0), ir_albedo=0.9)
    scene = sim.Scene([mirror, wall])
    delays, energies, *_ = sim.impulse_response(scene, MODEL, ORIGIN,
                                                np.array([[s, 0.0, s]]))
    direct = delays[0, 0] * MODEL.light_speed / 2.0
    virtual = delays[0, 1] * MODEL.light_speed / 2.0
    assert direct == pytest.approx(2.0 / s, rel=1e-9)
    assert virtual == pytest.approx(2.0 / s + 1.0 / s, rel=1e-5)
    quad = tof.quad_exposures_from_impulses(delays, energies, MODEL, 1)
    _, depth, _ = tof.phasor_to_depth(tof.combine_quad(quad)[0], MODEL)
    assert direct + 1e-2 < depth < virtual - 1e-2


def _simple_capture(scene, width=8, height=6, focal=6.0, **kw):
    cam = Camera(Intrinsics.centered(width, height, focal=focal))
    return sim.capture_frame(scene, cam, cam, MODEL, **kw)


def test_capture_frame_rgb_depth_and_background():
    scene = sim.Scene([sim.Sphere(center=(0, 0, 2), radius=0.5,
                                  albedo=(0.9, 0.1, 0.2))],
                      ambient=0.8, background=(0.0, 0.0, 0.5))
    # odd image size puts the (3, 4) pixel center exactly on the optical axis
    cap = _simple_capture(scene, width=9, height=7)
    assert cap.rgb.shape == (7, 9, 3) and cap.tof_quad.shape == (7, 9, 4)
    np.testing.assert_allclose(cap.rgb[3, 4], np.array([0.9, 0.1, 0.2]) * 0.8)
    np.testing.assert_allclose(cap.rgb[0, 0], [0.0, 0.0, 0.5])
    assert cap.depth[3, 4] == pytest.approx(1.5)
    assert cap.depth[0, 0] == 0.0
    assert np.all(cap.tof_quad[0, 0] == 0.0)


def test_capture_validation():
    scene = sim.Scene([])
    with pytest.raises(ValueError):
        _simple_capture(scene, supersampling=0)
    with pytest.raises(ValueError):
        _simple_capture(scene, noise_std=1e-12)
    with pytest.raises(ValueError):
        sim.Scene([sim.Plane(mirror=True, reflectivity=1.5)])


def test_depth_beyond_range_wraps():
    scene = sim.Scene([sim.Plane(point=(0, 0, 6.5), normal=(0, 0, -1),
                                 ir_albedo=1.0)])
    cap = _simple_capture(scene, width=2, height=2, focal=50.0)
    p = tof.combine_quad(cap.tof_quad)
    _, depth, _ = tof.phasor_to_depth(p[0, 0], MODEL)
    assert cap.depth[0, 0] == pytest.approx(6.5, abs=1e-3)
    assert depth == pytest.approx(1.5, abs=1e-3)


def test_capture_depth_matches_phasor_depth_mod_range():
    scene = sim.Scene([
        sim.Plane(point=(0, 0, 4), normal=(0.1, -0.2, -1), ir_albedo=0.7),
        sim.Sphere(center=(0.3, 0.1, 2.2), radius=0.6, ir_albedo=0.4),
    ])
    cap = _simple_capture(scene, width=12, height=9, focal=9.0)
    p = tof.combine_quad(cap.tof_quad)
    amp, depth, _ = tof.phasor_to_depth(p, MODEL)
    mask = (cap.depth > 0) & (amp > 0)
    assert mask.sum() > 50
    wrapped = np.mod(cap.depth[mask], MODEL.unambiguous_range())
    np.testing.assert_allclose(depth[mask], wrapped, atol=1e-6)


def test_noise_hurts_low_amplitude_pixels_most():
    from scipy.stats import spearmanr
    scene = sim.Scene([sim.Plane(point=(0, 0, 3), normal=(0, 0, -1),
                                 ir_albedo=0.9)])
    rng = np.random.default_rng(7)
    cap = _simple_capture(scene, width=24, height=18, focal=12.0,
                          noise_std=3e-11, rng=rng)
    amp, depth, _ = tof.phasor_to_depth(tof.combine_quad(cap.tof_quad), MODEL)
    err = np.abs(depth - cap.depth)
    corr = spearmanr(amp.ravel(), err.ravel()).statistic
    assert corr < -0.2


def test_supersampled_edges_make_flying_pixels():
    # a pixel straddling a depth edge mixes phasors and lands between surfaces
    scene = sim.Scene([
        sim.Box(bbox_min=(-10, -10, 1.9), bbox_max=(0.03, 10, 2.1),
                ir_albedo=0.8),
        sim.Plane(point=(0, 0, 4), normal=(0, 0, -1), ir_albedo=0.8),
    ])
    cam = Camera(Intrinsics.centered(8, 6, focal=8.0))
    cap = sim.capture_frame(scene, cam, cam, MODEL, supersampling=4)
    p = tof.combine_quad(cap.tof_quad)
    _, depth, _ = tof.phasor_to_depth(p, MODEL)
    edge = depth[3, 4]
    assert 1.9 + 1e-3 < edge < 4.0 - 1e-3
    # ground truth keeps the central-ray range instead of the mixture
    assert cap.depth[3, 4] == pytest.approx(4.0, abs=0.05)
    assert abs(edge - cap.depth[3, 4]) > 0.1


def test_scene_json_roundtrip():
    scene = sim.Scene([
        sim.Plane(point=(0, 0, 4), normal=(0.1, 0, -1), albedo=(0.2, 0.3, 0.4),
                  ir_albedo=0.7),
        sim.Sphere(center=(1, 2, 3), radius=0.5, mirror=True, reflectivity=0.4),
        sim.Box(bbox_min=(0, 0, 1), bbox_max=(1, 1, 2),
                motion=sim.Motion(times=[0, 1], offsets=[[0, 0, 0], [1, 0, 0]])),
    ], ambient=0.6, background=(0.1, 0.1, 0.2))
    again = sim.scene_from_dict(sim.scene_to_dict(scene))
    assert len(again.primitives) == 3
    assert again.ambient == pytest.approx(0.6)
    np.testing.assert_allclose(again.background, [0.1, 0.1, 0.2])
    rng = np.random.default_rng(1)
    origins = rng.normal(0, 1, (50, 3))
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    for tau in (0.0, 0.5):
        t_a, n_a, i_a = sim.trace_first_hit(scene, origins, dirs, tau)
        t_b, n_b, i_b = sim.trace_first_hit(again, origins, dirs, tau)
        np.testing.assert_allclose(t_a, t_b, rtol=1e-12)
        np.testing.assert_array_equal(i_a, i_b)
    assert again.primitives[1].mirror and again.primitives[1].reflectivity == 0.4
