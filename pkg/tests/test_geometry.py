import numpy as np
import pytest
from hypothesis import given, strategies as st

from ray_mixtures.errors import DomainError
from ray_mixtures.geometry import (
    Camera,
    Ray,
    RayBatch,
    anneal_bounds,
    generate_ray,
    generate_rays,
    hierarchical_sample,
    image_pixels,
    stratified_sample,
)


IDENTITY = np.hstack([np.eye(3), np.zeros((3, 1))])


def _camera(pose=IDENTITY, focal=10.0):
    return Camera(width=20, height=20, focal=focal, principal_point=(10.0, 10.0), pose=pose)


def _rays(n=1, t_near=0.0, t_far=1.0, scale=1.0):
    return RayBatch(
        origins=np.zeros((n, 3)),
        dirs=np.tile([0.0, 0.0, -scale], (n, 1)),
        t_near=np.full(n, float(t_near)),
        t_far=np.full(n, float(t_far)),
    )


def test_principal_point_ray_looks_down_minus_z():
    ray = generate_ray(_camera(), (9.5, 9.5))
    np.testing.assert_allclose(ray.dir, [0.0, 0.0, -1.0])
    assert np.linalg.norm(ray.dir) == 1.0


def test_offset_pixel_direction():
    ray = generate_ray(_camera(), (19.5, 9.5))
    np.testing.assert_allclose(ray.dir, [1.0, 0.0, -1.0])
    assert np.isclose(np.linalg.norm(ray.dir), np.sqrt(2.0))


def test_translation_moves_origin_only():
    pose = IDENTITY.copy()
    pose[:, 3] = [1.0, -2.0, 3.0]
    a = generate_ray(_camera(), (4.0, 7.0))
    b = generate_ray(_camera(pose), (4.0, 7.0))
    np.testing.assert_array_equal(b.origin, [1.0, -2.0, 3.0])
    np.testing.assert_allclose(a.dir, b.dir)


@given(st.floats(0, 19.99), st.floats(0, 19.99), st.floats(-np.pi, np.pi))
def test_unit_depth_image_plane(u, v, angle):
    c, s = np.cos(angle), np.sin(angle)
    pose = np.hstack([np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]), np.array([[0.5], [1.0], [2.0]])])
    cam = _camera(pose)
    ray = generate_ray(cam, (u, v))
    point_cam = cam.rotation.T @ (ray.origin + ray.dir - cam.origin)
    assert abs(point_cam[2] + 1.0) <= 1e-9


def test_focal_from_field_of_view():
    cam = Camera.from_fov(width=100, height=80, camera_angle_x=np.pi / 2, pose=IDENTITY)
    assert np.isclose(cam.focal, 50.0)
    assert cam.principal_point == (50.0, 40.0)


def test_pixel_outside_image_rejected():
    with pytest.raises(DomainError):
        generate_ray(_camera(), (20.0, 3.0))


def test_non_orthonormal_pose_rejected():
    pose = IDENTITY.copy()
    pose[0, 0] = 2.0
    with pytest.raises(DomainError):
        _camera(pose)


def test_four_by_four_pose_is_accepted():
    cam = _camera(np.eye(4))
    assert cam.pose.shape == (3, 4)


def test_image_pixels_row_major():
    cam = Camera(width=3, height=2, focal=1.0, principal_point=(1.5, 1.0), pose=IDENTITY)
    np.testing.assert_array_equal(image_pixels(cam), [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]])


def test_ray_requires_ordered_bounds():
    with pytest.raises(DomainError):
        Ray(origin=np.zeros(3), dir=np.array([0.0, 0.0, 1.0]), t_near=2.0, t_far=1.0)


def test_single_bin():
    s = stratified_sample(_rays(), 1, jitter=False)
    np.testing.assert_allclose(s.t_mid, [[0.5]])
    np.testing.assert_allclose(s.delta, [[1.0]])


def test_four_bins_scaled_direction():
    s = stratified_sample(_rays(t_far=2.0, scale=2.0), 4, jitter=False)
    np.testing.assert_allclose(s.t_mid, [[0.25, 0.75, 1.25, 1.75]])
    np.testing.assert_allclose(s.delta, [[1.0, 1.0, 1.0, 1.0]])


@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_jittered_samples_stay_in_their_bins(m, seed):
    rays = _rays(n=3, t_near=0.5, t_far=4.0, scale=1.7)
    s = stratified_sample(rays, m, jitter=True, rng=np.random.default_rng(seed))
    assert np.all(s.t_mid >= s.t_edges[:, :-1]) and np.all(s.t_mid <= s.t_edges[:, 1:])
    assert np.all(np.diff(s.t_edges, axis=-1) > 0)
    np.testing.assert_allclose(s.delta.sum(axis=-1), 1.7 * 3.5, rtol=1e-9)


def test_jitter_needs_rng():
    with pytest.raises(DomainError):
        stratified_sample(_rays(), 4, jitter=True)


def test_zero_samples_rejected():
    with pytest.raises(DomainError):
        stratified_sample(_rays(), 0, jitter=False)


def test_hierarchical_concentrates_in_heavy_bin():
    rays = _rays(t_far=4.0)
    coarse = stratified_sample(rays, 4, jitter=False)
    w = np.array([[0.0, 0.0, 1.0, 0.0]])
    fine = hierarchical_sample(rays, coarse, w, 64)
    t = np.setdiff1d(fine.t_mid[0], coarse.t_mid[0])
    assert np.mean((t >= 2.0) & (t <= 3.0)) >= 0.95


def test_hierarchical_two_bin_fraction():
    rays = _rays(n=200, t_far=2.0)
    coarse = stratified_sample(rays, 2, jitter=False)
    w = np.tile([0.75, 0.25], (200, 1))
    fine = hierarchical_sample(rays, coarse, w, 50, rng=np.random.default_rng(1), weight_floor=0.0)
    new = np.sort(fine.t_mid, axis=-1)
    # drop the two coarse samples per ray
    counts = np.sum(new < 1.0, axis=-1) - 1
    assert abs(counts.sum() / (200 * 50) - 0.75) < 0.02


def test_hierarchical_uniform_weights_spread_evenly():
    rays = _rays(n=100, t_far=8.0)
    coarse = stratified_sample(rays, 8, jitter=False)
    fine = hierarchical_sample(rays, coarse, np.ones((100, 8)), 80, rng=np.random.default_rng(2))
    counts = np.histogram(fine.t_mid.ravel(), bins=8, range=(0.0, 8.0))[0] - 100
    expected = 100 * 80 / 8
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < 24.3  # 99.9th percentile, 7 degrees of freedom


@given(st.integers(0, 2**32 - 1))
def test_hierarchical_sorted_and_contained(seed):
    rng = np.random.default_rng(seed)
    rays = _rays(n=5, t_near=1.0, t_far=3.0, scale=1.3)
    coarse = stratified_sample(rays, 8, jitter=True, rng=rng)
    fine = hierarchical_sample(rays, coarse, rng.random((5, 8)), 16, rng=rng)
    assert fine.count == 24
    assert np.all(np.diff(fine.t_mid, axis=-1) >= 0)
    assert np.all(fine.t_mid >= 1.0) and np.all(fine.t_mid <= 3.0)
    assert np.all(fine.t_edges[:, 0] == 1.0) and np.all(fine.t_edges[:, -1] == 3.0)


def test_hierarchical_without_fine_samples_returns_coarse():
    rays = _rays()
    coarse = stratified_sample(rays, 4, jitter=False)
    assert hierarchical_sample(rays, coarse, np.ones((1, 4)), 0) is coarse


def test_anneal_identity_after_schedule():
    rays = _rays(t_near=2.0, t_far=6.0)
    out = anneal_bounds(rays, 256, anneal_steps=256, start_fraction=0.5)
    assert out is rays


def test_anneal_start_is_half_width():
    out = anneal_bounds(_rays(t_near=2.0, t_far=6.0), 0, anneal_steps=256, start_fraction=0.5)
    np.testing.assert_allclose([out.t_near[0], out.t_far[0]], [3.0, 5.0])


def test_anneal_midpoint_of_schedule():
    out = anneal_bounds(_rays(t_near=2.0, t_far=6.0), 128, anneal_steps=256, start_fraction=0.5)
    np.testing.assert_allclose([out.t_near[0], out.t_far[0]], [2.5, 5.5])


def test_generate_rays_batch_matches_single(rng):
    cam = _camera()
    px = rng.uniform(0, 19.9, size=(6, 2))
    batch = generate_rays(cam, px, t_near=1.0, t_far=2.0)
    for i in range(6):
        np.testing.assert_allclose(batch.dirs[i], generate_ray(cam, tuple(px[i])).dir)
