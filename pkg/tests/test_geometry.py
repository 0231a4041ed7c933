import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stssl.geometry import (
    CameraIntrinsics,
    CameraPose,
    PointCloud,
    RigidScaleTransform,
    TemporalConfig,
    apply_transform,
    backproject,
    compose,
    euler_rotation,
    invert,
    normalize_unit_sphere,
    project,
    sample_temporal_transform,
)
from stssl.rng import RngStream


def random_transform(rng):
    return RigidScaleTransform(
        euler_rotation(*rng.uniform(-np.pi, np.pi, 3)), rng.normal(size=3), rng.uniform(0.5, 2.0)
    )


class TestTransforms:
    def test_identity(self, rng):
        cloud = PointCloud(rng.normal(size=(10, 3)))
        np.testing.assert_array_equal(apply_transform(cloud, RigidScaleTransform.identity()).points, cloud.points)

    def test_rotation_about_z(self):
        t = RigidScaleTransform(euler_rotation(0, 0, np.pi / 2))
        np.testing.assert_allclose(t.apply(np.array([[1.0, 0, 0]])), [[0, 1, 0]], atol=1e-15)

    def test_scale(self):
        t = RigidScaleTransform(scale=2.0)
        np.testing.assert_array_equal(t.apply(np.array([[1.0, 1, 1]])), [[2, 2, 2]])

    def test_invert_identity(self):
        assert invert(RigidScaleTransform.identity()).is_identity()

    def test_invert_translation(self):
        inv = invert(RigidScaleTransform(translation=[1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(inv.translation, [-1, -2, -3])
        assert inv.scale == 1.0

    def test_round_trip(self, rng):
        for _ in range(50):
            t = random_transform(rng)
            pts = rng.normal(size=(20, 3)) * 5
            back = invert(t).apply(t.apply(pts))
            assert np.abs(back - pts).max() < 1e-9

    def test_composition(self, rng):
        for _ in range(50):
            t1, t2 = random_transform(rng), random_transform(rng)
            pts = rng.normal(size=(20, 3))
            np.testing.assert_allclose(compose(t2, t1).apply(pts), t2.apply(t1.apply(pts)), atol=1e-9)

    def test_preserves_count_and_order(self, rng):
        cloud = PointCloud(rng.normal(size=(7, 3)), label=3)
        out = apply_transform(cloud, RigidScaleTransform(translation=[1.0, 0, 0]))
        np.testing.assert_array_equal(out.points, cloud.points + [1.0, 0, 0])
        assert out.label == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rotation": np.diag([1.0, 1.0, -1.0])},
            {"rotation": np.eye(3) * 1.001},
            {"scale": 0.0},
            {"scale": -1.0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            RigidScaleTransform(**kwargs)

    def test_euler_order_is_xyz(self):
        ax, ay, az = 0.1, 0.2, 0.3
        r = euler_rotation(ax, ay, az)
        np.testing.assert_allclose(r, euler_rotation(ax, 0, 0) @ euler_rotation(0, ay, 0) @ euler_rotation(0, 0, az))
        assert not np.allclose(r, euler_rotation(0, 0, az) @ euler_rotation(0, ay, 0) @ euler_rotation(ax, 0, 0))


class TestPointCloud:
    @pytest.mark.parametrize("pts", [np.zeros((0, 3)), np.zeros((4, 2)), np.array([[np.nan, 0, 0]])])
    def test_invalid(self, pts):
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_extent(self):
        cloud = PointCloud([[0.0, 0, 0], [1, 2, 3]])
        np.testing.assert_array_equal(cloud.extent(), [1, 2, 3])


class TestNormalize:
    def test_two_points(self):
        out = normalize_unit_sphere(PointCloud([[0.0, 0, 0], [2, 0, 0]]))
        np.testing.assert_array_equal(out.points, [[-1, 0, 0], [1, 0, 0]])

    def test_already_normalized(self):
        pts = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 0.5, 0], [0, -0.5, 0]])
        np.testing.assert_allclose(normalize_unit_sphere(PointCloud(pts)).points, pts, atol=1e-12)

    def test_degenerate_maps_to_origin(self):
        out = normalize_unit_sphere(PointCloud(np.full((5, 3), 2.5)))
        np.testing.assert_array_equal(out.points, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 200), st.integers(0, 2**31), st.floats(0.01, 100))
    def test_properties(self, n, seed, spread):
        pts = np.random.default_rng(seed).normal(size=(n, 3)) * spread + 3.0
        out = normalize_unit_sphere(PointCloud(pts))
        assert abs(np.linalg.norm(out.points, axis=1).max() - 1.0) < 1e-9
        np.testing.assert_allclose(out.points.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(normalize_unit_sphere(out).points, out.points, atol=1e-9)


class TestTemporal:
    def test_all_parts_skipped(self, rng):
        cfg = TemporalConfig(part_prob=0.0)
        assert sample_temporal_transform(rng, cfg, np.ones(3)).is_identity()

    def test_disabled_parts(self, rng):
        cfg = TemporalConfig(part_prob=1.0, use_rotation=False, use_scaling=False)
        t = sample_temporal_transform(rng, cfg, np.ones(3))
        np.testing.assert_array_equal(t.rotation, np.eye(3))
        assert t.scale == 1.0 and np.any(t.translation != 0)

    def test_variate_count_independent_of_coins(self):
        a, b = RngStream(5), RngStream(5)
        sample_temporal_transform(a, TemporalConfig(part_prob=0.0), np.ones(3))
        sample_temporal_transform(b, TemporalConfig(part_prob=1.0), np.ones(3))
        assert a.random() == b.random()

    def test_bounds_always_applied(self, rng):
        cfg = TemporalConfig(part_prob=1.0)
        extent = np.array([1.0, 2.0, 4.0])
        for i in range(500):
            t = sample_temporal_transform(rng.child(i), cfg, extent)
            assert 0.8 <= t.scale <= 1.25
            assert np.all(np.abs(t.translation) <= 0.1 * extent)
            assert np.arccos(np.clip((np.trace(t.rotation) - 1) / 2, -1, 1)) <= np.deg2rad(15) * np.sqrt(3) + 1e-12

    def test_same_stream_same_transform(self):
        cfg = TemporalConfig()
        t1 = sample_temporal_transform(RngStream(3), cfg, np.ones(3))
        t2 = sample_temporal_transform(RngStream(3), cfg, np.ones(3))
        assert t1.rotation.tobytes() == t2.rotation.tobytes() and t1.scale == t2.scale

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TemporalConfig(scale_range=(1.25, 0.8))
        with pytest.raises(ValueError):
            TemporalConfig(part_prob=1.5)


INTR = CameraIntrinsics(fx=50.0, fy=40.0, cx=9.5, cy=7.0, width=20, height=15)


class TestCamera:
    def test_principal_point(self):
        depth = np.zeros((15, 20))
        depth[7, 9] = 2.0
        intr = CameraIntrinsics(50.0, 40.0, 9.0, 7.0, 20, 15)
        np.testing.assert_array_equal(backproject(depth, intr, CameraPose()).points, [[0, 0, 2]])

    def test_pinhole_x(self):
        depth = np.zeros((1, 2))
        depth[0, 1] = 2.0
        intr = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 1)
        assert backproject(depth, intr, CameraPose()).points[0, 0] == 2.0

    def test_translation_shifts_points(self, rng):
        depth = rng.uniform(1, 3, (15, 20))
        a = backproject(depth, INTR, CameraPose()).points
        b = backproject(depth, INTR, CameraPose(translation=[1.0, 0, 0])).points
        np.testing.assert_allclose(b - a, np.tile([1.0, 0, 0], (len(a), 1)), atol=1e-15)

    def test_zero_pixels_skipped(self, rng):
        depth = rng.uniform(1, 3, (15, 20))
        depth[::2] = 0.0
        assert len(backproject(depth, INTR, CameraPose())) == int((depth > 0).sum())

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError, match="no valid pixels"):
            backproject(np.zeros((15, 20)), INTR, CameraPose())

    def test_project_inverts_backproject(self, rng):
        for _ in range(20):
            depth = rng.uniform(0.5, 10, (15, 20)) * (rng.random((15, 20)) > 0.2)
            pose = CameraPose(euler_rotation(*rng.uniform(-np.pi, np.pi, 3)), rng.normal(size=3) * 3)
            uvd = project(backproject(depth, INTR, pose).points, INTR, pose)
            v, u = np.nonzero(depth > 0)
            np.testing.assert_allclose(uvd, np.column_stack([u, v, depth[v, u]]), rtol=0, atol=1e-9)

    def test_intrinsics_validated(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 4, 4)
        with pytest.raises(ValueError, match="principal point"):
            CameraIntrinsics(1.0, 1.0, 4.0, 0.0, 4, 4)
