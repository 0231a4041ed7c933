import numpy as np
import pytest

from stssl.data import (
    SHAPE_CLASSES,
    Box,
    Plane,
    SceneConfig,
    Sphere,
    ToyShapeConfig,
    camera_path,
    generate_depth_sequence,
    generate_toy_shapes,
    random_rotation,
    render_depth,
    sample_shape,
)
from stssl.geometry import CameraPose, backproject
from stssl.rng import RngStream


def mean_pairwise_distance(pts):
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    return d[np.triu_indices(len(pts), 1)].mean()


class TestToyShapes:
    def test_sphere_norms(self, rng):
        pts = sample_shape("sphere", rng, 500)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("name", SHAPE_CLASSES)
    def test_every_class_samples(self, name, rng):
        pts = sample_shape(name, rng, 300, noise_sigma=0.01, random_pose=True)
        assert pts.shape == (300, 3) and np.all(np.isfinite(pts))

    def test_cube_points_on_faces(self, rng):
        pts = sample_shape("cube-surface", rng, 600)
        np.testing.assert_allclose(np.abs(pts).max(axis=1), 1.0)
        faces = np.argmax(np.abs(pts), axis=1) * 2 + (pts[np.arange(600), np.argmax(np.abs(pts), axis=1)] > 0)
        assert np.bincount(faces, minlength=6).min() > 60

    def test_torus_surface(self, rng):
        pts = sample_shape("torus", rng, 400)
        ring = np.sqrt(pts[:, 0] ** 2 + pts[:, 1] ** 2)
        np.testing.assert_allclose((ring - 1.0) ** 2 + pts[:, 2] ** 2, 0.35 ** 2, atol=1e-12)

    def test_count_and_labels(self, rng):
        cfg = ToyShapeConfig(classes=("sphere", "cone", "torus"), samples_per_class=4, points_per_shape=20)
        clouds = generate_toy_shapes(rng, cfg)
        assert len(clouds) == 12
        assert [c.label for c in clouds] == [0] * 4 + [1] * 4 + [2] * 4

    def test_deterministic(self):
        cfg = ToyShapeConfig(samples_per_class=4, points_per_shape=16)
        a = generate_toy_shapes(RngStream(2), cfg)
        b = generate_toy_shapes(RngStream(2), cfg)
        assert all(x.points.tobytes() == y.points.tobytes() for x, y in zip(a, b))

    def test_sphere_cube_separated(self, rng):
        # mean pairwise distance is pose invariant: sphere ~4/3, cube surface noticeably larger
        sph = [mean_pairwise_distance(sample_shape("sphere", rng.child("s").child(i), 200, 0.01, True)) for i in range(100)]
        cub = [mean_pairwise_distance(sample_shape("cube-surface", rng.child("c").child(i), 200, 0.01, True)) for i in range(100)]
        gap = abs(np.mean(sph) - np.mean(cub))
        se = np.sqrt(np.var(sph) / 100 + np.var(cub) / 100)
        assert gap > 3 * se

    def test_rotation_valid(self, rng):
        for i in range(20):
            r = random_rotation(rng.child(i))
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "kwargs",
        [{"classes": ("sphere",)}, {"classes": ("sphere", "blob")}, {"samples_per_class": 3}, {"noise_sigma": -1.0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ToyShapeConfig(**kwargs)


class TestRendering:
    def test_plane_center_depth(self):
        cfg = SceneConfig(width=41, height=31)
        depth = render_depth([Plane(np.array([0, 0, 2.0]), np.array([0, 0, -1.0]))], cfg.intrinsics(), CameraPose())
        assert depth[15, 20] == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(depth, 2.0, atol=1e-12)  # depth is z, not range

    def test_sphere_and_box_hits(self):
        cfg = SceneConfig(width=21, height=21)
        intr = cfg.intrinsics()
        d_s = render_depth([Sphere(np.array([0, 0, 5.0]), 1.0)], intr, CameraPose())
        assert d_s[10, 10] == pytest.approx(4.0)
        d_b = render_depth([Box(np.array([-1, -1, 3.0]), np.array([1, 1, 4.0]))], intr, CameraPose())
        assert d_b[10, 10] == pytest.approx(3.0)
        assert d_s[0, 0] == 0.0

    def test_occlusion_takes_nearest(self):
        cfg = SceneConfig(width=11, height=11)
        prims = [Plane(np.array([0, 0, 6.0]), np.array([0, 0, -1.0])), Sphere(np.array([0, 0, 3.0]), 0.5)]
        depth = render_depth(prims, cfg.intrinsics(), CameraPose())
        assert depth[5, 5] == pytest.approx(2.5) and depth[0, 0] == pytest.approx(6.0)

    def test_camera_path_smooth(self, rng):
        poses = camera_path(rng, SceneConfig())
        assert len(poses) == 250
        for a, b in zip(poses, poses[1:]):
            rel = a.rotation.T @ b.rotation
            angle = np.degrees(np.arccos(np.clip((np.trace(rel) - 1) / 2, -1, 1)))
            assert angle < 2.0

    def test_degenerate_path(self, rng):
        with pytest.raises(ValueError, match="degenerate"):
            camera_path(rng, SceneConfig(path_extent=0.0, max_yaw_deg=0.0))

    def test_sequence_frames_agree(self, rng):
        cfg = SceneConfig(n_frames=200)
        seq = generate_depth_sequence(rng, cfg)
        assert len(seq) == 200
        intr = seq.intrinsics
        a = backproject(seq.frames[0], intr, seq.poses[0]).points
        b = backproject(seq.frames[1], intr, seq.poses[1]).points
        gaps = np.array([np.sqrt(((b - p) ** 2).sum(axis=1)).min() for p in a])
        footprint = np.median(seq.frames[0][seq.frames[0] > 0]) / intr.fx
        assert np.median(gaps) < 2 * footprint
