import numpy as np
import pytest

from splat4d.geometry import (
    DepthMap,
    Intrinsics,
    PoseSE3,
    back_project,
    back_project_grid,
    project,
    project_points,
)


def random_pose(rng: np.random.Generator) -> PoseSE3:
    # Uniform random rotation via QR of a Gaussian matrix, sign-fixed to det +1.
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return PoseSE3(q, rng.uniform(-3, 3, size=3))


K = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


class TestProjectExamples:
    def test_on_axis_point(self):
        pixel, depth = project(np.array([0.0, 0.0, 2.0]), PoseSE3.identity(), K)
        np.testing.assert_allclose(pixel, [50.0, 50.0])
        assert depth == 2.0

    def test_off_axis_point(self):
        pixel, depth = project(np.array([1.0, 0.0, 2.0]), PoseSE3.identity(), K)
        np.testing.assert_allclose(pixel, [100.0, 50.0])
        assert depth == 2.0

    def test_behind_camera_rejected(self):
        with pytest.raises(ValueError, match="behind"):
            project(np.array([0.0, 0.0, -1.0]), PoseSE3.identity(), K)


class TestBackProjectExamples:
    def test_principal_point_ray(self):
        p = back_project(np.array([50.0, 50.0]), 3.0, PoseSE3.identity(), K)
        np.testing.assert_allclose(p, [0.0, 0.0, 3.0])

    def test_unit_tangent_offset(self):
        p = back_project(np.array([150.0, 50.0]), 1.0, PoseSE3.identity(), K)
        np.testing.assert_allclose(p, [1.0, 0.0, 1.0])

    def test_matrix_arithmetic_oracle(self):
        # Independent oracle: X = G @ (d * K^-1 @ [u, v, 1]) in homogeneous form.
        pose = PoseSE3(np.eye(3), np.array([1.0, 2.0, 3.0]))
        u, v, d = 10.0, 20.0, 2.5
        Kinv = np.linalg.inv(K.matrix)
        cam = Kinv @ np.array([u, v, 1.0]) * d
        expected = (pose.matrix @ np.append(cam, 1.0))[:3]
        got = back_project(np.array([u, v]), d, pose, K)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError, match="depth"):
            back_project(np.array([50.0, 50.0]), 0.0, PoseSE3.identity(), K)


class TestRoundTrip:
    def test_project_back_project_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            pose = random_pose(rng)
            pixel = rng.uniform(0, [K.width, K.height])
            depth = rng.uniform(0.1, 50.0)
            world = back_project(pixel, depth, pose, K)
            pixel2, depth2 = project(world, pose, K)
            np.testing.assert_allclose(pixel2, pixel, atol=1e-6)
            assert abs(depth2 - depth) < 1e-6

    def test_back_projection_linear_in_depth(self):
        rng = np.random.default_rng(3)
        pose = random_pose(rng)
        c = pose.camera_center
        p = np.array([12.0, 77.0])
        a = back_project(p, 1.5, pose, K) - c
        b = back_project(p, 3.0, pose, K) - c
        np.testing.assert_allclose(b, 2.0 * a, atol=1e-9)


class TestPoseAlgebra:
    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            g = random_pose(rng)
            np.testing.assert_allclose(g.inverse().inverse().matrix, g.matrix, atol=1e-9)
            np.testing.assert_allclose(g.compose(g.inverse()).matrix, np.eye(4), atol=1e-9)

    def test_composition_associative(self):
        rng = np.random.default_rng(13)
        a, b, c = (random_pose(rng) for _ in range(3))
        m1 = a.compose(b).compose(c).matrix
        m2 = a.compose(b.compose(c)).matrix
        np.testing.assert_allclose(m1, m2, atol=1e-9)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError, match="orthonormal"):
            PoseSE3(np.eye(3) * 1.01, np.zeros(3))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            PoseSE3(m, np.zeros(3))

    def test_from_matrix_roundtrip(self):
        g = random_pose(np.random.default_rng(17))
        np.testing.assert_allclose(PoseSE3.from_matrix(g.matrix).matrix, g.matrix)


class TestIntrinsics:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            Intrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
        with pytest.raises(ValueError):
            Intrinsics(fx=1, fy=1, cx=20, cy=0, width=10, height=10)

    def test_from_fov_y(self):
        k = Intrinsics.from_fov_y(90.0, 640, 360)
        assert k.fy == pytest.approx(180.0)
        assert k.fx == k.fy
        assert (k.cx, k.cy) == (320.0, 180.0)

    def test_scaled_preserves_rays(self):
        k = Intrinsics(fx=200, fy=180, cx=120, cy=90, width=256, height=192)
        k2 = k.scaled(512, 384)
        # The same normalized ray lands at proportionally scaled pixels.
        p1 = back_project(np.array([30.0, 40.0]), 2.0, PoseSE3.identity(), k)
        p2 = back_project(np.array([60.0, 80.0]), 2.0, PoseSE3.identity(), k2)
        np.testing.assert_allclose(p1, p2, atol=1e-12)


class TestDepthMap:
    def test_auto_valid_mask(self):
        v = np.array([[1.0, 0.0], [np.inf, 2.0]])
        d = DepthMap(v)
        np.testing.assert_array_equal(d.valid, [[True, False], [False, True]])

    def test_rejects_bad_explicit_mask(self):
        with pytest.raises(ValueError, match="non-finite or non-positive"):
            DepthMap(np.array([[1.0, -1.0]]), valid=np.array([[True, True]]))


class TestVectorizedPaths:
    def test_project_points_matches_scalar(self):
        rng = np.random.default_rng(23)
        pose = random_pose(rng)
        pts = np.array([back_project(rng.uniform(0, 100, 2), rng.uniform(0.5, 5), pose, K) for _ in range(64)])
        pix, z, ok = project_points(pts, pose, K)
        assert ok.all()
        for i in range(len(pts)):
            p, d = project(pts[i], pose, K)
            np.testing.assert_allclose(pix[i], p, atol=1e-9)
            assert abs(z[i] - d) < 1e-9

    def test_back_project_grid_matches_scalar(self):
        rng = np.random.default_rng(29)
        pose = random_pose(rng)
        k = Intrinsics(fx=40, fy=45, cx=16, cy=12, width=32, height=24)
        vals = rng.uniform(0.5, 4.0, size=(24, 32))
        vals[3, 5] = np.nan
        depth = DepthMap(vals)
        pts, flat = back_project_grid(depth, pose, k)
        assert len(pts) == 24 * 32 - 1
        # Spot-check a handful against the scalar path.
        for idx in [0, 100, 500, len(pts) - 1]:
            v, u = divmod(int(flat[idx]), 32)
            expected = back_project(np.array([float(u), float(v)]), vals[v, u], pose, k)
            np.testing.assert_allclose(pts[idx], expected, atol=1e-12)

    def test_back_project_grid_stride(self):
        depth = DepthMap(np.full((8, 8), 2.0))
        pts, flat = back_project_grid(depth, PoseSE3.identity(), Intrinsics(10, 10, 4, 4, 8, 8), stride=2)
        assert len(pts) == 16
        assert set(flat.tolist()) == {v * 8 + u for v in range(0, 8, 2) for u in range(0, 8, 2)}

    def test_coplanar_constant_depth(self):
        # Constant-depth plane seen by an identity camera back-projects onto z = d.
        depth = DepthMap(np.full((16, 16), 3.0))
        pts, _ = back_project_grid(depth, PoseSE3.identity(), Intrinsics(20, 20, 8, 8, 16, 16))
        np.testing.assert_allclose(pts[:, 2], 3.0, atol=1e-12)
