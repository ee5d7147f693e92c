import numpy as np
import pytest

from splat4d import _threads
from splat4d.geometry import Intrinsics, PoseSE3, project
from splat4d.model import GaussianModel4D, inverse_sigmoid
from splat4d.rasterizer import (
    ParamGrads,
    project_splats,
    render,
    render_backward,
    render_training,
)

from oracles import brute_force_render

K32 = Intrinsics(fx=40.0, fy=40.0, cx=16.0, cy=16.0, width=32, height=32)
K48 = Intrinsics(fx=55.0, fy=50.0, cx=23.5, cy=24.5, width=48, height=48)
IDENTITY = PoseSE3.identity()


def build_model(mu3, s, o, rgb, mu_t=None, s_t=10.0, fps=30.0):
    mu3 = np.atleast_2d(np.asarray(mu3, float))
    n = len(mu3)
    mu_t = np.zeros(n) if mu_t is None else np.asarray(mu_t, float)
    s = np.broadcast_to(np.asarray(s, float), (n,))
    o = np.broadcast_to(np.asarray(o, float), (n,))
    s_t = np.broadcast_to(np.asarray(s_t, float), (n,))
    rgb = np.broadcast_to(np.asarray(rgb, float), (n, 3))
    return GaussianModel4D(
        mu=np.column_stack([mu3, mu_t]),
        log_s_xyz=np.log(s).copy(),
        log_s_t=np.log(s_t).copy(),
        opacity_logit=inverse_sigmoid(o.copy()),
        rgb=np.array(rgb),
        is_dynamic=np.zeros(n, bool),
        video_length=1.0,
        fps=fps,
        mode="lite",
    )


def random_model(rng, n, spread=1.0, z_range=(2.0, 6.0), o_range=(0.02, 0.9)):
    mu3 = np.column_stack(
        [
            rng.uniform(-spread, spread, n),
            rng.uniform(-spread, spread, n),
            rng.uniform(*z_range, n),
        ]
    )
    return build_model(
        mu3,
        s=rng.uniform(0.03, 0.25, n),
        o=rng.uniform(*o_range, n),
        rgb=rng.uniform(0.05, 0.95, (n, 3)),
        mu_t=rng.uniform(-0.1, 0.1, n),
        s_t=rng.uniform(0.5, 3.0, n),
    )


class TestForwardClosedForm:
    def test_single_gaussian_center_pixel(self):
        m = build_model([[0, 0, 2.0]], s=0.05, o=0.3, rgb=[0.8, 0.4, 0.2])
        fr = render(m, IDENTITY, K32, t=0.0)
        np.testing.assert_allclose(fr.rgb[16, 16], 0.3 * np.array([0.8, 0.4, 0.2]), rtol=1e-14)
        assert fr.alpha[16, 16] == pytest.approx(0.3, rel=1e-14)
        assert fr.depth[16, 16] == pytest.approx(2.0, rel=1e-12)
        assert fr.meta["survivor_count"] == 1

    def test_two_gaussians_composite_front_to_back(self):
        # Both project to the center pixel; submission order is back-first,
        # so the depth sort must flip them.
        m = build_model(
            [[0, 0, 4.0], [0, 0, 2.0]], s=0.05, o=[0.4, 0.3], rgb=[[0, 1, 0], [1, 0, 0]]
        )
        fr = render(m, IDENTITY, K32, t=0.0)
        a1, a2 = 0.3, 0.4  # near first
        expected = a1 * np.array([1, 0, 0]) + (1 - a1) * a2 * np.array([0, 1, 0])
        np.testing.assert_allclose(fr.rgb[16, 16], expected, rtol=1e-14)
        assert fr.alpha[16, 16] == pytest.approx(a1 + (1 - a1) * a2, rel=1e-14)
        z_expect = (a1 * 2.0 + (1 - a1) * a2 * 4.0) / (a1 + (1 - a1) * a2)
        assert fr.depth[16, 16] == pytest.approx(z_expect, rel=1e-12)

    def test_temporal_opacity_modulates_pixel(self):
        m = build_model([[0, 0, 2.0]], s=0.05, o=0.3, rgb=[1, 1, 1], mu_t=[0.5], s_t=0.2)
        for t in (0.5, 0.62):
            fr = render(m, IDENTITY, K32, t=t)
            g = np.exp(-0.5 * ((t - 0.5) / 0.2) ** 2)
            assert fr.rgb[16, 16, 0] == pytest.approx(0.3 * g, rel=1e-13)

    def test_alpha_is_one_minus_final_transmittance(self):
        rng = np.random.default_rng(0)
        m = random_model(rng, 60)
        fr, ctx = render_training(m, IDENTITY, K48, t=0.0)
        np.testing.assert_allclose(fr.alpha, 1.0 - ctx.final_T, atol=1e-12)


class TestAgainstBruteForce:
    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_random_scene_matches(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(rng, 80)
        fr = render(m, IDENTITY, K48, t=0.0)
        rgb, alpha, depth = brute_force_render(m, IDENTITY, K48, 0.0)
        np.testing.assert_allclose(fr.rgb, rgb, atol=1e-12)
        np.testing.assert_allclose(fr.alpha, alpha, atol=1e-12)
        np.testing.assert_allclose(fr.depth, depth, atol=1e-10)

    def test_offcenter_camera_matches(self):
        rng = np.random.default_rng(9)
        m = random_model(rng, 50)
        angle = 0.3
        R = np.array(
            [
                [np.cos(angle), 0, np.sin(angle)],
                [0, 1, 0],
                [-np.sin(angle), 0, np.cos(angle)],
            ]
        )
        pose = PoseSE3(rotation=R, translation=np.array([0.4, -0.2, -0.5]))
        fr = render(m, pose, K48, t=0.0)
        rgb, alpha, _ = brute_force_render(m, pose, K48, 0.0)
        np.testing.assert_allclose(fr.rgb, rgb, atol=1e-12)
        np.testing.assert_allclose(fr.alpha, alpha, atol=1e-12)


class TestCulling:
    def test_time_culling_is_lossless_and_reported(self):
        rng = np.random.default_rng(3)
        m = random_model(rng, 40)
        # Push some Gaussians far away in time: tiny temporal opacity.
        m.mu[::3, 3] = 50.0
        m.log_s_t[::3] = np.log(0.1)
        culled = render(m, IDENTITY, K48, t=0.0, cull_epsilon=1.0 / 255.0)
        full = render(m, IDENTITY, K48, t=0.0, cull_epsilon=0.0)
        np.testing.assert_array_equal(culled.rgb, full.rgb)
        np.testing.assert_array_equal(culled.alpha, full.alpha)
        assert culled.meta["survivor_count"] < full.meta["survivor_count"]

    def test_behind_camera_and_near_plane(self):
        m = build_model(
            [[0, 0, -2.0], [0, 0, 0.1], [0, 0, 2.0]], s=0.05, o=0.3, rgb=[1, 0, 0]
        )
        fr = render(m, IDENTITY, K32, t=0.0)
        assert fr.meta["survivor_count"] == 1
        assert fr.rgb[16, 16, 0] == pytest.approx(0.3, rel=1e-14)

    def test_all_culled_gives_empty_frame(self):
        m = build_model([[0, 0, 2.0]], s=0.05, o=0.3, rgb=[1, 1, 1], mu_t=[99.0], s_t=0.01)
        fr = render(m, IDENTITY, K32, t=0.0)
        assert fr.meta["survivor_count"] == 0
        assert not fr.rgb.any() and not fr.alpha.any()

    def test_negative_epsilon_rejected(self):
        m = build_model([[0, 0, 2.0]], s=0.05, o=0.3, rgb=[1, 1, 1])
        with pytest.raises(ValueError):
            render(m, IDENTITY, K32, t=0.0, cull_epsilon=-0.1)


class TestDeterminism:
    def test_thread_count_invariance(self):
        rng = np.random.default_rng(5)
        m = random_model(rng, 120)
        results = []
        for n in (1, 8):
            applied = _threads.set_threads(n)
            assert applied == n
            fr, ctx = render_training(m, IDENTITY, K48, t=0.0)
            g = render_backward(ctx, np.ones((48, 48, 3)), train_temporal=True)
            results.append((fr.rgb.copy(), fr.alpha.copy(), g))
        _threads.set_threads(_threads.max_threads())
        (r1, a1, g1), (r8, a8, g8) = results
        np.testing.assert_array_equal(r1, r8)
        np.testing.assert_array_equal(a1, a8)
        for name in ("mu", "log_s_xyz", "log_s_t", "opacity_logit", "rgb"):
            np.testing.assert_array_equal(getattr(g1, name), getattr(g8, name))

    def test_row_permutation_invariance_with_distinct_depths(self):
        rng = np.random.default_rng(6)
        m = random_model(rng, 50)
        fr = render(m, IDENTITY, K48, t=0.0)
        perm = rng.permutation(m.n)
        fr_p = render(m.take(perm), IDENTITY, K48, t=0.0)
        np.testing.assert_array_equal(fr.rgb, fr_p.rgb)
        np.testing.assert_array_equal(fr.alpha, fr_p.alpha)

    def test_repeat_render_bitwise_stable(self):
        rng = np.random.default_rng(7)
        m = random_model(rng, 70)
        a = render(m, IDENTITY, K48, t=0.0)
        b = render(m, IDENTITY, K48, t=0.0)
        np.testing.assert_array_equal(a.rgb, b.rgb)


class TestFrozenTermination:
    def test_saturated_stack_freezes_and_ignores_backdrop(self):
        n = 60
        mu3 = np.tile([0.0, 0.0, 2.0], (n, 1))
        mu3[:, 2] += np.linspace(0, 0.5, n)
        m = build_model(mu3, s=0.2, o=0.95, rgb=[0.9, 0.5, 0.1])
        fr, ctx = render_training(m, IDENTITY, K32, t=0.0)
        assert np.isfinite(fr.rgb).all()
        # Freeze skips the crossing contribution, so transmittance can
        # never actually drop below the floor...
        assert ctx.final_T.min() >= 1e-4
        # ...and the center lane stops long before the 60 available splats.
        assert ctx.final_T[16, 16] == pytest.approx(0.05**3, rel=1e-9)
        assert 0 < ctx.n_contrib[16, 16] <= 6
        assert fr.alpha.max() <= 1.0 + 1e-12

        # A splat far behind the frozen core cannot change the image.
        mu3b = np.vstack([mu3, [[0.0, 0.0, 9.0]]])
        m2 = build_model(
            mu3b,
            s=np.r_[np.full(n, 0.2), 0.01],
            o=np.r_[np.full(n, 0.95), 0.9],
            rgb=[0.9, 0.5, 0.1],
        )
        fr2 = render(m2, IDENTITY, K32, t=0.0)
        np.testing.assert_array_equal(fr.rgb[14:19, 14:19], fr2.rgb[14:19, 14:19])

    def test_contributions_match_brute_force_under_saturation(self):
        rng = np.random.default_rng(8)
        m = random_model(rng, 90, o_range=(0.5, 0.98), z_range=(2.0, 3.0))
        fr = render(m, IDENTITY, K48, t=0.0)
        rgb, alpha, _ = brute_force_render(m, IDENTITY, K48, 0.0)
        np.testing.assert_allclose(fr.rgb, rgb, atol=1e-12)
        np.testing.assert_allclose(fr.alpha, alpha, atol=1e-12)


class TestProjection:
    def test_mean2d_matches_point_projection(self):
        rng = np.random.default_rng(10)
        m = random_model(rng, 30)
        proj = project_splats(m, IDENTITY, K48, t=0.0, cull_epsilon=0.0)
        for row, splat in enumerate(proj.idx):
            px, z = project(m.mu[splat, :3], IDENTITY, K48)
            np.testing.assert_allclose(proj.mean2d[row], px, rtol=1e-12)
            assert proj.t_cam[row, 2] == pytest.approx(z)

    def test_radius_matches_eigen_decomposition(self):
        rng = np.random.default_rng(11)
        m = random_model(rng, 40)
        proj = project_splats(m, IDENTITY, K48, t=0.0, cull_epsilon=0.0)
        A, B, C = proj.cov2d[:, 0], proj.cov2d[:, 1], proj.cov2d[:, 2]
        mats = np.stack(
            [np.stack([A, B], axis=1), np.stack([B, C], axis=1)], axis=1
        )
        lam = np.linalg.eigvalsh(mats)[:, 1]
        np.testing.assert_array_equal(
            proj.radius, np.ceil(3.0 * np.sqrt(lam + 1e-300)).astype(np.int64)
        )

    def test_conic_inverts_cov2d(self):
        rng = np.random.default_rng(12)
        m = random_model(rng, 25)
        proj = project_splats(m, IDENTITY, K48, t=0.0, cull_epsilon=0.0)
        for i in range(len(proj.idx)):
            A, B, C = proj.cov2d[i]
            a, b, c = proj.conic[i]
            prod = np.array([[A, B], [B, C]]) @ np.array([[a, b], [b, c]])
            np.testing.assert_allclose(prod, np.eye(2), atol=1e-10)


def scalar_loss(model, pose, K, t, weights, train_temporal):
    fr = render(model, pose, K, t, cull_epsilon=0.0)
    return float((weights * fr.rgb).sum())


def analytic_grads(model, pose, K, t, weights, train_temporal):
    _, ctx = render_training(model, pose, K, t, cull_epsilon=0.0)
    return render_backward(ctx, weights, train_temporal=train_temporal)


def fd_grad(fn, arr, i, h=1e-4):
    orig = arr.flat[i]
    arr.flat[i] = orig + h
    hi = fn()
    arr.flat[i] = orig - h
    lo = fn()
    arr.flat[i] = orig
    return (hi - lo) / (2 * h)


class TestGradients:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(13)
        m = random_model(rng, 20)
        _, ctx = render_training(m, IDENTITY, K48, t=0.0)
        g = render_backward(ctx, np.zeros((48, 48, 3)), train_temporal=True)
        for name in ("mu", "log_s_xyz", "log_s_t", "opacity_logit", "rgb"):
            assert not getattr(g, name).any()

    def test_time_culled_rows_get_zero_grads(self):
        m = build_model(
            [[0, 0, 2.0], [0.2, 0, 2.5]],
            s=0.1,
            o=0.3,
            rgb=[0.5, 0.5, 0.5],
            mu_t=[0.0, 99.0],
            s_t=[10.0, 0.01],
        )
        _, ctx = render_training(m, IDENTITY, K32, t=0.0)
        g = render_backward(ctx, np.ones((32, 32, 3)), train_temporal=True)
        assert g.rgb[0].any()
        assert not g.mu[1].any() and not g.rgb[1].any()
        assert not g.opacity_logit[1] and not g.log_s_xyz[1]

    def test_gradcheck_all_lanes(self):
        # The compositor's only discontinuities are per-pixel thresholds
        # (the 1/255 contribution cutoff, the 0.99 opacity ceiling, the
        # transmittance freeze, and footprint-rectangle edges). The scene
        # keeps every one of them out of reach of the finite-difference
        # probe: splats are wide enough that their footprint covers the
        # whole image with margin and their weakest in-frame contribution
        # stays far above 1/255, opacities stay moderate so transmittance
        # never approaches the freeze floor, and colors stay inside (0, 1).
        rng = np.random.default_rng(42)
        K = Intrinsics(fx=30.0, fy=32.0, cx=11.5, cy=12.5, width=24, height=24)
        n = 3
        m = build_model(
            np.column_stack(
                [rng.uniform(-0.25, 0.25, n), rng.uniform(-0.25, 0.25, n), rng.uniform(2.2, 3.0, n)]
            ),
            s=rng.uniform(1.6, 2.2, n),
            o=rng.uniform(0.15, 0.3, n),
            rgb=rng.uniform(0.2, 0.8, (n, 3)),
            mu_t=rng.uniform(-0.15, 0.15, n),
            s_t=rng.uniform(0.4, 0.7, n),
        )
        weights = rng.uniform(0.2, 1.0, (24, 24, 3))
        loss = lambda: scalar_loss(m, IDENTITY, K, 0.1, weights, True)
        g = analytic_grads(m, IDENTITY, K, 0.1, weights, True)

        checks = [
            ("mu", m.mu, g.mu),
            ("log_s_xyz", m.log_s_xyz, g.log_s_xyz),
            ("log_s_t", m.log_s_t, g.log_s_t),
            ("opacity_logit", m.opacity_logit, g.opacity_logit),
            ("rgb", m.rgb, g.rgb),
        ]
        worst = 0.0
        for name, arr, grad in checks:
            for i in range(arr.size):
                fd = fd_grad(loss, arr, i)
                an = grad.flat[i]
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                worst = max(worst, rel)
                assert rel < 1e-3, f"{name}[{i}]: fd={fd:.8g} analytic={an:.8g} rel={rel:.2e}"
        assert worst < 1e-3

    def test_backward_shape_validation(self):
        m = build_model([[0, 0, 2.0]], s=0.05, o=0.3, rgb=[1, 1, 1])
        _, ctx = render_training(m, IDENTITY, K32, t=0.0)
        with pytest.raises(ValueError):
            render_backward(ctx, np.ones((16, 16, 3)))

    def test_param_grads_zeros_helper(self):
        g = ParamGrads.zeros(4)
        assert g.mu.shape == (4, 4) and g.rgb.shape == (4, 3)
