import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stereosim.core import DepthMap, ShapeMismatchError, StereoRig, ValidationError
from stereosim.metrics import (
    LossWeights,
    PoseSample,
    accuracy_auc,
    add_error,
    adds_error,
    confidence_fusion,
    depth_metrics,
    gradient_from_depth,
    mean_reports,
    normals_from_depth,
    normals_from_points,
    pose_accuracy,
    pose_report,
    resize_nearest,
    restoration_loss,
)
from stereosim.scenegen import RigidTransform


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def depth(values, mask=None):
    return DepthMap(np.asarray(values, dtype=np.float64), mask)


def metrics_oracle(pred, gt, pm, gm):
    se = ae = rel = 0.0
    inl = [0, 0, 0]
    n = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if not (pm[y, x] and gm[y, x]):
                continue
            p, g = float(pred[y, x]), float(gt[y, x])
            n += 1
            se += (p - g) ** 2
            ae += abs(p - g)
            rel += abs(p - g) / g
            r = max(p / g, g / p)
            for i, t in enumerate((1.05, 1.10, 1.25)):
                inl[i] += r < t
    return math.sqrt(se / n), rel / n, ae / n, [c / n for c in inl], n


class TestDepthMetrics:
    def test_perfect(self, rng):
        g = depth(rng.uniform(0.5, 3, (5, 6)))
        r = depth_metrics(g, g)
        assert (r.rmse, r.rel, r.mae) == (0, 0, 0)
        assert (r.delta_105, r.delta_110, r.delta_125) == (1, 1, 1)
        assert r.n_evaluated == 30

    def test_constant_offset(self):
        r = depth_metrics(depth(np.full((4, 4), 1.2)), depth(np.ones((4, 4))))
        assert r.mae == pytest.approx(0.2) and r.rel == pytest.approx(0.2) and r.rmse == pytest.approx(0.2)
        assert (r.delta_105, r.delta_110, r.delta_125) == (0, 0, 1)

    def test_against_loop_oracle(self, rng):
        for _ in range(20):
            p, g = rng.uniform(0.3, 4, (2, 4, 4))
            pm, gm = rng.random((2, 4, 4)) > 0.2
            pm[0, 0] = gm[0, 0] = True
            r = depth_metrics(depth(p, pm), depth(g, gm))
            rmse, rel, mae, deltas, n = metrics_oracle(p, g, pm, gm)
            assert r.rmse == pytest.approx(rmse, rel=1e-12)
            assert r.rel == pytest.approx(rel, rel=1e-12)
            assert r.mae == pytest.approx(mae, rel=1e-12)
            assert [r.delta_105, r.delta_110, r.delta_125] == deltas
            assert r.n_evaluated == n

    def test_delta_boundary_convention(self):
        p, g = depth([[1.25]]), depth([[1.0]])
        assert depth_metrics(p, g).delta_125 == 0.0
        assert depth_metrics(p, g, delta_convention="le").delta_125 == 1.0
        with pytest.raises(ValidationError):
            depth_metrics(p, g, delta_convention="gt")

    def test_no_overlap(self):
        with pytest.raises(ValidationError):
            depth_metrics(depth([[1.0, np.inf]]), depth([[np.inf, 1.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            depth_metrics(depth(np.ones((2, 3))), depth(np.ones((3, 2))))

    def test_resize(self):
        p = depth(np.ones((288, 512)) * 1.1)
        g = depth(np.ones((480, 640)))
        r = depth_metrics(p, g, resize_to=(144, 256))
        assert r.n_evaluated == 144 * 256
        assert r.mae == pytest.approx(0.1)

    def test_resize_nearest_keeps_values(self, rng):
        v = rng.random((6, 8))
        out = resize_nearest(v, (3, 4))
        assert out.shape == (3, 4) and set(out.ravel()) <= set(v.ravel())
        assert np.array_equal(resize_nearest(v, (6, 8)), v)

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, (3, 4), elements=st.floats(0.1, 10)),
        arrays(np.float64, (3, 4), elements=st.floats(0.1, 10)),
    )
    def test_properties(self, p, g):
        r = depth_metrics(depth(p), depth(g))
        assert r.rmse >= r.mae - 1e-12
        assert 0 <= r.delta_105 <= r.delta_110 <= r.delta_125 <= 1
        assert min(r.rmse, r.rel, r.mae) >= 0

    def test_mean_reports_and_dict(self):
        a = depth_metrics(depth(np.full((2, 2), 1.2)), depth(np.ones((2, 2))))
        b = depth_metrics(depth(np.ones((2, 2))), depth(np.ones((2, 2))))
        m = mean_reports([a, b])
        assert m.mae == pytest.approx(0.1) and m.n_evaluated == 8
        assert set(m.to_dict()) == {"rmse", "rel", "mae", "delta_105", "delta_110", "delta_125", "n_evaluated"}
        with pytest.raises(ValidationError):
            mean_reports([])


class TestNormals:
    rig = StereoRig.centered(40, 30, focal_px=50.0)

    def test_fronto_parallel(self):
        n, m = normals_from_depth(depth(np.full((30, 40), 2.0)), self.rig)
        assert m[1:-1, 1:-1].all() and not m[0].any() and not m[:, -1].any()
        assert np.allclose(n[m], [0.0, 0.0, -1.0])

    def test_tilted_45(self):
        # plane z = z0 + y_cam (tilted 45 deg about image x): depth from rays
        cx, cy = self.rig.principal_point
        v = np.arange(30)[:, None] * np.ones((1, 40))
        ray_y = (v - cy) / self.rig.focal_px
        z = 2.0 / (1.0 - ray_y)
        n, m = normals_from_depth(depth(z), self.rig)
        expected = np.array([0.0, 1.0, -1.0]) / math.sqrt(2)
        assert np.allclose(n[m], expected, atol=1e-3)
        angle = np.degrees(np.arccos(-n[m][:, 2]))
        assert np.allclose(angle, 45.0, atol=1e-3)

    def test_unit_length_and_facing(self, rng):
        z = 1.0 + 0.1 * rng.random((30, 40))
        n, m = normals_from_depth(depth(z), self.rig)
        assert np.allclose(np.linalg.norm(n[m], axis=-1), 1.0, atol=1e-6)
        from stereosim.metrics import backproject

        p = backproject(depth(z), self.rig)
        assert np.all(np.einsum("ij,ij->i", n[m], p[m]) < 0)

    def test_isolated_pixel(self):
        v = np.full((5, 5), np.inf)
        v[2, 2] = 1.0
        _, m = normals_from_depth(depth(v), StereoRig.centered(5, 5))
        assert not m.any()

    def test_missing_neighbour_invalidates(self):
        v = np.full((30, 40), 1.0)
        v[10, 10] = np.inf
        _, m = normals_from_depth(depth(v), self.rig)
        assert not m[10, 9] and not m[9, 10] and not m[10, 10] and m[10, 12]

    def test_sign_flip(self, rng):
        z = 1.0 + 0.2 * rng.random((30, 40))
        from stereosim.metrics import backproject

        p = backproject(depth(z), self.rig)
        n1, m1 = normals_from_points(p)
        n2, m2 = normals_from_points(-p)
        assert np.array_equal(m1, m2)
        assert np.array_equal(n2[m1], -n1[m1])

    def test_rig_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            normals_from_depth(depth(np.ones((3, 3))), self.rig)


def gradient_oracle(v, mask):
    h, w = v.shape
    gx = np.full((h, w), np.nan)
    gy = np.full((h, w), np.nan)
    m = np.zeros((h, w), bool)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            if mask[y, x] and mask[y, x - 1] and mask[y, x + 1] and mask[y - 1, x] and mask[y + 1, x]:
                gx[y, x] = (v[y, x + 1] - v[y, x - 1]) / 2
                gy[y, x] = (v[y + 1, x] - v[y - 1, x]) / 2
                m[y, x] = True
    return gx, gy, m


class TestGradient:
    def test_constant(self):
        gx, gy, m = gradient_from_depth(depth(np.full((5, 6), 3.0)))
        assert np.all(gx[m] == 0) and np.all(gy[m] == 0) and m[1:-1, 1:-1].all()

    def test_ramp(self):
        z = 1.0 + 0.01 * np.arange(8)[None, :] * np.ones((6, 1))
        gx, gy, m = gradient_from_depth(depth(z))
        assert np.allclose(gx[m], 0.01) and np.allclose(gy[m], 0.0)

    def test_against_oracle(self, rng):
        v = rng.uniform(0.5, 2, (7, 9))
        mask = rng.random((7, 9)) > 0.15
        gx, gy, m = gradient_from_depth(depth(v, mask))
        ox, oy, om = gradient_oracle(v, mask)
        assert np.array_equal(m, om)
        assert np.allclose(gx[m], ox[m], rtol=0, atol=0) and np.allclose(gy[m], oy[m], rtol=0, atol=0)


class TestFusion:
    def test_endpoints_and_midpoint(self, rng):
        a = depth(rng.uniform(1, 2, (4, 4)))
        b = depth(rng.uniform(1, 2, (4, 4)))
        assert np.array_equal(confidence_fusion(a, b, np.zeros((4, 4))).values, a.values)
        assert np.array_equal(confidence_fusion(a, b, np.ones((4, 4))).values, b.values)
        mid = confidence_fusion(depth(np.ones((2, 2))), depth(np.full((2, 2), 2.0)), np.full((2, 2), 0.5))
        assert np.allclose(mid.values, 1.5)

    def test_validity_needs_referenced_operands(self):
        a = depth([[1.0, np.inf, np.inf]])
        b = depth([[np.inf, 2.0, np.inf]])
        out = confidence_fusion(a, b, np.array([[0.0, 1.0, 0.5]]))
        assert out.mask.tolist() == [[True, True, False]]

    def test_conf_range(self):
        a = depth(np.ones((1, 2)))
        for c in ([[-0.1, 0.5]], [[0.5, 1.1]], [[np.nan, 0.5]]):
            with pytest.raises(ValidationError):
                confidence_fusion(a, a, np.array(c))
        with pytest.raises(ShapeMismatchError):
            confidence_fusion(a, depth(np.ones((2, 1))), np.zeros((1, 2)))

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(np.float64, (3, 3), elements=st.floats(0.1, 10)),
        arrays(np.float64, (3, 3), elements=st.floats(0.1, 10)),
        arrays(np.float64, (3, 3), elements=st.floats(0, 1)),
    )
    def test_between_inputs(self, a, b, c):
        out = confidence_fusion(depth(a), depth(b), c).values
        assert np.all(out >= np.minimum(a, b) - 1e-12) and np.all(out <= np.maximum(a, b) + 1e-12)


def loss_oracle(pred, gt, rig, w_n, w_g):
    m = pred.mask & gt.mask
    l_z = np.abs(pred.values[m] - gt.values[m]).mean()
    pn, pm = normals_from_depth(pred, rig)
    gn, gm = normals_from_depth(gt, rig)
    acc, cnt = 0.0, 0
    for y, x in zip(*np.nonzero(pm & gm)):
        acc += sum(abs(pn[y, x, k] - gn[y, x, k]) for k in range(3))
        cnt += 1
    l_n = acc / cnt
    px, py, pgm = gradient_from_depth(pred)
    gx, gy, ggm = gradient_from_depth(gt)
    acc, cnt = 0.0, 0
    for y, x in zip(*np.nonzero(pgm & ggm)):
        acc += abs(px[y, x] - gx[y, x]) + abs(py[y, x] - gy[y, x])
        cnt += 1
    return l_z + w_n * l_n + w_g * acc / cnt


class TestLoss:
    rig = StereoRig.centered(12, 10, focal_px=20.0)

    def test_perfect(self, rng):
        g = depth(rng.uniform(1, 2, (10, 12)))
        b = restoration_loss(g, g, g, self.rig)
        assert b.total == 0 and all(v == 0 for v in b.to_dict().values())

    def test_constant_offset_depth_only(self, rng):
        g = depth(rng.uniform(1, 2, (10, 12)))
        f = depth(g.values + 0.1)
        b = restoration_loss(g, f, g, self.rig, LossWeights(w_c=0.0, w_n=0.0, w_g=0.0))
        assert b.total == pytest.approx(0.1, abs=1e-12)
        assert b.depth_f == pytest.approx(0.1) and b.depth_c == 0

    def test_against_oracle(self, rng):
        g = depth(rng.uniform(1, 2, (10, 12)), rng.random((10, 12)) > 0.1)
        c = depth(g.values + rng.normal(0, 0.05, (10, 12)), rng.random((10, 12)) > 0.1)
        f = depth(g.values + rng.normal(0, 0.02, (10, 12)))
        w = LossWeights(0.5, 0.7, 2.0)
        b = restoration_loss(c, f, g, self.rig, w)
        expected = loss_oracle(f, g, self.rig, 0.7, 2.0) + 0.5 * loss_oracle(c, g, self.rig, 0.7, 2.0)
        assert b.total == pytest.approx(expected, abs=1e-9)

    def test_errors(self):
        a = depth(np.full((10, 12), np.inf))
        g = depth(np.ones((10, 12)))
        with pytest.raises(ValidationError):
            restoration_loss(a, a, g, self.rig)
        with pytest.raises(ValidationError):
            LossWeights(w_n=-1)


def sample(rng, n=10, symmetric=False, diameter=0.2):
    return PoseSample(random_rotation(rng), rng.normal(0, 0.3, 3), rng.normal(0, 0.05, (n, 3)), diameter, symmetric)


class TestPose:
    def test_add_examples(self, rng):
        s = sample(rng)
        assert add_error(s, s.rotation, s.translation) == 0
        assert add_error(s, s.rotation, s.translation + [0.01, 0, 0]) == pytest.approx(0.01, abs=1e-15)

    def test_add_oracle(self, rng):
        s = sample(rng)
        r, t = random_rotation(rng), rng.normal(size=3)
        total = 0.0
        for x in s.model_points:
            total += np.linalg.norm((s.rotation @ x + s.translation) - (r @ x + t))
        assert add_error(s, r, t) == pytest.approx(total / 10, rel=1e-12)

    def test_adds_matches_brute_force(self, rng):
        for _ in range(10):
            s = sample(rng, n=50)
            r, t = random_rotation(rng), s.translation + rng.normal(0, 0.02, 3)
            a = s.model_points @ s.rotation.T + s.translation
            b = s.model_points @ r.T + t
            brute = np.mean([np.min(np.linalg.norm(b - p, axis=1)) for p in a])
            assert adds_error(s, r, t) == pytest.approx(brute, abs=1e-9)
            assert adds_error(s, r, t) <= add_error(s, r, t) + 1e-15

    def test_adds_sphere_symmetry(self, rng):
        n = 1000
        # Fibonacci sphere: near-uniform spacing about sqrt(4 pi / n)
        k = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * k / n)
        theta = np.pi * (1 + 5**0.5) * k
        pts = 0.05 * np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)
        s = PoseSample(np.eye(3), [0, 0, 0.5], pts, 0.1, True)
        r = random_rotation(rng)
        spacing = 0.05 * math.sqrt(4 * math.pi / n)
        assert adds_error(s, r, s.translation) <= spacing
        assert add_error(s, r, s.translation) > 5 * spacing

    def test_add_invariant_under_common_motion(self, rng):
        s = sample(rng)
        r, t = random_rotation(rng), rng.normal(size=3)
        g_r, g_t = random_rotation(rng), rng.normal(size=3)
        moved = PoseSample(g_r @ s.rotation, g_r @ s.translation + g_t, s.model_points, s.diameter)
        assert add_error(moved, g_r @ r, g_r @ t + g_t) == pytest.approx(add_error(s, r, t), rel=1e-10)

    def test_pose_sample_validation(self):
        with pytest.raises(ValidationError):
            PoseSample(np.diag([1.0, 1.0, -1.0]), [0, 0, 0], [[0, 0, 0]], 1.0)
        with pytest.raises(ValidationError):
            PoseSample(np.eye(3), [0, 0, 0], np.zeros((0, 3)), 1.0)
        with pytest.raises(ValidationError):
            PoseSample(np.eye(3), [0, 0, 0], [[0, 0, 0]], 0.0)

    def test_auc_examples(self):
        assert accuracy_auc(np.zeros(5)) == 1.0
        assert accuracy_auc(np.full(5, 0.2)) == 0.0
        assert accuracy_auc(np.full(5, 0.05)) == pytest.approx(0.5, abs=0.01)
        with pytest.raises(ValidationError):
            accuracy_auc(np.array([]))

    def test_auc_trapezoid_oracle(self, rng):
        errs = rng.uniform(0, 0.12, 40)
        acc = [np.mean(errs <= i / 1000) for i in range(101)]
        area = sum((acc[i] + acc[i + 1]) / 2 * 0.001 for i in range(100)) / 0.1
        assert accuracy_auc(errs) == pytest.approx(area, abs=1e-12)

    def test_pose_accuracy(self, rng):
        s = sample(rng, diameter=0.2)
        exact = [(s, s.rotation, s.translation)] * 3
        assert pose_accuracy(exact) == {"add_01d": 1.0, "auc": 1.0}
        far = [(s, s.rotation, s.translation + [0.5, 0, 0])]
        assert pose_accuracy(far) == {"add_01d": 0.0, "auc": 0.0}
        half = [(s, s.rotation, s.translation + [0.019, 0, 0]), (s, s.rotation, s.translation + [0.021, 0, 0])]
        assert pose_accuracy(half)["add_01d"] == 0.5
        with pytest.raises(ValidationError):
            pose_accuracy([])

    def test_symmetric_switch_and_report(self, rng):
        s = sample(rng, n=200, symmetric=True)
        r = random_rotation(rng)
        with_adds = pose_accuracy([(s, r, s.translation)])
        plain = pose_accuracy([(s, r, s.translation)], use_adds_for_symmetric=False)
        assert with_adds["auc"] >= plain["auc"]
        rep = pose_report([(s, r, s.translation)])
        assert set(rep) == {"add_01d", "auc_add", "auc_adds", "n_samples"}
        assert rep["auc_adds"] >= rep["auc_add"] - 1e-12
