import numpy as np
import pytest

from dmiso.multigauss import (
    MultiGaussian,
    SoupScene,
    SubGaussian,
    attach_subs,
    flatten_to_sub_soup,
    matrix_to_quat,
    pack_scene,
    quat_to_matrix,
    rebind_sub,
    sub_center,
    sub_geometries,
    unpack_scene,
)
from dmiso.soup import (
    EPS_FLAT,
    FlatGaussianGeometry,
    GaussianAppearance,
    Triangle,
    gaussian_from_triangle,
    triangle_from_gaussian,
)

from helpers import random_appearance, random_flat_gaussian, random_rotation, random_scene, random_triangle, rot_about


class TestQuatMatrix:
    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            m = quat_to_matrix(q)
            assert np.abs(m.T @ m - np.eye(3)).max() < 1e-12
            assert abs(np.linalg.det(m) - 1) < 1e-12
            q2 = matrix_to_quat(m)
            np.testing.assert_allclose(quat_to_matrix(q2), m, atol=1e-12)


class TestSubCenter:
    def test_zero_offset(self):
        g = FlatGaussianGeometry(np.zeros(3), np.eye(3), [EPS_FLAT, 1, 1])
        np.testing.assert_array_equal(sub_center(g, [0, 0, 0]), [0, 0, 0])

    def test_identity_frame_addition(self):
        g = FlatGaussianGeometry([1, 1, 1], np.eye(3), [EPS_FLAT, 1, 1])
        np.testing.assert_allclose(sub_center(g, [0.5, -1, 2]), [1.5, 0, 3])

    def test_rotated_first_column(self):
        r = rot_about("z", 90.0)
        g = FlatGaussianGeometry(np.zeros(3), r, [EPS_FLAT, 1, 1])
        # independent matrix-vector oracle
        np.testing.assert_allclose(sub_center(g, [1, 0, 0]), r @ np.array([1.0, 0, 0]),
                                   atol=1e-15)


class TestAttachSubs:
    def test_zero_alpha_sub_sits_at_core_mean(self):
        tri = Triangle([0, 0, 0], [1, 0, 0], [0, 1, 0])
        g = gaussian_from_triangle(tri)
        sub = SubGaussian(np.zeros(3), matrix_to_quat(g.rotation),
                          g.scale[1:], GaussianAppearance(0.5, np.zeros((4, 3))))
        center = sub_center(g, sub.alpha)
        np.testing.assert_array_equal(center, g.mean)

    def test_paper_default_k25_copies_appearance(self):
        rng = np.random.default_rng(1)
        tri = random_triangle(rng)
        app = random_appearance(rng)
        multi = attach_subs(tri, app, 25, rng_seed=9)
        assert multi.k == 25
        for sub in multi.subs:
            assert sub.appearance.opacity == app.opacity
            np.testing.assert_array_equal(sub.appearance.sh, app.sh)

    def test_rotation_scale_copied_from_core(self):
        rng = np.random.default_rng(2)
        tri = random_triangle(rng)
        g = gaussian_from_triangle(tri)
        multi = attach_subs(tri, random_appearance(rng), 4, rng_seed=5)
        for sub in multi.subs:
            np.testing.assert_allclose(sub.rotation, g.rotation, atol=1e-12)
            np.testing.assert_allclose(sub.scale23, g.scale[1:] / 2.0, rtol=1e-12)

    def test_seed_determinism(self):
        rng = np.random.default_rng(3)
        tri = random_triangle(rng)
        app = random_appearance(rng)
        a = attach_subs(tri, app, 8, rng_seed=1234)
        b = attach_subs(tri, app, 8, rng_seed=1234)
        for sa, sb in zip(a.subs, b.subs):
            np.testing.assert_array_equal(sa.alpha, sb.alpha)

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            attach_subs(Triangle([0, 0, 0], [1, 0, 0], [0, 1, 0]),
                        GaussianAppearance(0.5, np.zeros((4, 3))), 0, 0)


class TestFlatten:
    def test_sub_equals_core_when_copied_exactly(self):
        # canonical face (orthogonal edges), so the sub's face lands exactly on it
        rng = np.random.default_rng(4)
        tri = triangle_from_gaussian(random_flat_gaussian(rng))
        g = gaussian_from_triangle(tri)
        sub = SubGaussian(np.zeros(3), matrix_to_quat(g.rotation), g.scale[1:],
                          GaussianAppearance(0.7, np.zeros((4, 3))))
        scene = SoupScene([MultiGaussian(tri, [sub])], 1)
        (sub_tri, _), = flatten_to_sub_soup(scene)
        np.testing.assert_allclose(sub_tri.vertices, tri.vertices, atol=1e-9)

    def test_counting(self):
        rng = np.random.default_rng(5)
        scene = random_scene(rng, p=2, k=3)
        assert len(flatten_to_sub_soup(scene)) == 6

    def test_composition_oracle(self):
        rng = np.random.default_rng(6)
        scene = random_scene(rng, p=3, k=4)
        flat = flatten_to_sub_soup(scene)
        i = 0
        for multi in scene.multis:
            core_g = gaussian_from_triangle(multi.core)
            for sub in multi.subs:
                center = sub_center(core_g, sub.alpha)
                geom = FlatGaussianGeometry(
                    center, sub.rotation,
                    np.array([EPS_FLAT, sub.scale23[0], sub.scale23[1]]))
                expected = triangle_from_gaussian(geom)
                np.testing.assert_allclose(flat[i][0].vertices, expected.vertices,
                                           atol=1e-12)
                i += 1

    def test_count_conservation(self):
        rng = np.random.default_rng(7)
        scene = random_scene(rng, p=5, k=6)
        assert len(flatten_to_sub_soup(scene)) == scene.n_subs == 30


class TestRebind:
    def test_center_at_frame_mean(self):
        rng = np.random.default_rng(8)
        frame = random_flat_gaussian(rng)
        sub = FlatGaussianGeometry(frame.mean, np.eye(3), [EPS_FLAT, 1, 1])
        np.testing.assert_allclose(rebind_sub(sub, frame), np.zeros(3), atol=1e-12)

    def test_identity_frame(self):
        frame = FlatGaussianGeometry([1, 1, 1], np.eye(3), [EPS_FLAT, 1, 1])
        sub = FlatGaussianGeometry([2, 3, 4], np.eye(3), [EPS_FLAT, 1, 1])
        np.testing.assert_allclose(rebind_sub(sub, frame), [1, 2, 3])

    def test_roundtrip(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            frame = random_flat_gaussian(rng)
            sub = random_flat_gaussian(rng)
            a = rebind_sub(sub, frame)
            np.testing.assert_allclose(sub_center(frame, a), sub.mean, atol=1e-9)


class TestInvariants:
    def test_rigid_covariance_of_sub_centers(self):
        rng = np.random.default_rng(10)
        for _ in range(500):
            tri = random_triangle(rng)
            alpha = rng.normal(size=3)
            q = random_rotation(rng)
            shift = rng.normal(size=3)
            c1 = sub_center(gaussian_from_triangle(tri), alpha)
            tri2 = Triangle(q @ tri.v1 + shift, q @ tri.v2 + shift, q @ tri.v3 + shift)
            c2 = sub_center(gaussian_from_triangle(tri2), alpha)
            np.testing.assert_allclose(c2, q @ c1 + shift, atol=1e-8)

    def test_rebind_exactness_bitlevel(self):
        rng = np.random.default_rng(12)
        scene = random_scene(rng, p=2, k=5)
        flat1 = flatten_to_sub_soup(scene)
        # rebind each sub against its own core, rebuild, flatten again
        rebuilt = []
        for multi in scene.multis:
            core_g = gaussian_from_triangle(multi.core)
            subs = []
            for sub, (geom, _) in zip(multi.subs,
                                      sub_geometries(SoupScene([multi], 1))):
                alpha = rebind_sub(geom, core_g)
                subs.append(SubGaussian(alpha, sub.rotation_quat, sub.scale23,
                                        sub.appearance))
            rebuilt.append(MultiGaussian(multi.core, subs))
        flat2 = flatten_to_sub_soup(SoupScene(rebuilt, 1))
        for (t1, _), (t2, _) in zip(flat1, flat2):
            np.testing.assert_allclose(t2.vertices, t1.vertices, atol=1e-12)


class TestPackUnpack:
    def test_roundtrip(self):
        rng = np.random.default_rng(14)
        scene = random_scene(rng, p=3, k=2)
        again = unpack_scene(pack_scene(scene))
        for m1, m2 in zip(scene.multis, again.multis):
            np.testing.assert_array_equal(m1.core.vertices, m2.core.vertices)
            for s1, s2 in zip(m1.subs, m2.subs):
                np.testing.assert_array_equal(s1.alpha, s2.alpha)
                np.testing.assert_array_equal(s1.rotation_quat, s2.rotation_quat)
                np.testing.assert_array_equal(s1.scale23, s2.scale23)
                assert s1.appearance.opacity == s2.appearance.opacity
