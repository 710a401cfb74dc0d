"""Shared generators and oracles for the test suite."""

import numpy as np

from dmiso.multigauss import SoupScene, attach_subs, quat_to_matrix
from dmiso.render import Camera
from dmiso.soup import EPS_FLAT, FlatGaussianGeometry, GaussianAppearance, Triangle


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return quat_to_matrix(q)


def random_triangle(rng, center_scale=1.0, edge_scale=1.0) -> Triangle:
    while True:
        v1 = rng.normal(size=3) * center_scale
        v2 = v1 + rng.normal(size=3) * edge_scale
        v3 = v1 + rng.normal(size=3) * edge_scale
        cross = np.cross(v2 - v1, v3 - v1)
        if np.linalg.norm(cross) > 1e-6:
            return Triangle(v1, v2, v3)


def random_flat_gaussian(rng, scale_lo=0.1, scale_hi=2.0) -> FlatGaussianGeometry:
    rot = random_rotation(rng)
    s = rng.uniform(scale_lo, scale_hi, size=2)
    return FlatGaussianGeometry(rng.normal(size=3), rot,
                                np.array([EPS_FLAT, s[0], s[1]]))


def random_appearance(rng, degree=1) -> GaussianAppearance:
    nb = 1 if degree == 0 else 4
    return GaussianAppearance(rng.uniform(0.2, 0.95), rng.normal(size=(nb, 3)) * 0.3)


def random_scene(rng, p=3, k=4, background=(0.0, 0.0, 0.0)) -> SoupScene:
    multis = []
    for j in range(p):
        tri = random_triangle(rng, center_scale=0.5, edge_scale=0.6)
        app = random_appearance(rng)
        multis.append(attach_subs(tri, app, k, rng_seed=int(rng.integers(1 << 31))))
    return SoupScene(multis, 1, np.asarray(background, dtype=np.float64))


def orbit_cam(width=32, height=32, radius=3.0, azim=0.6, elev=0.25, fov=0.9) -> Camera:
    eye = radius * np.array([np.sin(azim) * np.cos(elev), np.sin(elev),
                             -np.cos(azim) * np.cos(elev)])
    return Camera.look_at(eye, [0, 0, 0], [0, 1, 0], fov, width, height)


def rot_about(axis: str, degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)
