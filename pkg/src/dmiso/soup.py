"""Flat-Gaussian geometry and the triangle-face parameterization.

Every Gaussian in a scene is flat: its smallest scale axis is pinned to the
constant ``EPS_FLAT``, which makes the distribution disk-like and lets a
single triangle face stand in for (mean, rotation, scale). The forward map
places vertices at ``v1 = m``, ``v2 = m + s2*r2``, ``v3 = m + s3*r3``; the
inverse rebuilds the frame from the face via one Gram-Schmidt step. The two
maps are mutually inverse at covariance level.

Scalar dataclasses carry validated single objects; the ``*_batch`` functions
below them do the same math over ``(n, ...)`` arrays and are what the
renderer and optimizer call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_FLAT = 1e-6          # pinned smallest scale axis, scene units
DEGENERACY_EPS = 1e-12   # cross-product / residual norm below this is degenerate
ORTHO_TOL = 1e-9


class DegenerateFace(ValueError):
    """Triangle edges are (numerically) linearly dependent."""


class ZeroResidual(ValueError):
    """orth() input lies in the span of the basis vectors."""


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class Triangle:
    """One face of a triangle soup; the editable form of a flat Gaussian."""

    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v1", _as_vec3(self.v1))
        object.__setattr__(self, "v2", _as_vec3(self.v2))
        object.__setattr__(self, "v3", _as_vec3(self.v3))
        cross = np.cross(self.v2 - self.v1, self.v3 - self.v1)
        if np.linalg.norm(cross) < DEGENERACY_EPS:
            raise DegenerateFace("triangle edges are linearly dependent")

    @property
    def vertices(self) -> np.ndarray:
        """(3, 3) array, one vertex per row."""
        return np.stack([self.v1, self.v2, self.v3])

    @staticmethod
    def from_array(v: np.ndarray) -> "Triangle":
        v = np.asarray(v, dtype=np.float64)
        return Triangle(v[0], v[1], v[2])


@dataclass(frozen=True)
class FlatGaussianGeometry:
    """Gaussian geometry with scale (EPS_FLAT, s2, s3) and column frame (r1, r2, r3)."""

    mean: np.ndarray
    rotation: np.ndarray   # 3x3, columns are the frame axes
    scale: np.ndarray      # (s1, s2, s3) with s1 == EPS_FLAT

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vec3(self.mean))
        rot = np.asarray(self.rotation, dtype=np.float64)
        sc = np.asarray(self.scale, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if sc.shape != (3,):
            raise ValueError("scale must have 3 entries")
        if np.abs(rot.T @ rot - np.eye(3)).max() > ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")
        if sc[0] != EPS_FLAT:
            raise ValueError(f"s1 must equal the flatness constant {EPS_FLAT}")
        if sc[1] <= 0 or sc[2] <= 0:
            raise ValueError("s2, s3 must be positive")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "scale", sc)

    @property
    def r1(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def r2(self) -> np.ndarray:
        return self.rotation[:, 1]

    @property
    def r3(self) -> np.ndarray:
        return self.rotation[:, 2]


@dataclass(frozen=True)
class GaussianAppearance:
    """Opacity plus spherical-harmonic RGB coefficients (degree 0 or 1).

    ``sh`` has shape (1, 3) for degree 0 or (4, 3) for degree 1 (basis
    functions on the first axis, channels on the second).
    """

    opacity: float
    sh: np.ndarray

    def __post_init__(self):
        sh = np.asarray(self.sh, dtype=np.float64)
        if sh.ndim != 2 or sh.shape[0] not in (1, 4) or sh.shape[1] != 3:
            raise ValueError("sh must be (1,3) or (4,3)")
        object.__setattr__(self, "sh", sh)
        object.__setattr__(self, "opacity", float(np.clip(self.opacity, 0.0, 1.0)))

    @property
    def sh_degree(self) -> int:
        return 0 if self.sh.shape[0] == 1 else 1


# ---------------------------------------------------------------------------
# batched kernels
# ---------------------------------------------------------------------------

def covariance_batch(rot: np.ndarray, scale23: np.ndarray, s1: float = EPS_FLAT) -> np.ndarray:
    """Sigma = R diag(s1^2, s2^2, s3^2) R^T for (n,3,3) rotations, (n,2) scales."""
    n = rot.shape[0]
    d = np.empty((n, 3))
    d[:, 0] = s1 * s1
    d[:, 1] = scale23[:, 0] ** 2
    d[:, 2] = scale23[:, 1] ** 2
    return np.einsum("nij,nj,nkj->nik", rot, d, rot)


def triangles_from_frames(mean: np.ndarray, rot: np.ndarray, scale23: np.ndarray) -> np.ndarray:
    """Forward map to (n,3,3) vertex arrays: v1=m, v2=m+s2*r2, v3=m+s3*r3."""
    v = np.empty((mean.shape[0], 3, 3))
    v[:, 0] = mean
    v[:, 1] = mean + scale23[:, 0:1] * rot[:, :, 1]
    v[:, 2] = mean + scale23[:, 1:2] * rot[:, :, 2]
    return v


def frames_with_cache(verts: np.ndarray):
    """Inverse map on (n,3,3) vertex arrays, keeping intermediates for backprop.

    Returns (mean (n,3), rot (n,3,3) with column axes, scale23 (n,2), cache).
    Raises DegenerateFace if any face has a near-zero edge cross product.
    """
    e1 = verts[:, 1] - verts[:, 0]
    e2 = verts[:, 2] - verts[:, 0]
    c = np.cross(e1, e2)
    n1 = np.linalg.norm(c, axis=1)
    if np.any(n1 < DEGENERACY_EPS):
        raise DegenerateFace("degenerate face in batch")
    r1 = c / n1[:, None]
    n2 = np.linalg.norm(e1, axis=1)
    r2 = e1 / n2[:, None]
    proj1 = np.einsum("ni,ni->n", e2, r1)
    proj2 = np.einsum("ni,ni->n", e2, r2)
    u = e2 - proj1[:, None] * r1 - proj2[:, None] * r2
    n3 = np.linalg.norm(u, axis=1)
    if np.any(n3 < DEGENERACY_EPS):
        raise DegenerateFace("degenerate face in batch")
    r3 = u / n3[:, None]
    s3 = np.einsum("ni,ni->n", e2, r3)
    rot = np.stack([r1, r2, r3], axis=2)
    scale23 = np.stack([n2, s3], axis=1)
    cache = {"e1": e1, "e2": e2, "n1": n1, "r1": r1, "n2": n2, "r2": r2,
             "proj1": proj1, "proj2": proj2, "u": u, "n3": n3, "r3": r3}
    return verts[:, 0].copy(), rot, scale23, cache


def frames_from_triangles(verts: np.ndarray):
    """Inverse map on (n,3,3) vertex arrays to (mean, rot, scale23)."""
    mean, rot, scale23, _ = frames_with_cache(verts)
    return mean, rot, scale23


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------

def covariance_of(g: FlatGaussianGeometry) -> np.ndarray:
    """3x3 covariance R S S R^T of a flat Gaussian."""
    return covariance_batch(g.rotation[None], g.scale[None, 1:], s1=g.scale[0])[0]


def triangle_from_gaussian(g: FlatGaussianGeometry) -> Triangle:
    """Place the face vertices from the Gaussian frame."""
    if g.scale[1] < DEGENERACY_EPS or g.scale[2] < DEGENERACY_EPS:
        raise DegenerateFace("tangential scale too small to span a face")
    v = triangles_from_frames(g.mean[None], g.rotation[None], g.scale[None, 1:])[0]
    return Triangle.from_array(v)


def gaussian_from_triangle(t: Triangle) -> FlatGaussianGeometry:
    """Recover (mean, rotation, scale) from a face via one Gram-Schmidt step."""
    mean, rot, scale23 = frames_from_triangles(t.vertices[None])
    scale = np.array([EPS_FLAT, scale23[0, 0], scale23[0, 1]])
    return FlatGaussianGeometry(mean[0], rot[0], scale)


def orth(x, b1, b2) -> np.ndarray:
    """Residual of x against the orthonormal pair (b1, b2), normalized."""
    x = _as_vec3(x)
    b1 = _as_vec3(b1)
    b2 = _as_vec3(b2)
    u = x - np.dot(x, b1) * b1 - np.dot(x, b2) * b2
    n = np.linalg.norm(u)
    if n < DEGENERACY_EPS:
        raise ZeroResidual("input lies in span(b1, b2)")
    return u / n
