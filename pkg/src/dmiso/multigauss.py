"""Multi-Gaussians: a core face that carries k child Gaussians in its frame.

The core triangle defines a local coordinate system (through the face
parameterization in :mod:`dmiso.soup`); each child ("sub") stores offsets
``alpha`` in that frame plus its own world-frame rotation, tangential scales,
opacity and SH color. Only subs are rendered; cores exist to move things.

Sub rotations are kept as unit quaternions (w, x, y, z) so scene files round
trip bit-exactly; the 3x3 matrix is derived on access. ``pack_scene`` turns a
scene into flat arrays shared by the renderer, the optimizer and the static
flatten path, which keeps all three bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .soup import (
    EPS_FLAT,
    FlatGaussianGeometry,
    GaussianAppearance,
    Triangle,
    frames_from_triangles,
    gaussian_from_triangle,
    triangles_from_frames,
)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z); batched over leading dims."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix; batched over leading dims."""
    m = np.asarray(m, dtype=np.float64)
    batched = m.ndim > 2
    ms = m.reshape(-1, 3, 3)
    out = np.empty((ms.shape[0], 4))
    for i, r in enumerate(ms):
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                          (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                          0.25 * s, (r[1, 2] + r[2, 1]) / s])
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                          (r[1, 2] + r[2, 1]) / s, 0.25 * s])
        if q[0] < 0:
            q = -q
        out[i] = q / np.linalg.norm(q)
    return out.reshape(m.shape[:-2] + (4,)) if batched else out[0]


@dataclass(frozen=True)
class SubGaussian:
    """Child Gaussian: frame offsets + own rotation/scale/appearance."""

    alpha: np.ndarray            # (3,) offsets along the core frame axes
    rotation_quat: np.ndarray    # (4,) unit quaternion, world frame
    scale23: np.ndarray          # (s2, s3); s1 is pinned to EPS_FLAT
    appearance: GaussianAppearance

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        q = np.asarray(self.rotation_quat, dtype=np.float64)
        s = np.asarray(self.scale23, dtype=np.float64)
        if a.shape != (3,) or q.shape != (4,) or s.shape != (2,):
            raise ValueError("bad SubGaussian field shapes")
        # tolerance admits float32-stored unit quaternions; render paths renormalize
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must be unit")
        if s[0] <= 0 or s[1] <= 0:
            raise ValueError("sub scales must be positive")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "rotation_quat", q)
        object.__setattr__(self, "scale23", s)

    @property
    def rotation(self) -> np.ndarray:
        """3x3 orthonormal rotation, derived from the stored quaternion."""
        return quat_to_matrix(normalize_quat(self.rotation_quat))

    def geometry(self, center: np.ndarray) -> FlatGaussianGeometry:
        return FlatGaussianGeometry(
            center, self.rotation, np.array([EPS_FLAT, self.scale23[0], self.scale23[1]])
        )


@dataclass(frozen=True)
class MultiGaussian:
    core: Triangle
    subs: tuple

    def __post_init__(self):
        object.__setattr__(self, "subs", tuple(self.subs))

    @property
    def k(self) -> int:
        return len(self.subs)


@dataclass(frozen=True)
class SoupScene:
    multis: tuple
    sh_degree: int = 1
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "multis", tuple(self.multis))
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.shape != (3,):
            raise ValueError("background must be RGB")
        object.__setattr__(self, "background", bg)
        for m in self.multis:
            for s in m.subs:
                if s.appearance.sh_degree != self.sh_degree:
                    raise ValueError("sub SH degree inconsistent with scene")

    @property
    def n_subs(self) -> int:
        return sum(m.k for m in self.multis)


# ---------------------------------------------------------------------------
# flat array view of a scene
# ---------------------------------------------------------------------------

@dataclass
class SceneArrays:
    """Scene unpacked into flat arrays; subs are in scene (flatten) order."""

    core_verts: np.ndarray   # (p, 3, 3)
    sub_core: np.ndarray     # (n,) parent core index per sub
    alpha: np.ndarray        # (n, 3)
    quat: np.ndarray         # (n, 4)
    scale: np.ndarray        # (n, 2)
    opacity: np.ndarray      # (n,)
    sh: np.ndarray           # (n, B, 3) with B in {1, 4}
    sh_degree: int
    background: np.ndarray   # (3,)

    @property
    def p(self) -> int:
        return self.core_verts.shape[0]

    @property
    def n(self) -> int:
        return self.alpha.shape[0]


def pack_scene(scene: SoupScene) -> SceneArrays:
    p = len(scene.multis)
    n = scene.n_subs
    nb = 1 if scene.sh_degree == 0 else 4
    core_verts = np.empty((p, 3, 3))
    sub_core = np.empty(n, dtype=np.int64)
    alpha = np.empty((n, 3))
    quat = np.empty((n, 4))
    scale = np.empty((n, 2))
    opacity = np.empty(n)
    sh = np.empty((n, nb, 3))
    i = 0
    for j, multi in enumerate(scene.multis):
        core_verts[j] = multi.core.vertices
        for sub in multi.subs:
            sub_core[i] = j
            alpha[i] = sub.alpha
            quat[i] = sub.rotation_quat
            scale[i] = sub.scale23
            opacity[i] = sub.appearance.opacity
            sh[i] = sub.appearance.sh
            i += 1
    return SceneArrays(core_verts, sub_core, alpha, quat, scale, opacity, sh,
                       scene.sh_degree, scene.background.copy())


def unpack_scene(arrays: SceneArrays) -> SoupScene:
    multis = []
    for j in range(arrays.p):
        idx = np.nonzero(arrays.sub_core == j)[0]
        subs = [
            SubGaussian(
                arrays.alpha[i].copy(),
                arrays.quat[i].copy(),
                arrays.scale[i].copy(),
                GaussianAppearance(float(arrays.opacity[i]), arrays.sh[i].copy()),
            )
            for i in idx
        ]
        multis.append(MultiGaussian(Triangle.from_array(arrays.core_verts[j]), subs))
    return SoupScene(multis, arrays.sh_degree, arrays.background.copy())


def assemble_sub_geometry(core_verts: np.ndarray, sub_core: np.ndarray,
                          alpha: np.ndarray, quat: np.ndarray):
    """Place every sub from its core frame: centers (n,3) and rotations (n,3,3).

    This is the single code path used by both the static flatten and the
    deformed evaluation, so the two agree bit-for-bit when the deformation
    is the identity.
    """
    mean, rot, _ = frames_from_triangles(core_verts)
    centers = mean[sub_core] + np.einsum("nij,nj->ni", rot[sub_core], alpha)
    sub_rot = quat_to_matrix(normalize_quat(quat))
    return centers, sub_rot


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def sub_center(core: FlatGaussianGeometry, alpha) -> np.ndarray:
    """World position of a child: m + alpha1*r1 + alpha2*r2 + alpha3*r3."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return core.mean + core.rotation @ alpha


def rebind_sub(sub_geometry: FlatGaussianGeometry, new_frame: FlatGaussianGeometry) -> np.ndarray:
    """Offsets that place the sub's center in a different parent frame."""
    return new_frame.rotation.T @ (sub_geometry.mean - new_frame.mean)


def attach_subs(core: Triangle, appearance: GaussianAppearance, k: int,
                rng_seed: int) -> MultiGaussian:
    """Attach k children to a core, copying its stage-1 rotation/scale/appearance.

    Offsets are sampled uniformly across the core's footprint: [-1,1]*s2 and
    [-1,1]*s3 along the tangential axes, [-0.1,0.1]*max(s2,s3) along the
    normal. Child scales shrink by 1/sqrt(k) to conserve total footprint.
    Deterministic for a fixed seed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(rng_seed)
    g = gaussian_from_triangle(core)
    s2, s3 = g.scale[1], g.scale[2]
    quat = matrix_to_quat(g.rotation)
    sub_scale = np.array([s2, s3]) / np.sqrt(k)
    u = rng.uniform(-1.0, 1.0, size=(k, 3))
    alphas = np.stack([
        0.1 * max(s2, s3) * u[:, 0],
        s2 * u[:, 1],
        s3 * u[:, 2],
    ], axis=1)
    subs = [
        SubGaussian(alphas[i], quat.copy(), sub_scale.copy(), appearance)
        for i in range(k)
    ]
    return MultiGaussian(core, subs)


def sub_geometries(scene: SoupScene):
    """All sub Gaussians in scene order as (FlatGaussianGeometry, appearance)."""
    arrays = pack_scene(scene)
    if arrays.n == 0:
        return []
    centers, sub_rot = assemble_sub_geometry(
        arrays.core_verts, arrays.sub_core, arrays.alpha, arrays.quat
    )
    out = []
    for i in range(arrays.n):
        geom = FlatGaussianGeometry(
            centers[i], sub_rot[i],
            np.array([EPS_FLAT, arrays.scale[i, 0], arrays.scale[i, 1]]),
        )
        out.append((geom, GaussianAppearance(float(arrays.opacity[i]), arrays.sh[i])))
    return out


def flatten_to_sub_soup(scene: SoupScene):
    """All sub faces in scene order as (Triangle, GaussianAppearance) pairs."""
    out = []
    for geom, app in sub_geometries(scene):
        verts = triangles_from_frames(
            geom.mean[None], geom.rotation[None], geom.scale[None, 1:]
        )[0]
        out.append((Triangle.from_array(verts), app))
    return out
