"""Time-conditioned deformation of the soup.

Two small feed-forward networks drive the dynamics: one maps (core face,
time) to per-vertex translations plus a rotation delta, the other maps (sub
rotation, time) to a per-sub rotation delta. Both use tanh hidden layers and
a zero-initialized output layer, so a freshly created field is exactly the
identity: the deformed soup reproduces the static soup bit-for-bit at any t.

Rotation deltas come out of the networks as raw 4-vectors and are mapped to
unit quaternions via q = normalize(raw + (1,0,0,0)); zero raw output is the
identity and the map is smooth, which the gradient checks rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .multigauss import SceneArrays, pack_scene, quat_to_matrix
from .soup import EPS_FLAT, FlatGaussianGeometry, GaussianAppearance, Triangle

QUAT_IDENTITY_OFFSET = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class TimeEncodingConfig:
    frequency_count: int = 6       # L octaves
    base_frequency: float = np.pi

    @property
    def length(self) -> int:
        """Features per encoded scalar: the raw value plus L (sin, cos) pairs."""
        return 1 + 2 * self.frequency_count


def time_embed(t: float, cfg: TimeEncodingConfig) -> np.ndarray:
    """[t, sin(2^0 b t), cos(2^0 b t), ..., sin(2^(L-1) b t), cos(2^(L-1) b t)]."""
    return embed_scalars(np.asarray([float(t)]), cfg)


def embed_scalars(x: np.ndarray, cfg: TimeEncodingConfig) -> np.ndarray:
    """Per-scalar positional encoding; maps (..., d) to (..., d * cfg.length)."""
    x = np.asarray(x, dtype=np.float64)
    feats = [x[..., None]]
    for lvl in range(cfg.frequency_count):
        ang = (2.0 ** lvl) * cfg.base_frequency * x
        feats.append(np.sin(ang)[..., None])
        feats.append(np.cos(ang)[..., None])
    enc = np.concatenate(feats, axis=-1)  # (..., d, length)
    return enc.reshape(x.shape[:-1] + (x.shape[-1] * cfg.length,))


@dataclass
class MLPParams:
    """Dense feed-forward parameters; weights[i] is (out, in)."""

    weights: list
    biases: list

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


def mlp_init(in_dim: int, hidden: int, out_dim: int, n_hidden: int,
             rng: np.random.Generator) -> MLPParams:
    """Xavier-uniform hidden layers, zero output layer (identity field at init)."""
    dims = [in_dim] + [hidden] * n_hidden + [out_dim]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            w = np.zeros((fan_out, fan_in))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def mlp_forward(p: MLPParams, x: np.ndarray):
    """Forward pass; returns output and the per-layer activations for backprop."""
    acts = [x]
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


@dataclass
class DeformFieldParams:
    """Weights of the core-deform network (psi) and sub-rotation network (phi)."""

    psi: MLPParams
    phi: MLPParams
    encoding: TimeEncodingConfig = field(default_factory=TimeEncodingConfig)

    def copy(self) -> "DeformFieldParams":
        return DeformFieldParams(self.psi.copy(), self.phi.copy(), self.encoding)


PSI_OUT = 13   # 9 vertex translation scalars + 4 quaternion scalars
PHI_OUT = 4


def init_deform_params(seed: int = 0, hidden: int = 64, n_hidden: int = 3,
                       encoding: TimeEncodingConfig | None = None) -> DeformFieldParams:
    enc = encoding or TimeEncodingConfig()
    rng = np.random.default_rng(seed)
    in_dim = 9 * enc.length + enc.length
    psi = mlp_init(in_dim, hidden, PSI_OUT, n_hidden, rng)
    phi = mlp_init(in_dim, hidden, PHI_OUT, n_hidden, rng)
    return DeformFieldParams(psi, phi, enc)


@dataclass(frozen=True)
class CoreDelta:
    dv1: np.ndarray
    dv2: np.ndarray
    dv3: np.ndarray
    rotation: np.ndarray  # 3x3 delta rotation

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or np.linalg.det(rot) < 0:
            raise ValueError("delta rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", rot)


def delta_rotation_from_raw(raw: np.ndarray) -> np.ndarray:
    """Unit-quaternion rotation from a raw network 4-vector; zero maps to identity."""
    u = np.asarray(raw, dtype=np.float64) + QUAT_IDENTITY_OFFSET
    q = u / np.linalg.norm(u, axis=-1, keepdims=True)
    return quat_to_matrix(q)


def _psi_features(core_verts: np.ndarray, t: float, cfg: TimeEncodingConfig) -> np.ndarray:
    p = core_verts.shape[0]
    vert_feat = embed_scalars(core_verts.reshape(p, 9), cfg)
    t_feat = np.tile(time_embed(t, cfg), (p, 1))
    return np.concatenate([vert_feat, t_feat], axis=1)


def _phi_features(rot: np.ndarray, t: float, cfg: TimeEncodingConfig) -> np.ndarray:
    n = rot.shape[0]
    rot_feat = embed_scalars(rot.reshape(n, 9), cfg)
    t_feat = np.tile(time_embed(t, cfg), (n, 1))
    return np.concatenate([rot_feat, t_feat], axis=1)


def eval_deform(params: DeformFieldParams, v: Triangle, t: float) -> CoreDelta:
    """Run the core-deform network on one face."""
    out, _ = mlp_forward(params.psi, _psi_features(v.vertices[None], t, params.encoding))
    dv = out[0, :9].reshape(3, 3)
    rot = delta_rotation_from_raw(out[0, 9:13])
    return CoreDelta(dv[0], dv[1], dv[2], rot)


def eval_subrot(params: DeformFieldParams, r_i: np.ndarray, t: float) -> np.ndarray:
    """Run the sub-rotation network; returns the 3x3 delta rotation."""
    r_i = np.asarray(r_i, dtype=np.float64)
    out, _ = mlp_forward(params.phi, _phi_features(r_i[None], t, params.encoding))
    return delta_rotation_from_raw(out[0])


def apply_deform(v: Triangle, d: CoreDelta) -> Triangle:
    """Apply one core delta to one face. Raises DegenerateFace on collapse."""
    verts = v.vertices
    dv = np.stack([d.dv1, d.dv2, d.dv3])
    if np.array_equal(d.rotation, np.eye(3)):
        return Triangle.from_array(verts + dv)
    pivot = verts[0] + d.dv1
    out = pivot + (d.rotation @ (verts + dv - pivot).T).T
    return Triangle.from_array(out)


def deform_cores_cached(core_verts: np.ndarray, params: DeformFieldParams, t: float):
    """Batched core update V(t) plus the intermediates backprop needs."""
    feats = _psi_features(core_verts, t, params.encoding)
    out, acts = mlp_forward(params.psi, feats)
    p = core_verts.shape[0]
    dv = out[:, :9].reshape(p, 3, 3)
    raw = out[:, 9:13]
    identity_rows = np.all(out == 0.0, axis=1)
    u = raw + QUAT_IDENTITY_OFFSET
    un = np.linalg.norm(u, axis=-1)
    qd = u / un[:, None]
    drot = quat_to_matrix(qd)
    pivot = core_verts[:, 0] + dv[:, 0]
    w = core_verts + dv - pivot[:, None, :]
    verts_t = pivot[:, None, :] + np.einsum("pij,pvj->pvi", drot, w)
    if identity_rows.any():
        verts_t[identity_rows] = core_verts[identity_rows]
    cache = {"psi_acts": acts, "dv": dv, "un": un, "qd": qd, "drot": drot,
             "w": w, "verts_t": verts_t}
    return verts_t, cache


def deform_cores(core_verts: np.ndarray, params: DeformFieldParams, t: float) -> np.ndarray:
    """Batched core update: V(t) for every core face."""
    return deform_cores_cached(core_verts, params, t)[0]


def deformed_subs_cached(core_verts: np.ndarray, sub_core: np.ndarray,
                         alpha: np.ndarray, quat: np.ndarray,
                         params: DeformFieldParams, t: float):
    """Deformed sub placement with backprop cache: (centers, rotations, cache)."""
    from .soup import frames_with_cache

    verts_t, core_cache = deform_cores_cached(core_verts, params, t)
    mean, rot, _, fcache = frames_with_cache(verts_t)
    centers = mean[sub_core] + np.einsum("nij,nj->ni", rot[sub_core], alpha)
    qn = np.linalg.norm(quat, axis=-1, keepdims=True)
    qu = quat / qn
    r_base = quat_to_matrix(qu)
    phi_out, phi_acts = mlp_forward(params.phi, _phi_features(r_base, t, params.encoding))
    identity_rows = np.all(phi_out == 0.0, axis=1)
    pu = phi_out + QUAT_IDENTITY_OFFSET
    pun = np.linalg.norm(pu, axis=-1)
    pq = pu / pun[:, None]
    delta = quat_to_matrix(pq)
    if identity_rows.all():
        r_sub = r_base
    else:
        composed = np.einsum("nij,njk->nik", delta, r_base)
        r_sub = np.where(identity_rows[:, None, None], r_base, composed)
    cache = {"core": core_cache, "frames": fcache, "core_rot": rot,
             "qn": qn, "qu": qu, "r_base": r_base, "phi_acts": phi_acts,
             "pun": pun, "pq": pq, "delta": delta}
    return centers, r_sub, cache


def deformed_sub_arrays(arrays: SceneArrays, params: DeformFieldParams, t: float):
    """Geometry of every sub at time t: centers (n,3), rotations (n,3,3), scales (n,2)."""
    centers, r_sub, _ = deformed_subs_cached(
        arrays.core_verts, arrays.sub_core, arrays.alpha, arrays.quat, params, t
    )
    return centers, r_sub, arrays.scale.copy()


def soup_at_time(scene, params: DeformFieldParams, t: float):
    """Every sub Gaussian at time t, as (FlatGaussianGeometry, appearance) pairs.

    Appearances never depend on time; with zero-initialized networks the
    output geometry equals the static flatten exactly.
    """
    arrays = pack_scene(scene)
    if arrays.n == 0:
        return []
    centers, rots, scales = deformed_sub_arrays(arrays, params, t)
    out = []
    for i in range(arrays.n):
        geom = FlatGaussianGeometry(
            centers[i], rots[i], np.array([EPS_FLAT, scales[i, 0], scales[i, 1]])
        )
        out.append((geom, GaussianAppearance(float(arrays.opacity[i]), arrays.sh[i])))
    return out
