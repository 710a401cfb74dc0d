"""Scene files, dataset loading, synthetic data generation, mesh export.

Scene files ("*.dms") are a JSON header plus a little-endian float32 payload
holding every parameter array in a fixed order: core triangles, per-sub
offsets/quaternions/scales/opacities/SH, then the two networks' weights.
Saving quantizes float64 state to float32 once; after that, save -> load ->
save reproduces the file byte for byte.

Datasets follow the transforms-JSON convention used by timed monocular
captures: a global horizontal field of view plus one camera-to-world matrix,
time stamp and image path per frame. Matrices are OpenGL-style (camera looks
along -z) and get converted on load.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .deform import DeformFieldParams, MLPParams, TimeEncodingConfig, init_deform_params
from .fit import TimedView
from .multigauss import SceneArrays, SoupScene, pack_scene, unpack_scene
from .render import Camera, render, splats_from_arrays
from .soup import EPS_FLAT

SCENE_MAGIC = b"DMSO"
SCENE_VERSION = 1


class VersionMismatch(ValueError):
    pass


class TruncatedPayload(ValueError):
    pass


class MissingManifest(FileNotFoundError):
    pass


class MissingImage(FileNotFoundError):
    pass


class BadMatrix(ValueError):
    pass


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def save_png(path, img: np.ndarray):
    """Write a [0,1] float image as 8-bit RGB PNG."""
    arr = np.clip(np.round(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path)


def load_png(path, background=None) -> np.ndarray:
    """Read a PNG to float64 [0,1]; RGBA is composited over `background`."""
    with PILImage.open(path) as im:
        arr = np.asarray(im).astype(np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        a = arr[:, :, 3:4]
        bg = np.ones(3) if background is None else np.asarray(background, dtype=np.float64)
        arr = arr[:, :, :3] * a + bg * (1.0 - a)
    return arr[:, :, :3]


def save_raw_float32(path, img: np.ndarray):
    """Planar float32 dump (oracle-friendly, lossless for tests)."""
    np.transpose(img, (2, 0, 1)).astype("<f4").tofile(path)


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def _mlp_shapes(p: MLPParams):
    return [list(w.shape) for w in p.weights]


def _mlp_payload(p: MLPParams):
    return [a for a in p.weights] + [b for b in p.biases]


def save_scene(path, scene: SoupScene, params: DeformFieldParams):
    arrays = pack_scene(scene)
    k_per_core = [m.k for m in scene.multis]
    header = {
        "version": SCENE_VERSION,
        "p": arrays.p,
        "k_per_core": k_per_core,
        "sh_degree": arrays.sh_degree,
        "epsilon": EPS_FLAT,
        "background": [float(v) for v in arrays.background],
        "encoding": {
            "frequency_count": params.encoding.frequency_count,
            "base_frequency": params.encoding.base_frequency,
        },
        "psi_shapes": _mlp_shapes(params.psi),
        "phi_shapes": _mlp_shapes(params.phi),
    }
    chunks = [
        arrays.core_verts, arrays.alpha, arrays.quat, arrays.scale,
        arrays.opacity, arrays.sh,
    ]
    chunks += _mlp_payload(params.psi)
    chunks += _mlp_payload(params.phi)
    payload = np.concatenate([np.asarray(c, dtype=np.float64).ravel() for c in chunks]) \
        if chunks else np.zeros(0)
    payload32 = payload.astype("<f4")
    header["payload_floats"] = int(payload32.size)
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(SCENE_MAGIC)
        f.write(struct.pack("<I", len(hdr)))
        f.write(hdr)
        f.write(payload32.tobytes())


def load_scene(path):
    """Returns (SoupScene, DeformFieldParams)."""
    data = Path(path).read_bytes()
    if data[:4] != SCENE_MAGIC:
        raise VersionMismatch("not a scene file")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + hlen].decode("utf-8"))
    if header.get("version") != SCENE_VERSION:
        raise VersionMismatch(f"unsupported version {header.get('version')}")
    raw = data[8 + hlen:]
    expected = header["payload_floats"]
    if len(raw) != 4 * expected:
        raise TruncatedPayload(f"payload holds {len(raw)} bytes, expected {4 * expected}")
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    p = header["p"]
    k_per_core = header["k_per_core"]
    n = int(sum(k_per_core))
    nb = 1 if header["sh_degree"] == 0 else 4
    pos = 0

    def take(shape):
        nonlocal pos
        cnt = int(np.prod(shape)) if shape else 0
        out = flat[pos:pos + cnt].reshape(shape)
        pos += cnt
        return out

    core_verts = take((p, 3, 3))
    alpha = take((n, 3))
    quat = take((n, 4))
    scale = take((n, 2))
    opacity = take((n,))
    sh = take((n, nb, 3))
    sub_core = np.repeat(np.arange(p), k_per_core) if p else np.zeros(0, dtype=np.int64)

    def take_mlp(shapes):
        weights = [take(tuple(s)) for s in shapes]
        biases = [take((s[0],)) for s in shapes]
        return MLPParams(weights, biases)

    psi = take_mlp(header["psi_shapes"])
    phi = take_mlp(header["phi_shapes"])
    if pos != flat.size:
        raise TruncatedPayload("payload length disagrees with header counts")
    enc = TimeEncodingConfig(header["encoding"]["frequency_count"],
                             header["encoding"]["base_frequency"])
    arrays = SceneArrays(core_verts, sub_core, alpha, quat, scale, opacity, sh,
                         header["sh_degree"], np.asarray(header["background"]))
    return unpack_scene(arrays), DeformFieldParams(psi, phi, enc)


# ---------------------------------------------------------------------------
# dataset loading (transforms JSON)
# ---------------------------------------------------------------------------

def _camera_from_frame(matrix, fov_x, width, height):
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (4, 4):
        raise BadMatrix(f"transform matrix has shape {m.shape}")
    rot = m[:3, :3]
    if abs(abs(np.linalg.det(rot)) - 1.0) > 1e-3:
        raise BadMatrix("transform rotation block is not invertible/orthonormal")
    # OpenGL-style camera (looks along -z, y up) -> z-forward convention
    c2w = m.copy()
    c2w[:3, 1] *= -1.0
    c2w[:3, 2] *= -1.0
    return Camera.from_c2w(c2w, fov_x, width, height)


def load_dataset(dataset_dir, split: str = "train"):
    """Load (image, camera, time) triples from a transforms JSON directory."""
    root = Path(dataset_dir)
    candidates = [root / f"transforms_{split}.json", root / "transforms.json"]
    manifest_path = next((c for c in candidates if c.exists()), None)
    if manifest_path is None:
        raise MissingManifest(f"no transforms JSON in {root}")
    manifest = json.loads(manifest_path.read_text())
    fov_x = float(manifest["camera_angle_x"])
    background = manifest.get("background")
    views = []
    for frame in manifest["frames"]:
        t = float(frame.get("time", 0.0))
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"frame time {t} outside [0, 1]")
        img_path = root / frame["file_path"]
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        if not img_path.exists():
            raise MissingImage(str(img_path))
        img = load_png(img_path, background)
        h, w = img.shape[:2]
        cam = _camera_from_frame(frame["transform_matrix"], fov_x, w, h)
        views.append(TimedView(img, cam, t))
    return views


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------

DEFAULT_SYNTH_SPEC = {
    "n_gaussians": 5,
    "n_timesteps": 20,
    "n_train_cameras": 4,
    "width": 64,
    "height": 64,
    "fov_x": 0.9,
    "trajectory": "translate_rotate",   # static | translate | translate_rotate
    "translation": [0.8, 0.0, 0.0],
    "rotation_degrees": 50.0,
    "camera_radius": 2.6,
    "background": [0.0, 0.0, 0.0],
    "extent": 0.45,
}


def _gt_gaussians(spec, rng):
    from .multigauss import quat_to_matrix

    p = spec["n_gaussians"]
    q = rng.normal(size=(p, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    rot = quat_to_matrix(q)
    means = rng.uniform(-spec["extent"], spec["extent"], size=(p, 3))
    scales = rng.uniform(0.15, 0.35, size=(p, 2))
    opacity = rng.uniform(0.6, 0.95, size=p)
    sh = np.zeros((p, 4, 3))
    sh[:, 0] = rng.uniform(-1.0, 1.6, size=(p, 3))
    sh[:, 1:] = rng.normal(scale=0.08, size=(p, 3, 3))
    return means, rot, scales, opacity, sh


def _trajectory(spec, t):
    """Rigid motion (rotation about origin-centered z axis, then translation)."""
    kind = spec["trajectory"]
    tr = np.zeros(3)
    ang = 0.0
    if kind in ("translate", "translate_rotate"):
        tr = t * np.asarray(spec["translation"], dtype=np.float64)
    if kind == "translate_rotate":
        ang = np.deg2rad(spec["rotation_degrees"]) * t
    ca, sa = np.cos(ang), np.sin(ang)
    rot = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    return rot, tr


def _train_cameras(spec):
    cams = []
    n = spec["n_train_cameras"] + 1  # last one is the held-out pose
    for i in range(n):
        ang = 2 * np.pi * (i + 0.35) / n
        eye = np.array([
            spec["camera_radius"] * np.sin(ang),
            0.9 * np.sin(2 * ang + 0.4),
            -spec["camera_radius"] * np.cos(ang),
        ])
        cams.append(Camera.look_at(eye, [0.35, 0.0, 0.0], [0, 1, 0],
                                   spec["fov_x"], spec["width"], spec["height"]))
    return cams[:-1], cams[-1]


def _camera_to_manifest_matrix(cam: Camera) -> list:
    c2w = np.eye(4)
    c2w[:3, :3] = cam.rotation.T
    c2w[:3, 3] = cam.center
    c2w[:3, 1] *= -1.0
    c2w[:3, 2] *= -1.0
    return [[float(v) for v in row] for row in c2w]


def make_synthetic_dataset(spec: dict | None, seed: int, out_dir) -> Path:
    """Render a rigid cluster of ground-truth Gaussians along a trajectory.

    Produces transforms_train/test.json + PNGs, the ground-truth scene file
    (rest pose, zero-initialized deformation) and a per-time center table.
    Byte-deterministic for a fixed (spec, seed).
    """
    full = dict(DEFAULT_SYNTH_SPEC)
    full.update(spec or {})
    spec = full
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    means, rot, scales, opacity, sh = _gt_gaussians(spec, rng)
    train_cams, test_cam = _train_cameras(spec)
    bg = np.asarray(spec["background"], dtype=np.float64)
    nt = spec["n_timesteps"]
    times = [0.0] if nt == 1 else [i / (nt - 1) for i in range(nt)]

    def gaussians_at(t):
        q, tr = _trajectory(spec, t)
        m = means @ q.T + tr
        r = np.einsum("ij,njk->nik", q, rot)
        return m, r

    frames_train, frames_test, centers = [], [], []
    for ti, t in enumerate(times):
        m, r = gaussians_at(t)
        centers.append([[float(v) for v in row] for row in m])
        for ci, cam in enumerate(train_cams):
            splats = splats_from_arrays(cam, m, r, scales, opacity, sh)
            img = render(splats, cam, bg, workers=1)
            name = f"train/r_{ci:02d}_{ti:03d}.png"
            save_png(out / name, img)
            frames_train.append({
                "file_path": name, "time": t,
                "transform_matrix": _camera_to_manifest_matrix(cam),
            })
        splats = splats_from_arrays(test_cam, m, r, scales, opacity, sh)
        img = render(splats, test_cam, bg, workers=1)
        name = f"test/r_{ti:03d}.png"
        save_png(out / name, img)
        frames_test.append({
            "file_path": name, "time": t,
            "transform_matrix": _camera_to_manifest_matrix(test_cam),
        })

    for split, frames in (("train", frames_train), ("test", frames_test)):
        manifest = {
            "camera_angle_x": spec["fov_x"],
            "background": [float(v) for v in bg],
            "frames": frames,
        }
        (out / f"transforms_{split}.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True)
        )

    # ground-truth rest-pose scene (one sub per core, zero offsets)
    from .multigauss import matrix_to_quat
    from .soup import triangles_from_frames

    p = means.shape[0]
    verts = triangles_from_frames(means, rot, scales)
    arrays = SceneArrays(
        core_verts=verts,
        sub_core=np.arange(p),
        alpha=np.zeros((p, 3)),
        quat=matrix_to_quat(rot).reshape(p, 4),
        scale=scales.copy(),
        opacity=opacity.copy(),
        sh=sh.copy(),
        sh_degree=1,
        background=bg,
    )
    save_scene(out / "gt_scene.dms", unpack_scene(arrays), init_deform_params(seed=0))
    (out / "gt_trajectory.json").write_text(json.dumps({
        "times": times, "centers": centers}, indent=1))
    (out / "spec.json").write_text(json.dumps({"seed": seed, **spec},
                                              indent=1, sort_keys=True))
    return out


# ---------------------------------------------------------------------------
# mesh export
# ---------------------------------------------------------------------------

def export_obj(mesh) -> str:
    """ASCII OBJ of an estimated mesh (vertices + 1-based triangle faces)."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(lines) + "\n"
