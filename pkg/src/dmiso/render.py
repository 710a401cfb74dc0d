"""CPU splatting renderer for flat Gaussians.

Projection follows the usual affine (EWA-style) approximation: the 3D
covariance is pushed through the world-to-camera rotation and the projection
Jacobian, low-passed, and composited front to back with opacity-weighted
alpha blending. Everything runs in float64.

Two render paths exist on purpose. ``render`` is the product path: per-splat
bounding boxes, 16x16 tiles, optional worker threads. ``render_brute`` is
the test oracle: a plain per-pixel loop over every splat with no culling and
no early exit. The bounding boxes are sized so that every pixel they exclude
would fail the 1/255 alpha floor anyway, which keeps the two paths in
agreement to float precision and makes renders independent of tiling and
worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

ALPHA_FLOOR = 1.0 / 255.0
ALPHA_CEIL = 0.99
LOWPASS = 0.3             # px^2 added to the 2D covariance diagonal
TILE = 16
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class BehindCamera(ValueError):
    """Gaussian center is at or behind the near plane."""


class DimensionMismatch(ValueError):
    pass


class TooSmall(ValueError):
    pass


class BadCoefficientCount(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; pose maps world points to camera space (z forward)."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3,3) world-to-camera
    translation: np.ndarray   # (3,)
    znear: float = 0.01

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-8:
            raise ValueError("pose rotation must be orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @staticmethod
    def look_at(eye, target, up, fov_x: float, width: int, height: int,
                znear: float = 0.01) -> "Camera":
        """Orbit-style constructor; fov_x in radians."""
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        fwd = target - eye
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(fwd, up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("up vector parallel to view direction")
        right = right / nr
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])  # rows: camera axes in world coords
        fx = 0.5 * width / math.tan(0.5 * fov_x)
        return Camera(width, height, fx, fx, width / 2.0, height / 2.0,
                      rot, -rot @ eye, znear)

    @staticmethod
    def from_c2w(c2w: np.ndarray, fov_x: float, width: int, height: int,
                 znear: float = 0.01) -> "Camera":
        """From an OpenCV-style camera-to-world matrix (camera z looks forward)."""
        c2w = np.asarray(c2w, dtype=np.float64)
        rot = c2w[:3, :3].T
        t = -rot @ c2w[:3, 3]
        fx = 0.5 * width / math.tan(0.5 * fov_x)
        return Camera(width, height, fx, fx, width / 2.0, height / 2.0, rot, t, znear)


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray   # (2,) pixels
    cov2d: np.ndarray    # (2,2) pixels^2, low-passed
    depth: float
    color: np.ndarray    # (3,)
    opacity: float

    def __post_init__(self):
        object.__setattr__(self, "mean2d", np.asarray(self.mean2d, dtype=np.float64))
        object.__setattr__(self, "cov2d", np.asarray(self.cov2d, dtype=np.float64))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64))


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project_batch(cam: Camera, means: np.ndarray, covs: np.ndarray):
    """Project (n,3) means and (n,3,3) covariances.

    Returns (mean2d (n,2), cov2d (n,2,2), depth (n,), valid (n,) bool); rows
    with depth <= znear are flagged invalid and left unprojected.
    """
    w = cam.rotation
    mc = means @ w.T + cam.translation
    z = mc[:, 2]
    valid = z > cam.znear
    zs = np.where(valid, z, 1.0)
    x, y = mc[:, 0], mc[:, 1]
    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    j = np.zeros((means.shape[0], 2, 3))
    j[:, 0, 0] = cam.fx / zs
    j[:, 0, 2] = -cam.fx * x / (zs * zs)
    j[:, 1, 1] = cam.fy / zs
    j[:, 1, 2] = -cam.fy * y / (zs * zs)
    cov_cam = np.einsum("ij,njk,lk->nil", w, covs, w)
    cov2d = np.einsum("nij,njk,nlk->nil", j, cov_cam, j)
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    return mean2d, cov2d, z, valid


def project_gaussian(cam: Camera, mean, cov3: np.ndarray,
                     color=(0.0, 0.0, 0.0), opacity: float = 0.0) -> Splat2D:
    """Project one Gaussian; raises BehindCamera at or behind the near plane."""
    mean = np.asarray(mean, dtype=np.float64)
    mean2d, cov2d, z, valid = project_batch(cam, mean[None], np.asarray(cov3)[None])
    if not valid[0]:
        raise BehindCamera(f"camera-space depth {z[0]:.6g} <= near {cam.znear:.6g}")
    return Splat2D(mean2d[0], cov2d[0], float(z[0]), color, float(opacity))


# ---------------------------------------------------------------------------
# spherical harmonics
# ---------------------------------------------------------------------------

def sh_colors_batch(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """(n,B,3) coefficients + (n,3) unit view dirs -> clamped RGB (n,3)."""
    c = 0.5 + SH_C0 * sh[:, 0]
    if sh.shape[1] == 4:
        dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        c = c - SH_C1 * dy * sh[:, 1] + SH_C1 * dz * sh[:, 2] - SH_C1 * dx * sh[:, 3]
    return np.maximum(c, 0.0)


def sh_to_color(sh, view_dir) -> np.ndarray:
    """Evaluate degree-0/1 SH color for one unit view direction."""
    sh = np.asarray(sh, dtype=np.float64)
    if sh.ndim == 1:
        if sh.size not in (3, 12):
            raise BadCoefficientCount(f"expected 3 or 12 coefficients, got {sh.size}")
        sh = sh.reshape(-1, 3)
    if sh.shape not in ((1, 3), (4, 3)):
        raise BadCoefficientCount(f"bad SH shape {sh.shape}")
    d = np.asarray(view_dir, dtype=np.float64)
    return sh_colors_batch(sh[None], d[None])[0]


# ---------------------------------------------------------------------------
# compositing
# ---------------------------------------------------------------------------

def _render_workers(workers) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("DMISO_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def splat_cutoff2(opacity: float) -> float:
    """Squared Mahalanobis radius beyond which alpha < the 1/255 floor."""
    lim = 255.0 * opacity
    if lim <= 1.0:
        return -1.0  # never reaches the floor anywhere
    return max(9.0, 2.0 * math.log(lim))


def prepare_splats(splats):
    """Sort by depth (stable) and precompute inverse covariances and pixel boxes."""
    n = len(splats)
    depth = np.array([s.depth for s in splats])
    order = np.argsort(depth, kind="stable")
    mean2d = np.array([splats[i].mean2d for i in order]).reshape(n, 2)
    cov = np.array([splats[i].cov2d for i in order]).reshape(n, 2, 2)
    color = np.array([splats[i].color for i in order]).reshape(n, 3)
    opacity = np.array([splats[i].opacity for i in order])
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] * cov[:, 1, 0]
    inv = np.empty_like(cov)
    inv[:, 0, 0] = cov[:, 1, 1] / det
    inv[:, 1, 1] = cov[:, 0, 0] / det
    inv[:, 0, 1] = -cov[:, 0, 1] / det
    inv[:, 1, 0] = -cov[:, 1, 0] / det
    cut2 = np.array([splat_cutoff2(o) for o in opacity])
    rx = np.sqrt(np.maximum(cut2, 0.0) * cov[:, 0, 0]) + 1.0
    ry = np.sqrt(np.maximum(cut2, 0.0) * cov[:, 1, 1]) + 1.0
    return {
        "mean2d": mean2d, "inv": inv, "color": color, "opacity": opacity,
        "cut2": cut2, "rx": rx, "ry": ry, "order": order,
    }


def _composite_rect(acc_c, acc_t, prep, idx, x0, x1, y0, y1):
    """Blend splats idx (already depth-ordered) into a pixel rectangle.

    acc_c is (h, w, 3) premultiplied color, acc_t the (h, w) transmittance;
    both are updated in place. Background is NOT applied here.
    """
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    for i in idx:
        if prep["cut2"][i] < 0.0:
            continue
        mx, my = prep["mean2d"][i]
        bx0 = max(x0, int(math.floor(mx - prep["rx"][i])))
        bx1 = min(x1, int(math.ceil(mx + prep["rx"][i])) + 1)
        by0 = max(y0, int(math.floor(my - prep["ry"][i])))
        by1 = min(y1, int(math.ceil(my + prep["ry"][i])) + 1)
        if bx0 >= bx1 or by0 >= by1:
            continue
        sl = (slice(by0 - y0, by1 - y0), slice(bx0 - x0, bx1 - x0))
        dx = xs[bx0 - x0:bx1 - x0][None, :] - mx
        dy = ys[by0 - y0:by1 - y0][:, None] - my
        a, b, c = prep["inv"][i, 0, 0], prep["inv"][i, 0, 1], prep["inv"][i, 1, 1]
        d2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        araw = prep["opacity"][i] * np.exp(-0.5 * d2)
        alpha = np.where(araw < ALPHA_FLOOR, 0.0, np.minimum(araw, ALPHA_CEIL))
        t = acc_t[sl]
        acc_c[sl] += prep["color"][i] * (alpha * t)[:, :, None]
        acc_t[sl] = t * (1.0 - alpha)
        if not acc_t.any():
            break


def render(splats, cam: Camera, background, workers=None) -> np.ndarray:
    """Depth-sorted alpha compositing over 16x16 tiles.

    Output is identical for any worker count: tiles own disjoint pixels and
    per-pixel blending order is the global depth order.
    """
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    img_c = np.zeros((h, w, 3))
    img_t = np.ones((h, w))
    if len(splats) == 0:
        return img_c + bg
    prep = prepare_splats(splats)
    idx = np.arange(len(splats))
    tiles = [(x0, min(x0 + TILE, w), y0, min(y0 + TILE, h))
             for y0 in range(0, h, TILE) for x0 in range(0, w, TILE)]

    def run_tile(tile):
        x0, x1, y0, y1 = tile
        # splats whose box intersects this tile, in depth order
        keep = [i for i in idx
                if prep["cut2"][i] >= 0.0
                and prep["mean2d"][i, 0] + prep["rx"][i] >= x0
                and prep["mean2d"][i, 0] - prep["rx"][i] <= x1
                and prep["mean2d"][i, 1] + prep["ry"][i] >= y0
                and prep["mean2d"][i, 1] - prep["ry"][i] <= y1]
        tc = np.zeros((y1 - y0, x1 - x0, 3))
        tt = np.ones((y1 - y0, x1 - x0))
        _composite_rect(tc, tt, prep, keep, x0, x1, y0, y1)
        img_c[y0:y1, x0:x1] = tc
        img_t[y0:y1, x0:x1] = tt

    n_workers = _render_workers(workers)
    if n_workers <= 1 or len(tiles) == 1:
        for tile in tiles:
            run_tile(tile)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(run_tile, tiles))
    return img_c + img_t[:, :, None] * bg


def render_brute(splats, cam: Camera, background) -> np.ndarray:
    """Oracle renderer: every splat at every pixel, no culling, no early exit."""
    h, w = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    img = np.empty((h, w, 3))
    if len(splats) == 0:
        img[:] = bg
        return img
    order = np.argsort([s.depth for s in splats], kind="stable")
    xs = np.arange(w) + 0.5
    for row in range(h):
        py = row + 0.5
        color = np.zeros((w, 3))
        trans = np.ones(w)
        for i in order:
            s = splats[i]
            cov = s.cov2d
            det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
            ia = cov[1, 1] / det
            ib = -cov[0, 1] / det
            ic = cov[0, 0] / det
            dx = xs - s.mean2d[0]
            dy = py - s.mean2d[1]
            d2 = ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy
            araw = s.opacity * np.exp(-0.5 * d2)
            alpha = np.where(araw < ALPHA_FLOOR, 0.0, np.minimum(araw, ALPHA_CEIL))
            color += s.color * (alpha * trans)[:, None]
            trans = trans * (1.0 - alpha)
        img[row] = color + trans[:, None] * bg
    return img


# ---------------------------------------------------------------------------
# scene-level rendering
# ---------------------------------------------------------------------------

def splats_from_arrays(cam: Camera, means: np.ndarray, rots: np.ndarray,
                       scales: np.ndarray, opacity: np.ndarray, sh: np.ndarray):
    """Project packed sub geometry into a Splat2D list (behind-camera rows dropped)."""
    from .soup import covariance_batch

    covs = covariance_batch(rots, scales)
    mean2d, cov2d, depth, valid = project_batch(cam, means, covs)
    dirs = means - cam.center
    dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-30)
    colors = sh_colors_batch(sh, dirs)
    return [
        Splat2D(mean2d[i], cov2d[i], float(depth[i]), colors[i], float(opacity[i]))
        for i in range(means.shape[0]) if valid[i]
    ]


def render_scene(scene, params, t: float, cam: Camera, workers=None) -> np.ndarray:
    """Render the deformed sub soup of a scene at time t."""
    from .deform import deformed_sub_arrays
    from .multigauss import pack_scene

    arrays = pack_scene(scene)
    if arrays.n == 0:
        return render([], cam, arrays.background, workers)
    centers, rots, scales = deformed_sub_arrays(arrays, params, t)
    splats = splats_from_arrays(cam, centers, rots, scales, arrays.opacity, arrays.sh)
    return render(splats, cam, arrays.background, workers)


def render_soup(soup, cam: Camera, background, workers=None) -> np.ndarray:
    """Render a flat (Triangle, appearance) soup, e.g. an edited one."""
    from .soup import frames_from_triangles

    if len(soup) == 0:
        return render([], cam, background, workers)
    verts = np.stack([tri.vertices for tri, _ in soup])
    means, rots, scales = frames_from_triangles(verts)
    opacity = np.array([app.opacity for _, app in soup])
    sh = np.stack([app.sh for _, app in soup])
    splats = splats_from_arrays(cam, means, rots, scales, opacity, sh)
    return render(splats, cam, background, workers)


# ---------------------------------------------------------------------------
# image metrics
# ---------------------------------------------------------------------------

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """-10 log10(MSE) on [0,1] images, capped at 100 dB."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 100.0
    return min(100.0, -10.0 * math.log10(mse))


def _ssim_kernel() -> np.ndarray:
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    k = np.exp(-0.5 * (r / SSIM_SIGMA) ** 2)
    return k / k.sum()


_SSIM_K = _ssim_kernel()


def _blur(img: np.ndarray) -> np.ndarray:
    """Separable 11x11 Gaussian, zero padded; channels pass through untouched."""
    out = correlate1d(img, _SSIM_K, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _SSIM_K, axis=1, mode="constant", cval=0.0)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    return ssim_and_grad(a, b, with_grad=False)[0]


def ssim_and_grad(a: np.ndarray, b: np.ndarray, with_grad: bool = True):
    """Mean SSIM of two (H,W,3) images and, optionally, d(ssim)/da."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise TooSmall(f"min side must be >= {SSIM_WINDOW}")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_a = _blur(a)
    mu_b = _blur(b)
    a2 = _blur(a * a)
    b2 = _blur(b * b)
    ab = _blur(a * b)
    var_a = a2 - mu_a * mu_a
    var_b = b2 - mu_b * mu_b
    cov = ab - mu_a * mu_b
    num1 = 2.0 * mu_a * mu_b + c1
    num2 = 2.0 * cov + c2
    den1 = mu_a * mu_a + mu_b * mu_b + c1
    den2 = var_a + var_b + c2
    smap = (num1 * num2) / (den1 * den2)
    value = float(np.mean(smap))
    if not with_grad:
        return value, None
    n = smap.size
    # d smap / d stats, all elementwise maps
    g_num1 = num2 / (den1 * den2) / n
    g_num2 = num1 / (den1 * den2) / n
    g_den1 = -smap / den1 / n
    g_den2 = -smap / den2 / n
    g_mu_a = 2.0 * mu_b * g_num1 + 2.0 * mu_a * g_den1
    g_cov = 2.0 * g_num2
    g_var_a = g_den2
    # stats in terms of the blurred raw moments
    g_a2 = g_var_a
    g_ab = g_cov
    g_mu_a = g_mu_a - 2.0 * mu_a * g_var_a - mu_b * g_cov
    # adjoint of the (symmetric, zero-padded) blur is the blur itself
    grad = _blur(g_mu_a) + 2.0 * a * _blur(g_a2) + b * _blur(g_ab)
    return value, grad
