"""Hand-written reverse-mode gradients through the render pipeline.

The forward pass reuses the exact same code the display renderer runs
(deform -> place subs -> covariance -> projection -> SH -> compositing), so
rendering an image and differentiating a loss against it see bit-identical
pixels. Each stage below has a paired backward that consumes the forward's
cache; every one of them is finite-difference checked in the test suite.

Gradients are taken with respect to the stored model values (vertices,
offsets, raw quaternions, scales, opacities, SH coefficients, both networks'
weights); activation reparameterizations (sigmoid opacity, log scales) live
in the optimizer, not here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .deform import (
    DeformFieldParams,
    MLPParams,
    TimeEncodingConfig,
    deform_cores_cached,
    deformed_subs_cached,
)
from .multigauss import pack_scene
from .render import (
    ALPHA_CEIL,
    ALPHA_FLOOR,
    SH_C0,
    SH_C1,
    Camera,
    Splat2D,
    prepare_splats,
    project_batch,
    sh_colors_batch,
    ssim_and_grad,
)
from .soup import covariance_batch, frames_with_cache

# ---------------------------------------------------------------------------
# elementary backwards
# ---------------------------------------------------------------------------


def embed_backward(x: np.ndarray, cfg: TimeEncodingConfig, d_enc: np.ndarray) -> np.ndarray:
    """Adjoint of embed_scalars; x is (..., d), d_enc is (..., d*length)."""
    de = d_enc.reshape(x.shape + (cfg.length,))
    dx = de[..., 0].copy()
    for lvl in range(cfg.frequency_count):
        f = (2.0 ** lvl) * cfg.base_frequency
        ang = f * x
        dx += f * (de[..., 1 + 2 * lvl] * np.cos(ang) - de[..., 2 + 2 * lvl] * np.sin(ang))
    return dx


def mlp_backward(p: MLPParams, acts, d_out: np.ndarray):
    """Returns (d_input, MLPParams-shaped gradients)."""
    gw = [None] * len(p.weights)
    gb = [None] * len(p.weights)
    g = d_out
    for i in range(len(p.weights) - 1, -1, -1):
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        g = g @ p.weights[i]
        if i > 0:
            g = g * (1.0 - acts[i] ** 2)
    return g, MLPParams(gw, gb)


def quat_mat_backward(q: np.ndarray, dm: np.ndarray) -> np.ndarray:
    """Adjoint of quat_to_matrix at unit quaternion q; dm is (..., 3, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    dq = np.empty_like(q)
    dq[..., 0] = (-2 * z * dm[..., 0, 1] + 2 * y * dm[..., 0, 2]
                  + 2 * z * dm[..., 1, 0] - 2 * x * dm[..., 1, 2]
                  - 2 * y * dm[..., 2, 0] + 2 * x * dm[..., 2, 1])
    dq[..., 1] = (2 * y * dm[..., 0, 1] + 2 * z * dm[..., 0, 2]
                  + 2 * y * dm[..., 1, 0] - 4 * x * dm[..., 1, 1] - 2 * w * dm[..., 1, 2]
                  + 2 * z * dm[..., 2, 0] + 2 * w * dm[..., 2, 1] - 4 * x * dm[..., 2, 2])
    dq[..., 2] = (-4 * y * dm[..., 0, 0] + 2 * x * dm[..., 0, 1] + 2 * w * dm[..., 0, 2]
                  + 2 * x * dm[..., 1, 0] + 2 * z * dm[..., 1, 2]
                  - 2 * w * dm[..., 2, 0] + 2 * z * dm[..., 2, 1] - 4 * y * dm[..., 2, 2])
    dq[..., 3] = (-4 * z * dm[..., 0, 0] - 2 * w * dm[..., 0, 1] + 2 * x * dm[..., 0, 2]
                  + 2 * w * dm[..., 1, 0] - 4 * z * dm[..., 1, 1] + 2 * y * dm[..., 1, 2]
                  + 2 * x * dm[..., 2, 0] + 2 * y * dm[..., 2, 1])
    return dq


def normalize_backward(q_unit: np.ndarray, norm: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Adjoint of u -> u/|u| given the unit output and |u|; norm is (...,) or (...,1)."""
    if norm.ndim == d_unit.ndim - 1:
        norm = norm[..., None]
    dot = np.sum(q_unit * d_unit, axis=-1, keepdims=True)
    return (d_unit - q_unit * dot) / norm


def frames_backward(verts: np.ndarray, cache: dict, d_mean: np.ndarray,
                    d_rot: np.ndarray, d_scale23: np.ndarray) -> np.ndarray:
    """Adjoint of frames_with_cache; returns d_verts (n,3,3)."""
    e1, e2 = cache["e1"], cache["e2"]
    n1, r1 = cache["n1"], cache["r1"]
    n2, r2 = cache["n2"], cache["r2"]
    n3, r3 = cache["n3"], cache["r3"]
    proj1, proj2 = cache["proj1"], cache["proj2"]
    dr1 = d_rot[:, :, 0].copy()
    dr2 = d_rot[:, :, 1].copy()
    dr3 = d_rot[:, :, 2].copy()
    ds2 = d_scale23[:, 0]
    ds3 = d_scale23[:, 1]
    de1 = np.zeros_like(e1)
    de2 = np.zeros_like(e2)
    # s3 = <e2, r3>
    de2 += ds3[:, None] * r3
    dr3 += ds3[:, None] * e2
    # r3 = u / n3
    du = (dr3 - r3 * np.sum(r3 * dr3, axis=1, keepdims=True)) / n3[:, None]
    # u = e2 - proj1*r1 - proj2*r2
    de2 += du - r1 * np.sum(du * r1, axis=1, keepdims=True) \
              - r2 * np.sum(du * r2, axis=1, keepdims=True)
    dr1 += -np.sum(du * r1, axis=1, keepdims=True) * e2 - proj1[:, None] * du
    dr2 += -np.sum(du * r2, axis=1, keepdims=True) * e2 - proj2[:, None] * du
    # s2 = |e1|
    de1 += ds2[:, None] * r2
    # r2 = e1 / n2
    de1 += (dr2 - r2 * np.sum(r2 * dr2, axis=1, keepdims=True)) / n2[:, None]
    # r1 = c / n1, c = e1 x e2
    dc = (dr1 - r1 * np.sum(r1 * dr1, axis=1, keepdims=True)) / n1[:, None]
    de1 += np.cross(e2, dc)
    de2 += np.cross(dc, e1)
    d_verts = np.zeros_like(verts)
    d_verts[:, 0] = d_mean - de1 - de2
    d_verts[:, 1] = de1
    d_verts[:, 2] = de2
    return d_verts


def covariance_backward(rot: np.ndarray, scale23: np.ndarray, d_cov: np.ndarray):
    """Adjoint of Sigma = R diag(eps^2, s2^2, s3^2) R^T."""
    from .soup import EPS_FLAT

    n = rot.shape[0]
    d = np.empty((n, 3))
    d[:, 0] = EPS_FLAT * EPS_FLAT
    d[:, 1] = scale23[:, 0] ** 2
    d[:, 2] = scale23[:, 1] ** 2
    sym = d_cov + np.transpose(d_cov, (0, 2, 1))
    d_rot = np.einsum("nij,njk,nk->nik", sym, rot, d)
    dd = np.einsum("nji,njk,nkl->nil", rot, d_cov, rot)
    d_scale = np.stack([
        2.0 * scale23[:, 0] * dd[:, 1, 1],
        2.0 * scale23[:, 1] * dd[:, 2, 2],
    ], axis=1)
    return d_rot, d_scale


def project_backward(cam: Camera, means: np.ndarray, covs: np.ndarray,
                     d_mean2d: np.ndarray, d_cov2d: np.ndarray):
    """Adjoint of project_batch (all rows assumed in front of the near plane)."""
    w = cam.rotation
    mc = means @ w.T + cam.translation
    x, y, z = mc[:, 0], mc[:, 1], mc[:, 2]
    n = means.shape[0]
    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = cam.fx / z
    j[:, 0, 2] = -cam.fx * x / (z * z)
    j[:, 1, 1] = cam.fy / z
    j[:, 1, 2] = -cam.fy * y / (z * z)
    cov_cam = np.einsum("ij,njk,lk->nil", w, covs, w)

    d_mc = np.zeros((n, 3))
    du, dv = d_mean2d[:, 0], d_mean2d[:, 1]
    d_mc[:, 0] += cam.fx / z * du
    d_mc[:, 1] += cam.fy / z * dv
    d_mc[:, 2] += -cam.fx * x / (z * z) * du - cam.fy * y / (z * z) * dv

    d_cov_cam = np.einsum("nji,njk,nkl->nil", j, d_cov2d, j)
    sym = d_cov2d + np.transpose(d_cov2d, (0, 2, 1))
    dj = np.einsum("nij,njk,nkl->nil", sym, j, cov_cam)
    d_mc[:, 2] += (-cam.fx / (z * z) * dj[:, 0, 0]
                   - cam.fy / (z * z) * dj[:, 1, 1]
                   + 2 * cam.fx * x / (z ** 3) * dj[:, 0, 2]
                   + 2 * cam.fy * y / (z ** 3) * dj[:, 1, 2])
    d_mc[:, 0] += -cam.fx / (z * z) * dj[:, 0, 2]
    d_mc[:, 1] += -cam.fy / (z * z) * dj[:, 1, 2]

    d_means = d_mc @ w
    d_covs = np.einsum("ji,njk,kl->nil", w, d_cov_cam, w)
    return d_means, d_covs


def sh_backward(sh: np.ndarray, dirs: np.ndarray, d_color: np.ndarray):
    """Adjoint of sh_colors_batch; returns (d_sh, d_dirs)."""
    c = 0.5 + SH_C0 * sh[:, 0]
    if sh.shape[1] == 4:
        dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        c = c - SH_C1 * dy * sh[:, 1] + SH_C1 * dz * sh[:, 2] - SH_C1 * dx * sh[:, 3]
    live = (c > 0.0).astype(np.float64)
    dc = d_color * live
    d_sh = np.zeros_like(sh)
    d_sh[:, 0] = SH_C0 * dc
    d_dirs = np.zeros_like(dirs)
    if sh.shape[1] == 4:
        dx, dy, dz = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        d_sh[:, 1] = -SH_C1 * dy * dc
        d_sh[:, 2] = SH_C1 * dz * dc
        d_sh[:, 3] = -SH_C1 * dx * dc
        d_dirs[:, 0] = -SH_C1 * np.sum(sh[:, 3] * dc, axis=1)
        d_dirs[:, 1] = -SH_C1 * np.sum(sh[:, 1] * dc, axis=1)
        d_dirs[:, 2] = SH_C1 * np.sum(sh[:, 2] * dc, axis=1)
    return d_sh, d_dirs


# ---------------------------------------------------------------------------
# compositing
# ---------------------------------------------------------------------------


def composite_forward(prep: dict, width: int, height: int, background: np.ndarray):
    """Full-image forward identical (per pixel) to the tiled renderer."""
    from .render import _composite_rect

    acc_c = np.zeros((height, width, 3))
    acc_t = np.ones((height, width))
    _composite_rect(acc_c, acc_t, prep, range(len(prep["opacity"])), 0, width, 0, height)
    img = acc_c + acc_t[:, :, None] * background
    return img, acc_t


def _splat_rect(prep: dict, i: int, width: int, height: int):
    mx, my = prep["mean2d"][i]
    x0 = max(0, int(math.floor(mx - prep["rx"][i])))
    x1 = min(width, int(math.ceil(mx + prep["rx"][i])) + 1)
    y0 = max(0, int(math.floor(my - prep["ry"][i])))
    y1 = min(height, int(math.ceil(my + prep["ry"][i])) + 1)
    return x0, x1, y0, y1


def composite_backward(prep: dict, t_final: np.ndarray, d_img: np.ndarray,
                       width: int, height: int, background: np.ndarray):
    """Adjoint of composite_forward.

    Transmittances before each splat are reconstructed back-to-front by
    dividing the running transmittance by (1 - alpha); alpha is bounded by
    the 0.99 ceiling so the division is safe.
    """
    n = len(prep["opacity"])
    d_mean2d = np.zeros((n, 2))
    d_inv = np.zeros((n, 2, 2))
    d_color = np.zeros((n, 3))
    d_opacity = np.zeros(n)
    behind = t_final[:, :, None] * background  # color accumulated behind splat i
    t_run = t_final.copy()
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    for i in range(n - 1, -1, -1):
        if prep["cut2"][i] < 0.0:
            continue
        x0, x1, y0, y1 = _splat_rect(prep, i, width, height)
        if x0 >= x1 or y0 >= y1:
            continue
        sl = (slice(y0, y1), slice(x0, x1))
        mx, my = prep["mean2d"][i]
        dx = xs[x0:x1][None, :] - mx
        dy = ys[y0:y1][:, None] - my
        a, b, c = prep["inv"][i, 0, 0], prep["inv"][i, 0, 1], prep["inv"][i, 1, 1]
        d2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        g = np.exp(-0.5 * d2)
        araw = prep["opacity"][i] * g
        alpha = np.where(araw < ALPHA_FLOOR, 0.0, np.minimum(araw, ALPHA_CEIL))
        t_i = t_run[sl] / (1.0 - alpha)
        t_run[sl] = t_i
        d_c = d_img[sl]
        contrib = prep["color"][i] * (alpha * t_i)[:, :, None]
        d_alpha = np.sum(
            d_c * (prep["color"][i] * t_i[:, :, None] - behind[sl] / (1.0 - alpha)[:, :, None]),
            axis=2,
        )
        behind[sl] += contrib
        d_color[i] = np.sum(d_c * (alpha * t_i)[:, :, None], axis=(0, 1))
        live = (araw >= ALPHA_FLOOR) & (araw <= ALPHA_CEIL)
        d_araw = np.where(live, d_alpha, 0.0)
        d_opacity[i] = np.sum(d_araw * g)
        d_g = d_araw * prep["opacity"][i]
        d_d2 = -0.5 * g * d_g
        d_mean2d[i, 0] = -np.sum(d_d2 * (2.0 * a * dx + 2.0 * b * dy))
        d_mean2d[i, 1] = -np.sum(d_d2 * (2.0 * b * dx + 2.0 * c * dy))
        d_inv[i, 0, 0] = np.sum(d_d2 * dx * dx)
        d_inv[i, 0, 1] = d_inv[i, 1, 0] = np.sum(d_d2 * dx * dy)
        d_inv[i, 1, 1] = np.sum(d_d2 * dy * dy)
    # Lambda = cov^-1  =>  d_cov = -Lambda dLambda Lambda
    d_cov = -np.einsum("nij,njk,nkl->nil", prep["inv"], d_inv, prep["inv"])
    return d_mean2d, d_cov, d_color, d_opacity


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def loss_forward_backward(img: np.ndarray, target: np.ndarray, lambda_dssim: float):
    """L1 + lambda*(1 - SSIM) and its gradient w.r.t. img."""
    diff = img - target
    l1 = float(np.mean(np.abs(diff)))
    d_img = np.sign(diff) / diff.size
    if lambda_dssim != 0.0:
        s, s_grad = ssim_and_grad(img, target)
        return l1 + lambda_dssim * (1.0 - s), d_img - lambda_dssim * s_grad
    return l1, d_img


# ---------------------------------------------------------------------------
# splat pipeline (geometry arrays -> image)
# ---------------------------------------------------------------------------


def splat_forward(means: np.ndarray, rots: np.ndarray, scales: np.ndarray,
                  opacity: np.ndarray, sh: np.ndarray, cam: Camera,
                  background: np.ndarray):
    """Covariance + projection + SH + compositing; returns (img, cache)."""
    covs = covariance_batch(rots, scales)
    mean2d, cov2d, depth, valid = project_batch(cam, means, covs)
    vidx = np.nonzero(valid)[0]
    dirs_un = means - cam.center
    dn = np.maximum(np.linalg.norm(dirs_un, axis=1, keepdims=True), 1e-30)
    dirs = dirs_un / dn
    colors = sh_colors_batch(sh, dirs)
    splats = [
        Splat2D(mean2d[i], cov2d[i], float(depth[i]), colors[i], float(opacity[i]))
        for i in vidx
    ]
    prep = prepare_splats(splats) if splats else None
    if prep is None:
        img = np.zeros((cam.height, cam.width, 3)) + background
        t_final = np.ones((cam.height, cam.width))
    else:
        img, t_final = composite_forward(prep, cam.width, cam.height, background)
    cache = {"covs": covs, "vidx": vidx, "dirs": dirs, "dn": dn,
             "prep": prep, "t_final": t_final, "means": means, "rots": rots,
             "scales": scales, "sh": sh}
    return img, cache


def splat_backward(cache: dict, cam: Camera, background: np.ndarray, d_img: np.ndarray):
    """Adjoint of splat_forward back to (means, rots, scales, opacity, sh)."""
    means, rots, scales, sh = cache["means"], cache["rots"], cache["scales"], cache["sh"]
    n = means.shape[0]
    d_means = np.zeros((n, 3))
    d_rots = np.zeros((n, 3, 3))
    d_scales = np.zeros((n, 2))
    d_opacity = np.zeros(n)
    d_sh = np.zeros_like(sh)
    prep = cache["prep"]
    if prep is None:
        return d_means, d_rots, d_scales, d_opacity, d_sh
    dm2_s, dcov2_s, dcol_s, dopa_s = composite_backward(
        prep, cache["t_final"], d_img, cam.width, cam.height, background
    )
    # scatter sorted-order grads back to the valid subset, then to full arrays
    vidx = cache["vidx"]
    nv = len(vidx)
    order = prep["order"]
    dm2 = np.zeros((nv, 2))
    dcov2 = np.zeros((nv, 2, 2))
    dcol = np.zeros((nv, 3))
    dopa = np.zeros(nv)
    dm2[order] = dm2_s
    dcov2[order] = dcov2_s
    dcol[order] = dcol_s
    dopa[order] = dopa_s

    d_opacity[vidx] = dopa
    # colors -> SH and view directions (valid rows only)
    d_sh_v, d_dirs_v = sh_backward(sh[vidx], cache["dirs"][vidx], dcol)
    d_sh[vidx] = d_sh_v
    d_dirs = np.zeros((n, 3))
    d_dirs[vidx] = d_dirs_v
    dn = cache["dn"]
    d_means += normalize_backward(cache["dirs"], dn[:, 0], d_dirs)
    # projection -> world means / covariances
    dmw, dcw = project_backward(cam, means[vidx], cache["covs"][vidx], dm2, dcov2)
    d_means[vidx] += dmw
    d_cov3 = np.zeros((n, 3, 3))
    d_cov3[vidx] = dcw
    # covariance -> rotation / scales
    dr, ds = covariance_backward(rots, scales, d_cov3)
    d_rots += dr
    d_scales += ds
    return d_means, d_rots, d_scales, d_opacity, d_sh


# ---------------------------------------------------------------------------
# geometry backward (deform network + sub placement)
# ---------------------------------------------------------------------------


def _psi_phi_input_split(cfg: TimeEncodingConfig):
    return 9 * cfg.length  # leading geometry features; the rest is the time block


def geometry_backward_multi(core_verts: np.ndarray, sub_core: np.ndarray,
                            alpha: np.ndarray, quat: np.ndarray,
                            params: DeformFieldParams, cache: dict,
                            d_centers: np.ndarray, d_rsub: np.ndarray):
    """Adjoint of deformed_subs_cached back to (V, alpha, quat, psi, phi)."""
    cfg = params.encoding
    r_base = cache["r_base"]
    delta = cache["delta"]
    # R_sub = delta @ r_base (delta is exactly I on identity rows)
    d_delta = np.einsum("nij,nkj->nik", d_rsub, r_base)
    d_rbase = np.einsum("nji,njk->nik", delta, d_rsub)
    # delta rotation -> phi raw output
    d_pq = quat_mat_backward(cache["pq"], d_delta)
    d_phi_out = normalize_backward(cache["pq"], cache["pun"], d_pq)
    d_phi_in, phi_grads = mlp_backward(params.phi, cache["phi_acts"], d_phi_out)
    split = _psi_phi_input_split(cfg)
    n = r_base.shape[0]
    d_rbase += embed_backward(
        r_base.reshape(n, 9), cfg, d_phi_in[:, :split]
    ).reshape(n, 3, 3)
    # r_base -> stored quaternion
    d_qu = quat_mat_backward(cache["qu"], d_rbase)
    d_quat = normalize_backward(cache["qu"], cache["qn"][:, 0], d_qu)
    # centers = mean[sub_core] + rot[sub_core] @ alpha
    rot = cache["core_rot"]
    p = core_verts.shape[0]
    d_mean = np.zeros((p, 3))
    np.add.at(d_mean, sub_core, d_centers)
    d_rot = np.zeros((p, 3, 3))
    np.add.at(d_rot, sub_core, np.einsum("ni,nj->nij", d_centers, alpha))
    d_alpha = np.einsum("nji,nj->ni", rot[sub_core], d_centers)
    # frames of the deformed cores
    verts_t = cache["core"]["verts_t"]
    d_verts_t = frames_backward(verts_t, cache["frames"], d_mean, d_rot, np.zeros((p, 2)))
    d_v, psi_grads = core_deform_backward(core_verts, params, cache["core"], d_verts_t)
    return d_v, d_alpha, d_quat, psi_grads, phi_grads


def core_deform_backward(core_verts: np.ndarray, params: DeformFieldParams,
                         core_cache: dict, d_verts_t: np.ndarray):
    """Adjoint of deform_cores_cached back to (V, psi weights)."""
    cfg = params.encoding
    p = core_verts.shape[0]
    drot = core_cache["drot"]
    w = core_cache["w"]
    g = d_verts_t
    d_drot = np.einsum("pvi,pvj->pij", g, w)
    gin = np.einsum("pji,pvj->pvi", drot, g)
    d_pivot = g.sum(axis=1) - gin.sum(axis=1)
    d_v = gin.copy()
    d_dv = gin.copy()
    d_v[:, 0] += d_pivot
    d_dv[:, 0] += d_pivot
    # delta rotation -> psi raw quat part
    d_qd = quat_mat_backward(core_cache["qd"], d_drot)
    d_raw = normalize_backward(core_cache["qd"], core_cache["un"], d_qd)
    d_psi_out = np.concatenate([d_dv.reshape(p, 9), d_raw], axis=1)
    d_psi_in, psi_grads = mlp_backward(params.psi, core_cache["psi_acts"], d_psi_out)
    split = _psi_phi_input_split(cfg)
    d_v += embed_backward(
        core_verts.reshape(p, 9), cfg, d_psi_in[:, :split]
    ).reshape(p, 3, 3)
    return d_v, psi_grads


# ---------------------------------------------------------------------------
# full models
# ---------------------------------------------------------------------------


@dataclass
class SceneGrads:
    """Gradients for every trainable value of a multi-Gaussian scene."""

    core_verts: np.ndarray   # (p,3,3)
    alpha: np.ndarray        # (n,3)
    quat: np.ndarray         # (n,4) raw quaternion tangent
    scale: np.ndarray        # (n,2)
    opacity: np.ndarray      # (n,)
    sh: np.ndarray           # (n,B,3)
    psi: MLPParams
    phi: MLPParams


def multi_loss_grads(core_verts, sub_core, alpha, quat, scale, opacity, sh,
                     background, params: DeformFieldParams, t: float,
                     cam: Camera, target: np.ndarray, lambda_dssim: float):
    """Loss and gradients for the full multi-Gaussian model at time t."""
    centers, rsub, gcache = deformed_subs_cached(core_verts, sub_core, alpha, quat, params, t)
    img, scache = splat_forward(centers, rsub, scale, opacity, sh, cam, background)
    loss, d_img = loss_forward_backward(img, target, lambda_dssim)
    d_centers, d_rsub, d_scale, d_opacity, d_sh = splat_backward(
        scache, cam, background, d_img
    )
    d_v, d_alpha, d_quat, psi_g, phi_g = geometry_backward_multi(
        core_verts, sub_core, alpha, quat, params, gcache, d_centers, d_rsub
    )
    grads = SceneGrads(d_v, d_alpha, d_quat, d_scale, d_opacity, d_sh, psi_g, phi_g)
    return loss, grads, img


def core_loss_grads(core_verts, opacity, sh, background, params: DeformFieldParams,
                    t: float, cam: Camera, target: np.ndarray, lambda_dssim: float):
    """Loss and gradients for the stage-1 core soup (faces rendered directly)."""
    verts_t, core_cache = deform_cores_cached(core_verts, params, t)
    means, rots, scales, fcache = frames_with_cache(verts_t)
    img, scache = splat_forward(means, rots, scales, opacity, sh, cam, background)
    loss, d_img = loss_forward_backward(img, target, lambda_dssim)
    d_means, d_rots, d_scales, d_opacity, d_sh = splat_backward(
        scache, cam, background, d_img
    )
    d_verts_t = frames_backward(verts_t, fcache, d_means, d_rots, d_scales)
    d_v, psi_grads = core_deform_backward(core_verts, params, core_cache, d_verts_t)
    return loss, {"core_verts": d_v, "opacity": d_opacity, "sh": d_sh,
                  "psi": psi_grads}, img


def render_with_gradients(scene, params: DeformFieldParams, t: float, cam: Camera,
                          target: np.ndarray, lambda_dssim: float = 0.2):
    """Loss of rendering `scene` at time t against `target`, plus all gradients."""
    if target.shape != (cam.height, cam.width, 3):
        from .render import DimensionMismatch

        raise DimensionMismatch(f"target {target.shape} vs camera {(cam.height, cam.width, 3)}")
    arrays = pack_scene(scene)
    loss, grads, _ = multi_loss_grads(
        arrays.core_verts, arrays.sub_core, arrays.alpha, arrays.quat,
        arrays.scale, arrays.opacity, arrays.sh, arrays.background,
        params, t, cam, target, lambda_dssim,
    )
    return loss, grads
