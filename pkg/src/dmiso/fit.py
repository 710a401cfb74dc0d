"""Two-stage fitting of a multi-Gaussian scene to posed, timed images.

Stage 1 trains a plain soup of core faces (with their own opacity/color)
plus the core deform network, rendering a few views per step and pruning
faint cores at a fixed interval. Stage 2 attaches k subs to every surviving
core, hands rendering over to the subs, and trains the full parameter set
(cores at a reduced rate) plus the sub-rotation network.

Optimization is plain Adam with per-group learning rates. Opacities are
driven through a sigmoid and scales through an exp so they stay in range;
the gradient engine itself works on the materialized values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backprop import core_loss_grads, multi_loss_grads
from .deform import DeformFieldParams, MLPParams, init_deform_params
from .multigauss import (
    SceneArrays,
    SoupScene,
    attach_subs,
    normalize_quat,
    pack_scene,
    unpack_scene,
)
from .render import Camera, DimensionMismatch, psnr, ssim
from .soup import GaussianAppearance, Triangle


class EmptyDataset(ValueError):
    pass


class AllPruned(RuntimeError):
    """Every core fell below the opacity threshold."""


@dataclass(frozen=True)
class TimedView:
    image: np.ndarray
    camera: Camera
    t: float

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.shape != (self.camera.height, self.camera.width, 3):
            raise DimensionMismatch(
                f"image {img.shape} vs camera {(self.camera.height, self.camera.width, 3)}"
            )
        object.__setattr__(self, "image", img)


@dataclass
class FitConfig:
    total_iterations: int = 2000
    stage2_start_iteration: int = 500
    batch_size: int = 4
    k: int = 25
    seed: int = 0
    prune_opacity_threshold: float = 0.02
    prune_interval: int = 100
    lambda_dssim: float = 0.2
    sh_degree: int = 1
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # initialization
    n_init_cores: int = 60
    init_extent: float = 1.2
    init_scale: float = 0.35
    # per-group learning rates (vanilla-GS values scaled to desk-size scenes)
    lr_position: float = 1.6e-3
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_sh: float = 2.5e-3
    sh_rest_lr_factor: float = 0.05    # first-order SH trains at lr_sh/20
    lr_opacity: float = 5e-2
    lr_net: float = 8e-4
    net_lr_decay: float = 0.02         # final/initial ratio over total_iterations
    stage2_core_lr_factor: float = 0.1

    def __post_init__(self):
        if not (0 < self.stage2_start_iteration < self.total_iterations):
            raise ValueError("need 0 < stage2_start < total_iterations")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.background = np.asarray(self.background, dtype=np.float64)


def loss(rendered: np.ndarray, target: np.ndarray, lambda_dssim: float) -> float:
    """Training loss: mean L1 plus lambda * (1 - SSIM)."""
    if rendered.shape != target.shape:
        raise DimensionMismatch(f"{rendered.shape} vs {target.shape}")
    l1 = float(np.mean(np.abs(rendered - target)))
    if lambda_dssim == 0.0:
        return l1
    return l1 + lambda_dssim * (1.0 - ssim(rendered, target))


def prune(cores, opacities, threshold: float) -> np.ndarray:
    """Indices of cores whose opacity is at or above the threshold, in order."""
    opacities = np.asarray(opacities, dtype=np.float64)
    if len(cores) != opacities.shape[0]:
        raise ValueError("cores and opacities must be aligned")
    return np.nonzero(opacities >= threshold)[0]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, 1e-6, 1.0 - 1e-6)
    return np.log(p / (1.0 - p))


class Adam:
    """Per-tensor Adam with prunable state rows."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-15):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {}

    def step(self, key: str, value: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        m, v, t = self.state.get(key, (np.zeros_like(value), np.zeros_like(value), 0))
        t += 1
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.state[key] = (m, v, t)
        mhat = m / (1 - self.beta1 ** t)
        vhat = v / (1 - self.beta2 ** t)
        return value - lr * mhat / (np.sqrt(vhat) + self.eps)

    def keep_rows(self, key: str, idx: np.ndarray):
        if key in self.state:
            m, v, t = self.state[key]
            self.state[key] = (m[idx], v[idx], t)


def _step_mlp(adam: Adam, key: str, params: MLPParams, grads: MLPParams, lr: float):
    for i in range(len(params.weights)):
        params.weights[i] = adam.step(f"{key}.w{i}", params.weights[i], grads.weights[i], lr)
        params.biases[i] = adam.step(f"{key}.b{i}", params.biases[i], grads.biases[i], lr)


def _accumulate_mlp(total: MLPParams | None, g: MLPParams) -> MLPParams:
    if total is None:
        return MLPParams([w.copy() for w in g.weights], [b.copy() for b in g.biases])
    for i in range(len(total.weights)):
        total.weights[i] += g.weights[i]
        total.biases[i] += g.biases[i]
    return total


def _net_lr(cfg: FitConfig, iteration: int) -> float:
    frac = iteration / max(1, cfg.total_iterations)
    return cfg.lr_net * (cfg.net_lr_decay ** frac)


def _step_sh(adam: Adam, cfg: FitConfig, sh: np.ndarray, g_sh: np.ndarray) -> np.ndarray:
    dc = adam.step("sh_dc", sh[:, :1], g_sh[:, :1], cfg.lr_sh)
    if sh.shape[1] == 1:
        return dc
    rest = adam.step("sh_rest", sh[:, 1:], g_sh[:, 1:],
                     cfg.lr_sh * cfg.sh_rest_lr_factor)
    return np.concatenate([dc, rest], axis=1)


def _init_cores(cfg: FitConfig, rng: np.random.Generator):
    p = cfg.n_init_cores
    v1 = rng.uniform(-cfg.init_extent, cfg.init_extent, size=(p, 3))
    # random orthonormal tangent pairs via random quaternions
    from .multigauss import quat_to_matrix

    q = rng.normal(size=(p, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    rot = quat_to_matrix(q)
    s = rng.uniform(0.5, 1.5, size=(p, 2)) * cfg.init_scale
    verts = np.empty((p, 3, 3))
    verts[:, 0] = v1
    verts[:, 1] = v1 + s[:, 0:1] * rot[:, :, 1]
    verts[:, 2] = v1 + s[:, 1:2] * rot[:, :, 2]
    opacity_logit = np.full(p, _logit(0.2))
    nb = 1 if cfg.sh_degree == 0 else 4
    sh = np.zeros((p, nb, 3))
    sh[:, 0] = rng.normal(scale=0.3, size=(p, 3))
    return verts, opacity_logit, sh


@dataclass
class Stage1Result:
    cores: list                      # [(Triangle, GaussianAppearance)]
    params: DeformFieldParams
    history: list                    # (iteration, loss, psnr) tuples


def _pick_batch(rng: np.random.Generator, n_views: int, batch_size: int) -> np.ndarray:
    return rng.choice(n_views, size=batch_size, replace=batch_size > n_views)


def stage1_fit(views, cfg: FitConfig) -> Stage1Result:
    """Train core faces + deform network for the first schedule segment."""
    if len(views) == 0:
        raise EmptyDataset("no views")
    rng = np.random.default_rng(cfg.seed)
    verts, opacity_logit, sh = _init_cores(cfg, rng)
    params = init_deform_params(seed=cfg.seed)
    adam = Adam()
    history = []
    for it in range(cfg.stage2_start_iteration):
        batch = _pick_batch(rng, len(views), cfg.batch_size)
        opacity = _sigmoid(opacity_logit)
        total_loss = 0.0
        batch_psnr = 0.0
        g_v = np.zeros_like(verts)
        g_o = np.zeros_like(opacity)
        g_sh = np.zeros_like(sh)
        g_psi = None
        for vi in batch:
            view = views[vi]
            cur_loss, grads, img = core_loss_grads(
                verts, opacity, sh, cfg.background, params, view.t,
                view.camera, view.image, cfg.lambda_dssim,
            )
            total_loss += cur_loss
            batch_psnr += psnr(img, view.image)
            g_v += grads["core_verts"]
            g_o += grads["opacity"]
            g_sh += grads["sh"]
            g_psi = _accumulate_mlp(g_psi, grads["psi"])
        g_logit = g_o * opacity * (1.0 - opacity)
        verts = adam.step("verts", verts, g_v, cfg.lr_position)
        opacity_logit = adam.step("opacity", opacity_logit, g_logit, cfg.lr_opacity)
        sh = _step_sh(adam, cfg, sh, g_sh)
        _step_mlp(adam, "psi", params.psi, g_psi, _net_lr(cfg, it))
        history.append((it, total_loss / len(batch), batch_psnr / len(batch)))
        if (it + 1) % cfg.prune_interval == 0:
            keep = prune(list(range(verts.shape[0])), _sigmoid(opacity_logit),
                         cfg.prune_opacity_threshold)
            if keep.size == 0:
                raise AllPruned(f"no cores above opacity {cfg.prune_opacity_threshold}")
            if keep.size < verts.shape[0]:
                verts = verts[keep]
                opacity_logit = opacity_logit[keep]
                sh = sh[keep]
                for key in ("verts", "opacity", "sh_dc", "sh_rest"):
                    adam.keep_rows(key, keep)
    final_keep = prune(list(range(verts.shape[0])), _sigmoid(opacity_logit),
                       cfg.prune_opacity_threshold)
    if final_keep.size == 0:
        raise AllPruned(f"no cores above opacity {cfg.prune_opacity_threshold}")
    verts = verts[final_keep]
    opacity_logit = opacity_logit[final_keep]
    sh = sh[final_keep]
    opacity = _sigmoid(opacity_logit)
    cores = [
        (Triangle.from_array(verts[j]),
         GaussianAppearance(float(opacity[j]), sh[j].copy()))
        for j in range(verts.shape[0])
    ]
    return Stage1Result(cores, params, history)


def _scene_from_stage1(stage1: Stage1Result, cfg: FitConfig) -> SoupScene:
    multis = []
    for j, (tri, app) in enumerate(stage1.cores):
        multis.append(attach_subs(tri, app, cfg.k, rng_seed=cfg.seed * 100003 + j))
    return SoupScene(multis, cfg.sh_degree, cfg.background)


@dataclass
class FitResult:
    scene: SoupScene
    params: DeformFieldParams
    history: list


def stage2_fit(stage1: Stage1Result, views, cfg: FitConfig) -> FitResult:
    """Attach subs and train the full multi-Gaussian model."""
    if len(views) == 0:
        raise EmptyDataset("no views")
    scene = _scene_from_stage1(stage1, cfg)
    arrays = pack_scene(scene)
    params = stage1.params
    rng = np.random.default_rng(cfg.seed + 1)
    adam = Adam()
    verts = arrays.core_verts
    alpha = arrays.alpha
    quat = arrays.quat
    log_scale = np.log(arrays.scale)
    opacity_logit = _logit(arrays.opacity)
    sh = arrays.sh
    history = list(stage1.history)
    for step in range(cfg.stage2_start_iteration, cfg.total_iterations):
        batch = _pick_batch(rng, len(views), cfg.batch_size)
        scale = np.exp(log_scale)
        opacity = _sigmoid(opacity_logit)
        total_loss = 0.0
        batch_psnr = 0.0
        acc = None
        for vi in batch:
            view = views[vi]
            cur_loss, grads, img = multi_loss_grads(
                verts, arrays.sub_core, alpha, quat, scale, opacity, sh,
                cfg.background, params, view.t, view.camera, view.image,
                cfg.lambda_dssim,
            )
            total_loss += cur_loss
            batch_psnr += psnr(img, view.image)
            if acc is None:
                acc = grads
            else:
                acc.core_verts += grads.core_verts
                acc.alpha += grads.alpha
                acc.quat += grads.quat
                acc.scale += grads.scale
                acc.opacity += grads.opacity
                acc.sh += grads.sh
                _accumulate_mlp(acc.psi, grads.psi)
                _accumulate_mlp(acc.phi, grads.phi)
        g_log_scale = acc.scale * scale
        g_logit = acc.opacity * opacity * (1.0 - opacity)
        verts = adam.step("verts", verts, acc.core_verts,
                          cfg.lr_position * cfg.stage2_core_lr_factor)
        alpha = adam.step("alpha", alpha, acc.alpha, cfg.lr_position)
        quat = adam.step("quat", quat, acc.quat, cfg.lr_rotation)
        log_scale = adam.step("scale", log_scale, g_log_scale, cfg.lr_scale)
        opacity_logit = adam.step("opacity", opacity_logit, g_logit, cfg.lr_opacity)
        sh = _step_sh(adam, cfg, sh, acc.sh)
        net_lr = _net_lr(cfg, step)
        _step_mlp(adam, "psi", params.psi, acc.psi, net_lr)
        _step_mlp(adam, "phi", params.phi, acc.phi, net_lr)
        history.append((step, total_loss / len(batch), batch_psnr / len(batch)))
    out = SceneArrays(verts, arrays.sub_core, alpha, normalize_quat(quat),
                      np.exp(log_scale), _sigmoid(opacity_logit), sh,
                      cfg.sh_degree, cfg.background)
    return FitResult(unpack_scene(out), params, history)


def fit(views, cfg: FitConfig) -> FitResult:
    """Run both stages end to end."""
    return stage2_fit(stage1_fit(views, cfg), views, cfg)
