"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale fit
criterion trains a real model and takes several minutes on one CPU core.
"""

import asyncio
import time
from itertools import combinations

import numpy as np
import pytest

from dmiso.backprop import multi_loss_grads
from dmiso.deform import init_deform_params, soup_at_time
from dmiso.editing import (
    EditOp,
    WarpSpec,
    alpha_shape,
    apply_edit_to_soup,
    apply_mesh_edit,
    bind_subs_to_mesh,
    core_mesh_points,
    transform_selection,
)
from dmiso.fit import FitConfig, fit
from dmiso.multigauss import flatten_to_sub_soup, pack_scene, sub_center
from dmiso.render import (
    Camera,
    Splat2D,
    psnr,
    render,
    render_brute,
    render_scene,
    render_soup,
)
from dmiso.sceneio import load_dataset, load_scene, make_synthetic_dataset, save_scene
from dmiso.soup import (
    Triangle,
    covariance_of,
    gaussian_from_triangle,
    triangle_from_gaussian,
)

from helpers import (
    orbit_cam,
    random_flat_gaussian,
    random_rotation,
    random_scene,
    random_triangle,
)


def report(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] {status}: {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def test_face_parameterization_round_trip():
    rng = np.random.default_rng(100)
    start = time.perf_counter()
    worst_cov = 0.0
    for _ in range(1000):
        g = random_flat_gaussian(rng)
        tri = triangle_from_gaussian(g)
        g2 = gaussian_from_triangle(tri)
        c1, c2 = covariance_of(g), covariance_of(g2)
        worst_cov = max(worst_cov, np.linalg.norm(c1 - c2) / np.linalg.norm(c1))
    worst_v = 0.0
    for _ in range(1000):
        tri = random_triangle(rng)
        tri2 = triangle_from_gaussian(gaussian_from_triangle(tri))
        scale = max(np.linalg.norm(tri.v1), np.linalg.norm(tri.v2), 1.0)
        worst_v = max(worst_v,
                      np.abs(tri2.v1 - tri.v1).max() / scale,
                      np.abs(tri2.v2 - tri.v2).max() / scale)
    elapsed = time.perf_counter() - start
    report("Face parameterization round trip",
           worst_cov < 1e-9 and worst_v < 1e-9 and elapsed < 1.0,
           f"cov err {worst_cov:.2e}, vertex err {worst_v:.2e}, {elapsed:.2f}s")


def test_equivariance_suite():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(500):
        tri = random_triangle(rng)
        q = random_rotation(rng)
        shift = rng.normal(size=3)
        g = gaussian_from_triangle(tri)
        g2 = gaussian_from_triangle(
            Triangle(q @ tri.v1 + shift, q @ tri.v2 + shift, q @ tri.v3 + shift))
        worst = max(worst, np.abs(g2.mean - (q @ g.mean + shift)).max(),
                    np.abs(covariance_of(g2) - q @ covariance_of(g) @ q.T).max())
    for _ in range(500):
        tri = random_triangle(rng)
        lam = rng.uniform(0.4, 2.5)
        g = gaussian_from_triangle(tri)
        g2 = gaussian_from_triangle(
            Triangle(tri.v1, tri.v1 + lam * (tri.v2 - tri.v1),
                     tri.v1 + lam * (tri.v3 - tri.v1)))
        worst = max(worst, np.abs(g2.scale[1:] - lam * g.scale[1:]).max())
    for _ in range(500):
        tri = random_triangle(rng)
        alpha = rng.normal(size=3)
        q = random_rotation(rng)
        shift = rng.normal(size=3)
        c1 = sub_center(gaussian_from_triangle(tri), alpha)
        c2 = sub_center(gaussian_from_triangle(
            Triangle(q @ tri.v1 + shift, q @ tri.v2 + shift, q @ tri.v3 + shift)),
            alpha)
        worst = max(worst, np.abs(c2 - (q @ c1 + shift)).max())
    report("Equivariance suite", worst <= 1e-8, f"worst {worst:.2e}")


def test_renderer_oracle():
    rng = np.random.default_rng(102)
    worst = 0.0
    bitwise_ok = True
    for scene_i in range(20):
        n = int(rng.integers(20, 201))
        w = h = 64
        splats = []
        for _ in range(n):
            mean = rng.uniform([0, 0], [w, h])
            a = rng.uniform(0.5, 30.0)
            c = rng.uniform(0.5, 30.0)
            b = rng.uniform(-0.6, 0.6) * np.sqrt(a * c)
            splats.append(Splat2D(mean, np.array([[a, b], [b, c]]) + 0.3 * np.eye(2),
                                  rng.uniform(1, 10), rng.uniform(0, 1, 3),
                                  rng.uniform(0.02, 1.0)))
        cam = Camera(w, h, 50.0, 50.0, w / 2, h / 2, np.eye(3), np.zeros(3))
        bg = rng.uniform(0, 1, 3)
        fast1 = render(splats, cam, bg, workers=1)
        brute = render_brute(splats, cam, bg)
        worst = max(worst, np.abs(fast1 - brute).max())
        for workers in (3, 6):
            if not np.array_equal(render(splats, cam, bg, workers=workers), fast1):
                bitwise_ok = False
    report("Renderer oracle", worst <= 1e-5 and bitwise_ok,
           f"max |render-brute| {worst:.2e}, multi-worker bitwise {bitwise_ok}")


def test_gradient_suite():
    rng = np.random.default_rng(103)
    scene = random_scene(rng, p=3, k=3)  # 9 rendered gaussians
    arrays = pack_scene(scene)
    params = init_deform_params(seed=103)
    for net in (params.psi, params.phi):
        net.weights[-1] = rng.normal(size=net.weights[-1].shape) * 0.01
        net.biases[-1] = rng.normal(size=net.biases[-1].shape) * 0.01
    cam = orbit_cam(16, 16, radius=3.2, azim=0.45, elev=0.2)
    target = rng.uniform(size=(16, 16, 3))
    t, lam, h = 0.4, 0.2, 1e-5

    def loss_fn():
        return multi_loss_grads(arrays.core_verts, arrays.sub_core, arrays.alpha,
                                arrays.quat, arrays.scale, arrays.opacity,
                                arrays.sh, arrays.background, params, t, cam,
                                target, lam)[0]

    _, grads, _ = multi_loss_grads(arrays.core_verts, arrays.sub_core, arrays.alpha,
                                   arrays.quat, arrays.scale, arrays.opacity,
                                   arrays.sh, arrays.background, params, t, cam,
                                   target, lam)
    checks = [
        ("core vertices", arrays.core_verts, grads.core_verts, 6),
        ("alphas", arrays.alpha, grads.alpha, 6),
        ("sub quaternions", arrays.quat, grads.quat, 6),
        ("sub scales", arrays.scale, grads.scale, 6),
        ("SH", arrays.sh, grads.sh, 6),
        ("opacity", arrays.opacity, grads.opacity, 4),
        ("psi weights", params.psi.weights[0], grads.psi.weights[0], 4),
        ("psi out layer", params.psi.weights[-1], grads.psi.weights[-1], 4),
        ("phi weights", params.phi.weights[0], grads.phi.weights[0], 4),
        ("phi out layer", params.phi.weights[-1], grads.phi.weights[-1], 4),
    ]
    failures = []
    for name, arr, grad, n_checks in checks:
        flat, gflat = arr.ravel(), np.asarray(grad).ravel()
        idxs = rng.choice(flat.size, size=min(n_checks, flat.size), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            dn = loss_fn()
            flat[i] = orig
            num = (up - dn) / (2 * h)
            an = gflat[i]
            tol = 1e-6 + 1e-3 * abs(num) if abs(num) < 1e-3 else 1e-3 * abs(num)
            if abs(num - an) > tol:
                failures.append((name, int(i), num, an))
    report("Gradient suite", not failures, f"{failures[:3]}" if failures else
           f"{len(checks)} parameter classes checked")


def test_identity_deformation():
    rng = np.random.default_rng(104)
    scene = random_scene(rng, p=3, k=4)
    params = init_deform_params(seed=104)
    static = soup_at_time(scene, params, 0.0)
    ok = True
    from dmiso.multigauss import sub_geometries

    base = sub_geometries(scene)
    for t in rng.uniform(0, 1, size=10):
        dyn = soup_at_time(scene, params, float(t))
        for (g1, _), (g2, _) in zip(base, dyn):
            if not (np.array_equal(g1.mean, g2.mean)
                    and np.array_equal(g1.rotation, g2.rotation)
                    and np.array_equal(g1.scale, g2.scale)):
                ok = False
    report("Identity-deformation", ok, "10 random times, bit-exact")


def test_desk_scale_fit(tmp_path):
    start = time.perf_counter()
    out = make_synthetic_dataset(None, seed=7, out_dir=tmp_path / "ds")
    train = load_dataset(out, "train")
    test = load_dataset(out, "test")
    cfg = FitConfig(total_iterations=2000, stage2_start_iteration=500,
                    batch_size=4, k=25, seed=0, background=np.zeros(3),
                    n_init_cores=50, init_extent=1.0, init_scale=0.3)
    result = fit(train, cfg)
    vals = np.array([
        psnr(render_scene(result.scene, result.params, v.t, v.camera), v.image)
        for v in test
    ])
    elapsed = time.perf_counter() - start
    report("Desk-scale fit", vals.mean() >= 30.0 and elapsed <= 15 * 60,
           f"held-out psnr mean {vals.mean():.2f} dB (min {vals.min():.2f}), "
           f"{elapsed / 60:.1f} min")


def test_reparameterization_exactness():
    rng = np.random.default_rng(105)
    scene = random_scene(rng, p=4, k=3)
    params = init_deform_params(seed=105)
    t0 = 0.3
    pairs = soup_at_time(scene, params, t0)
    from dmiso.service import triangles_from_frames_one

    soup = [(triangles_from_frames_one(g), a) for g, a in pairs]
    mesh = alpha_shape(core_mesh_points(scene), np.inf)
    binding = bind_subs_to_mesh(soup, mesh, t0=t0)
    rebuilt = apply_mesh_edit(binding, binding.mesh.vertices)
    cam = orbit_cam(48, 48)
    img1 = render_soup(soup, cam, scene.background)
    img2 = render_soup(rebuilt, cam, scene.background)
    diff = np.abs(img1 - img2).max()
    report("Reparameterization exactness", diff <= 1e-6, f"max pixel diff {diff:.2e}")


def test_edit_invariants():
    rng = np.random.default_rng(106)
    problems = []
    for trial in range(200):
        scene = random_scene(rng, p=3, k=3)
        soup = flatten_to_sub_soup(scene)
        n = len(soup)
        kind = rng.choice(["rigid", "scale", "warp", "duplicate", "remove"])
        sel = sorted(rng.choice(n, size=int(rng.integers(1, n // 2 + 1)),
                                replace=False).tolist())
        if kind == "rigid":
            op = EditOp.rigid(sel, random_rotation(rng), rng.normal(size=3),
                              pivot=rng.normal(size=3))
        elif kind == "scale":
            op = EditOp.scale(sel, rng.uniform(0.5, 2.0, size=3),
                              pivot=rng.normal(size=3))
        elif kind == "warp":
            op = EditOp.space_warp(WarpSpec(family="sinusoidal",
                                            amplitude=rng.uniform(0, 0.4),
                                            frequency=rng.uniform(0.5, 3.0)))
        elif kind == "duplicate":
            op = EditOp.duplicate(sel, copies=int(rng.integers(1, 3)))
        else:
            op = EditOp.remove(sel)
        out = apply_edit_to_soup(soup, op)
        # appearance immutability: appearances are the same objects
        if not all(any(a is b for _, b in soup) for _, a in out):
            problems.append((trial, kind, "appearance"))
        if kind in ("rigid", "scale"):
            # locality bit-exact outside the selection
            for i in range(n):
                if i not in sel and out[i][0] is not soup[i][0]:
                    problems.append((trial, kind, "locality"))
            if kind == "rigid":
                for i in sel:
                    v1, v2 = soup[i][0].vertices, out[i][0].vertices
                    for (a, b) in ((0, 1), (0, 2), (1, 2)):
                        if abs(np.linalg.norm(v2[a] - v2[b])
                               - np.linalg.norm(v1[a] - v1[b])) > 1e-9:
                            problems.append((trial, kind, "isometry"))
        elif kind == "remove":
            if len(out) != n - len(sel):
                problems.append((trial, kind, "cardinality"))
        elif kind == "duplicate":
            if len(out) != n + len(sel) * op.copies:
                problems.append((trial, kind, "cardinality"))
    report("Edit invariants", not problems,
           f"{problems[:3]}" if problems else "200 randomized ops")


def test_alpha_shape_hull_limit():
    rng = np.random.default_rng(107)

    def brute_hull(pts):
        faces = set()
        for (i, j, k) in combinations(range(len(pts)), 3):
            nrm = np.cross(pts[j] - pts[i], pts[k] - pts[i])
            if np.linalg.norm(nrm) < 1e-12:
                continue
            side = np.delete((pts - pts[i]) @ nrm, [i, j, k])
            if np.all(side > 1e-12) or np.all(side < -1e-12):
                faces.add(tuple(sorted((i, j, k))))
        return faces

    def edge_multiset(faces):
        edges = []
        for f in faces:
            s = sorted(f)
            edges += [(s[0], s[1]), (s[0], s[2]), (s[1], s[2])]
        return sorted(edges)

    ok = True
    for _ in range(25):
        pts = rng.normal(size=(int(rng.integers(8, 31)), 3))
        mesh = alpha_shape(pts, np.inf)
        got = {tuple(sorted(f)) for f in mesh.faces.tolist()}
        expected = brute_hull(pts)
        if edge_multiset(got) != edge_multiset(expected):
            ok = False
    report("Alpha-shape hull limit", ok, "25 random point sets")


def test_persistence_and_service(tmp_path):
    rng = np.random.default_rng(108)
    scene = random_scene(rng, p=3, k=4)
    params = init_deform_params(seed=108)
    # save/load bit-exact at file level
    p1, p2 = tmp_path / "a.dms", tmp_path / "b.dms"
    save_scene(p1, scene, params)
    s2, q2 = load_scene(p1)
    save_scene(p2, s2, q2)
    files_ok = p1.read_bytes() == p2.read_bytes()

    from aiohttp.test_utils import TestClient, TestServer

    from dmiso.service import SceneService, camera_from_query, make_app

    service = SceneService(s2, q2)
    cam_q = {"azim": "35", "elev": "12", "radius": "3.2", "fov": "0.9",
             "width": "32", "height": "32"}

    async def drive():
        app = make_app(service)
        client = TestClient(TestServer(app))
        await client.start_server()
        try:
            soup = flatten_to_sub_soup(s2)
            worst = 0.0
            for _ in range(50):
                n = len(soup)
                sel = sorted(rng.choice(n, size=int(rng.integers(1, 5)),
                                        replace=False).tolist())
                if rng.uniform() < 0.5:
                    op = EditOp.rigid(sel, random_rotation(rng),
                                      rng.normal(size=3) * 0.2,
                                      pivot=rng.normal(size=3))
                else:
                    op = EditOp.scale(sel, rng.uniform(0.6, 1.6, size=3),
                                      pivot=rng.normal(size=3))
                r = await client.post("/edit", json=op.to_json())
                assert r.status == 200
                soup = transform_selection(soup, sel, op)
                resp = await client.get("/render",
                                        params=dict(cam_q, t="0.0", format="raw"))
                raw = np.frombuffer(await resp.read(), dtype="<f4")
                server_img = raw.reshape(3, 32, 32).transpose(1, 2, 0).astype(np.float64)
                cam = camera_from_query(cam_q, service.center)
                local = render_soup(soup, cam, s2.background)
                worst = max(worst, float(np.abs(server_img - local).max()))
            # gapless revisions under 8 concurrent editors
            base = service.latest
            op = EditOp.rigid([0], np.eye(3), np.array([0.01, 0, 0]))

            async def editor():
                revs = []
                for _ in range(4):
                    r = await client.post("/edit", json=op.to_json())
                    revs.append((await r.json())["revision"])
                return revs

            results = await asyncio.gather(*[editor() for _ in range(8)])
            all_revs = sorted(r for revs in results for r in revs)
            gapless = all_revs == list(range(base + 1, base + 33))
            return worst, gapless
        finally:
            await client.close()

    worst, gapless = asyncio.run(drive())
    # raw transport is float32, so allow one f32 rounding step on top of 1e-6
    ok = files_ok and worst <= 1e-6 + 1e-6 and gapless
    report("Persistence + service", ok,
           f"files bit-exact {files_ok}, worst render diff {worst:.2e}, "
           f"gapless {gapless}")
