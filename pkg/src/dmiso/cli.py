"""Command-line entry points: one verb per capability.

  fit      train a scene from a timed dataset
  render   render a scene file at a time from a chosen camera
  edit     apply a JSON list of edit ops to a scene file
  mesh     export the alpha-shape mesh over the cores as OBJ
  synth    generate a deterministic synthetic dataset
  serve    host the interactive editing service
  metrics  PSNR/SSIM table between two image directories
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np


def _cmd_fit(args):
    from .fit import FitConfig, fit
    from .sceneio import load_dataset, save_scene

    views = load_dataset(args.dataset, "train")
    manifest = json.loads((Path(args.dataset) / "transforms_train.json").read_text())
    bg = np.asarray(manifest.get("background", [0.0, 0.0, 0.0]))
    cfg = FitConfig(
        total_iterations=args.iters,
        stage2_start_iteration=args.stage2_start,
        batch_size=args.batch,
        k=args.k,
        seed=args.seed,
        background=bg,
    )
    result = fit(views, cfg)
    save_scene(args.output, result.scene, result.params)
    if args.curve:
        with open(args.curve, "w") as f:
            f.write("iteration,loss,psnr\n")
            for it, lo, ps in result.history:
                f.write(f"{it},{lo:.8g},{ps:.6g}\n")
    last = result.history[-1]
    print(f"fit: {len(result.scene.multis)} cores, {result.scene.n_subs} subs, "
          f"final train psnr {last[2]:.2f} dB -> {args.output}")


def _camera_for_render(args, scene_center):
    from .sceneio import load_dataset
    from .service import camera_from_query

    if args.camera_index is not None:
        if not args.dataset:
            raise SystemExit("--camera-index requires --dataset")
        views = load_dataset(args.dataset, args.split)
        view = views[args.camera_index]
        return view.camera
    q = {"width": str(args.width), "height": str(args.height), "fov": str(args.fov)}
    if args.pose:
        q["pose"] = args.pose
    else:
        q.update({"azim": str(args.azim), "elev": str(args.elev),
                  "radius": str(args.radius)})
        if args.target:
            q["target"] = args.target
    return camera_from_query(q, scene_center)


def _cmd_render(args):
    from .multigauss import pack_scene
    from .render import render_brute, render_scene, splats_from_arrays
    from .sceneio import load_scene, save_png, save_raw_float32

    scene, params = load_scene(args.scene)
    arrays = pack_scene(scene)
    center = arrays.core_verts[:, 0].mean(axis=0) if arrays.p else np.zeros(3)
    cam = _camera_for_render(args, center)
    if args.brute:
        from .deform import deformed_sub_arrays

        centers, rots, scales = deformed_sub_arrays(arrays, params, args.time)
        splats = splats_from_arrays(cam, centers, rots, scales,
                                    arrays.opacity, arrays.sh)
        img = render_brute(splats, cam, arrays.background)
    else:
        img = render_scene(scene, params, args.time, cam)
    if args.raw:
        save_raw_float32(args.output, img)
    else:
        save_png(args.output, img)
    print(f"rendered {args.scene} at t={args.time} -> {args.output}")


def _cmd_edit(args):
    from .deform import deform_cores, soup_at_time
    from .editing import (EditOp, alpha_shape, apply_edit_to_scene,
                          bind_subs_to_mesh, default_alpha_radius)
    from .multigauss import pack_scene
    from .sceneio import load_scene, save_scene
    from .service import triangles_from_frames_one

    scene, params = load_scene(args.scene)
    ops = json.loads(Path(args.ops).read_text())
    if isinstance(ops, dict):
        ops = [ops]
    binding = None
    for entry in ops:
        if entry.get("type") == "make_mesh":
            t = float(entry.get("t", 0.0))
            arrays = pack_scene(scene)
            verts_t = deform_cores(arrays.core_verts, params, t)
            points = np.unique(verts_t.reshape(-1, 3), axis=0)
            radius = entry.get("radius")
            radius = float(radius) if radius is not None else default_alpha_radius(points)
            mesh = alpha_shape(points, radius)
            pairs = soup_at_time(scene, params, t)
            soup = [(triangles_from_frames_one(g), a) for g, a in pairs]
            binding = bind_subs_to_mesh(soup, mesh, t0=t)
            continue
        scene = apply_edit_to_scene(scene, EditOp.from_json(entry), binding)
    save_scene(args.output, scene, params)
    print(f"applied {len(ops)} ops -> {args.output}")


def _cmd_mesh(args):
    from .deform import deform_cores
    from .editing import alpha_shape, default_alpha_radius
    from .multigauss import pack_scene
    from .sceneio import export_obj, load_scene

    scene, params = load_scene(args.scene)
    arrays = pack_scene(scene)
    if arrays.p == 0:
        raise SystemExit("scene has no cores to mesh")
    verts_t = deform_cores(arrays.core_verts, params, args.time)
    points = np.unique(verts_t.reshape(-1, 3), axis=0)
    radius = args.radius if args.radius is not None else default_alpha_radius(points)
    mesh = alpha_shape(points, radius)
    Path(args.output).write_text(export_obj(mesh))
    print(f"mesh: {mesh.vertices.shape[0]} vertices, {mesh.faces.shape[0]} faces "
          f"(radius {radius:.4g}) -> {args.output}")


def _cmd_synth(args):
    from .sceneio import make_synthetic_dataset

    spec = json.loads(Path(args.spec).read_text()) if args.spec else None
    out = make_synthetic_dataset(spec, args.seed, args.output)
    print(f"synthetic dataset -> {out}")


def _cmd_serve(args):
    from .sceneio import load_scene
    from .service import serve

    scene, params = load_scene(args.scene)
    print(f"serving {args.scene} on http://{args.host}:{args.port}")
    serve(scene, params, host=args.host, port=args.port)


def _cmd_metrics(args):
    from .render import psnr, ssim
    from .sceneio import load_png

    dir_a, dir_b = Path(args.dir_a), Path(args.dir_b)
    names = sorted(p.name for p in dir_a.glob("*.png"))
    if not names:
        raise SystemExit(f"no PNGs in {dir_a}")
    rows = []
    for name in names:
        other = dir_b / name
        if not other.exists():
            continue
        a = load_png(dir_a / name)
        b = load_png(other)
        rows.append((name, psnr(a, b), ssim(a, b)))
    if not rows:
        raise SystemExit("no matching image names between the two directories")
    width = max(len(r[0]) for r in rows)
    print(f"{'image'.ljust(width)}  {'psnr':>8}  {'ssim':>8}")
    for name, p, s in rows:
        print(f"{name.ljust(width)}  {p:8.3f}  {s:8.5f}")
    ps = np.mean([r[1] for r in rows])
    ss = np.mean([r[2] for r in rows])
    print(f"{'mean'.ljust(width)}  {ps:8.3f}  {ss:8.5f}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmiso", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train a scene from a dataset directory")
    p.add_argument("dataset")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--stage2-start", type=int, default=500)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve", help="write training curve CSV here")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("render", help="render a scene file")
    p.add_argument("scene")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--camera-index", type=int)
    p.add_argument("--dataset", help="dataset dir for --camera-index")
    p.add_argument("--split", default="train")
    p.add_argument("--pose", help="16 comma-separated floats (camera-to-world)")
    p.add_argument("--azim", type=float, default=30.0)
    p.add_argument("--elev", type=float, default=15.0)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--target", help="x,y,z orbit target")
    p.add_argument("--fov", type=float, default=0.9)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--brute", action="store_true", help="use the oracle renderer")
    p.add_argument("--raw", action="store_true",
                   help="write a planar float32 dump instead of PNG")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("edit", help="apply a JSON list of edit ops")
    p.add_argument("scene")
    p.add_argument("--ops", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("mesh", help="alpha-shape mesh over the cores, as OBJ")
    p.add_argument("scene")
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--radius", type=float, default=None,
                   help="circumradius threshold; default: auto, inf for hull")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("spec", nargs="?", help="spec JSON (defaults apply if omitted)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("serve", help="run the editing service")
    p.add_argument("scene")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("metrics", help="PSNR/SSIM table between two directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.set_defaults(func=_cmd_metrics)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
