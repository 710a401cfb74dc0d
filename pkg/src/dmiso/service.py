"""HTTP/WebSocket service that hosts the interactive editing loop.

State is a list of immutable scene revisions. Edits are applied strictly in
arrival order behind an asyncio lock and append a new revision; renders and
soup queries read whichever revision snapshot they name, so readers never
block writers. Frame subscribers on /frames get a fresh PNG push after
every revision.
"""

from __future__ import annotations

import asyncio
import io
import json
import math

import numpy as np
from aiohttp import WSMsgType, web
from PIL import Image as PILImage

from .deform import DeformFieldParams, deform_cores, soup_at_time
from .editing import (
    BadSelection,
    EditOp,
    TopologyMismatch,
    alpha_shape,
    apply_edit_to_scene,
    bind_subs_to_mesh,
    default_alpha_radius,
)
from .multigauss import SoupScene, pack_scene
from .render import SH_C0, Camera, render_scene
from .sceneio import export_obj
from .soup import EPS_FLAT, Triangle

MAX_REVISIONS = 64


def orbit_camera(azimuth_deg: float, elevation_deg: float, radius: float,
                 target, fov_x: float, width: int, height: int) -> Camera:
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    target = np.asarray(target, dtype=np.float64)
    eye = target + radius * np.array([
        math.sin(az) * math.cos(el), math.sin(el), -math.cos(az) * math.cos(el),
    ])
    return Camera.look_at(eye, target, [0, 1, 0], fov_x, width, height)


def camera_from_query(q, default_target) -> Camera:
    width = int(q.get("width", 256))
    height = int(q.get("height", 256))
    fov = float(q.get("fov", 0.9))
    if "pose" in q:
        vals = [float(v) for v in q["pose"].split(",")]
        if len(vals) != 16:
            raise ValueError("pose must hold 16 comma-separated floats")
        m = np.asarray(vals).reshape(4, 4)
        c2w = m.copy()
        c2w[:3, 1] *= -1.0
        c2w[:3, 2] *= -1.0
        return Camera.from_c2w(c2w, fov, width, height)
    target = default_target
    if "target" in q:
        target = [float(v) for v in q["target"].split(",")]
    return orbit_camera(
        float(q.get("azim", 30.0)), float(q.get("elev", 15.0)),
        float(q.get("radius", 3.0)), target, fov, width, height,
    )


def png_bytes(img: np.ndarray) -> bytes:
    arr = np.clip(np.round(np.clip(img, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


class SceneService:
    def __init__(self, scene: SoupScene, params: DeformFieldParams,
                 timeline=(0.0, 1.0)):
        self.revisions: dict[int, SoupScene] = {0: scene}
        self.latest = 0
        self.params = params
        self.timeline = timeline
        self.edit_lock = asyncio.Lock()
        self.binding = None
        self.subscribers: list = []
        arrays = pack_scene(scene)
        if arrays.p:
            self.center = arrays.core_verts[:, 0].mean(axis=0)
        else:
            self.center = np.zeros(3)

    def scene_at(self, rev: int) -> SoupScene:
        if rev > self.latest or rev < 0:
            raise KeyError(f"revision {rev} does not exist")
        if rev not in self.revisions:
            raise LookupError(f"revision {rev} expired")
        return self.revisions[rev]

    def add_revision(self, scene: SoupScene) -> int:
        self.latest += 1
        self.revisions[self.latest] = scene
        expired = [r for r in self.revisions if r <= self.latest - MAX_REVISIONS]
        for r in expired:
            del self.revisions[r]
        return self.latest


def _error(status: int, message: str):
    return web.json_response({"error": message}, status=status)


def make_app(service: SceneService) -> web.Application:
    app = web.Application()

    def resolve_rev(q):
        rev = int(q.get("rev", service.latest))
        return rev, service.scene_at(rev)

    async def scene_info(request):
        scene = service.scene_at(service.latest)
        return web.json_response({
            "revision": service.latest,
            "p": len(scene.multis),
            "k": [m.k for m in scene.multis],
            "n_subs": scene.n_subs,
            "sh_degree": scene.sh_degree,
            "epsilon": EPS_FLAT,
            "background": [float(v) for v in scene.background],
            "center": [float(v) for v in service.center],
            "timeline": list(service.timeline),
        })

    async def timeline(request):
        return web.json_response({"t_min": service.timeline[0],
                                  "t_max": service.timeline[1]})

    async def soup(request):
        try:
            t = float(request.query.get("t", 0.0))
            rev, scene = resolve_rev(request.query)
        except (ValueError, KeyError) as e:
            return _error(400, str(e))
        except LookupError as e:
            return _error(410, str(e))
        pairs = soup_at_time(scene, service.params, t)
        tris, colors, opac = [], [], []
        from .soup import triangles_from_frames

        for geom, app_ in pairs:
            v = triangles_from_frames(geom.mean[None], geom.rotation[None],
                                      geom.scale[None, 1:])[0]
            tris.append([float(x) for x in v.reshape(9)])
            dc = np.clip(0.5 + SH_C0 * app_.sh[0], 0.0, 1.0)
            colors.append([float(x) for x in dc])
            opac.append(float(app_.opacity))
        return web.json_response({"revision": rev, "t": t, "triangles": tris,
                                  "colors": colors, "opacities": opac})

    def render_frame(scene, t, cam, fmt):
        img = render_scene(scene, service.params, t, cam)
        if fmt == "raw":
            # planar float32 dump, exact up to f32 rounding (test oracle path)
            return np.transpose(img, (2, 0, 1)).astype("<f4").tobytes(), \
                "application/octet-stream"
        return png_bytes(img), "image/png"

    async def render_endpoint(request):
        try:
            t = float(request.query.get("t", 0.0))
            rev, scene = resolve_rev(request.query)
            cam = camera_from_query(request.query, service.center)
            fmt = request.query.get("format", "png")
            if fmt not in ("png", "raw"):
                raise ValueError(f"unknown format {fmt!r}")
        except (ValueError, KeyError) as e:
            return _error(400, str(e))
        except LookupError as e:
            return _error(410, str(e))
        loop = asyncio.get_running_loop()
        data, ctype = await loop.run_in_executor(None, render_frame, scene, t, cam, fmt)
        return web.Response(body=data, content_type=ctype,
                            headers={"X-Revision": str(rev)})

    async def edit(request):
        try:
            body = await request.json()
        except json.JSONDecodeError as e:
            return _error(400, f"bad JSON: {e}")
        async with service.edit_lock:
            scene = service.scene_at(service.latest)
            try:
                op = EditOp.from_json(body)
                new_scene = apply_edit_to_scene(scene, op, service.binding)
            except (KeyError, ValueError, TopologyMismatch, BadSelection) as e:
                return _error(400, str(e))
            rev = service.add_revision(new_scene)
        await _push_frames(service)
        return web.json_response({"revision": rev})

    async def mesh(request):
        try:
            body = await request.json()
        except json.JSONDecodeError as e:
            return _error(400, f"bad JSON: {e}")
        t = float(body.get("t", 0.0))
        scene = service.scene_at(service.latest)
        if not scene.multis:
            return _error(400, "scene has no cores to mesh")
        arrays = pack_scene(scene)
        verts_t = deform_cores(arrays.core_verts, service.params, t)
        points = np.unique(verts_t.reshape(-1, 3), axis=0)
        radius = body.get("radius")
        radius = float(radius) if radius is not None else default_alpha_radius(points)
        try:
            m = alpha_shape(points, radius)
        except ValueError as e:
            return _error(400, str(e))
        pairs = soup_at_time(scene, service.params, t)
        soup_tris = []
        for geom, app_ in pairs:
            v = triangles_from_frames_one(geom)
            soup_tris.append((v, app_))
        service.binding = bind_subs_to_mesh(soup_tris, m, t0=t)
        return web.Response(text=export_obj(m), content_type="text/plain",
                            headers={"X-Faces": str(m.faces.shape[0])})

    async def export_scene(request):
        try:
            rev, scene = resolve_rev(request.query)
        except (ValueError, KeyError) as e:
            return _error(400, str(e))
        except LookupError as e:
            return _error(410, str(e))
        import tempfile
        from .sceneio import save_scene

        with tempfile.NamedTemporaryFile(suffix=".dms") as tmp:
            save_scene(tmp.name, scene, service.params)
            tmp.seek(0)
            data = tmp.read()
        return web.Response(body=data, content_type="application/octet-stream",
                            headers={"X-Revision": str(rev)})

    async def frames(request):
        ws = web.WebSocketResponse()
        await ws.prepare(request)
        sub = {"ws": ws, "t": 0.0, "query": {}}
        service.subscribers.append(sub)
        try:
            async for msg in ws:
                if msg.type != WSMsgType.TEXT:
                    continue
                try:
                    spec = json.loads(msg.data)
                except json.JSONDecodeError:
                    await ws.send_json({"error": "bad JSON"})
                    continue
                sub["t"] = float(spec.get("t", 0.0))
                sub["query"] = {k: str(v) for k, v in spec.get("camera", {}).items()}
                await _send_frame(service, sub)
        finally:
            service.subscribers.remove(sub)
        return ws

    app.router.add_get("/scene", scene_info)
    app.router.add_get("/timeline", timeline)
    app.router.add_get("/soup", soup)
    app.router.add_get("/render", render_endpoint)
    app.router.add_post("/edit", edit)
    app.router.add_post("/mesh", mesh)
    app.router.add_get("/export", export_scene)
    app.router.add_get("/frames", frames)
    return app


def triangles_from_frames_one(geom) -> Triangle:
    from .soup import triangles_from_frames

    v = triangles_from_frames(geom.mean[None], geom.rotation[None], geom.scale[None, 1:])[0]
    return Triangle.from_array(v)


async def _send_frame(service: SceneService, sub):
    scene = service.scene_at(service.latest)
    cam = camera_from_query(sub["query"], service.center)
    loop = asyncio.get_running_loop()
    data = await loop.run_in_executor(
        None, lambda: png_bytes(render_scene(scene, service.params, sub["t"], cam))
    )
    await sub["ws"].send_json({"revision": service.latest, "t": sub["t"]})
    await sub["ws"].send_bytes(data)


async def _push_frames(service: SceneService):
    for sub in list(service.subscribers):
        try:
            await _send_frame(service, sub)
        except (ConnectionError, RuntimeError):
            pass


def serve(scene: SoupScene, params: DeformFieldParams, host: str = "127.0.0.1",
          port: int = 8787, timeline=(0.0, 1.0)):
    """Run the editing service until interrupted."""
    service = SceneService(scene, params, timeline)
    app = make_app(service)
    web.run_app(app, host=host, port=port)
