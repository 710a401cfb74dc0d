import asyncio
import io
import json

import numpy as np
from aiohttp.test_utils import TestClient, TestServer
from PIL import Image as PILImage

from dmiso.deform import init_deform_params
from dmiso.editing import EditOp, transform_selection
from dmiso.multigauss import flatten_to_sub_soup
from dmiso.render import render_soup
from dmiso.service import SceneService, camera_from_query, make_app

from helpers import random_rotation, random_scene


def run(coro):
    return asyncio.run(coro)


def make_service(seed=0, p=3, k=4):
    rng = np.random.default_rng(seed)
    scene = random_scene(rng, p=p, k=k)
    params = init_deform_params(seed=seed)
    return SceneService(scene, params), scene, params


async def with_client(service, fn):
    app = make_app(service)
    server = TestServer(app)
    client = TestClient(server)
    await client.start_server()
    try:
        return await fn(client)
    finally:
        await client.close()


def decode_png(data: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(data)) as im:
        return np.asarray(im).astype(np.float64) / 255.0


CAM_Q = {"azim": "40", "elev": "10", "radius": "3.0", "fov": "0.9",
         "width": "32", "height": "32"}


class TestSceneEndpoint:
    def test_fresh_scene_metadata(self):
        service, scene, _ = make_service()

        async def go(client):
            r = await client.get("/scene")
            assert r.status == 200
            body = await r.json()
            assert body["revision"] == 0
            assert body["p"] == len(scene.multis)
            assert body["k"] == [m.k for m in scene.multis]
            assert body["n_subs"] == scene.n_subs
            return body

        run(with_client(service, go))

    def test_timeline(self):
        service, _, _ = make_service()

        async def go(client):
            r = await client.get("/timeline")
            body = await r.json()
            assert body == {"t_min": 0.0, "t_max": 1.0}

        run(with_client(service, go))


class TestSoupEndpoint:
    def test_counts_and_revision(self):
        service, scene, _ = make_service()

        async def go(client):
            r = await client.get("/soup", params={"t": "0.3"})
            body = await r.json()
            assert body["revision"] == 0
            assert len(body["triangles"]) == scene.n_subs
            assert len(body["triangles"][0]) == 9

        run(with_client(service, go))


class TestEditFlow:
    def test_identity_edit_new_revision_same_render(self):
        service, scene, _ = make_service()
        op = EditOp.rigid([0], np.eye(3), np.zeros(3))

        async def go(client):
            r0 = await client.get("/render", params=dict(CAM_Q, t="0.0"))
            img0 = decode_png(await r0.read())
            r = await client.post("/edit", json=op.to_json())
            assert (await r.json())["revision"] == 1
            r1 = await client.get("/render", params=dict(CAM_Q, t="0.0", rev="1"))
            img1 = decode_png(await r1.read())
            np.testing.assert_array_equal(img0, img1)

        run(with_client(service, go))

    def test_edit_render_matches_local_transform(self):
        rng = np.random.default_rng(3)
        service, scene, params = make_service(seed=3)
        sel = [0, 2, 5]
        op = EditOp.rigid(sel, random_rotation(rng), rng.normal(size=3) * 0.2)

        async def go(client):
            r = await client.post("/edit", json=op.to_json())
            rev = (await r.json())["revision"]
            resp = await client.get("/render", params=dict(CAM_Q, t="0.0",
                                                           rev=str(rev)))
            server_img = decode_png(await resp.read())
            # local path: transform the flattened soup and render directly
            soup = flatten_to_sub_soup(scene)
            edited = transform_selection(soup, sel, op)
            cam = camera_from_query(CAM_Q, service.center)
            local = render_soup(edited, cam, scene.background)
            assert np.abs(server_img - np.clip(local, 0, 1)).max() <= 1e-6 + 0.5 / 255

        run(with_client(service, go))

    def test_malformed_edit_rejected(self):
        service, _, _ = make_service()

        async def go(client):
            r = await client.post("/edit", json={"type": "nonsense"})
            assert r.status == 400
            body = await r.json()
            assert "error" in body
            r2 = await client.post("/edit", data=b"{not json",
                                   headers={"Content-Type": "application/json"})
            assert r2.status == 400

        run(with_client(service, go))

    def test_bad_selection_rejected(self):
        service, scene, _ = make_service()
        op = EditOp.rigid([scene.n_subs + 5], np.eye(3), np.zeros(3))

        async def go(client):
            r = await client.post("/edit", json=op.to_json())
            assert r.status == 400

        run(with_client(service, go))

    def test_concurrent_editors_gapless_revisions(self):
        service, scene, _ = make_service()
        op = EditOp.rigid([0], np.eye(3), np.array([0.01, 0, 0]))

        async def go(client):
            async def one_editor(n):
                revs = []
                for _ in range(n):
                    r = await client.post("/edit", json=op.to_json())
                    assert r.status == 200
                    revs.append((await r.json())["revision"])
                return revs

            results = await asyncio.gather(*[one_editor(4) for _ in range(8)])
            all_revs = sorted(r for revs in results for r in revs)
            assert all_revs == list(range(1, 33))
            # per-editor revision sequences are strictly increasing
            for revs in results:
                assert revs == sorted(revs)

        run(with_client(service, go))


class TestMeshEndpoint:
    def test_mesh_returns_obj_and_enables_vertex_edits(self):
        service, scene, _ = make_service(seed=5, p=4, k=2)

        async def go(client):
            r = await client.post("/mesh", json={"radius": None, "t": 0.0})
            assert r.status == 200
            text = await r.text()
            assert text.startswith("v ")
            assert "\nf " in text
            n_vertices = sum(1 for line in text.splitlines() if line.startswith("v "))
            # now a vertex_displace edit should be accepted
            deltas = np.zeros((n_vertices, 3))
            op = EditOp.vertex_displace(deltas)
            r2 = await client.post("/edit", json=op.to_json())
            assert r2.status == 200
            assert (await r2.json())["revision"] == 1

        run(with_client(service, go))

    def test_vertex_displace_without_mesh_rejected(self):
        service, _, _ = make_service()

        async def go(client):
            op = EditOp.vertex_displace(np.zeros((4, 3)))
            r = await client.post("/edit", json=op.to_json())
            assert r.status == 400

        run(with_client(service, go))


class TestRenderEndpoint:
    def test_unknown_revision_rejected(self):
        service, _, _ = make_service()

        async def go(client):
            r = await client.get("/render", params=dict(CAM_Q, t="0.0", rev="7"))
            assert r.status == 400

        run(with_client(service, go))

    def test_deterministic_frames(self):
        service, _, _ = make_service()

        async def go(client):
            r1 = await client.get("/render", params=dict(CAM_Q, t="0.25"))
            r2 = await client.get("/render", params=dict(CAM_Q, t="0.25"))
            assert await r1.read() == await r2.read()

        run(with_client(service, go))


class TestFramesWebsocket:
    def test_subscribe_and_push_after_edit(self):
        service, _, _ = make_service()
        op = EditOp.rigid([0], np.eye(3), np.array([0.3, 0, 0]))

        async def go(client):
            ws = await client.ws_connect("/frames")
            await ws.send_json({"t": 0.0, "camera": CAM_Q})
            meta = json.loads((await ws.receive()).data)
            assert meta["revision"] == 0
            frame0 = (await ws.receive()).data
            assert isinstance(frame0, bytes)
            r = await client.post("/edit", json=op.to_json())
            assert (await r.json())["revision"] == 1
            meta1 = json.loads((await ws.receive()).data)
            assert meta1["revision"] == 1
            frame1 = (await ws.receive()).data
            assert frame1 != frame0  # the blob moved
            await ws.close()

        run(with_client(service, go))
