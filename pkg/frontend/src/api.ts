/** Thin fetch/WS client for the scene service; the UI's only data source. */

import type { CameraQuery, EditOpJson, SceneInfo, SoupPayload } from "./types.js";

function cameraParams(q: CameraQuery): Record<string, string> {
    const out: Record<string, string> = {
        azim: String(q.azim),
        elev: String(q.elev),
        radius: String(q.radius),
        fov: String(q.fov),
        width: String(q.width),
        height: String(q.height),
    };
    if (q.target) out.target = q.target.join(",");
    return out;
}

export class ApiClient {
    constructor(public baseUrl: string) {}

    private url(path: string, params: Record<string, string> = {}): string {
        const u = new URL(path, this.baseUrl);
        for (const [k, v] of Object.entries(params)) u.searchParams.set(k, v);
        return u.toString();
    }

    async scene(): Promise<SceneInfo> {
        const r = await fetch(this.url("/scene"));
        if (!r.ok) throw new Error(`GET /scene -> ${r.status}`);
        return r.json();
    }

    async timeline(): Promise<{ t_min: number; t_max: number }> {
        const r = await fetch(this.url("/timeline"));
        return r.json();
    }

    async soup(t: number, rev?: number): Promise<SoupPayload> {
        const params: Record<string, string> = { t: String(t) };
        if (rev !== undefined) params.rev = String(rev);
        const r = await fetch(this.url("/soup", params));
        if (!r.ok) throw new Error(`GET /soup -> ${r.status}`);
        return r.json();
    }

    /** PNG bytes of a frame; `signal` supports cancel-and-replace scrubbing. */
    async renderPng(
        t: number, cam: CameraQuery, rev?: number, signal?: AbortSignal,
    ): Promise<Blob> {
        const params = { ...cameraParams(cam), t: String(t) };
        if (rev !== undefined) (params as Record<string, string>).rev = String(rev);
        const r = await fetch(this.url("/render", params), { signal });
        if (!r.ok) throw new Error(`GET /render -> ${r.status}: ${await r.text()}`);
        return r.blob();
    }

    async postEdit(op: EditOpJson): Promise<number> {
        const r = await fetch(this.url("/edit"), {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(op),
        });
        if (!r.ok) {
            const body = await r.text();
            throw new Error(`POST /edit -> ${r.status}: ${body}`);
        }
        return (await r.json()).revision;
    }

    async postMesh(radius: number | null, t: number): Promise<string> {
        const r = await fetch(this.url("/mesh"), {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ radius, t }),
        });
        if (!r.ok) throw new Error(`POST /mesh -> ${r.status}`);
        return r.text();
    }

    async exportScene(rev?: number): Promise<ArrayBuffer> {
        const params: Record<string, string> = {};
        if (rev !== undefined) params.rev = String(rev);
        const r = await fetch(this.url("/export", params));
        if (!r.ok) throw new Error(`GET /export -> ${r.status}`);
        return r.arrayBuffer();
    }

    framesSocket(): WebSocket {
        const u = new URL("/frames", this.baseUrl);
        u.protocol = u.protocol === "https:" ? "wss:" : "ws:";
        return new WebSocket(u.toString());
    }
}
