/** Browser wiring: frame display, wireframe overlay, box select, gizmo panel,
 *  timeline scrubber, edit log with revision-checkout undo. */

import { ApiClient } from "./api.js";
import { cameraFromQuery, centroidOf, project } from "./camera.js";
import { EditLog } from "./editlog.js";
import {
    changesCardinality,
    duplicateOp,
    makeMeshOp,
    removeOp,
    rigidOp,
    rotationAboutAxis,
    scaleOp,
    translateOp,
    vertexDisplaceOp,
} from "./editops.js";
import { boxSelect, emptySelection, Rect, SelectionState } from "./selection.js";
import type { EditOpJson, SoupPayload, Vec3 } from "./types.js";
import { ViewportState } from "./viewport.js";

const $ = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing #${id}`);
    return el as T;
};

class EditorApp {
    api = new ApiClient(window.location.origin);
    viewport = new ViewportState(512, 512);
    selection: SelectionState = emptySelection();
    log = new EditLog();
    soup: SoupPayload | null = null;
    frameCanvas = $<HTMLCanvasElement>("frame");
    overlay = $<HTMLCanvasElement>("overlay");
    notice = $<HTMLDivElement>("notice");
    dragStart: [number, number] | null = null;
    dragRect: Rect | null = null;
    ws: WebSocket | null = null;
    meshVertexCount: number | null = null;

    async start(): Promise<void> {
        const info = await this.api.scene();
        this.viewport.target = info.center as Vec3;
        this.viewport.camera.target = info.center as Vec3;
        this.viewport.setTimeline(info.timeline[0], info.timeline[1]);
        this.viewport.revision = info.revision;
        const slider = $<HTMLInputElement>("time");
        slider.min = String(info.timeline[0]);
        slider.max = String(info.timeline[1]);
        slider.step = "0.01";
        this.bindEvents();
        this.connectFrames();
        await this.refresh();
    }

    bindEvents(): void {
        const slider = $<HTMLInputElement>("time");
        slider.addEventListener("input", () => {
            const t = parseFloat(slider.value);
            if (!this.viewport.canScrubTo(t)) return;
            this.viewport.t = t;
            $<HTMLSpanElement>("time-label").textContent = t.toFixed(2);
            void this.refresh();
        });
        this.overlay.addEventListener("mousedown", (e) => {
            this.dragStart = [e.offsetX, e.offsetY];
        });
        this.overlay.addEventListener("mousemove", (e) => {
            if (!this.dragStart) return;
            this.dragRect = {
                x0: this.dragStart[0], y0: this.dragStart[1],
                x1: e.offsetX, y1: e.offsetY,
            };
            this.drawOverlay();
        });
        this.overlay.addEventListener("mouseup", (e) => {
            if (!this.dragStart) return;
            const rect: Rect = {
                x0: this.dragStart[0], y0: this.dragStart[1],
                x1: e.offsetX, y1: e.offsetY,
            };
            this.dragStart = null;
            this.dragRect = null;
            if (this.soup) {
                const cam = cameraFromQuery(this.viewport.camera, this.viewport.target);
                this.selection = boxSelect(this.soup, cam, rect);
                this.say(`${this.selection.indices.length} faces selected`);
            }
            this.drawOverlay();
        });
        $<HTMLButtonElement>("apply-translate").addEventListener("click", () => {
            const v: Vec3 = [
                parseFloat($<HTMLInputElement>("tx").value) || 0,
                parseFloat($<HTMLInputElement>("ty").value) || 0,
                parseFloat($<HTMLInputElement>("tz").value) || 0,
            ];
            void this.commit(translateOp(this.selection.indices, v));
        });
        $<HTMLButtonElement>("apply-rotate").addEventListener("click", () => {
            const axis = $<HTMLSelectElement>("rot-axis").value as "x" | "y" | "z";
            const deg = parseFloat($<HTMLInputElement>("rot-deg").value) || 0;
            void this.commit(rigidOp(this.selection.indices,
                rotationAboutAxis(axis, deg), [0, 0, 0], this.selection.pivot));
        });
        $<HTMLButtonElement>("apply-scale").addEventListener("click", () => {
            const f = parseFloat($<HTMLInputElement>("scale-f").value) || 1;
            void this.commit(scaleOp(this.selection.indices, [f, f, f],
                this.selection.pivot));
        });
        $<HTMLButtonElement>("duplicate").addEventListener("click", () => {
            void this.commit(duplicateOp(this.selection.indices));
        });
        $<HTMLButtonElement>("remove").addEventListener("click", () => {
            void this.commit(removeOp(this.selection.indices));
        });
        $<HTMLButtonElement>("estimate-mesh").addEventListener("click", () => {
            void (async () => {
                const raw = $<HTMLInputElement>("mesh-radius").value.trim();
                const radius = raw === "" ? null : parseFloat(raw);
                try {
                    const obj = await this.api.postMesh(radius, this.viewport.t);
                    this.meshVertexCount = obj.split("\n")
                        .filter((line) => line.startsWith("v ")).length;
                    this.log.push(makeMeshOp(radius, this.viewport.t),
                        this.viewport.revision, this.viewport.t);
                    this.renderLogPanel();
                    this.say(`mesh estimated: ${this.meshVertexCount} vertices`);
                } catch (err) {
                    this.say(String(err));
                }
            })();
        });
        $<HTMLButtonElement>("displace-vertex").addEventListener("click", () => {
            if (this.meshVertexCount === null) {
                this.say("estimate a mesh first");
                return;
            }
            const vi = parseInt($<HTMLInputElement>("mesh-vi").value, 10) || 0;
            if (vi < 0 || vi >= this.meshVertexCount) {
                this.say(`vertex index out of range [0, ${this.meshVertexCount})`);
                return;
            }
            const d: Vec3 = [
                parseFloat($<HTMLInputElement>("mvx").value) || 0,
                parseFloat($<HTMLInputElement>("mvy").value) || 0,
                parseFloat($<HTMLInputElement>("mvz").value) || 0,
            ];
            void this.commit(vertexDisplaceOp(this.meshVertexCount, vi, d));
        });
        $<HTMLButtonElement>("undo").addEventListener("click", () => {
            const target = this.log.undoTarget(this.viewport.revision);
            if (target === null) {
                this.say("nothing to undo");
                return;
            }
            this.viewport.revision = target;
            this.selection = emptySelection(target);
            this.say(`checked out revision ${target}`);
            void this.refresh();
        });
        $<HTMLButtonElement>("download-log").addEventListener("click", () => {
            const blob = new Blob(
                [JSON.stringify(this.log.replayJson(this.viewport.revision), null, 1)],
                { type: "application/json" });
            const a = document.createElement("a");
            a.href = URL.createObjectURL(blob);
            a.download = "editops.json";
            a.click();
        });
    }

    async commit(op: EditOpJson): Promise<void> {
        if (op.selection !== undefined && op.selection.length === 0) {
            this.say("empty selection");
            return;
        }
        try {
            const rev = await this.api.postEdit(op);
            this.log.push(op, rev, this.viewport.t);
            this.viewport.revision = rev;
            if (changesCardinality(op)) {
                this.selection = emptySelection(rev);
                this.say(`revision ${rev}; selection cleared (soup size changed)`);
            } else {
                this.say(`revision ${rev}`);
            }
            this.renderLogPanel();
            await this.refresh();
        } catch (err) {
            this.say(String(err));
        }
    }

    renderLogPanel(): void {
        const panel = $<HTMLUListElement>("log-panel");
        panel.innerHTML = "";
        for (const entry of this.log.entries) {
            const li = document.createElement("li");
            li.textContent =
                `r${entry.revision} t=${entry.t.toFixed(2)} ${entry.op.type}` +
                (entry.op.selection ? ` [${entry.op.selection.length}]` : "");
            panel.appendChild(li);
        }
    }

    connectFrames(): void {
        this.ws = this.api.framesSocket();
        this.ws.binaryType = "arraybuffer";
        this.ws.onopen = () => this.subscribeFrames();
        this.ws.onmessage = (msg) => {
            if (typeof msg.data === "string") return; // frame metadata
            const blob = new Blob([msg.data], { type: "image/png" });
            void this.showFrame(blob);
        };
    }

    subscribeFrames(): void {
        if (!this.ws || this.ws.readyState !== WebSocket.OPEN) return;
        this.ws.send(JSON.stringify({
            t: this.viewport.t,
            camera: this.viewport.camera,
        }));
    }

    async refresh(): Promise<void> {
        const signal = this.viewport.replaceInflight();
        this.subscribeFrames();
        try {
            const [blob, soup] = await Promise.all([
                this.api.renderPng(this.viewport.t, this.viewport.camera,
                    this.viewport.revision, signal),
                this.api.soup(this.viewport.t, this.viewport.revision),
            ]);
            this.soup = soup;
            await this.showFrame(blob);
            this.drawOverlay();
        } catch (err) {
            if ((err as Error).name !== "AbortError") this.say(String(err));
        }
    }

    async showFrame(blob: Blob): Promise<void> {
        const bmp = await createImageBitmap(blob);
        const ctx = this.frameCanvas.getContext("2d")!;
        ctx.imageSmoothingEnabled = false;
        ctx.drawImage(bmp, 0, 0, this.frameCanvas.width, this.frameCanvas.height);
    }

    drawOverlay(): void {
        const ctx = this.overlay.getContext("2d")!;
        ctx.clearRect(0, 0, this.overlay.width, this.overlay.height);
        if (this.soup) {
            const cam = cameraFromQuery(this.viewport.camera, this.viewport.target);
            const selected = new Set(this.selection.indices);
            this.soup.triangles.forEach((face, i) => {
                const pts = [0, 3, 6].map((o) =>
                    project(cam, [face[o], face[o + 1], face[o + 2]]));
                if (pts.some((p) => p === null)) return;
                ctx.beginPath();
                ctx.moveTo(pts[0]![0], pts[0]![1]);
                ctx.lineTo(pts[1]![0], pts[1]![1]);
                ctx.lineTo(pts[2]![0], pts[2]![1]);
                ctx.closePath();
                ctx.strokeStyle = selected.has(i) ? "#ff5050" : "rgba(80,160,255,0.45)";
                ctx.lineWidth = selected.has(i) ? 1.5 : 0.5;
                ctx.stroke();
                const c = project(cam, centroidOf(face));
                if (c && selected.has(i)) {
                    ctx.fillStyle = "#ff5050";
                    ctx.fillRect(c[0] - 1.5, c[1] - 1.5, 3, 3);
                }
            });
        }
        if (this.dragRect) {
            const r = this.dragRect;
            ctx.strokeStyle = "#ffd24d";
            ctx.setLineDash([4, 3]);
            ctx.strokeRect(Math.min(r.x0, r.x1), Math.min(r.y0, r.y1),
                Math.abs(r.x1 - r.x0), Math.abs(r.y1 - r.y0));
            ctx.setLineDash([]);
        }
    }

    say(msg: string): void {
        this.notice.textContent = msg;
    }
}

window.addEventListener("DOMContentLoaded", () => {
    void new EditorApp().start();
});
