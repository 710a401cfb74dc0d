/** Viewport state: orbit camera, current time, current revision.
 *
 * Scrubbing is cancel-and-replace: a new request aborts the in-flight one,
 * and edits always target the currently displayed time.
 */

import type { CameraQuery, Vec3 } from "./types.js";

export class ViewportState {
    t = 0.0;
    revision = 0;
    tMin = 0.0;
    tMax = 1.0;
    camera: CameraQuery;
    private inflight: AbortController | null = null;

    constructor(width: number, height: number, public target: Vec3 = [0, 0, 0]) {
        this.camera = {
            azim: 30, elev: 15, radius: 3.0, fov: 0.9, width, height,
            target,
        };
    }

    setTimeline(tMin: number, tMax: number): void {
        this.tMin = tMin;
        this.tMax = tMax;
    }

    /** Clamp-free validation: out-of-range times are rejected client-side. */
    canScrubTo(t: number): boolean {
        return t >= this.tMin && t <= this.tMax;
    }

    scrubTo(t: number): AbortSignal {
        if (!this.canScrubTo(t)) {
            throw new RangeError(`t=${t} outside [${this.tMin}, ${this.tMax}]`);
        }
        this.t = t;
        return this.replaceInflight();
    }

    replaceInflight(): AbortSignal {
        if (this.inflight) this.inflight.abort();
        this.inflight = new AbortController();
        return this.inflight.signal;
    }

    orbitBy(dAzim: number, dElev: number): void {
        this.camera.azim = (this.camera.azim + dAzim) % 360;
        this.camera.elev = Math.max(-89, Math.min(89, this.camera.elev + dElev));
    }

    zoomBy(factor: number): void {
        this.camera.radius = Math.max(0.2, this.camera.radius * factor);
    }
}
