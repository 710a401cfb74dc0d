/** Sub-face selection: screen-rectangle picking over projected centroids. */

import { centroidOf, PinholeCamera, project } from "./camera.js";
import type { SoupPayload, Vec3 } from "./types.js";

export type SelectionMode = "sub-triangles" | "mesh-vertices";

export interface SelectionState {
    mode: SelectionMode;
    indices: number[];
    /** world-space pivot for gizmo transforms (selection centroid) */
    pivot: Vec3;
    /** soup revision the indices refer to */
    revision: number;
}

export function emptySelection(revision = 0): SelectionState {
    return { mode: "sub-triangles", indices: [], pivot: [0, 0, 0], revision };
}

export interface Rect {
    x0: number;
    y0: number;
    x1: number;
    y1: number;
}

export function normalizeRect(r: Rect): Rect {
    return {
        x0: Math.min(r.x0, r.x1),
        y0: Math.min(r.y0, r.y1),
        x1: Math.max(r.x0, r.x1),
        y1: Math.max(r.y0, r.y1),
    };
}

/** Select every sub face whose projected centroid falls inside the rect.
 *  A zero-area rectangle selects nothing; an empty result is valid. */
export function boxSelect(soup: SoupPayload, cam: PinholeCamera, rect: Rect): SelectionState {
    const r = normalizeRect(rect);
    const indices: number[] = [];
    const acc: Vec3 = [0, 0, 0];
    if (r.x1 > r.x0 && r.y1 > r.y0) {
        soup.triangles.forEach((face, i) => {
            const c = centroidOf(face);
            const px = project(cam, c);
            if (px && px[0] >= r.x0 && px[0] <= r.x1 && px[1] >= r.y0 && px[1] <= r.y1) {
                indices.push(i);
                acc[0] += c[0];
                acc[1] += c[1];
                acc[2] += c[2];
            }
        });
    }
    const n = Math.max(1, indices.length);
    return {
        mode: "sub-triangles",
        indices,
        pivot: [acc[0] / n, acc[1] / n, acc[2] / n],
        revision: soup.revision,
    };
}
