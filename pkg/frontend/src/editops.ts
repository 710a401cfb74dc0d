/** Builders for the EditOp wire format (matching the server's semantics:
 *  v' = pivot + R (v - pivot) + translation, encoded as one 4x4 affine). */

import type { EditOpJson, Vec3, WarpJson } from "./types.js";

export function rotationAboutAxis(axis: "x" | "y" | "z", degrees: number): number[][] {
    const a = (degrees * Math.PI) / 180;
    const c = Math.cos(a);
    const s = Math.sin(a);
    if (axis === "x") return [[1, 0, 0], [0, c, -s], [0, s, c]];
    if (axis === "y") return [[c, 0, s], [0, 1, 0], [-s, 0, c]];
    return [[c, -s, 0], [s, c, 0], [0, 0, 1]];
}

function affineRowMajor(linear: number[][], offset: Vec3): number[] {
    return [
        linear[0][0], linear[0][1], linear[0][2], offset[0],
        linear[1][0], linear[1][1], linear[1][2], offset[1],
        linear[2][0], linear[2][1], linear[2][2], offset[2],
        0, 0, 0, 1,
    ];
}

function applyLinear(m: number[][], v: Vec3): Vec3 {
    return [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ];
}

export function rigidOp(
    selection: number[], rotation: number[][], translation: Vec3, pivot: Vec3,
): EditOpJson {
    const rp = applyLinear(rotation, pivot);
    const offset: Vec3 = [
        pivot[0] - rp[0] + translation[0],
        pivot[1] - rp[1] + translation[1],
        pivot[2] - rp[2] + translation[2],
    ];
    return { type: "rigid", selection: [...selection], matrix: affineRowMajor(rotation, offset) };
}

export function translateOp(selection: number[], translation: Vec3): EditOpJson {
    return rigidOp(selection, [[1, 0, 0], [0, 1, 0], [0, 0, 1]], translation, [0, 0, 0]);
}

export function scaleOp(selection: number[], factors: Vec3, pivot: Vec3): EditOpJson {
    const linear = [
        [factors[0], 0, 0],
        [0, factors[1], 0],
        [0, 0, factors[2]],
    ];
    const offset: Vec3 = [
        pivot[0] - factors[0] * pivot[0],
        pivot[1] - factors[1] * pivot[1],
        pivot[2] - factors[2] * pivot[2],
    ];
    return { type: "scale", selection: [...selection], matrix: affineRowMajor(linear, offset) };
}

export function duplicateOp(selection: number[], copies = 1): EditOpJson {
    return {
        type: "duplicate",
        selection: [...selection],
        copies,
        matrix: affineRowMajor([[1, 0, 0], [0, 1, 0], [0, 0, 1]], [0, 0, 0]),
    };
}

export function removeOp(selection: number[]): EditOpJson {
    return { type: "remove", selection: [...selection] };
}

export function warpOp(warp: WarpJson): EditOpJson {
    return { type: "warp", warp };
}

/** Replay directive: estimate the mesh that vertex edits are bound against. */
export function makeMeshOp(radius: number | null, t: number): EditOpJson {
    return { type: "make_mesh", radius, t };
}

export function vertexDisplaceOp(nVertices: number, vertex: number, delta: Vec3): EditOpJson {
    const deltas: number[][] = Array.from({ length: nVertices }, () => [0, 0, 0]);
    deltas[vertex] = [...delta];
    return { type: "vertex_displace", vertex_deltas: deltas };
}

/** Ops that change soup cardinality invalidate index-based selections. */
export function changesCardinality(op: EditOpJson): boolean {
    return op.type === "duplicate" || op.type === "remove";
}
