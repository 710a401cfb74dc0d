/** Pinhole camera math mirroring the server's conventions, used for picking.
 *
 * The server renders frames; the client only needs to project soup centroids
 * into the same pixel grid to hit-test selections. Conventions: orbit camera
 * looks at a target, camera space has z forward, pixel (0,0) is the top-left
 * corner and pixel centers sit at half-integers.
 */

import type { CameraQuery, Vec3 } from "./types.js";

export interface PinholeCamera {
    width: number;
    height: number;
    fx: number;
    fy: number;
    cx: number;
    cy: number;
    /** world-to-camera rotation, row-major */
    rot: number[][];
    /** world-to-camera translation */
    t: Vec3;
}

function cross(a: Vec3, b: Vec3): Vec3 {
    return [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
}

function norm(a: Vec3): number {
    return Math.hypot(a[0], a[1], a[2]);
}

function scale(a: Vec3, s: number): Vec3 {
    return [a[0] * s, a[1] * s, a[2] * s];
}

function sub(a: Vec3, b: Vec3): Vec3 {
    return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function orbitEye(q: CameraQuery, target: Vec3): Vec3 {
    const az = (q.azim * Math.PI) / 180;
    const el = (q.elev * Math.PI) / 180;
    return [
        target[0] + q.radius * Math.sin(az) * Math.cos(el),
        target[1] + q.radius * Math.sin(el),
        target[2] - q.radius * Math.cos(az) * Math.cos(el),
    ];
}

export function lookAtCamera(
    eye: Vec3, target: Vec3, up: Vec3,
    fovX: number, width: number, height: number,
): PinholeCamera {
    const fwd = scale(sub(target, eye), 1 / norm(sub(target, eye)));
    const rightRaw = cross(fwd, up);
    const right = scale(rightRaw, 1 / norm(rightRaw));
    const down = cross(fwd, right);
    const rot = [right, down, fwd].map((r) => [...r]);
    const t: Vec3 = [
        -(rot[0][0] * eye[0] + rot[0][1] * eye[1] + rot[0][2] * eye[2]),
        -(rot[1][0] * eye[0] + rot[1][1] * eye[1] + rot[1][2] * eye[2]),
        -(rot[2][0] * eye[0] + rot[2][1] * eye[1] + rot[2][2] * eye[2]),
    ];
    const fx = (0.5 * width) / Math.tan(0.5 * fovX);
    return { width, height, fx, fy: fx, cx: width / 2, cy: height / 2, rot, t };
}

export function cameraFromQuery(q: CameraQuery, defaultTarget: Vec3): PinholeCamera {
    const target = q.target ?? defaultTarget;
    return lookAtCamera(orbitEye(q, target), target, [0, 1, 0], q.fov, q.width, q.height);
}

/** Project a world point; returns null when at or behind the near plane. */
export function project(cam: PinholeCamera, p: Vec3, znear = 0.01): [number, number] | null {
    const x = cam.rot[0][0] * p[0] + cam.rot[0][1] * p[1] + cam.rot[0][2] * p[2] + cam.t[0];
    const y = cam.rot[1][0] * p[0] + cam.rot[1][1] * p[1] + cam.rot[1][2] * p[2] + cam.t[1];
    const z = cam.rot[2][0] * p[0] + cam.rot[2][1] * p[1] + cam.rot[2][2] * p[2] + cam.t[2];
    if (z <= znear) return null;
    return [cam.fx * (x / z) + cam.cx, cam.fy * (y / z) + cam.cy];
}

export function centroidOf(faceFlat: number[]): Vec3 {
    return [
        (faceFlat[0] + faceFlat[3] + faceFlat[6]) / 3,
        (faceFlat[1] + faceFlat[4] + faceFlat[7]) / 3,
        (faceFlat[2] + faceFlat[5] + faceFlat[8]) / 3,
    ];
}
