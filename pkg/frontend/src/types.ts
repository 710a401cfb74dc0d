/** Wire types for the scene service API. */

export interface SceneInfo {
    revision: number;
    p: number;
    k: number[];
    n_subs: number;
    sh_degree: number;
    epsilon: number;
    background: [number, number, number];
    center: [number, number, number];
    timeline: [number, number];
}

export interface SoupPayload {
    revision: number;
    t: number;
    /** 9 floats per face: v1 xyz, v2 xyz, v3 xyz */
    triangles: number[][];
    colors: number[][];
    opacities: number[];
}

export interface WarpJson {
    family: "sinusoidal" | "translate";
    amplitude: number;
    frequency: number;
    phase: number;
    axis: number;
    drive_axis: number;
    offset: [number, number, number];
    region: [[number, number, number], [number, number, number]] | null;
}

/** EditOp wire format: tag + selection + row-major 4x4 affine, or warp fields.
 *  "make_mesh" is a replay directive (handled by POST /mesh, not /edit): it
 *  estimates the mesh that later vertex_displace entries are bound against. */
export interface EditOpJson {
    type: "rigid" | "scale" | "warp" | "duplicate" | "remove" | "vertex_displace"
        | "make_mesh";
    selection?: number[];
    matrix?: number[];
    copies?: number;
    warp?: WarpJson;
    vertex_deltas?: number[][];
    radius?: number | null;
    t?: number;
}

export interface CameraQuery {
    azim: number;
    elev: number;
    radius: number;
    fov: number;
    width: number;
    height: number;
    target?: [number, number, number];
}

export type Vec3 = [number, number, number];
