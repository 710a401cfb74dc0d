import { describe, expect, it } from "vitest";

import { cameraFromQuery } from "../src/camera.js";
import { boxSelect, emptySelection, normalizeRect } from "../src/selection.js";
import type { CameraQuery, SoupPayload } from "../src/types.js";

const camQ: CameraQuery = {
    azim: 0, elev: 0, radius: 3, fov: 0.9, width: 64, height: 64,
};

function tinyFaceAt(x: number, y: number, z: number): number[] {
    return [x, y, z, x + 0.01, y, z, x, y + 0.01, z];
}

const soup: SoupPayload = {
    revision: 0,
    t: 0,
    triangles: [
        tinyFaceAt(0, 0, 0),       // center of view
        tinyFaceAt(0.8, 0, 0),     // right side
        tinyFaceAt(-0.8, 0, 0),    // left side
    ],
    colors: [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
    opacities: [1, 1, 1],
};

describe("boxSelect", () => {
    it("selects everything with a full-viewport rectangle", () => {
        const cam = cameraFromQuery(camQ, [0, 0, 0]);
        const sel = boxSelect(soup, cam, { x0: 0, y0: 0, x1: 64, y1: 64 });
        expect(sel.indices).toEqual([0, 1, 2]);
        expect(sel.revision).toBe(0);
    });

    it("selects nothing with a zero-area rectangle", () => {
        const cam = cameraFromQuery(camQ, [0, 0, 0]);
        const sel = boxSelect(soup, cam, { x0: 10, y0: 10, x1: 10, y1: 10 });
        expect(sel.indices).toEqual([]);
    });

    it("selects exactly the faces whose centroids project inside", () => {
        const cam = cameraFromQuery(camQ, [0, 0, 0]);
        // a thin rect around the middle column of the image
        const sel = boxSelect(soup, cam, { x0: 28, y0: 0, x1: 36, y1: 64 });
        expect(sel.indices).toEqual([0]);
        // viewing +z from -z puts world +x on the image's left half
        const rightHalf = boxSelect(soup, cam, { x0: 36, y0: 0, x1: 64, y1: 64 });
        expect(rightHalf.indices).toEqual([2]);
        const leftHalf = boxSelect(soup, cam, { x0: 0, y0: 0, x1: 28, y1: 64 });
        expect(leftHalf.indices).toEqual([1]);
    });

    it("normalizes inverted drag rectangles", () => {
        const cam = cameraFromQuery(camQ, [0, 0, 0]);
        const sel = boxSelect(soup, cam, { x0: 64, y0: 64, x1: 0, y1: 0 });
        expect(sel.indices).toEqual([0, 1, 2]);
        expect(normalizeRect({ x0: 5, y0: 7, x1: 1, y1: 2 }))
            .toEqual({ x0: 1, y0: 2, x1: 5, y1: 7 });
    });

    it("pivot is the centroid of the selected faces", () => {
        const cam = cameraFromQuery(camQ, [0, 0, 0]);
        const sel = boxSelect(soup, cam, { x0: 0, y0: 0, x1: 64, y1: 64 });
        expect(sel.pivot[0]).toBeCloseTo((0 + 0.8 - 0.8) / 3 + 0.01 / 3, 9);
    });

    it("emptySelection has no indices and revision tag", () => {
        const sel = emptySelection(4);
        expect(sel.indices).toEqual([]);
        expect(sel.revision).toBe(4);
    });
});
