import { describe, expect, it } from "vitest";

import {
    changesCardinality,
    duplicateOp,
    removeOp,
    rigidOp,
    rotationAboutAxis,
    scaleOp,
    translateOp,
} from "../src/editops.js";

describe("EditOp wire format", () => {
    it("identity translate is the identity affine", () => {
        const op = translateOp([0, 1], [0, 0, 0]);
        expect(op.type).toBe("rigid");
        expect(op.selection).toEqual([0, 1]);
        expect(op.matrix).toEqual([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]);
    });

    it("translate puts the offset in the last column", () => {
        const op = translateOp([2], [1, -2, 3]);
        expect(op.matrix![3]).toBe(1);
        expect(op.matrix![7]).toBe(-2);
        expect(op.matrix![11]).toBe(3);
    });

    it("rigid rotation about a pivot fixes the pivot", () => {
        const pivot: [number, number, number] = [1, 2, 3];
        const op = rigidOp([0], rotationAboutAxis("z", 90), [0, 0, 0], pivot);
        const m = op.matrix!;
        // apply the 4x4 to the pivot: must map to itself
        const out = [0, 1, 2].map((r) =>
            m[4 * r] * pivot[0] + m[4 * r + 1] * pivot[1] + m[4 * r + 2] * pivot[2] + m[4 * r + 3]);
        expect(out[0]).toBeCloseTo(pivot[0], 12);
        expect(out[1]).toBeCloseTo(pivot[1], 12);
        expect(out[2]).toBeCloseTo(pivot[2], 12);
    });

    it("scale about a pivot fixes the pivot and scales offsets", () => {
        const op = scaleOp([1], [2, 2, 2], [1, 0, 0]);
        const m = op.matrix!;
        const apply = (v: number[]) => [0, 1, 2].map((r) =>
            m[4 * r] * v[0] + m[4 * r + 1] * v[1] + m[4 * r + 2] * v[2] + m[4 * r + 3]);
        expect(apply([1, 0, 0])).toEqual([1, 0, 0]);
        expect(apply([2, 0, 0])).toEqual([3, 0, 0]);
    });

    it("duplicate and remove change cardinality; transforms do not", () => {
        expect(changesCardinality(duplicateOp([0]))).toBe(true);
        expect(changesCardinality(removeOp([0]))).toBe(true);
        expect(changesCardinality(translateOp([0], [1, 0, 0]))).toBe(false);
    });

    it("rotationAboutAxis returns proper rotations", () => {
        for (const axis of ["x", "y", "z"] as const) {
            const r = rotationAboutAxis(axis, 37);
            // orthonormality: R R^T = I
            for (let i = 0; i < 3; i++) {
                for (let j = 0; j < 3; j++) {
                    const dot = r[i][0] * r[j][0] + r[i][1] * r[j][1] + r[i][2] * r[j][2];
                    expect(dot).toBeCloseTo(i === j ? 1 : 0, 12);
                }
            }
        }
    });
});
