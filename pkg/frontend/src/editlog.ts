/** Ordered log of committed edit ops.
 *
 * Undo is a revision checkout (the server keeps recent revisions), so the
 * log stays append-only and replaying it through the CLI reproduces the
 * server's final scene file bit for bit.
 */

import type { EditOpJson } from "./types.js";

export interface LogEntry {
    op: EditOpJson;
    /** revision created by this op */
    revision: number;
    /** time the edit targeted */
    t: number;
}

export class EditLog {
    entries: LogEntry[] = [];

    push(op: EditOpJson, revision: number, t: number): void {
        this.entries.push({ op, revision, t });
    }

    /** Revision to check out when undoing from `current` (or null at the root). */
    undoTarget(current: number): number | null {
        const revs = [0, ...this.entries.map((e) => e.revision)].filter((r) => r < current);
        return revs.length ? revs[revs.length - 1] : null;
    }

    /** Ops up to and including `revision`, as the CLI replay file content. */
    replayJson(revision?: number): EditOpJson[] {
        const upto = revision ?? (this.entries.length
            ? this.entries[this.entries.length - 1].revision : 0);
        return this.entries.filter((e) => e.revision <= upto).map((e) => e.op);
    }
}
