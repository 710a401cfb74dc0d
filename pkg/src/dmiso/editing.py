"""The three editing pipelines over a sub-triangle soup.

1. Mesh-driven: estimate a closed mesh over the core soup with an alpha
   shape, bind every sub to its nearest face (offsets + relative rotation in
   the face's frame), then move mesh vertices; bound subs follow their faces.
2. Direct: rigid/scale transforms of selected sub faces about a pivot.
3. Space warps: a continuous map of 3-space applied pointwise to vertices.

All operations are pure soup -> soup functions; appearances are never
touched. Ops serialize to the JSON wire format the editor UI posts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .multigauss import SceneArrays, matrix_to_quat, quat_to_matrix
from .soup import (
    GaussianAppearance,
    Triangle,
    frames_from_triangles,
    triangles_from_frames,
)


class DegenerateInput(ValueError):
    pass


class EmptyMesh(ValueError):
    pass


class TopologyMismatch(ValueError):
    pass


class BadSelection(ValueError):
    pass


# ---------------------------------------------------------------------------
# alpha shape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatedMesh:
    vertices: np.ndarray   # (m, 3)
    faces: np.ndarray      # (f, 3) int indices

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64))

    def face_triangle(self, fi: int) -> Triangle:
        a, b, c = self.faces[fi]
        return Triangle(self.vertices[a], self.vertices[b], self.vertices[c])


def tet_circumradius(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Circumradius of each tetrahedron (index rows into points)."""
    a = points[tets[:, 0]]
    rows = np.stack([points[tets[:, i]] - a for i in (1, 2, 3)], axis=1)  # (t,3,3)
    rhs = 0.5 * np.einsum("tij,tij->ti", rows, rows)
    out = np.full(tets.shape[0], np.inf)
    det = np.linalg.det(rows)
    ok = np.abs(det) > 1e-14
    if ok.any():
        centers = np.linalg.solve(rows[ok], rhs[ok][:, :, None])[:, :, 0]
        out[ok] = np.linalg.norm(centers, axis=1)
    return out


def alpha_shape(points: np.ndarray, radius: float) -> EstimatedMesh:
    """Boundary of the alpha complex: Delaunay tets with circumradius < radius.

    radius=inf keeps every tetrahedron, which yields the convex hull boundary.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
        raise DegenerateInput("need at least 4 points in 3D")
    try:
        tri = Delaunay(pts)
    except QhullError as e:
        raise DegenerateInput(f"degenerate point set: {e}") from e
    tets = tri.simplices
    if math.isfinite(radius):
        keep = tets[tet_circumradius(pts, tets) < radius]
    else:
        keep = tets
    face_count: dict = {}
    face_verts: dict = {}
    for tet in keep:
        t = sorted(int(v) for v in tet)
        for skip in range(4):
            face = tuple(t[i] for i in range(4) if i != skip)
            face_count[face] = face_count.get(face, 0) + 1
            face_verts.setdefault(face, face)
    boundary = [f for f, c in face_count.items() if c == 1]
    if not boundary:
        raise DegenerateInput("alpha complex has no boundary faces (radius too small?)")
    faces = np.array(sorted(boundary), dtype=np.int64)
    return EstimatedMesh(pts.copy(), faces)


def default_alpha_radius(points: np.ndarray) -> float:
    """2x the median nearest-neighbor distance."""
    pts = np.asarray(points, dtype=np.float64)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    return 2.0 * float(np.median(np.sqrt(d2.min(axis=1))))


def core_mesh_points(scene) -> np.ndarray:
    """Meshing point set: all core triangle vertices (core means coincide
    with the first vertex), exact duplicates removed."""
    verts = np.concatenate([m.core.vertices for m in scene.multis], axis=0)
    return np.unique(verts, axis=0)


# ---------------------------------------------------------------------------
# point-to-triangle distance (interior/edge/vertex aware)
# ---------------------------------------------------------------------------

def point_triangle_distance(p: np.ndarray, v0: np.ndarray, v1: np.ndarray,
                            v2: np.ndarray) -> float:
    """Euclidean distance from p to the closed triangle (v0, v1, v2)."""
    e0 = v1 - v0
    e1 = v2 - v0
    d = v0 - p
    a = float(e0 @ e0)
    b = float(e0 @ e1)
    c = float(e1 @ e1)
    dd = float(e0 @ d)
    e = float(e1 @ d)
    s = b * e - c * dd
    t = b * dd - a * e
    det = a * c - b * b
    if s + t <= det:
        if s < 0:
            if t < 0:  # region 4
                if dd < 0:
                    t = 0.0
                    s = 1.0 if -dd >= a else -dd / a
                else:
                    s = 0.0
                    t = 0.0 if e >= 0 else (1.0 if -e >= c else -e / c)
            else:  # region 3
                s = 0.0
                t = 0.0 if e >= 0 else (1.0 if -e >= c else -e / c)
        elif t < 0:  # region 5
            t = 0.0
            s = 0.0 if dd >= 0 else (1.0 if -dd >= a else -dd / a)
        else:  # region 0
            s /= det
            t /= det
    else:
        if s < 0:  # region 2
            tmp0 = b + dd
            tmp1 = c + e
            if tmp1 > tmp0:
                numer = tmp1 - tmp0
                denom = a - 2 * b + c
                s = 1.0 if numer >= denom else numer / denom
                t = 1.0 - s
            else:
                s = 0.0
                t = 1.0 if tmp1 <= 0 else (0.0 if e >= 0 else -e / c)
        elif t < 0:  # region 6
            tmp0 = b + e
            tmp1 = a + dd
            if tmp1 > tmp0:
                numer = tmp1 - tmp0
                denom = a - 2 * b + c
                t = 1.0 if numer >= denom else numer / denom
                s = 1.0 - t
            else:
                t = 0.0
                s = 1.0 if tmp1 <= 0 else (0.0 if dd >= 0 else -dd / a)
        else:  # region 1
            numer = (c + e) - (b + dd)
            if numer <= 0:
                s = 0.0
            else:
                denom = a - 2 * b + c
                s = 1.0 if numer >= denom else numer / denom
            t = 1.0 - s
    closest = v0 + s * e0 + t * e1
    return float(np.linalg.norm(closest - p))


# ---------------------------------------------------------------------------
# binding subs to mesh faces
# ---------------------------------------------------------------------------

@dataclass
class FaceBinding:
    """Per-sub local placement in its nearest mesh face's frame."""

    mesh: EstimatedMesh
    face_index: np.ndarray     # (n,)
    alpha: np.ndarray          # (n, 3) offsets in the face frame
    rel_quat: np.ndarray       # (n, 4) rotation relative to the face frame
    scale: np.ndarray          # (n, 2)
    appearance: list           # GaussianAppearance per sub
    t0: float = 0.0


def bind_subs_to_mesh(soup, mesh: EstimatedMesh, t0: float = 0.0) -> FaceBinding:
    """Assign every sub to its nearest face (ties -> lowest index) and store
    its center offsets and rotation relative to that face's frame."""
    if mesh.faces.shape[0] == 0:
        raise EmptyMesh("mesh has no faces")
    n = len(soup)
    face_tris = np.stack([
        np.stack([mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]])
        for f in mesh.faces
    ])
    fmeans, frots, _ = frames_from_triangles(face_tris)
    verts = np.stack([tri.vertices for tri, _ in soup])
    smeans, srots, sscales = frames_from_triangles(verts)
    face_index = np.empty(n, dtype=np.int64)
    alpha = np.empty((n, 3))
    rel_quat = np.empty((n, 4))
    for i in range(n):
        best = (np.inf, -1)
        for fi in range(mesh.faces.shape[0]):
            dist = point_triangle_distance(
                smeans[i], face_tris[fi, 0], face_tris[fi, 1], face_tris[fi, 2]
            )
            if dist < best[0]:
                best = (dist, fi)
        fi = best[1]
        face_index[i] = fi
        alpha[i] = frots[fi].T @ (smeans[i] - fmeans[fi])
        rel_quat[i] = matrix_to_quat(frots[fi].T @ srots[i])
    apps = [app for _, app in soup]
    return FaceBinding(mesh, face_index, alpha, rel_quat, sscales.copy(), apps, t0)


def apply_mesh_edit(binding: FaceBinding, vertices: np.ndarray):
    """Re-place every bound sub from edited mesh vertex positions."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape != binding.mesh.vertices.shape:
        raise TopologyMismatch(
            f"vertices {vertices.shape} vs mesh {binding.mesh.vertices.shape}"
        )
    faces = binding.mesh.faces
    face_tris = np.stack([
        np.stack([vertices[f[0]], vertices[f[1]], vertices[f[2]]]) for f in faces
    ])
    fmeans, frots, _ = frames_from_triangles(face_tris)
    out = []
    for i in range(binding.face_index.shape[0]):
        fi = binding.face_index[i]
        center = fmeans[fi] + frots[fi] @ binding.alpha[i]
        rot = frots[fi] @ quat_to_matrix(binding.rel_quat[i])
        verts = triangles_from_frames(center[None], rot[None], binding.scale[i][None])[0]
        out.append((Triangle.from_array(verts), binding.appearance[i]))
    return out


def reconstruct_from_binding(binding: FaceBinding):
    """The bound soup at its reference time (the unedited mesh)."""
    return apply_mesh_edit(binding, binding.mesh.vertices)


# ---------------------------------------------------------------------------
# edit operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WarpSpec:
    """Continuous warp of 3-space; amplitude 0 is the identity."""

    family: str = "sinusoidal"          # sinusoidal | translate
    amplitude: float = 0.0
    frequency: float = 1.0
    phase: float = 0.0
    axis: int = 1                       # displaced coordinate
    drive_axis: int = 0                 # coordinate driving the phase
    offset: tuple = (0.0, 0.0, 0.0)     # translate family
    region: tuple | None = None         # ((min xyz), (max xyz)) centroid mask

    def __post_init__(self):
        if self.family not in ("sinusoidal", "translate"):
            raise ValueError(f"unknown warp family {self.family!r}")
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).copy()
        if self.family == "translate":
            return pts + np.asarray(self.offset, dtype=np.float64)
        disp = self.amplitude * np.sin(
            self.frequency * pts[..., self.drive_axis] + self.phase
        )
        pts[..., self.axis] = pts[..., self.axis] + disp
        return pts


def _affine_from_rigid(rotation, translation, pivot):
    r = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    p = np.asarray(pivot, dtype=np.float64)
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = p - r @ p + t
    return m


def _affine_from_scale(factors, pivot):
    f = np.asarray(factors, dtype=np.float64)
    p = np.asarray(pivot, dtype=np.float64)
    m = np.eye(4)
    m[0, 0], m[1, 1], m[2, 2] = f
    m[:3, 3] = p - f * p
    return m


@dataclass(frozen=True)
class EditOp:
    """Tagged edit: rigid | scale | warp | duplicate | remove | vertex_displace."""

    kind: str
    selection: tuple = ()
    matrix: np.ndarray | None = None       # 4x4 affine for rigid/scale/duplicate
    warp: WarpSpec | None = None
    vertex_deltas: np.ndarray | None = None  # (m,3) for vertex_displace
    copies: int = 1

    @staticmethod
    def rigid(selection, rotation, translation, pivot=(0, 0, 0)) -> "EditOp":
        return EditOp("rigid", tuple(int(i) for i in selection),
                      _affine_from_rigid(rotation, translation, pivot))

    @staticmethod
    def scale(selection, factors, pivot=(0, 0, 0)) -> "EditOp":
        f = np.asarray(factors, dtype=np.float64)
        if np.any(f <= 0):
            raise ValueError("scale factors must be positive")
        return EditOp("scale", tuple(int(i) for i in selection),
                      _affine_from_scale(f, pivot))

    @staticmethod
    def space_warp(warp: WarpSpec) -> "EditOp":
        return EditOp("warp", (), None, warp)

    @staticmethod
    def duplicate(selection, transform=None, copies: int = 1) -> "EditOp":
        m = np.eye(4) if transform is None else np.asarray(transform, dtype=np.float64)
        return EditOp("duplicate", tuple(int(i) for i in selection), m, copies=copies)

    @staticmethod
    def remove(selection) -> "EditOp":
        return EditOp("remove", tuple(int(i) for i in selection))

    @staticmethod
    def vertex_displace(deltas) -> "EditOp":
        return EditOp("vertex_displace", (),
                      vertex_deltas=np.asarray(deltas, dtype=np.float64))

    def to_json(self) -> dict:
        out: dict = {"type": self.kind}
        if self.kind in ("rigid", "scale", "duplicate", "remove"):
            out["selection"] = list(self.selection)
        if self.matrix is not None:
            out["matrix"] = [float(v) for v in np.asarray(self.matrix).reshape(16)]
        if self.kind == "duplicate":
            out["copies"] = self.copies
        if self.warp is not None:
            w = self.warp
            out["warp"] = {
                "family": w.family, "amplitude": w.amplitude,
                "frequency": w.frequency, "phase": w.phase,
                "axis": w.axis, "drive_axis": w.drive_axis,
                "offset": list(w.offset),
                "region": None if w.region is None else
                          [list(w.region[0]), list(w.region[1])],
            }
        if self.vertex_deltas is not None:
            out["vertex_deltas"] = [[float(v) for v in row] for row in self.vertex_deltas]
        return out

    @staticmethod
    def from_json(obj: dict) -> "EditOp":
        kind = obj["type"]
        if kind in ("rigid", "scale"):
            return EditOp(kind, tuple(obj["selection"]),
                          np.asarray(obj["matrix"], dtype=np.float64).reshape(4, 4))
        if kind == "duplicate":
            return EditOp(kind, tuple(obj["selection"]),
                          np.asarray(obj["matrix"], dtype=np.float64).reshape(4, 4),
                          copies=int(obj.get("copies", 1)))
        if kind == "remove":
            return EditOp(kind, tuple(obj["selection"]))
        if kind == "warp":
            w = obj["warp"]
            region = w.get("region")
            return EditOp.space_warp(WarpSpec(
                family=w["family"], amplitude=w["amplitude"],
                frequency=w.get("frequency", 1.0), phase=w.get("phase", 0.0),
                axis=int(w.get("axis", 1)), drive_axis=int(w.get("drive_axis", 0)),
                offset=tuple(w.get("offset", (0.0, 0.0, 0.0))),
                region=None if region is None else (tuple(region[0]), tuple(region[1])),
            ))
        if kind == "vertex_displace":
            return EditOp.vertex_displace(obj["vertex_deltas"])
        raise ValueError(f"unknown edit type {kind!r}")


def _check_selection(selection, n: int):
    if len(selection) == 0:
        raise BadSelection("empty selection")
    for i in selection:
        if not (0 <= i < n):
            raise BadSelection(f"index {i} out of range [0, {n})")


def _apply_affine_to_triangle(tri: Triangle, m: np.ndarray) -> Triangle:
    v = tri.vertices @ m[:3, :3].T + m[:3, 3]
    return Triangle.from_array(v)


def transform_selection(soup, selection, op: EditOp):
    """Rigid/scale transform of the selected sub faces; others untouched."""
    if op.kind not in ("rigid", "scale"):
        raise ValueError("transform_selection expects a rigid or scale op")
    _check_selection(selection, len(soup))
    sel = set(int(i) for i in selection)
    out = []
    for i, (tri, app) in enumerate(soup):
        if i in sel:
            out.append((_apply_affine_to_triangle(tri, op.matrix), app))
        else:
            out.append((tri, app))
    return out


def warp_space(soup, warp: WarpSpec):
    """Map soup vertices pointwise through a continuous warp.

    With a region mask, only faces whose centroid falls inside the axis
    aligned box are warped; appearance never changes.
    """
    out = []
    for tri, app in soup:
        verts = tri.vertices
        if warp.region is not None:
            centroid = verts.mean(axis=0)
            lo = np.asarray(warp.region[0], dtype=np.float64)
            hi = np.asarray(warp.region[1], dtype=np.float64)
            if not (np.all(centroid >= lo) and np.all(centroid <= hi)):
                out.append((tri, app))
                continue
        if warp.family == "translate" or warp.amplitude != 0.0:
            out.append((Triangle.from_array(warp.apply(verts)), app))
        else:
            out.append((tri, app))
    return out


def duplicate_remove(soup, op: EditOp):
    """Remove selected subs, or append transformed copies of them."""
    if op.kind == "remove":
        _check_selection(op.selection, len(soup))
        sel = set(op.selection)
        return [pair for i, pair in enumerate(soup) if i not in sel]
    if op.kind == "duplicate":
        _check_selection(op.selection, len(soup))
        out = list(soup)
        for _ in range(op.copies):
            for i in op.selection:
                tri, app = soup[i]
                out.append((_apply_affine_to_triangle(tri, op.matrix), app))
        return out
    raise ValueError("duplicate_remove expects a duplicate or remove op")


def apply_edit_to_soup(soup, op: EditOp, binding: FaceBinding | None = None):
    """Dispatch one EditOp against a soup (vertex_displace needs a binding)."""
    if op.kind in ("rigid", "scale"):
        return transform_selection(soup, op.selection, op)
    if op.kind == "warp":
        return warp_space(soup, op.warp)
    if op.kind in ("duplicate", "remove"):
        return duplicate_remove(soup, op)
    if op.kind == "vertex_displace":
        if binding is None:
            raise ValueError("vertex_displace requires a face binding")
        if op.vertex_deltas.shape != binding.mesh.vertices.shape:
            raise TopologyMismatch(
                f"deltas {op.vertex_deltas.shape} vs mesh {binding.mesh.vertices.shape}"
            )
        return apply_mesh_edit(binding, binding.mesh.vertices + op.vertex_deltas)
    raise ValueError(f"unknown edit kind {op.kind!r}")


# ---------------------------------------------------------------------------
# scene-level application
# ---------------------------------------------------------------------------

def _absorb_triangle(tri: Triangle, core_mean, core_rot):
    """Express an edited sub face in its parent core's frame."""
    m, r, s = frames_from_triangles(tri.vertices[None])
    alpha = core_rot.T @ (m[0] - core_mean)
    return alpha, matrix_to_quat(r[0]), s[0]


def apply_edit_to_scene(scene, op: EditOp, binding: FaceBinding | None = None):
    """Apply an EditOp to a scene's rest-pose soup and re-absorb the result.

    Edited subs get fresh offsets/rotation/scale relative to their unchanged
    parent cores, so the deformation field keeps composing with the edit;
    untouched subs keep their stored values bit for bit.
    """
    from .multigauss import MultiGaussian, SoupScene, SubGaussian, flatten_to_sub_soup, pack_scene

    soup = flatten_to_sub_soup(scene)
    arrays = pack_scene(scene)
    if arrays.p:
        core_means, core_rots, _ = frames_from_triangles(arrays.core_verts)

    if op.kind in ("rigid", "scale", "warp", "vertex_displace"):
        new_soup = apply_edit_to_soup(soup, op, binding)
        changed = [i for i in range(len(soup)) if new_soup[i][0] is not soup[i][0]]
        alpha = arrays.alpha.copy()
        quat = arrays.quat.copy()
        scale = arrays.scale.copy()
        for i in changed:
            j = arrays.sub_core[i]
            alpha[i], quat[i], scale[i] = _absorb_triangle(
                new_soup[i][0], core_means[j], core_rots[j]
            )
        out = SceneArrays(arrays.core_verts, arrays.sub_core, alpha, quat, scale,
                          arrays.opacity, arrays.sh, arrays.sh_degree, arrays.background)
        from .multigauss import unpack_scene

        return unpack_scene(out)

    if op.kind == "remove":
        _check_selection(op.selection, len(soup))
        sel = set(op.selection)
        new_multis = []
        gi = 0
        for multi in scene.multis:
            subs = [s for local, s in enumerate(multi.subs) if (gi + local) not in sel]
            gi += multi.k
            if subs:
                new_multis.append(MultiGaussian(multi.core, subs))
        return SoupScene(new_multis, scene.sh_degree, scene.background)

    if op.kind == "duplicate":
        _check_selection(op.selection, len(soup))
        added: dict = {}
        for _ in range(op.copies):
            for i in op.selection:
                j = int(arrays.sub_core[i])
                tri = _apply_affine_to_triangle(soup[i][0], op.matrix)
                a, q, s = _absorb_triangle(tri, core_means[j], core_rots[j])
                src = None
                seen = 0
                for multi in scene.multis:
                    if i < seen + multi.k:
                        src = multi.subs[i - seen]
                        break
                    seen += multi.k
                added.setdefault(j, []).append(
                    SubGaussian(a, q / np.linalg.norm(q), s, src.appearance)
                )
        new_multis = [
            MultiGaussian(m.core, list(m.subs) + added.get(j, []))
            for j, m in enumerate(scene.multis)
        ]
        return SoupScene(new_multis, scene.sh_degree, scene.background)

    raise ValueError(f"unknown edit kind {op.kind!r}")
