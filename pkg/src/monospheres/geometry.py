"""Geometric kernel: poses, pinhole projection, image-plane Delaunay
triangulation, depth meshes, free-space polyhedra and the distance /
intersection queries built on top of them.

All operations are pure functions of their inputs. Meshes and polyhedra are
treated as immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import errors

# Barycentric tolerance for ray-triangle hits: hits on edges/vertices count.
BARY_EPS = 1e-9
# Rays closer than this to a triangle plane are treated as parallel.
PARALLEL_EPS = 1e-12
# Jitter angle applied to boundary-grazing containment rays (retried 3x).
GRAZE_JITTER = 1e-7
ON_SURFACE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Poses and the pinhole camera
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Pose:
    """Position plus yaw/pitch/roll heading (radians, body x forward, z up)."""

    position: np.ndarray
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self._rot = None

    def rotation(self) -> np.ndarray:
        if self._rot is None:
            cy, sy = math.cos(self.yaw), math.sin(self.yaw)
            cp, sp = math.cos(self.pitch), math.sin(self.pitch)
            cr, sr = math.cos(self.roll), math.sin(self.roll)
            rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
            ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
            rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
            self._rot = rz @ ry @ rx
        return self._rot

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) for this heading."""
        cy, sy = math.cos(self.yaw / 2), math.sin(self.yaw / 2)
        cp, sp = math.cos(self.pitch / 2), math.sin(self.pitch / 2)
        cr, sr = math.cos(self.roll / 2), math.sin(self.roll / 2)
        q = np.array([
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ])
        return q / np.linalg.norm(q)

    def forward(self) -> np.ndarray:
        return self.rotation()[:, 0]

    def left(self) -> np.ndarray:
        return self.rotation()[:, 1]

    def up(self) -> np.ndarray:
        return self.rotation()[:, 2]

    def to_body(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.position) @ self.rotation()

    def to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.rotation().T + self.position


@dataclass(frozen=True)
class PinholeCamera:
    """Ideal pinhole with angular field-of-view limits (radians)."""

    hfov: float = math.radians(120.0)
    vfov: float = math.radians(90.0)

    @property
    def tan_h(self) -> float:
        return math.tan(self.hfov / 2.0)

    @property
    def tan_v(self) -> float:
        return math.tan(self.vfov / 2.0)

    def project(self, pose: Pose, points: np.ndarray):
        """Project world points through the pose.

        Returns (uv, depth, in_fov): image-plane coordinates u=-y/x, v=-z/x in
        the body frame, the forward depth x, and the in-FoV mask (strictly in
        front and inside both angular limits).
        """
        body = pose.to_body(points)
        x = body[:, 0]
        safe_x = np.where(np.abs(x) < 1e-12, 1e-12, x)
        u = -body[:, 1] / safe_x
        v = -body[:, 2] / safe_x
        in_fov = (x > 1e-9) & (np.abs(u) <= self.tan_h) & (np.abs(v) <= self.tan_v)
        return np.column_stack([u, v]), x, in_fov

    def direction_from_uv(self, pose: Pose, uv: np.ndarray) -> np.ndarray:
        """World-frame unit ray directions for image-plane coordinates."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        body = np.column_stack([np.ones(len(uv)), -uv[:, 0], -uv[:, 1]])
        body /= np.linalg.norm(body, axis=1, keepdims=True)
        return body @ pose.rotation().T


# ---------------------------------------------------------------------------
# 2D Delaunay triangulation (Bowyer-Watson, incremental)
# ---------------------------------------------------------------------------

def _orient2d(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def delaunay_triangulate(points) -> list[tuple[int, int, int]]:
    """Delaunay triangulation of 2D points, returned as index triples.

    Deterministic for a fixed input ordering: points are inserted in index
    order and cocircular ties (in-circle determinant within 1e-12 of zero)
    are resolved in favor of the already-present triangles, so lower-index
    configurations win. Near-duplicate points (within 1e-6 of an earlier
    point, relative to the point-set scale) are collapsed onto the earlier
    point, which keeps sliver triangles from defeating the floating-point
    in-circle test; returned indices refer to the original input ordering.
    Triangles are wound counterclockwise.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected an (n, 2) array of image coordinates")
    n = len(pts)
    if n < 3:
        raise errors.FewerThanThreePoints(f"need at least 3 points, got {n}")

    # Normalize for conditioning; tolerances below are relative to this scale.
    center = pts.mean(axis=0)
    scale = max(np.abs(pts - center).max(), 1e-12)
    norm = (pts - center) / scale

    # Collinearity check on the raw input set.
    if _max_triangle_area(norm) <= 1e-12:
        raise errors.AllCollinear("all input points are collinear")

    big = 64.0
    sv = len(norm)
    verts = np.vstack([
        norm,
        [[0.0, 3.0 * big], [-3.0 * big, -2.0 * big], [3.0 * big, -2.0 * big]],
    ])
    tris: list[list[int]] = [[sv, sv + 1, sv + 2]]
    alive: list[bool] = [True]

    dup_tol = 1e-6
    bins: dict[tuple[int, int], list[int]] = {}
    for p_idx in range(n):
        bx = int(math.floor(norm[p_idx, 0] / dup_tol))
        by = int(math.floor(norm[p_idx, 1] / dup_tol))
        dup = False
        for nb in ((bx + dx, by + dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)):
            for prev in bins.get(nb, ()):
                if np.hypot(*(norm[p_idx] - norm[prev])) <= dup_tol:
                    dup = True
                    break
            if dup:
                break
        if dup:
            continue
        bins.setdefault((bx, by), []).append(p_idx)
        p = verts[p_idx]

        tri_arr = np.asarray(tris, dtype=np.int64)
        alive_arr = np.asarray(alive, dtype=bool)
        a = verts[tri_arr[:, 0]]
        b = verts[tri_arr[:, 1]]
        c = verts[tri_arr[:, 2]]
        # In-circle determinant for CCW triangles; > 0 means strictly inside.
        ax, ay = a[:, 0] - p[0], a[:, 1] - p[1]
        bx, by = b[:, 0] - p[0], b[:, 1] - p[1]
        cx, cy = c[:, 0] - p[0], c[:, 1] - p[1]
        det = (
            (ax * ax + ay * ay) * (bx * cy - cx * by)
            - (bx * bx + by * by) * (ax * cy - cx * ay)
            + (cx * cx + cy * cy) * (ax * by - bx * ay)
        )
        bad = alive_arr & (det > 1e-12)
        bad_idx = np.nonzero(bad)[0]
        if len(bad_idx) == 0:
            # Point coincides with an existing vertex or lies exactly on a
            # shared edge with zero in-circle margin; find the containing
            # triangle by orientation tests instead.
            bad_idx = _containing_triangles(verts, tri_arr, alive_arr, p)
            if len(bad_idx) == 0:
                continue

        edge_count: dict[tuple[int, int], int] = {}
        edge_dir: dict[tuple[int, int], tuple[int, int]] = {}
        for ti in bad_idx:
            i, j, k = tris[ti]
            alive[ti] = False
            for u, v in ((i, j), (j, k), (k, i)):
                key_e = (u, v) if u < v else (v, u)
                edge_count[key_e] = edge_count.get(key_e, 0) + 1
                edge_dir[key_e] = (u, v)
        for key_e, cnt in edge_count.items():
            if cnt != 1:
                continue
            u, v = edge_dir[key_e]
            tris.append([u, v, p_idx])
            alive.append(True)

    out = []
    for t, ok in zip(tris, alive):
        if not ok or max(t) >= sv:
            continue
        out.append(_rotate_min_first(tuple(t)))
    if not out:
        raise errors.AllCollinear("no valid triangles (degenerate input)")
    out.sort()
    return out


def _max_triangle_area(norm: np.ndarray) -> float:
    a = norm[0]
    d = np.linalg.norm(norm - a, axis=1)
    b = norm[int(np.argmax(d))]
    cross = np.abs((b[0] - a[0]) * (norm[:, 1] - a[1]) - (b[1] - a[1]) * (norm[:, 0] - a[0]))
    return float(cross.max()) / 2.0


def _containing_triangles(verts, tri_arr, alive_arr, p):
    a = verts[tri_arr[:, 0]]
    b = verts[tri_arr[:, 1]]
    c = verts[tri_arr[:, 2]]
    d1 = (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
    d2 = (c[:, 0] - b[:, 0]) * (p[1] - b[:, 1]) - (c[:, 1] - b[:, 1]) * (p[0] - b[:, 0])
    d3 = (a[:, 0] - c[:, 0]) * (p[1] - c[:, 1]) - (a[:, 1] - c[:, 1]) * (p[0] - c[:, 0])
    inside = alive_arr & (d1 >= -1e-12) & (d2 >= -1e-12) & (d3 >= -1e-12)
    return np.nonzero(inside)[0][:1]


def _rotate_min_first(tri: tuple[int, int, int]) -> tuple[int, int, int]:
    i = int(np.argmin(tri))
    return tuple(tri[i:] + tri[:i])


def circumcircle_violations(points, triangles, tol: float = 1e-9) -> int:
    """Brute-force count of (triangle, point) pairs violating the
    empty-circumcircle property by more than tol. Oracle for tests."""
    pts = np.asarray(points, dtype=float)
    center = pts.mean(axis=0)
    scale = max(np.abs(pts - center).max(), 1e-12)
    norm = (pts - center) / scale
    bad = 0
    for tri in triangles:
        a, b, c = norm[list(tri)]
        if _orient2d(a, b, c) < 0:
            a, b = b, a
        for i in range(len(norm)):
            if i in tri:
                continue
            p = norm[i]
            m = np.array([
                [a[0] - p[0], a[1] - p[1], (a[0] - p[0]) ** 2 + (a[1] - p[1]) ** 2],
                [b[0] - p[0], b[1] - p[1], (b[0] - p[0]) ** 2 + (b[1] - p[1]) ** 2],
                [c[0] - p[0], c[1] - p[1], (c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2],
            ])
            if np.linalg.det(m) > tol:
                bad += 1
    return bad


# ---------------------------------------------------------------------------
# Depth meshes and free-space polyhedra
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DepthMesh:
    """Triangle mesh over tracked 3D points, connected by the Delaunay
    triangulation of their image projections."""

    vertices: np.ndarray                 # (n, 3)
    triangles: np.ndarray                # (m, 3) int
    boundary_edges: np.ndarray           # (k, 2) int, directed as in the mesh
    virtual_flags: np.ndarray            # (n,) bool

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def triangle_coords(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        t = self.triangle_coords()
        return 0.5 * np.linalg.norm(
            np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)


@dataclass(eq=False)
class FreeSpacePolyhedron:
    """Watertight volume between a camera focal point and its depth mesh."""

    apex: np.ndarray
    mesh: DepthMesh
    side_faces: np.ndarray               # (k, 3) int into .vertices
    measured_only: bool
    vertices: np.ndarray = field(default=None)   # (n+1, 3), apex last
    faces: np.ndarray = field(default=None)      # mesh faces then side faces

    def __post_init__(self):
        if self.vertices is None:
            self.vertices = np.vstack([self.mesh.vertices, self.apex[None, :]])
        if self.faces is None:
            self.faces = np.vstack([self.mesh.triangles, self.side_faces])
        self._tri = self.vertices[self.faces]
        lo = self._tri.reshape(-1, 3).min(axis=0)
        hi = self._tri.reshape(-1, 3).max(axis=0)
        self.aabb = (lo, hi)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_coords(self) -> np.ndarray:
        return self._tri

    def is_watertight(self) -> bool:
        count: dict[tuple[int, int], int] = {}
        for i, j, k in self.faces:
            for u, v in ((i, j), (j, k), (k, i)):
                key = (u, v) if u < v else (v, u)
                count[key] = count.get(key, 0) + 1
        return all(c == 2 for c in count.values())

    def volume(self) -> float:
        t = self._tri - self.apex[None, None, :]
        vols = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])) / 6.0
        return float(abs(vols.sum()))

    def contains(self, points: np.ndarray, strict: bool = True) -> np.ndarray:
        return _parity_contains(self._tri, points, strict=strict)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist = point_triangle_distance(pts, self._tri).min(axis=1)
        inside = _parity_contains(self._tri, pts, strict=False)
        sd = np.where(inside, dist, -dist)
        sd[dist <= ON_SURFACE_TOL] = 0.0
        return sd


def build_depth_mesh(tracked_points, camera: Pose, intrinsics: PinholeCamera,
                     virtual_flags=None) -> DepthMesh:
    """Mesh the given 3D points using the Delaunay triangulation of their
    image projections through the camera pose."""
    pts = np.atleast_2d(np.asarray(tracked_points, dtype=float))
    if len(pts) < 3:
        raise errors.FewerThanThreePoints(f"need at least 3 points, got {len(pts)}")
    body = camera.to_body(pts)
    if np.any(body[:, 0] <= 1e-9):
        raise errors.PointBehindCamera("point at or behind the camera plane")
    uv = np.column_stack([-body[:, 1] / body[:, 0], -body[:, 2] / body[:, 0]])
    tris = delaunay_triangulate(uv)

    tri_arr = np.asarray(tris, dtype=np.int64)
    t = pts[tri_arr]
    areas = 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    tri_arr = tri_arr[areas > 1e-9]
    if len(tri_arr) == 0:
        raise errors.AllCollinear("all candidate triangles degenerate in 3D")

    boundary = _boundary_edges(tri_arr)
    if virtual_flags is None:
        virtual_flags = np.zeros(len(pts), dtype=bool)
    else:
        virtual_flags = np.asarray(virtual_flags, dtype=bool).reshape(len(pts))
    return DepthMesh(vertices=pts.copy(), triangles=tri_arr,
                     boundary_edges=boundary, virtual_flags=virtual_flags)


def _boundary_edges(tri_arr: np.ndarray) -> np.ndarray:
    directed = set()
    for i, j, k in tri_arr:
        directed.update(((int(i), int(j)), (int(j), int(k)), (int(k), int(i))))
    boundary = [e for e in directed if (e[1], e[0]) not in directed]
    boundary.sort()
    return np.asarray(boundary, dtype=np.int64).reshape(-1, 2)


def build_polyhedron(mesh: DepthMesh, camera: Pose) -> FreeSpacePolyhedron:
    """Close the volume between the camera focal point and the mesh by
    connecting every boundary edge to the apex."""
    if mesh is None or mesh.num_triangles == 0:
        raise errors.EmptyMesh("cannot build a polyhedron from an empty mesh")
    apex_idx = len(mesh.vertices)
    # Reverse each boundary edge so the closed surface is consistently wound.
    side = np.column_stack([
        mesh.boundary_edges[:, 1],
        mesh.boundary_edges[:, 0],
        np.full(len(mesh.boundary_edges), apex_idx, dtype=np.int64),
    ])
    return FreeSpacePolyhedron(
        apex=camera.position.copy(),
        mesh=mesh,
        side_faces=side,
        measured_only=not bool(mesh.virtual_flags.any()),
    )


def signed_distance(poly: FreeSpacePolyhedron, x) -> float:
    """Signed distance to the polyhedron surface: positive inside,
    negative outside, zero (within 1e-9) on the boundary."""
    return float(poly.signed_distance(np.asarray(x, dtype=float).reshape(1, 3))[0])


# ---------------------------------------------------------------------------
# Ray and distance queries
# ---------------------------------------------------------------------------

def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def ray_triangles(origins: np.ndarray, dirs: np.ndarray, tris: np.ndarray):
    """Moller-Trumbore for R rays against T triangles.

    Returns (t, hit, graze): parameters (R, T) with inf where missed, the hit
    mask, and a per-pair mask of hits within BARY_EPS of an edge or of t=0.
    Edge and vertex hits count as hits (closed-triangle convention).
    """
    orig = np.atleast_2d(origins)[:, None, :]
    d = np.atleast_2d(dirs)[:, None, :]
    a = tris[None, :, 0, :]
    e1 = tris[None, :, 1, :] - a
    e2 = tris[None, :, 2, :] - a
    pvec = _cross3(d, e2)
    det = np.einsum("rtj,rtj->rt", e1, pvec)
    ok = np.abs(det) > PARALLEL_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = orig - a
    u = np.einsum("rtj,rtj->rt", tvec, pvec) * inv
    qvec = _cross3(tvec, e1)
    v = np.einsum("rtj,rtj->rt", d, qvec) * inv
    t = np.einsum("rtj,rtj->rt", e2, qvec) * inv
    hit = ok & (u >= -BARY_EPS) & (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS) & (t > BARY_EPS)
    graze = hit & (
        (np.abs(u) <= BARY_EPS) | (np.abs(v) <= BARY_EPS)
        | (np.abs(1.0 - u - v) <= BARY_EPS) | (t <= 10 * BARY_EPS)
    )
    t = np.where(hit, t, np.inf)
    return t, hit, graze


def ray_triangle_intersect(origin, direction, triangle):
    """Smallest positive hit distance of a ray against one triangle, or None.

    Edge and vertex hits resolve as hits within a documented barycentric
    tolerance of 1e-9 (closed-triangle rule).
    """
    d = np.asarray(direction, dtype=float).reshape(3)
    if np.linalg.norm(d) == 0.0:
        raise ValueError("ray direction must be non-zero")
    tri = np.asarray(triangle, dtype=float).reshape(1, 3, 3)
    t, hit, _ = ray_triangles(np.asarray(origin, dtype=float).reshape(1, 3),
                              d.reshape(1, 3), tri)
    if not hit[0, 0]:
        return None
    return float(t[0, 0])


_PARITY_DIR = np.array([0.5773502691896258, 0.5144957554275266, 0.6324555320336759])
_PARITY_DIR = _PARITY_DIR / np.linalg.norm(_PARITY_DIR)


def _parity_contains(tri: np.ndarray, points: np.ndarray, strict: bool = True,
                     max_retries: int = 3) -> np.ndarray:
    """Ray-parity containment for points against a closed triangle soup.

    Boundary-grazing rays are jittered by a fixed small angle and retried up
    to three times; points still grazing after that are resolved by the last
    parity computed.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    inside = np.zeros(n, dtype=bool)
    todo = np.arange(n)
    direction = _PARITY_DIR.copy()
    for attempt in range(max_retries + 1):
        if len(todo) == 0:
            break
        dirs = np.tile(direction, (len(todo), 1))
        crossed = np.zeros(len(todo), dtype=np.int64)
        grazed = np.zeros(len(todo), dtype=bool)
        chunk = 512
        for s in range(0, len(todo), chunk):
            sl = slice(s, min(s + chunk, len(todo)))
            t, hit, graze = ray_triangles(pts[todo[sl]], dirs[sl], tri)
            crossed[sl] = hit.sum(axis=1)
            grazed[sl] = graze.any(axis=1)
        inside[todo] = (crossed % 2) == 1
        if attempt == max_retries:
            break
        todo = todo[grazed]
        # Deterministic jitter: rotate the ray by a fixed epsilon per retry.
        axis = np.array([1.0, 0.0, 0.0]) if attempt % 2 == 0 else np.array([0.0, 1.0, 0.0])
        direction = _rotate_about(direction, axis, GRAZE_JITTER * (attempt + 1))
    if strict and len(pts) > 0:
        surf = point_triangle_distance(pts, tri).min(axis=1)
        inside &= surf > ON_SURFACE_TOL
    return inside


def _rotate_about(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)


def point_triangle_distance(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Distances from P points to T triangles, shape (P, T).

    Closest-point-on-triangle with clamped barycentric regions; degenerate
    triangles must be filtered out by the caller.
    """
    p = np.atleast_2d(points)[:, None, :]
    a = tris[None, :, 0, :]
    b = tris[None, :, 1, :]
    c = tris[None, :, 2, :]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ptj,ptj->pt", ab, ap)
    d2 = np.einsum("ptj,ptj->pt", ac, ap)
    bp = p - b
    d3 = np.einsum("ptj,ptj->pt", ab, bp)
    d4 = np.einsum("ptj,ptj->pt", ac, bp)
    cp = p - c
    d5 = np.einsum("ptj,ptj->pt", ab, cp)
    d6 = np.einsum("ptj,ptj->pt", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    eps = 1e-300
    v_ab = d1 / np.where(np.abs(d1 - d3) < eps, eps, d1 - d3)
    w_ac = d2 / np.where(np.abs(d2 - d6) < eps, eps, d2 - d6)
    denom_bc = (d4 - d3) + (d5 - d6)
    w_bc = (d4 - d3) / np.where(np.abs(denom_bc) < eps, eps, denom_bc)
    denom = va + vb + vc
    denom = np.where(np.abs(denom) < eps, eps, denom)
    v_in = vb / denom
    w_in = vc / denom

    close = a + ab * v_in[..., None] + ac * w_in[..., None]

    # Region cascade (Ericson, Real-Time Collision Detection 5.1.5).
    region_a = (d1 <= 0) & (d2 <= 0)
    region_b = (d3 >= 0) & (d4 <= d3)
    region_c = (d6 >= 0) & (d5 <= d6)
    region_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    region_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    region_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)

    out = close
    out = np.where(region_bc[..., None], b + (c - b) * w_bc[..., None], out)
    out = np.where(region_ac[..., None], a + ac * w_ac[..., None], out)
    out = np.where(region_ab[..., None], a + ab * v_ab[..., None], out)
    out = np.where(region_c[..., None], c, out)
    out = np.where(region_b[..., None], b, out)
    out = np.where(region_a[..., None], a, out)
    return np.linalg.norm(p - out, axis=2)


def point_segment_distance(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distances from P points to one segment."""
    pts = np.atleast_2d(points)
    d = seg_b - seg_a
    denom = float(np.dot(d, d))
    if denom < 1e-18:
        return np.linalg.norm(pts - seg_a, axis=1)
    t = np.clip((pts - seg_a) @ d / denom, 0.0, 1.0)
    proj = seg_a + t[:, None] * d
    return np.linalg.norm(pts - proj, axis=1)
