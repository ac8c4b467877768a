"""Sphere-graph mapping from sparse parallax-gated depth points.

Per-frame update pipeline: open-area virtual depth candidates, depth mesh and
free-space polyhedra, distance-weighted obstacle filtering, sphere radius
updates, new-sphere sampling, and intersection-graph maintenance with
redundancy sparsification.

Two polyhedra are carried per frame: the measured-only one drives obstacle
deletion (virtual free space must never erase mapped obstacles), while the
full one (measured plus virtual) drives radius growth, sphere sampling and
frontier generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DepthMesh,
    FreeSpacePolyhedron,
    PinholeCamera,
    Pose,
    build_depth_mesh,
    build_polyhedron,
    ray_triangles,
)
from . import errors
from .sensor_sim import BASELINE_EPS, FrameObservation


def _default_ovde_offsets():
    """Camera-frame probe offsets: range shells on a FoV-inscribed direction
    grid (azimuth/elevation in the body frame, x forward)."""
    offsets = []
    for r in (4.0, 8.0, 12.0):
        for az_deg in (-40.0, 0.0, 40.0):
            for el_deg in (-25.0, 0.0, 25.0):
                az, el = math.radians(az_deg), math.radians(el_deg)
                offsets.append((r * math.cos(el) * math.cos(az),
                                r * math.cos(el) * math.sin(az),
                                r * math.sin(el)))
    return offsets


@dataclass
class MapConfig:
    gamma: float = 0.3            # stability threshold (m), shared with the sensor
    xi: float = 0.3               # obstacle map resolution (m)
    alpha: float = 1.1            # deletion guard factor on min observation distance
    r_min: float = 0.5            # smallest allowed sphere radius (m)
    n_sphere_samples: int = 30    # new-sphere candidates per frame
    sigma0: float = 0.01          # noise coefficient used by the parallax gate
    ovde_offsets: list = field(default_factory=_default_ovde_offsets)
    ovde_history: int = 30        # previous poses considered by the parallax gate
    theta_occ: float = math.radians(10.0)  # obstacle-direction cone half-angle
    pose_history_cap: int = 400
    audit: bool = True

    def __post_init__(self):
        if self.alpha < 1.0:
            raise errors.MalformedConfig("alpha must be >= 1")
        if self.r_min <= 0 or self.xi <= 0:
            raise errors.MalformedConfig("r_min and xi must be positive")


# ---------------------------------------------------------------------------
# Map containers
# ---------------------------------------------------------------------------

class Sphere:
    """Free-space atom: immutable center, mutable radius."""

    __slots__ = ("id", "center", "radius")

    def __init__(self, sid: int, center, radius: float):
        self.id = sid
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.radius = float(radius)

    def __repr__(self):
        return f"Sphere(id={self.id}, c={self.center.round(2).tolist()}, r={self.radius:.2f})"


class SphereGraph:
    """Spheres plus an edge for every intersecting pair."""

    def __init__(self):
        self.spheres: dict[int, Sphere] = {}
        self.adj: dict[int, set[int]] = {}
        self._next_id = 0
        self._arrays = None

    def __len__(self):
        return len(self.spheres)

    def add_sphere(self, center, radius: float) -> int:
        sid = self._next_id
        self._next_id += 1
        self.spheres[sid] = Sphere(sid, center, radius)
        self.adj[sid] = set()
        self._arrays = None
        return sid

    def remove_sphere(self, sid: int):
        for nb in self.adj.pop(sid, ()):
            self.adj[nb].discard(sid)
        del self.spheres[sid]
        self._arrays = None

    def set_radius(self, sid: int, radius: float):
        self.spheres[sid].radius = float(radius)
        self._arrays = None

    def arrays(self):
        """(ids, centers, radii) snapshot arrays in ascending id order."""
        if self._arrays is None:
            ids = np.array(sorted(self.spheres), dtype=np.int64)
            if len(ids):
                centers = np.stack([self.spheres[int(i)].center for i in ids])
                radii = np.array([self.spheres[int(i)].radius for i in ids])
            else:
                centers = np.zeros((0, 3))
                radii = np.zeros(0)
            self._arrays = (ids, centers, radii)
        return self._arrays

    def edges(self) -> list[tuple[int, int]]:
        out = []
        for i in sorted(self.adj):
            for j in self.adj[i]:
                if i < j:
                    out.append((i, j))
        return out

    def recompute_edges_for(self, sids):
        ids, centers, radii = self.arrays()
        for sid in sids:
            if sid not in self.spheres:
                continue
            s = self.spheres[sid]
            d = np.linalg.norm(centers - s.center, axis=1)
            hit = d < (radii + s.radius)
            new_nb = {int(i) for i in ids[hit] if int(i) != sid}
            for old in self.adj[sid] - new_nb:
                self.adj[old].discard(sid)
            for nb in new_nb:
                self.adj[nb].add(sid)
            self.adj[sid] = new_nb

    def brute_force_edges(self) -> set[tuple[int, int]]:
        ids, centers, radii = self.arrays()
        out = set()
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                if np.linalg.norm(centers[a] - centers[b]) < radii[a] + radii[b]:
                    out.add((int(ids[a]), int(ids[b])))
        return out

    def containing(self, point) -> list[int]:
        """Ids of spheres whose interior contains the point, nearest-surface
        first."""
        ids, centers, radii = self.arrays()
        if len(ids) == 0:
            return []
        p = np.asarray(point, dtype=float).reshape(3)
        d = np.linalg.norm(centers - p, axis=1)
        inside = d < radii
        order = np.argsort(d[inside] - radii[inside])
        return [int(i) for i in ids[inside][order]]


class ObstacleMap:
    """3D obstacle points, each carrying the minimum distance it was ever
    observed from, kept at pairwise spacing >= xi."""

    def __init__(self, xi: float):
        self.xi = float(xi)
        self._pos: list[np.ndarray] = []
        self._dm: list[float] = []
        self._alive: list[bool] = []
        self._cells: dict[tuple[int, int, int], list[int]] = {}
        self._arrays = None

    def __len__(self):
        return sum(self._alive)

    def _cell(self, p) -> tuple[int, int, int]:
        return tuple(int(math.floor(c / self.xi)) for c in p)

    def insert(self, position, d_m: float) -> int:
        idx = len(self._pos)
        p = np.asarray(position, dtype=float).reshape(3)
        self._pos.append(p)
        self._dm.append(float(d_m))
        self._alive.append(True)
        self._cells.setdefault(self._cell(p), []).append(idx)
        self._arrays = None
        return idx

    def delete(self, idx: int):
        if self._alive[idx]:
            self._alive[idx] = False
            self._arrays = None

    def d_m(self, idx: int) -> float:
        return self._dm[idx]

    def position(self, idx: int) -> np.ndarray:
        return self._pos[idx]

    def is_alive(self, idx: int) -> bool:
        return self._alive[idx]

    def query_radius(self, center, radius: float) -> list[int]:
        cx, cy, cz = float(center[0]), float(center[1]), float(center[2])
        lo = (math.floor((cx - radius) / self.xi), math.floor((cy - radius) / self.xi),
              math.floor((cz - radius) / self.xi))
        hi = (math.floor((cx + radius) / self.xi), math.floor((cy + radius) / self.xi),
              math.floor((cz + radius) / self.xi))
        out = []
        c = (cx, cy, cz)
        for ix in range(lo[0], hi[0] + 1):
            for iy in range(lo[1], hi[1] + 1):
                for iz in range(lo[2], hi[2] + 1):
                    for idx in self._cells.get((ix, iy, iz), ()):
                        if self._alive[idx] and math.dist(self._pos[idx], c) <= radius:
                            out.append(idx)
        return out

    def arrays(self):
        """(positions, d_m, indices) over alive points."""
        if self._arrays is None:
            idx = np.array([i for i, a in enumerate(self._alive) if a], dtype=np.int64)
            if len(idx):
                pos = np.stack([self._pos[int(i)] for i in idx])
                dm = np.array([self._dm[int(i)] for i in idx])
            else:
                pos = np.zeros((0, 3))
                dm = np.zeros(0)
            self._arrays = (pos, dm, idx)
        return self._arrays

    def min_spacing(self) -> float:
        pos, _, _ = self.arrays()
        if len(pos) < 2:
            return math.inf
        best = math.inf
        for i in range(len(pos)):
            d = np.linalg.norm(pos[i + 1:] - pos[i], axis=1)
            if len(d):
                best = min(best, float(d.min()))
        return best


# ---------------------------------------------------------------------------
# Open-area virtual depth
# ---------------------------------------------------------------------------

def ovde_virtual_points(pose_history, frame: FrameObservation, config: MapConfig,
                        camera: PinholeCamera, map_points=None) -> list[np.ndarray]:
    """Virtual free-space points accepted this frame.

    A candidate (fixed camera-frame offset) is accepted iff
      (a) it is in the field of view now and at >= 1 recent pose with enough
          perpendicular baseline for the parallax gate at threshold gamma,
      (b) no tracked point and no mapped obstacle point lies within the
          theta_occ cone around its sightline at smaller range, and
      (c) its image projection falls outside the convex hull of the current
          stable points' projections (measured interpolation wins there).
    """
    now = frame.pose
    offsets = np.asarray(config.ovde_offsets, dtype=float)
    if len(offsets) == 0 or len(pose_history) == 0:
        return []
    candidates = now.to_world(offsets)
    _, _, in_fov = camera.project(now, candidates)
    candidates = candidates[in_fov]
    if len(candidates) == 0:
        return []

    past = pose_history[:-1][-config.ovde_history:]
    cam = now.position
    rel_c = candidates - cam
    dist = np.linalg.norm(rel_c, axis=1)
    rays = rel_c / dist[:, None]
    keep = np.ones(len(candidates), dtype=bool)

    # (c) reject candidates projecting into the measured triangulation.
    hull = _convex_hull_2d(_project_uv(now, frame.stable_positions)) \
        if len(frame.stable_positions) >= 3 else None
    if hull is not None:
        uv = _project_uv(now, candidates)
        a = hull
        b = np.roll(hull, -1, axis=0)
        cross = ((b[:, 0] - a[:, 0])[None, :] * (uv[:, 1][:, None] - a[:, 1][None, :])
                 - (b[:, 1] - a[:, 1])[None, :] * (uv[:, 0][:, None] - a[:, 0][None, :]))
        keep &= ~np.all(cross >= -1e-12, axis=1)

    # (b) any closer tracked or mapped point near the sightline blocks it.
    obs_pos = frame.est_positions
    if map_points is not None and len(map_points):
        obs_pos = np.vstack([obs_pos, map_points]) if len(obs_pos) else np.asarray(map_points)
    if len(obs_pos):
        cos_occ = math.cos(config.theta_occ)
        rel_o = obs_pos - cam
        rng = np.linalg.norm(rel_o, axis=1)
        safe = np.maximum(rng, 1e-9)
        cosang = (rays @ rel_o.T) / safe[None, :]
        blocked = (cosang >= cos_occ) & (rng[None, :] < dist[:, None])
        keep &= ~blocked.any(axis=1)

    # (a) parallax gate against at least one recent pose seeing the point.
    parallax_ok = np.zeros(len(candidates), dtype=bool)
    todo = keep.copy()
    for q in past:
        if not np.any(todo):
            break
        _, _, fov_q = camera.project(q, candidates)
        disp = q.position - cam
        perp = disp[None, :] - (rays @ disp)[:, None] * rays
        b_perp = np.maximum(np.linalg.norm(perp, axis=1), BASELINE_EPS)
        sigma = config.sigma0 * dist * dist / b_perp
        good = fov_q & (sigma <= config.gamma)
        parallax_ok |= todo & good
        todo &= ~good
    keep &= parallax_ok
    return [candidates[i] for i in np.nonzero(keep)[0]]


def _project_uv(pose: Pose, points):
    pts = np.atleast_2d(points)
    if len(pts) == 0:
        return np.zeros((0, 2))
    body = pose.to_body(pts)
    x = np.maximum(body[:, 0], 1e-9)
    return np.column_stack([-body[:, 1] / x, -body[:, 2] / x])


def _convex_hull_2d(pts: np.ndarray):
    """Andrew's monotone chain; returns hull vertices CCW or None if flat."""
    pts = np.unique(np.round(pts, 12), axis=0)
    if len(pts) < 3:
        return None
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    p = pts[order]

    def cross2(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(iterable):
        out = []
        for q in iterable:
            while len(out) >= 2 and cross2(out[-2], out[-1], q) <= 1e-15:
                out.pop()
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return None
    return hull


def _point_in_hull(uv, hull) -> bool:
    a = hull
    b = np.roll(hull, -1, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (uv[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (uv[0] - a[:, 0])
    return bool(np.all(cross >= -1e-12))


# ---------------------------------------------------------------------------
# Per-frame polyhedra
# ---------------------------------------------------------------------------

def build_frame_polyhedra(frame: FrameObservation, virtual_points,
                          camera_pose: Pose, camera: PinholeCamera):
    """(measured-only, full) free-space polyhedra for the frame; either may
    be None when too few usable points remain."""
    stable = frame.stable_positions
    stable = stable[camera_pose.to_body(stable)[:, 0] > 0.05] if len(stable) else stable

    p_meas = _try_polyhedron(stable, None, camera_pose, camera)
    virtual = np.asarray(virtual_points, dtype=float).reshape(-1, 3)
    if len(virtual) == 0:
        return p_meas, p_meas
    merged = np.vstack([stable, virtual]) if len(stable) else virtual
    flags = np.concatenate([np.zeros(len(stable), bool), np.ones(len(virtual), bool)])
    p_full = _try_polyhedron(merged, flags, camera_pose, camera)
    if p_full is None:
        p_full = p_meas
    return p_meas, p_full


def _try_polyhedron(points, flags, pose, camera):
    if len(points) < 3:
        return None
    try:
        mesh = build_depth_mesh(points, pose, camera, virtual_flags=flags)
        return build_polyhedron(mesh, pose)
    except (errors.AllCollinear, errors.FewerThanThreePoints, errors.PointBehindCamera):
        return None


# ---------------------------------------------------------------------------
# Distance-weighted obstacle filtering
# ---------------------------------------------------------------------------

def dbof_update(omap: ObstacleMap, p_meas, frame: FrameObservation,
                camera_pose: Pose, config: MapConfig, no_dbof: bool = False):
    """Delete, protect and insert obstacle points for one frame.

    Deletion: a mapped point inside the measured polyhedron goes away iff the
    camera is closer to it than alpha times its minimum observation distance
    (with no_dbof, any point inside the polyhedron goes away). Survivors
    inside the polyhedron are returned as the protected set. Insertion: each
    stable tracked point is added unless a point with a smaller-or-equal
    minimum observation distance lies within xi; existing points with larger
    values within xi of the newcomer are replaced (with no_dbof there is no
    distance preference, first point in a xi-ball wins).

    Returns (deleted indices, protected positions (K,3), inserted positions).
    """
    cam = camera_pose.position
    deleted: list[int] = []
    protected: list[np.ndarray] = []

    if p_meas is not None and len(omap):
        pos, dm, idx = omap.arrays()
        lo, hi = p_meas.aabb
        in_box = np.all((pos >= lo - 1e-9) & (pos <= hi + 1e-9), axis=1)
        if np.any(in_box):
            inside = p_meas.contains(pos[in_box], strict=True)
            box_idx = idx[in_box]
            cam_dist = np.linalg.norm(pos[in_box] - cam, axis=1)
            for k in np.nonzero(inside)[0]:
                i = int(box_idx[k])
                if no_dbof or cam_dist[k] < config.alpha * dm[in_box][k]:
                    omap.delete(i)
                    deleted.append(i)
                else:
                    protected.append(omap.position(i))

    inserted: list[np.ndarray] = []
    stable_pos = frame.stable_positions
    stable_dm = frame.stable_d_min
    if len(stable_pos):
        fid = frame.feature_ids[frame.stable_mask]
        order = np.lexsort((fid, stable_dm))
        for k in order:
            p = stable_pos[int(k)]
            d = float(stable_dm[int(k)])
            nearby = omap.query_radius(p, config.xi)
            if no_dbof:
                if nearby:
                    continue
            else:
                if any(omap.d_m(i) <= d for i in nearby):
                    continue
                for i in nearby:
                    if omap.d_m(i) > d:
                        omap.delete(i)
                        deleted.append(i)
            omap.insert(p, d)
            inserted.append(p)

    prot_arr = np.stack(protected) if protected else np.zeros((0, 3))
    return deleted, prot_arr, inserted


# ---------------------------------------------------------------------------
# Sphere updates
# ---------------------------------------------------------------------------

def _touched_ids(graph: SphereGraph, p_full) -> list[int]:
    ids, centers, _ = graph.arrays()
    if len(ids) == 0:
        return []
    _, _, radii = graph.arrays()
    r_max = float(radii.max()) if len(radii) else 0.0
    lo, hi = p_full.aabb
    lo = lo - r_max
    hi = hi + r_max
    m = np.all((centers >= lo) & (centers <= hi), axis=1)
    return [int(i) for i in ids[m]]


def _min_constraint_distance(points: np.ndarray, constraints: np.ndarray) -> np.ndarray:
    if constraints is None or len(constraints) == 0:
        return np.full(len(points), np.inf)
    out = np.empty(len(points))
    chunk = 256
    for s in range(0, len(points), chunk):
        sl = slice(s, min(s + chunk, len(points)))
        d = np.linalg.norm(points[sl][:, None, :] - constraints[None, :, :], axis=2)
        out[sl] = d.min(axis=1)
    return out


def update_sphere_radii(graph: SphereGraph, p_full: FreeSpacePolyhedron,
                        constraints, config: MapConfig):
    """Radius update r <- min(max(r, d(c, polyhedron)), d(c, constraints))
    for every sphere whose center falls inside the polyhedron's bounding box
    inflated by the map's largest radius. Spheres ending below r_min are
    deleted. Mutates the graph; returns (graph, ids whose radius actually
    changed, deleted ids)."""
    touched = _touched_ids(graph, p_full)
    if not touched:
        return graph, [], []
    centers = np.stack([graph.spheres[i].center for i in touched])
    radii = np.array([graph.spheres[i].radius for i in touched])
    d_poly = p_full.signed_distance(centers)
    cons = np.asarray(constraints, dtype=float).reshape(-1, 3) if constraints is not None else None
    d_con = _min_constraint_distance(centers, cons)
    r_new = np.minimum(np.maximum(radii, d_poly), d_con)
    deleted = []
    changed = []
    for sid, r_old, r in zip(touched, radii, r_new):
        if r < config.r_min:
            graph.remove_sphere(sid)
            deleted.append(sid)
        elif abs(r - r_old) > 1e-12:
            graph.set_radius(sid, float(r))
            changed.append(sid)
    return graph, changed, deleted


def sample_new_spheres(p_full: FreeSpacePolyhedron, mesh: DepthMesh,
                       camera_pose: Pose, constraints, config: MapConfig,
                       rng: np.random.Generator, camera: PinholeCamera):
    """Candidate spheres inside the polyhedron: uniform directions in the
    FoV, uniform distance between the camera and the mesh hit along each
    direction, radius from the same update rule with r = 0. Returns a list
    of (center, radius) with radius >= r_min."""
    n = config.n_sphere_samples
    if n <= 0 or mesh is None or mesh.num_triangles == 0:
        return []
    u = rng.uniform(-camera.tan_h, camera.tan_h, size=n)
    v = rng.uniform(-camera.tan_v, camera.tan_v, size=n)
    dirs = camera.direction_from_uv(camera_pose, np.column_stack([u, v]))
    tri = mesh.triangle_coords()
    t, hit, _ = ray_triangles(np.tile(camera_pose.position, (n, 1)), dirs, tri)
    t_hit = t.min(axis=1)
    ok = np.isfinite(t_hit)
    if not np.any(ok):
        return []
    dist = rng.uniform(0.0, 1.0, size=n) * np.where(ok, t_hit, 0.0)
    centers = camera_pose.position + dirs * dist[:, None]
    centers = centers[ok]
    d_poly = p_full.signed_distance(centers)
    cons = np.asarray(constraints, dtype=float).reshape(-1, 3) if constraints is not None else None
    d_con = _min_constraint_distance(centers, cons)
    radius = np.minimum(np.maximum(np.zeros(len(centers)), d_poly), d_con)
    out = []
    for c, r in zip(centers, radius):
        if r >= config.r_min:
            out.append((c, float(r)))
    return out


# ---------------------------------------------------------------------------
# Graph sparsification
# ---------------------------------------------------------------------------

_RHO_FRACS = tuple(k / 12.0 for k in range(1, 13))


def _ball_pair_covers(c, r, c1, r1, c2, r2, tol=1e-9) -> bool:
    """Sufficient test that ball (c, r) lies inside the union of two balls,
    evaluated in closed form on a fixed radius grid. Scalar math only (hot
    path)."""
    d1x, d1y, d1z = c1[0] - c[0], c1[1] - c[1], c1[2] - c[2]
    d1 = math.sqrt(d1x * d1x + d1y * d1y + d1z * d1z)
    vx, vy, vz = c[0] - c2[0], c[1] - c2[1], c[2] - c2[2]
    vn = math.sqrt(vx * vx + vy * vy + vz * vz)
    for frac in _RHO_FRACS:
        rho = r * frac
        if rho + d1 <= r1 + tol:
            continue
        if d1 < 1e-12:
            tau = 1.0
            u1x, u1y, u1z = 1.0, 0.0, 0.0
        else:
            u1x, u1y, u1z = d1x / d1, d1y / d1, d1z / d1
            tau = (d1 * d1 + rho * rho - r1 * r1) / (2.0 * rho * d1)
            if tau <= -1.0:
                continue
            tau = min(tau, 1.0)
        if vn < 1e-12:
            worst = rho
        else:
            cos_vu = (vx * u1x + vy * u1y + vz * u1z) / vn
            if cos_vu <= tau:
                worst = vn + rho
            else:
                vpar = vx * u1x + vy * u1y + vz * u1z
                vperp = math.sqrt(max(vn * vn - vpar * vpar, 0.0))
                worst = math.hypot(vpar + rho * tau,
                                   vperp + rho * math.sqrt(max(1 - tau * tau, 0.0)))
        if worst > r2 + tol:
            return False
    return True


def _is_redundant(graph: SphereGraph, sid: int) -> bool:
    s = graph.spheres[sid]
    nbs = sorted(graph.adj[sid])
    depth = []
    for nb in nbs:
        o = graph.spheres[nb]
        d = math.dist(s.center, o.center)
        if d + s.radius <= o.radius + 1e-9:
            return True
        depth.append((d - o.radius, nb))
    # Deepest-overlapping neighbors are the best pair-cover candidates.
    depth.sort()
    near = [nb for _, nb in depth[:8]]
    for ai in range(len(near)):
        a = graph.spheres[near[ai]]
        for bi in range(ai + 1, len(near)):
            b = graph.spheres[near[bi]]
            if _ball_pair_covers(s.center, s.radius, a.center, a.radius, b.center, b.radius):
                return True
    return False


def _removal_disconnects(graph: SphereGraph, sid: int) -> bool:
    nbs = sorted(graph.adj[sid])
    if len(nbs) <= 1:
        return False
    nb_set = set(nbs)
    seen = {nbs[0]}
    stack = [nbs[0]]
    while stack:
        cur = stack.pop()
        for nxt in graph.adj[cur]:
            if nxt in nb_set and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) != len(nbs)


def recompute_graph_and_sparsify(graph: SphereGraph, touched_ids, config: MapConfig):
    """Refresh intersection edges for the touched spheres, then delete the
    ones whose ball is covered by at most two neighbors, unless removal
    would disconnect the neighbors' local subgraph. Returns removed ids."""
    live = [i for i in touched_ids if i in graph.spheres]
    graph.recompute_edges_for(live)
    removed = []
    order = sorted(live, key=lambda i: (graph.spheres[i].radius, i))
    for sid in order:
        if sid not in graph.spheres:
            continue
        if _is_redundant(graph, sid) and not _removal_disconnects(graph, sid):
            neighbors = list(graph.adj[sid])
            graph.remove_sphere(sid)
            graph.recompute_edges_for(neighbors)
            removed.append(sid)
    return removed


# ---------------------------------------------------------------------------
# Full update pipeline
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MapDelta:
    frame_index: int
    skipped: bool = False
    p_meas: FreeSpacePolyhedron | None = None
    p_full: FreeSpacePolyhedron | None = None
    virtual_points: list = field(default_factory=list)
    obstacle_deleted: list = field(default_factory=list)
    obstacle_inserted: list = field(default_factory=list)
    protected: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    spheres_touched: list = field(default_factory=list)
    spheres_added: list = field(default_factory=list)
    spheres_deleted: list = field(default_factory=list)


@dataclass(eq=False)
class MapSnapshot:
    """Immutable view handed to planners and metrics."""

    frame_index: int
    sphere_ids: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    edges: list
    adjacency: dict
    obstacle_positions: np.ndarray
    obstacle_dm: np.ndarray

    def containing_spheres(self, point) -> list[int]:
        if len(self.sphere_ids) == 0:
            return []
        p = np.asarray(point, dtype=float).reshape(3)
        d = np.linalg.norm(self.centers - p, axis=1)
        inside = d < self.radii
        order = np.argsort(d[inside] - self.radii[inside])
        return [int(i) for i in self.sphere_ids[inside][order]]


class SphereMap:
    """Single-writer map state; planners read immutable snapshots."""

    def __init__(self, config: MapConfig, camera: PinholeCamera, seed: int = 0):
        self.config = config
        self.camera = camera
        self.graph = SphereGraph()
        self.omap = ObstacleMap(config.xi)
        self.pose_history: list[Pose] = []
        self.rng = np.random.default_rng((int(seed), 9221))
        self.frame_index = 0
        self.last_p_full: FreeSpacePolyhedron | None = None
        self.last_mesh_full: DepthMesh | None = None
        self.safety_violations = 0
        self.watertight_failures = 0
        self.frames_with_polyhedron = 0

    def update(self, frame: FrameObservation, ablations=frozenset()) -> MapDelta:
        cfg = self.config
        self.pose_history.append(frame.pose)
        if len(self.pose_history) > cfg.pose_history_cap:
            self.pose_history = self.pose_history[-cfg.pose_history_cap:]
        delta = MapDelta(frame_index=self.frame_index)
        self.frame_index += 1

        no_ovde = "no_ovde" in ablations
        no_dbof = "no_dbof" in ablations

        virtual = []
        if not no_ovde:
            map_pos, _, _ = self.omap.arrays()
            virtual = ovde_virtual_points(self.pose_history, frame, cfg,
                                          self.camera, map_points=map_pos)
        delta.virtual_points = virtual

        p_meas, p_full = build_frame_polyhedra(frame, virtual, frame.pose, self.camera)
        delta.p_meas, delta.p_full = p_meas, p_full
        if p_full is not None:
            self.last_p_full = p_full
            self.last_mesh_full = p_full.mesh

        deleted, protected, inserted = dbof_update(
            self.omap, p_meas, frame, frame.pose, cfg, no_dbof=no_dbof)
        delta.obstacle_deleted = deleted
        delta.obstacle_inserted = inserted
        delta.protected = protected

        if p_full is None:
            # No polyhedron this frame: still shrink spheres against any
            # freshly inserted points so no obstacle ends up inside a sphere.
            if inserted:
                self._constrain_only(np.asarray(inserted, dtype=float).reshape(-1, 3))
            delta.skipped = p_meas is None and len(inserted) == 0
            return delta

        constraints = self._assemble_constraints(p_full, inserted, protected)
        _, touched, sph_deleted = update_sphere_radii(self.graph, p_full, constraints, cfg)
        new_spheres = sample_new_spheres(p_full, p_full.mesh, frame.pose,
                                         constraints, cfg, self.rng, self.camera)
        new_ids = [self.graph.add_sphere(c, r)
                   for c, r in self._admit_candidates(new_spheres)]
        removed = recompute_graph_and_sparsify(self.graph, touched + new_ids, cfg)

        delta.spheres_touched = touched
        delta.spheres_added = [i for i in new_ids if i in self.graph.spheres]
        delta.spheres_deleted = sph_deleted + removed

        if cfg.audit:
            self._audit(touched + new_ids, p_full)
        return delta

    def _constrain_only(self, points: np.ndarray):
        ids, centers, radii = self.graph.arrays()
        if len(ids) == 0:
            return
        touched = []
        for sid, c, r in zip(ids, centers, radii):
            d = float(np.linalg.norm(points - c, axis=1).min())
            if d < r:
                if d < self.config.r_min:
                    self.graph.remove_sphere(int(sid))
                else:
                    self.graph.set_radius(int(sid), d)
                    touched.append(int(sid))
        if touched:
            recompute_graph_and_sparsify(self.graph, touched, self.config)

    def _admit_candidates(self, new_spheres):
        """Drop dominated candidates: a sphere whose center already lies in
        an existing sphere must beat its host's radius by 10% to be worth
        keeping. Bounds the sphere count where the robot lingers; candidates
        with centers in uncovered space are always admitted."""
        ids, centers, radii = self.graph.arrays()
        centers = list(centers)
        radii = list(radii)
        out = []
        for c, r in new_spheres:
            if centers:
                d = np.linalg.norm(np.asarray(centers) - c, axis=1)
                inside = d < np.asarray(radii)
                if np.any(inside):
                    host = float(np.asarray(radii)[inside].max())
                    if r <= 1.1 * host:
                        continue
            out.append((c, r))
            centers.append(np.asarray(c, dtype=float))
            radii.append(r)
        return out

    def _assemble_constraints(self, p_full, inserted, protected) -> np.ndarray:
        """Constraint set for the radius rule: this frame's inserted points,
        the protected set, and every mapped obstacle point near the
        polyhedron (the latter keeps radius growth from ever swallowing a
        mapped point that only the virtual free space covers)."""
        ids, centers, radii = self.graph.arrays()
        r_max = float(radii.max()) if len(radii) else 0.0
        lo, hi = p_full.aabb
        pos, _, _ = self.omap.arrays()
        parts = []
        if len(pos):
            m = np.all((pos >= lo - r_max) & (pos <= hi + r_max), axis=1)
            parts.append(pos[m])
        if len(inserted):
            parts.append(np.asarray(inserted, dtype=float).reshape(-1, 3))
        if len(protected):
            parts.append(np.asarray(protected, dtype=float).reshape(-1, 3))
        if not parts:
            return np.zeros((0, 3))
        return np.vstack(parts)

    def _audit(self, sphere_ids, p_full):
        if p_full is not None:
            self.frames_with_polyhedron += 1
            if not p_full.is_watertight():
                self.watertight_failures += 1
        for sid in sphere_ids:
            s = self.graph.spheres.get(sid)
            if s is None:
                continue
            close = self.omap.query_radius(s.center, s.radius - 1e-6)
            if close:
                self.safety_violations += len(close)

    def snapshot(self) -> MapSnapshot:
        ids, centers, radii = self.graph.arrays()
        pos, dm, _ = self.omap.arrays()
        return MapSnapshot(
            frame_index=self.frame_index,
            sphere_ids=ids.copy(),
            centers=centers.copy(),
            radii=radii.copy(),
            edges=self.graph.edges(),
            adjacency={i: sorted(self.graph.adj[i]) for i in sorted(self.graph.adj)},
            obstacle_positions=pos.copy(),
            obstacle_dm=dm.copy(),
        )
