"""Perception-coupled exploration on the sphere graph.

Frontier points are sampled on the per-frame free-space polyhedron and must
stay anchored near mapped obstacle points (texture anchoring); viewpoints are
placed at a standoff from frontier clusters inside free spheres; a greedy
next-best-view choice balances frontier count against clearance-weighted path
cost. Heading control keeps the camera on the velocity vector except for a
terminal arc where it locks onto the viewpoint heading, and visited
viewpoints block nearby future candidates.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .geometry import Pose, point_segment_distance
from .sphere_map import MapSnapshot


@dataclass
class PlanConfig:
    zeta_near: float = 1.0        # frontier spacing from obstacles and frontiers
    zeta_far: float = 4.0         # texture anchoring: max distance to an obstacle
    d_c: float = 2.0              # terminal alignment arc length (m)
    d_safe: float = 1.5           # min clearance from obstacle points (m)
    r_block: float = 3.0          # blocking radius around visited viewpoints
    theta_block: float = math.radians(45.0)
    lambda_clear: float = 0.5     # clearance weight in edge costs
    bbox: np.ndarray | None = None
    robot_radius: float = 0.4
    guard_margin: float = 0.3
    guard_lookahead: float = 2.0  # seconds of trajectory checked by the guard
    max_speed: float = 2.0
    max_yaw_rate: float = 1.5
    frontier_samples: int = 40
    standoff_min: float = 2.0
    standoff_max: float = 6.0
    reach_pos_tol: float = 0.7
    reach_yaw_tol: float = 0.35
    mission_end_ticks: int = 10
    start_snap: float = 0.75      # leeway when the robot sits just outside a sphere

    def __post_init__(self):
        if self.zeta_near >= self.zeta_far:
            raise errors.MalformedConfig("zeta_near must be < zeta_far")
        if self.d_c <= 0 or self.d_safe <= 0:
            raise errors.MalformedConfig("d_c and d_safe must be positive")


@dataclass(eq=False)
class FrontierPoint:
    position: np.ndarray
    created_at: int


@dataclass(eq=False)
class Viewpoint:
    id: int
    position: np.ndarray
    heading: np.ndarray          # unit 3-vector
    state: str = "candidate"     # candidate | active | visited | blocked
    target_frontiers: list = field(default_factory=list)

    @property
    def yaw(self) -> float:
        return math.atan2(self.heading[1], self.heading[0])


@dataclass(eq=False)
class TrajectorySegment:
    """Time-parameterized waypoint list (position, yaw, time)."""

    times: np.ndarray
    positions: np.ndarray
    yaws: np.ndarray
    terminal_alignment: bool

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def sample(self, t: float):
        ts = self.times
        if t <= ts[0]:
            return self.positions[0].copy(), float(self.yaws[0])
        if t >= ts[-1]:
            return self.positions[-1].copy(), float(self.yaws[-1])
        i = int(np.searchsorted(ts, t, side="right")) - 1
        span = ts[i + 1] - ts[i]
        a = 0.0 if span <= 0 else (t - ts[i]) / span
        pos = self.positions[i] * (1 - a) + self.positions[i + 1] * a
        yaw = self.yaws[i] + _wrap_angle(self.yaws[i + 1] - self.yaws[i]) * a
        return pos, float(_wrap_to_pi(yaw))

    def sample_positions(self, t0: float, t1: float, dt: float = 0.1) -> np.ndarray:
        ts = np.arange(t0, min(t1, self.t_end) + 1e-9, dt)
        if len(ts) == 0:
            ts = np.array([t0])
        return np.stack([self.sample(t)[0] for t in ts])

    def terminal_yaw_change(self, d_c: float) -> float:
        """Integrated |yaw change| strictly inside the final d_c of arc
        length. The alignment dwell sits exactly at the d_c boundary (or at
        zero arc traveled for paths shorter than d_c) and is excluded."""
        seg = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        arc_from_end = np.concatenate([[0.0], np.cumsum(seg[::-1])])[::-1]
        total_arc = float(seg.sum())
        out = 0.0
        for i in range(len(seg)):
            moved = total_arc - arc_from_end[i]
            if arc_from_end[i] < d_c - 1e-9 and moved > 1e-9:
                out += abs(_wrap_angle(self.yaws[i + 1] - self.yaws[i]))
        return out


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def _wrap_to_pi(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# Frontiers
# ---------------------------------------------------------------------------

def _min_dist(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-point min distance to a target set (inf when empty), chunked."""
    if targets is None or len(targets) == 0:
        return np.full(len(points), np.inf)
    out = np.empty(len(points))
    chunk = 512
    for s in range(0, len(points), chunk):
        sl = slice(s, min(s + chunk, len(points)))
        d = np.linalg.norm(points[sl][:, None, :] - targets[None, :, :], axis=2)
        out[sl] = d.min(axis=1)
    return out


def _frontier_base_ok(pts: np.ndarray, snapshot: MapSnapshot,
                      config: PlanConfig) -> np.ndarray:
    """Batched frontier criteria without the mutual-spacing rule: inside the
    bbox, outside every sphere, and within [zeta_near, zeta_far] of the
    obstacle points."""
    pts = np.atleast_2d(pts)
    ok = np.ones(len(pts), dtype=bool)
    if config.bbox is not None:
        lo, hi = np.asarray(config.bbox)
        ok &= np.all((pts >= lo) & (pts <= hi), axis=1)
    if len(snapshot.centers):
        for s in range(0, len(pts), 512):
            sl = slice(s, min(s + 512, len(pts)))
            d = np.linalg.norm(pts[sl][:, None, :] - snapshot.centers[None, :, :], axis=2)
            ok[sl] &= np.all(d >= snapshot.radii[None, :] - 1e-9, axis=1)
    d_obs = _min_dist(pts, snapshot.obstacle_positions)
    ok &= d_obs >= config.zeta_near
    ok &= d_obs <= config.zeta_far
    return ok


def _frontier_ok(pos: np.ndarray, snapshot: MapSnapshot, others: np.ndarray,
                 config: PlanConfig) -> np.ndarray:
    pts = np.atleast_2d(pos)
    ok = _frontier_base_ok(pts, snapshot, config)
    if others is not None and len(others):
        ok &= _min_dist(pts, others) >= config.zeta_near
    return ok


def update_frontiers(snapshot: MapSnapshot, p_full, frontiers: list,
                     config: PlanConfig, rng: np.random.Generator) -> list:
    """Re-validate stored frontiers against the snapshot, then sample new
    candidates on the polyhedron surface (area-weighted per face). Mutual
    spacing keeps the earlier-created point."""
    kept: list[FrontierPoint] = []
    kept_pos: list[np.ndarray] = []

    def spaced(p) -> bool:
        if not kept_pos:
            return True
        d = np.linalg.norm(np.asarray(kept_pos) - p, axis=1)
        return bool(d.min() >= config.zeta_near)

    if frontiers:
        pts = np.stack([f.position for f in frontiers])
        base = _frontier_base_ok(pts, snapshot, config)
        for f, ok in zip(frontiers, base):
            if ok and spaced(f.position):
                kept.append(f)
                kept_pos.append(f.position)

    if p_full is not None and config.frontier_samples > 0:
        tri = p_full.face_coords()
        areas = 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        total = areas.sum()
        if total > 1e-12:
            probs = areas / total
            n = config.frontier_samples
            faces = rng.choice(len(tri), size=n, p=probs)
            r1 = np.sqrt(rng.uniform(size=n))
            r2 = rng.uniform(size=n)
            pts = ((1 - r1)[:, None] * tri[faces, 0]
                   + (r1 * (1 - r2))[:, None] * tri[faces, 1]
                   + (r1 * r2)[:, None] * tri[faces, 2])
            base = _frontier_base_ok(pts, snapshot, config)
            for p, ok in zip(pts, base):
                if ok and spaced(p):
                    f = FrontierPoint(position=p.copy(),
                                      created_at=snapshot.frame_index)
                    kept.append(f)
                    kept_pos.append(f.position)
    return kept


# ---------------------------------------------------------------------------
# Viewpoints
# ---------------------------------------------------------------------------

def _violates_blocking(pos, heading, blocked, config: PlanConfig) -> bool:
    for bpos, bhead in blocked:
        if np.linalg.norm(pos - bpos) <= config.r_block:
            cosang = float(np.dot(heading, bhead))
            if cosang >= math.cos(config.theta_block):
                return True
    return False


def generate_viewpoints(frontiers: list, snapshot: MapSnapshot, blocked: list,
                        config: PlanConfig) -> list:
    """Cluster frontiers and place one candidate viewpoint per cluster at a
    standoff inside a free sphere with enough clearance, aimed at the
    cluster centroid."""
    if not frontiers or len(snapshot.centers) == 0:
        return []
    clusters: list[list[int]] = []
    seeds: list[np.ndarray] = []
    for i, f in enumerate(frontiers):
        placed = False
        for ci, seed in enumerate(seeds):
            if np.linalg.norm(f.position - seed) <= 2.0 * config.zeta_near:
                clusters[ci].append(i)
                placed = True
                break
        if not placed:
            clusters.append([i])
            seeds.append(f.position)

    out: list[Viewpoint] = []
    obstacle_pos = snapshot.obstacle_positions
    for ci, members in enumerate(clusters):
        centroid = np.mean([frontiers[i].position for i in members], axis=0)
        order = np.argsort(np.linalg.norm(snapshot.centers - centroid, axis=1))
        chosen = None
        for k in order:
            c_s = snapshot.centers[k]
            r_s = snapshot.radii[k]
            margin = min(0.2, 0.3 * r_s)
            d = float(np.linalg.norm(c_s - centroid))
            if d < 1e-9:
                continue
            u = (c_s - centroid) / d
            t_lo = max(config.standoff_min, d - (r_s - margin))
            t_hi = min(config.standoff_max, d + (r_s - margin))
            if t_lo > t_hi:
                continue
            pos = centroid + u * t_lo
            if config.bbox is not None:
                lo, hi = np.asarray(config.bbox)
                if np.any(pos < lo) or np.any(pos > hi):
                    continue
            if len(obstacle_pos) and _min_dist(pos.reshape(1, 3), obstacle_pos)[0] < config.d_safe:
                continue
            heading = (centroid - pos)
            heading = heading / np.linalg.norm(heading)
            if _violates_blocking(pos, heading, blocked, config):
                continue
            chosen = Viewpoint(id=len(out), position=pos, heading=heading,
                               target_frontiers=[frontiers[i] for i in members])
            break
        if chosen is not None:
            out.append(chosen)
    return out


# ---------------------------------------------------------------------------
# Path planning on the sphere graph
# ---------------------------------------------------------------------------

def _edge_weight(ci, cj, ri, rj, lam: float) -> float:
    return float(np.linalg.norm(ci - cj)) * (1.0 + lam / max(min(ri, rj), 1e-6))


def _sphere_lookup(snapshot: MapSnapshot):
    cached = getattr(snapshot, "_id_lookup", None)
    if cached is None:
        cached = {int(i): k for k, i in enumerate(snapshot.sphere_ids)}
        snapshot._id_lookup = cached
    return cached


def _edge_weights(snapshot: MapSnapshot, lam: float) -> dict:
    """Per-snapshot cache of clearance-weighted edge costs."""
    cached = getattr(snapshot, "_edge_w", None)
    if cached is not None and cached[0] == lam:
        return cached[1]
    idx = _sphere_lookup(snapshot)
    w = {}
    if snapshot.edges:
        e = np.asarray(snapshot.edges, dtype=np.int64)
        ia = np.array([idx[int(a)] for a in e[:, 0]])
        ib = np.array([idx[int(b)] for b in e[:, 1]])
        d = np.linalg.norm(snapshot.centers[ia] - snapshot.centers[ib], axis=1)
        rmin = np.maximum(np.minimum(snapshot.radii[ia], snapshot.radii[ib]), 1e-6)
        cost = d * (1.0 + lam / rmin)
        for (a, b), c in zip(snapshot.edges, cost):
            w[(a, b)] = float(c)
            w[(b, a)] = float(c)
    snapshot._edge_w = (lam, w)
    return w


def _containing_or_near(snapshot: MapSnapshot, point, snap: float):
    """Sphere ids containing the point; if none, ids within `snap` of the
    surface (nearest first)."""
    if len(snapshot.sphere_ids) == 0:
        return []
    p = np.asarray(point, dtype=float).reshape(3)
    d = np.linalg.norm(snapshot.centers - p, axis=1) - snapshot.radii
    inside = d < 0
    if np.any(inside):
        order = np.argsort(d[inside])
        return [int(i) for i in snapshot.sphere_ids[inside][order]]
    near = d <= snap
    order = np.argsort(d[near])
    return [int(i) for i in snapshot.sphere_ids[near][order]]


def dijkstra_costs(snapshot: MapSnapshot, sources: list[int], config: PlanConfig,
                   removed_edges: set | None = None):
    """Clearance-weighted shortest-path cost from the source spheres to every
    sphere. Returns (cost dict, parent dict)."""
    weights = _edge_weights(snapshot, config.lambda_clear)
    cost = {s: 0.0 for s in sources}
    parent = {s: None for s in sources}
    pq = [(0.0, s) for s in sorted(sources)]
    heapq.heapify(pq)
    removed = removed_edges or set()
    while pq:
        c, node = heapq.heappop(pq)
        if c > cost.get(node, math.inf):
            continue
        for nb in snapshot.adjacency.get(node, ()):
            key = (node, nb) if node < nb else (nb, node)
            if key in removed:
                continue
            nc = c + weights[(node, nb)]
            if nc < cost.get(nb, math.inf) - 1e-12:
                cost[nb] = nc
                parent[nb] = node
                heapq.heappush(pq, (nc, nb))
    return cost, parent


def _sphere_chain_polyline(snapshot: MapSnapshot, chain: list[int], start, goal,
                           config: PlanConfig):
    idx = _sphere_lookup(snapshot)
    pts = [np.asarray(start, dtype=float)]
    for a, b in zip(chain[:-1], chain[1:]):
        ca, ra = snapshot.centers[idx[a]], snapshot.radii[idx[a]]
        cb, rb = snapshot.centers[idx[b]], snapshot.radii[idx[b]]
        d = np.linalg.norm(cb - ca)
        if d < 1e-9:
            continue
        # Center of the intersection lens (radical plane crossing), slid
        # within the lens disc away from nearby obstacle points.
        t = float(np.clip((d * d + ra * ra - rb * rb) / (2 * d * d), 0.0, 1.0))
        m = ca + t * (cb - ca)
        rho_sq = ra * ra - (t * d) ** 2
        if rho_sq > 1e-6 and len(snapshot.obstacle_positions):
            rho = math.sqrt(rho_sq)
            d_obs = np.linalg.norm(snapshot.obstacle_positions - m, axis=1)
            k = int(np.argmin(d_obs))
            if d_obs[k] < config.d_safe + 0.2:
                axis = (cb - ca) / d
                away = m - snapshot.obstacle_positions[k]
                away = away - np.dot(away, axis) * axis
                nrm = float(np.linalg.norm(away))
                if nrm > 1e-9:
                    shift = min(config.d_safe + 0.2 - float(d_obs[k]), 0.85 * rho)
                    m = m + away / nrm * max(shift, 0.0)
        pts.append(m)
    pts.append(np.asarray(goal, dtype=float))
    return _densify(pts, 0.5)


def _densify(pts: list, max_step: float) -> np.ndarray:
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        seg = np.linalg.norm(b - a)
        n = max(1, int(math.ceil(seg / max_step)))
        for k in range(1, n + 1):
            out.append(a + (b - a) * (k / n))
    dedup = [out[0]]
    for p in out[1:]:
        if np.linalg.norm(p - dedup[-1]) > 1e-9:
            dedup.append(p)
    return np.stack(dedup)


def plan_path(snapshot: MapSnapshot, start, goal, config: PlanConfig):
    """Shortest clearance-weighted path through the sphere graph.

    Returns (sphere id chain, polyline (K,3), cost) or None when no safe
    path exists. The polyline is densified to 0.5 m steps and every waypoint
    keeps d_safe clearance from mapped obstacle points; edges whose segment
    violates that are pruned and the search retried.
    """
    start_ids = _containing_or_near(snapshot, start, config.start_snap)
    if not start_ids:
        raise errors.StartNotInFreeSpace("start is not inside any sphere")
    goal_ids = _containing_or_near(snapshot, goal, config.start_snap)
    if not goal_ids:
        raise errors.GoalNotInFreeSpace("goal is not inside any sphere")

    removed: set = set()
    goal_set = set(goal_ids)
    for _ in range(20):
        cost, parent = dijkstra_costs(snapshot, start_ids, config, removed)
        best_goal = None
        best_cost = math.inf
        for g in sorted(goal_set):
            c = cost.get(g, math.inf)
            if c < best_cost - 1e-12:
                best_cost = c
                best_goal = g
        if best_goal is None:
            return None
        chain = [best_goal]
        while parent[chain[-1]] is not None:
            chain.append(parent[chain[-1]])
        chain.reverse()
        polyline = _sphere_chain_polyline(snapshot, chain, start, goal, config)
        viol = _first_clearance_violation(polyline, snapshot, config)
        if viol is None:
            return chain, polyline, best_cost
        if len(chain) < 2:
            return None
        # Prune the edge nearest the violation and retry.
        edge = _edge_near_violation(snapshot, chain, polyline[viol])
        if edge is None:
            return None
        removed.add(edge)
    return None


def _near_obstacles(points: np.ndarray, obstacles: np.ndarray, margin: float) -> np.ndarray:
    """Obstacle points inside the query set's AABB inflated by margin."""
    if len(obstacles) == 0:
        return obstacles
    lo = points.min(axis=0) - margin
    hi = points.max(axis=0) + margin
    m = np.all((obstacles >= lo) & (obstacles <= hi), axis=1)
    return obstacles[m]


def _first_clearance_violation(polyline: np.ndarray, snapshot: MapSnapshot,
                               config: PlanConfig):
    obs = _near_obstacles(polyline, snapshot.obstacle_positions, config.d_safe + 0.1)
    if len(obs) == 0:
        return None
    d = _min_dist(polyline, obs)
    bad = np.nonzero(d < config.d_safe - 1e-9)[0]
    return int(bad[0]) if len(bad) else None


def _edge_near_violation(snapshot: MapSnapshot, chain: list[int], point):
    idx = _sphere_lookup(snapshot)
    best = None
    best_d = math.inf
    for a, b in zip(chain[:-1], chain[1:]):
        ca, cb = snapshot.centers[idx[a]], snapshot.centers[idx[b]]
        d = float(point_segment_distance(point.reshape(1, 3), ca, cb)[0])
        if d < best_d:
            best_d = d
            best = (a, b) if a < b else (b, a)
    return best


# ---------------------------------------------------------------------------
# NBV selection
# ---------------------------------------------------------------------------

def rank_nbv(candidates: list, snapshot: MapSnapshot, current_pose: Pose,
             config: PlanConfig, preferred=None) -> list:
    """Reachable candidates ordered by descending greedy score
    (frontier count over 1 + path cost), ties to the smallest id."""
    if not candidates:
        return []
    start_ids = _containing_or_near(snapshot, current_pose.position, config.start_snap)
    if not start_ids:
        return []
    cost_map, _ = dijkstra_costs(snapshot, start_ids, config)
    scored = []
    for vp in candidates:
        vp_ids = _containing_or_near(snapshot, vp.position, 0.0)
        reach = [cost_map[i] for i in vp_ids if i in cost_map]
        if not reach:
            continue
        score = len(vp.target_frontiers) / (1.0 + min(reach))
        if preferred is not None:
            ppos, phead = preferred
            if (np.linalg.norm(vp.position - ppos) <= 1.5
                    and float(np.dot(vp.heading, phead)) >= math.cos(0.5)):
                score *= 1.25
        scored.append((-score, vp.id, vp))
    scored.sort(key=lambda s: (s[0], s[1]))
    return [vp for _, _, vp in scored]


def select_nbv(candidates: list, snapshot: MapSnapshot, current_pose: Pose,
               config: PlanConfig, preferred=None):
    """Greedy choice: argmax of frontier count over (1 + path cost), ties to
    the smallest viewpoint id; None when nothing is reachable."""
    ranked = rank_nbv(candidates, snapshot, current_pose, config, preferred=preferred)
    return ranked[0] if ranked else None


# ---------------------------------------------------------------------------
# Heading profiles and trajectories
# ---------------------------------------------------------------------------

def heading_profile(polyline: np.ndarray, goal_viewpoint, config: PlanConfig,
                    start_yaw: float, t0: float = 0.0,
                    no_fff: bool = False) -> TrajectorySegment:
    """Time-parameterize a polyline: yaw follows the velocity direction,
    except over the final d_c of arc length (or the whole path when shorter,
    or always under no-FFF) where it locks to the goal viewpoint heading.
    Yaw slews happen as dwells at waypoints within the yaw rate limit."""
    poly = np.atleast_2d(np.asarray(polyline, dtype=float))
    if len(poly) == 0:
        raise ValueError("polyline must be non-empty")
    if len(poly) == 1:
        poly = np.vstack([poly, poly[0]])
    goal_yaw = goal_viewpoint.yaw if goal_viewpoint is not None else None
    if no_fff and goal_yaw is None:
        # Yaw is never velocity-coupled under the ablation; with no goal
        # heading the camera simply stays where it points.
        goal_yaw = start_yaw
    terminal = goal_yaw is not None

    seg_vec = np.diff(poly, axis=0)
    seg_len = np.linalg.norm(seg_vec, axis=1)
    seg_yaw = np.array([
        math.atan2(v[1], v[0]) if np.hypot(v[0], v[1]) > 1e-9 else math.nan
        for v in seg_vec])
    # Vertical or zero segments inherit the previous yaw.
    prev = start_yaw
    for i in range(len(seg_yaw)):
        if math.isnan(seg_yaw[i]):
            seg_yaw[i] = prev
        prev = seg_yaw[i]

    total = float(seg_len.sum())
    lock_from = max(total - config.d_c, 0.0)
    if no_fff:
        lock_from = 0.0

    # Split the segment containing the lock point.
    pts = [poly[0]]
    yaw_plan = []
    s = 0.0
    for i, (v, L, yw) in enumerate(zip(seg_vec, seg_len, seg_yaw)):
        if L <= 1e-12:
            continue
        s_end = s + L
        if terminal and s < lock_from < s_end:
            a = (lock_from - s) / L
            mid = poly[i] + v * a
            pts.append(mid)
            yaw_plan.append(yw)
            pts.append(poly[i + 1])
            yaw_plan.append(goal_yaw)
        else:
            locked = terminal and s >= lock_from - 1e-12
            pts.append(poly[i + 1])
            yaw_plan.append(goal_yaw if locked else yw)
        s = s_end

    times = [t0]
    yaws = [start_yaw]
    out_pts = [pts[0]]
    cur_yaw = start_yaw
    t = t0
    for i in range(1, len(pts)):
        want = yaw_plan[i - 1]
        dyaw = _wrap_angle(want - cur_yaw)
        if abs(dyaw) > 1e-9:
            # Rotate in place at the yaw rate limit.
            t += abs(dyaw) / config.max_yaw_rate
            times.append(t)
            out_pts.append(out_pts[-1])
            cur_yaw = _wrap_to_pi(cur_yaw + dyaw)
            yaws.append(cur_yaw)
        L = float(np.linalg.norm(pts[i] - out_pts[-1]))
        if L > 1e-12:
            t += L / config.max_speed
            times.append(t)
            out_pts.append(pts[i])
            yaws.append(cur_yaw)
    return TrajectorySegment(
        times=np.asarray(times), positions=np.stack(out_pts),
        yaws=np.asarray(yaws), terminal_alignment=terminal)


# ---------------------------------------------------------------------------
# Blocking and the collision guard
# ---------------------------------------------------------------------------

def mark_visited_and_block(viewpoint: Viewpoint, uncovered_frontier_count: int,
                           blocked: list, config: PlanConfig,
                           no_vpb: bool = False) -> list:
    """Mark the viewpoint visited and register its blocking region; repeated
    visits of the same pose produce a single entry."""
    viewpoint.state = "visited"
    if no_vpb:
        return blocked
    for bpos, bhead in blocked:
        if (np.linalg.norm(viewpoint.position - bpos) <= 1e-6
                and float(np.dot(viewpoint.heading, bhead)) >= 1.0 - 1e-9):
            return blocked
    blocked.append((viewpoint.position.copy(), viewpoint.heading.copy()))
    return blocked


def collision_guard(trajectory: TrajectorySegment | None, frame, robot_radius: float,
                    now_t: float = 0.0, margin: float = 0.3,
                    lookahead: float = 2.0) -> bool:
    """True = stop: some tracked point (stable or not) comes within
    robot_radius + margin of the predicted trajectory over the lookahead."""
    if trajectory is None or len(frame.est_positions) == 0:
        return False
    pts = trajectory.sample_positions(now_t, now_t + lookahead)
    d = _min_dist(pts, frame.est_positions)
    return bool(d.min() < robot_radius + margin)


# ---------------------------------------------------------------------------
# Planner orchestration
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PlannerEvent:
    tick: int
    viewpoint: list | None
    path_cost: float | None
    frontier_count: int
    blocked_count: int


class Planner:
    """Stateful exploration loop: owns frontiers, blocking entries and the
    current target. Pure reader of map snapshots."""

    def __init__(self, config: PlanConfig, seed: int = 0, ablations=frozenset()):
        self.config = config
        self.ablations = frozenset(ablations)
        self.rng = np.random.default_rng((int(seed), 4177))
        self.frontiers: list[FrontierPoint] = []
        self.blocked: list = []
        self.visits: list = []           # (position, heading, tick)
        self.events: list[PlannerEvent] = []
        self.target: Viewpoint | None = None
        self.no_candidate_ticks = 0
        self.no_plan_ticks = 0
        self.tick_index = 0
        self.frontier_audit_failures = 0
        self.heading_audit: list[float] = []
        self.path_clearance_audit: list[float] = []
        self._traj: TrajectorySegment | None = None
        self._plan_tick = -10 ** 9
        self.replan_every: int = 12   # forced refresh cadence, in ticks

    def interrupt(self):
        """Drop the current plan (harness calls this on guard stops)."""
        self.target = None
        self._traj = None

    @property
    def revisit_count(self) -> int:
        """Max number of repeat visits landing in an earlier visit's
        blocking region."""
        best = 0
        for i, (pos_i, head_i, _) in enumerate(self.visits):
            n = 0
            for pos_j, head_j, _ in self.visits[i + 1:]:
                if (np.linalg.norm(pos_j - pos_i) <= self.config.r_block
                        and float(np.dot(head_j, head_i)) >= math.cos(self.config.theta_block)):
                    n += 1
            best = max(best, n)
        return best

    def note_visit(self, viewpoint: Viewpoint, uncovered: int):
        self.visits.append((viewpoint.position.copy(), viewpoint.heading.copy(),
                            self.tick_index))
        mark_visited_and_block(viewpoint, uncovered, self.blocked, self.config,
                               no_vpb="no_vpb" in self.ablations)

    def tick(self, snapshot: MapSnapshot, p_full, robot_pos, robot_yaw: float,
             t: float, audit: bool = False):
        """One planning step. Returns a TrajectorySegment to follow, or None
        when the current plan should continue / nothing is reachable."""
        cfg = self.config
        self.tick_index += 1
        self.frontiers = update_frontiers(snapshot, p_full, self.frontiers, cfg, self.rng)
        if audit:
            self._audit_frontiers(snapshot)

        # Trapped? Newly mapped points can end up closer than d_safe to a
        # parked robot, which would poison every plan's first waypoint.
        # Recover by moving straight away from the nearest point first.
        if len(snapshot.obstacle_positions):
            d_obs = np.linalg.norm(snapshot.obstacle_positions - robot_pos, axis=1)
            nearest = int(np.argmin(d_obs))
            if d_obs[nearest] < cfg.d_safe:
                away = robot_pos - snapshot.obstacle_positions[nearest]
                nrm = np.linalg.norm(away)
                away = away / nrm if nrm > 1e-9 else np.array([0.0, 0.0, 1.0])
                dist = cfg.d_safe + 0.25 - d_obs[nearest]
                return self._recovery(robot_pos, robot_yaw, t, away, dist)

        # Stranded outside the sphere graph (e.g. after an evade move)?
        # Head for the nearest sphere before trying to plan.
        if len(snapshot.sphere_ids):
            gap = (np.linalg.norm(snapshot.centers - robot_pos, axis=1)
                   - snapshot.radii)
            nearest = int(np.argmin(gap))
            if gap[nearest] > cfg.start_snap:
                toward = snapshot.centers[nearest] - robot_pos
                toward = toward / max(np.linalg.norm(toward), 1e-9)
                dist = min(float(gap[nearest]) + 0.2, 1.5)
                return self._recovery(robot_pos, robot_yaw, t, toward, dist)

        # Target reached?
        if self.target is not None:
            dpos = float(np.linalg.norm(robot_pos - self.target.position))
            dyaw = abs(_wrap_angle(robot_yaw - self.target.yaw))
            if dpos <= cfg.reach_pos_tol and dyaw <= cfg.reach_yaw_tol:
                uncovered = sum(
                    1 for f in self.target.target_frontiers
                    if any(f is g for g in self.frontiers))
                self.note_visit(self.target, uncovered)
                self.target = None
                self._traj = None

        # Keep following the current plan while it stays valid; per-tick
        # re-decisions restart terminal alignment turns and cause limit
        # cycles. The remaining polyline is revalidated against the newest
        # obstacle points every tick.
        if (self.target is not None and self._traj is not None
                and t < self._traj.t_end - 1e-9
                and self.tick_index - self._plan_tick < self.replan_every
                and any(f is g for f in self.target.target_frontiers
                        for g in self.frontiers)
                and self._remaining_path_clear(snapshot, t)):
            self.no_candidate_ticks = 0
            self.no_plan_ticks = 0
            self.events.append(PlannerEvent(
                tick=self.tick_index,
                viewpoint=[float(x) for x in self.target.position],
                path_cost=None,
                frontier_count=len(self.frontiers),
                blocked_count=len(self.blocked)))
            return None

        candidates = generate_viewpoints(self.frontiers, snapshot, self.blocked, cfg)
        if not candidates:
            self.no_candidate_ticks += 1
            self.no_plan_ticks += 1
            self.target = None
            self.events.append(PlannerEvent(
                tick=self.tick_index, viewpoint=None, path_cost=None,
                frontier_count=len(self.frontiers), blocked_count=len(self.blocked)))
            return None
        self.no_candidate_ticks = 0

        pose = Pose(np.asarray(robot_pos, dtype=float), yaw=robot_yaw)
        preferred = None
        if self.target is not None:
            preferred = (self.target.position, self.target.heading)
        ranked = rank_nbv(candidates, snapshot, pose, cfg, preferred=preferred)
        chosen = None
        planned = None
        for vp in ranked[:6]:
            try:
                planned = plan_path(snapshot, robot_pos, vp.position, cfg)
            except (errors.StartNotInFreeSpace, errors.GoalNotInFreeSpace):
                planned = None
                break
            if planned is not None:
                chosen = vp
                break
        if planned is None or chosen is None:
            # Candidates exist but none can be planned to; this counts
            # toward the (long) unplannable-stagnation horizon, otherwise a
            # poisoned map hovers forever.
            self.no_plan_ticks += 1
            self.target = None
            self.events.append(PlannerEvent(
                tick=self.tick_index, viewpoint=None, path_cost=None,
                frontier_count=len(self.frontiers), blocked_count=len(self.blocked)))
            return None

        chain, polyline, cost = planned
        self.no_plan_ticks = 0
        self.target = chosen
        chosen.state = "active"
        if len(snapshot.obstacle_positions):
            self.path_clearance_audit.append(
                float(_min_dist(polyline, snapshot.obstacle_positions).min()))
        traj = heading_profile(polyline, chosen, cfg, start_yaw=robot_yaw, t0=t,
                               no_fff="no_fff" in self.ablations)
        if traj.terminal_alignment:
            self.heading_audit.append(traj.terminal_yaw_change(cfg.d_c))
        self._traj = traj
        self._plan_tick = self.tick_index
        self.events.append(PlannerEvent(
            tick=self.tick_index,
            viewpoint=[float(x) for x in chosen.position],
            path_cost=float(cost),
            frontier_count=len(self.frontiers),
            blocked_count=len(self.blocked)))
        return traj

    def _remaining_path_clear(self, snapshot: MapSnapshot, t: float) -> bool:
        if len(snapshot.obstacle_positions) == 0:
            return True
        pts = self._traj.sample_positions(t, self._traj.t_end, dt=0.25)
        obs = _near_obstacles(pts, snapshot.obstacle_positions, self.config.d_safe + 0.1)
        if len(obs) == 0:
            return True
        return bool(_min_dist(pts, obs).min() >= self.config.d_safe - 1e-6)

    def _recovery(self, robot_pos, robot_yaw: float, t: float, direction, dist: float):
        """Short straight recovery move with the current heading held."""
        target = np.asarray(robot_pos, dtype=float) + direction * dist
        self.target = None
        self.events.append(PlannerEvent(
            tick=self.tick_index, viewpoint=None, path_cost=None,
            frontier_count=len(self.frontiers), blocked_count=len(self.blocked)))
        times = np.array([t, t + dist / self.config.max_speed])
        return TrajectorySegment(
            times=times,
            positions=np.stack([np.asarray(robot_pos, dtype=float), target]),
            yaws=np.array([robot_yaw, robot_yaw]), terminal_alignment=False)

    def _audit_frontiers(self, snapshot: MapSnapshot):
        if not self.frontiers:
            return
        pts = np.stack([f.position for f in self.frontiers])
        ok = _frontier_base_ok(pts, snapshot, self.config)
        if len(pts) > 1:
            d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
            np.fill_diagonal(d, np.inf)
            ok &= d.min(axis=1) >= self.config.zeta_near - 1e-9
        self.frontier_audit_failures += int((~ok).sum())
