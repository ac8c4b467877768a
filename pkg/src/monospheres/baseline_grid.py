"""Reference mapper/explorer: raytraced occupancy grid from stable points,
uniform random goals, and grid A* with a fixed clearance from occupied and
unknown space.

The grid is stored densely over the configured bounds for speed; the logical
content is the sparse map of known (free/occupied) cells that the accessors
expose. Occupied cells are only overridden to free after three consecutive
free votes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import errors
from .geometry import Pose

UNKNOWN, FREE, OCCUPIED = 0, 1, 2


@dataclass
class GridConfig:
    cell_size: float = 0.5
    m_hit: int = 3                 # free votes needed to override occupied
    clearance: float = 1.5
    goal_box: tuple = (40.0, 40.0, 10.0)
    replan_period: float = 0.2     # 5 Hz replanning loop
    goal_attempts: int = 50
    max_expansions: int = 300000


class OccupancyGrid:
    def __init__(self, bounds, cell_size: float = 0.5, m_hit: int = 3, margin: float = 4.0):
        self.cell = float(cell_size)
        self.m_hit = int(m_hit)
        bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
        self.lo_cell = np.floor((bounds[0] - margin) / self.cell).astype(np.int64)
        hi_cell = np.floor((bounds[1] + margin) / self.cell).astype(np.int64) + 1
        self.shape = tuple((hi_cell - self.lo_cell).tolist())
        self.state = np.zeros(self.shape, dtype=np.int8)
        self.streak = np.zeros(self.shape, dtype=np.int16)

    # -- coordinate helpers -------------------------------------------------
    def cell_of(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.floor(pts / self.cell).astype(np.int64) - self.lo_cell

    def center_of(self, cells) -> np.ndarray:
        cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
        return (cells + self.lo_cell + 0.5) * self.cell

    def in_bounds(self, cells) -> np.ndarray:
        c = np.atleast_2d(cells)
        return np.all((c >= 0) & (c < np.asarray(self.shape)), axis=1)

    # -- content ------------------------------------------------------------
    def state_at(self, point) -> int:
        c = self.cell_of(point)[0]
        if not self.in_bounds(c[None, :])[0]:
            return UNKNOWN
        return int(self.state[tuple(c)])

    def free_cells(self) -> np.ndarray:
        return np.argwhere(self.state == FREE)

    def occupied_cells(self) -> np.ndarray:
        return np.argwhere(self.state == OCCUPIED)

    def known_cells(self) -> np.ndarray:
        return np.argwhere(self.state != UNKNOWN)

    def counts(self) -> dict:
        return {
            "free": int((self.state == FREE).sum()),
            "occupied": int((self.state == OCCUPIED).sum()),
        }

    def sparse_cells(self) -> dict:
        """Sparse view {(ix, iy, iz): 'free' | 'occupied'} in global cell
        coordinates."""
        out = {}
        for cell in self.known_cells():
            key = tuple((cell + self.lo_cell).tolist())
            out[key] = "free" if self.state[tuple(cell)] == FREE else "occupied"
        return out


def _ray_cells(origin, endpoints, cell_size: float):
    """Amanatides-Woo cell walk from one origin to many endpoints, in
    lockstep across rays. Returns (free cells (K,3) float cell coords in the
    global grid, endpoint cells (N,3)): every cell the segment passes before
    its endpoint cell, the origin cell included."""
    o = np.asarray(origin, dtype=float) / cell_size
    e = np.atleast_2d(np.asarray(endpoints, dtype=float)) / cell_size
    n = len(e)
    cur = np.tile(np.floor(o).astype(np.int64), (n, 1))
    last = np.floor(e).astype(np.int64)
    d = e - o
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore"):
        inv = np.where(d != 0, 1.0 / d, np.inf)
    next_b = cur + (step > 0)
    safe_inv = np.where(np.isfinite(inv), inv, 0.0)
    tmax = np.where(step != 0, (next_b - o) * safe_inv, np.inf)
    tdelta = np.where(step != 0, np.abs(safe_inv), np.inf)

    active = np.any(cur != last, axis=1)
    votes = [cur[active].copy()] if np.any(active) else []
    max_iter = int(np.abs(last - cur).sum(axis=1).max() + 4) if n else 0
    for _ in range(max_iter):
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        ax = np.argmin(tmax[idx], axis=1)
        cur[idx, ax] += step[idx, ax]
        tmax[idx, ax] += tdelta[idx, ax]
        reached = np.all(cur[idx] == last[idx], axis=1)
        rec = idx[~reached]
        if len(rec):
            votes.append(cur[rec].copy())
        active[idx[reached]] = False
    free = np.vstack(votes) if votes else np.zeros((0, 3), dtype=np.int64)
    return free, last


def raytrace_update(grid: OccupancyGrid, camera: Pose, stable_points) -> OccupancyGrid:
    """Free-space votes along each camera->point segment, endpoint cells set
    occupied. Occupied cells flip to free only after m_hit consecutive free
    votes; any hit resets the streak."""
    pts = np.atleast_2d(np.asarray(stable_points, dtype=float)).reshape(-1, 3)
    if len(pts) == 0:
        return grid
    free_global, end_global = _ray_cells(camera.position, pts, grid.cell)
    free = free_global - grid.lo_cell
    end = end_global - grid.lo_cell
    free = free[grid.in_bounds(free)]
    end = end[grid.in_bounds(end)]

    if len(free):
        flat = np.ravel_multi_index(free.T, grid.shape)
        uniq, counts = np.unique(flat, return_counts=True)
        s = grid.state.reshape(-1)
        k = grid.streak.reshape(-1)
        unknown = s[uniq] == UNKNOWN
        s[uniq[unknown]] = FREE
        occ = s[uniq] == OCCUPIED
        k[uniq[occ]] += counts[occ].astype(np.int16)
        flip = occ & (k[uniq] >= grid.m_hit)
        s[uniq[flip]] = FREE
        k[uniq[flip]] = 0

    if len(end):
        flat = np.unique(np.ravel_multi_index(end.T, grid.shape))
        s = grid.state.reshape(-1)
        k = grid.streak.reshape(-1)
        s[flat] = OCCUPIED
        k[flat] = 0
    return grid


def random_goal(grid: OccupancyGrid, pose: Pose, rng: np.random.Generator,
                goal_box=(40.0, 40.0, 10.0), bbox=None):
    """Uniform draw over free cells inside the goal box centered on the
    robot (optionally intersected with an exploration bbox); None when no
    free cell qualifies."""
    free = grid.free_cells()
    if len(free) == 0:
        return None
    centers = grid.center_of(free)
    half = np.asarray(goal_box, dtype=float) / 2.0
    lo = pose.position - half
    hi = pose.position + half
    if bbox is not None:
        lo = np.maximum(lo, np.asarray(bbox[0]))
        hi = np.minimum(hi, np.asarray(bbox[1]))
    ok = np.all((centers >= lo) & (centers <= hi), axis=1)
    if not np.any(ok):
        return None
    pick = int(rng.integers(0, int(ok.sum())))
    return centers[ok][pick]


_OFFSETS = np.array([(dx, dy, dz)
                     for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
                     if (dx, dy, dz) != (0, 0, 0)], dtype=np.int64)
_OFFSET_COSTS = np.linalg.norm(_OFFSETS, axis=1)


def _traversable_mask(grid: OccupancyGrid, lo, hi, clearance: float):
    """Free cells in the [lo, hi) subregion keeping `clearance` from every
    occupied or unknown cell. Distances go center-to-center; half a cell is
    added to cover the blocking cell's own extent, which blocks corridors
    narrower than 2 * clearance + cell_size."""
    sub = grid.state[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    free = sub == FREE
    dist = ndimage.distance_transform_edt(free, sampling=grid.cell)
    return free & (dist >= clearance + grid.cell / 2.0 + 1e-9)


def astar_plan(grid: OccupancyGrid, start, goal, clearance: float = 1.5,
               config: GridConfig | None = None):
    """26-connected A* over free cells with the given clearance from occupied
    and unknown space. Returns a list of world waypoints or None."""
    cfg = config or GridConfig(clearance=clearance)
    s_cell = grid.cell_of(start)[0]
    g_cell = grid.cell_of(goal)[0]
    if not grid.in_bounds(s_cell[None, :])[0] or grid.state[tuple(s_cell)] != FREE:
        raise errors.StartNotFree("start cell is not free")
    if not grid.in_bounds(g_cell[None, :])[0] or grid.state[tuple(g_cell)] != FREE:
        return None

    pad = int(math.ceil(clearance / grid.cell)) + 4
    lo = np.maximum(np.minimum(s_cell, g_cell) - pad * 4, 0)
    hi = np.minimum(np.maximum(s_cell, g_cell) + pad * 4 + 1, np.asarray(grid.shape))
    trav = _traversable_mask(grid, lo, hi, clearance)

    s_loc = tuple(s_cell - lo)
    g_loc = tuple(g_cell - lo)
    if not trav[g_loc]:
        return None
    # The robot's own cell may hug the clearance limit; walk to the nearest
    # traversable cell through free space first.
    prefix: list[tuple] = []
    if not trav[s_loc]:
        s_loc2 = _nearest_traversable(grid, trav, lo, s_loc)
        if s_loc2 is None:
            return None
        prefix = [s_loc]
        s_loc = s_loc2

    shape = trav.shape
    g_arr = np.asarray(g_loc)

    def h(node):
        return float(np.linalg.norm((np.asarray(node) - g_arr)) * grid.cell)

    open_q = [(h(s_loc), 0.0, s_loc)]
    g_cost = {s_loc: 0.0}
    parent = {s_loc: None}
    expansions = 0
    found = False
    while open_q and expansions < cfg.max_expansions:
        f, gc, node = heapq.heappop(open_q)
        if gc > g_cost.get(node, math.inf) + 1e-12:
            continue
        if node == g_loc:
            found = True
            break
        expansions += 1
        arr = np.asarray(node)
        for off, w in zip(_OFFSETS, _OFFSET_COSTS):
            nb = arr + off
            if np.any(nb < 0) or np.any(nb >= shape):
                continue
            nbt = (int(nb[0]), int(nb[1]), int(nb[2]))
            if not trav[nbt]:
                continue
            ng = gc + float(w) * grid.cell
            if ng < g_cost.get(nbt, math.inf) - 1e-12:
                g_cost[nbt] = ng
                parent[nbt] = node
                heapq.heappush(open_q, (ng + h(nbt), ng, nbt))
    if not found:
        return None
    chain = [g_loc]
    while parent[chain[-1]] is not None:
        chain.append(parent[chain[-1]])
    chain.reverse()
    chain = prefix + chain
    cells = np.asarray(chain) + lo
    return [grid.center_of(c[None, :])[0] for c in cells]


def _nearest_traversable(grid, trav, lo, start_loc, max_steps: float = 3.0):
    sub_free = grid.state[lo[0]:lo[0] + trav.shape[0],
                          lo[1]:lo[1] + trav.shape[1],
                          lo[2]:lo[2] + trav.shape[2]] == FREE
    limit = int(max_steps / grid.cell)
    seen = {start_loc}
    queue = [(0, start_loc)]
    while queue:
        depth, node = queue.pop(0)
        if trav[node]:
            return node
        if depth >= limit:
            continue
        arr = np.asarray(node)
        for off in _OFFSETS:
            nb = arr + off
            if np.any(nb < 0) or np.any(nb >= trav.shape):
                continue
            nbt = (int(nb[0]), int(nb[1]), int(nb[2]))
            if nbt not in seen and sub_free[nbt]:
                seen.add(nbt)
                queue.append((depth + 1, nbt))
    return None


def dijkstra_grid_oracle(grid: OccupancyGrid, start, goal, clearance: float):
    """Uniform-cost brute-force search used by tests to certify A*
    optimality on small grids."""
    s_cell = grid.cell_of(start)[0]
    g_cell = grid.cell_of(goal)[0]
    lo = np.zeros(3, dtype=np.int64)
    hi = np.asarray(grid.shape)
    trav = _traversable_mask(grid, lo, hi, clearance)
    s = tuple(s_cell)
    g = tuple(g_cell)
    if not trav[s] or not trav[g]:
        return None
    dist = {s: 0.0}
    pq = [(0.0, s)]
    while pq:
        c, node = heapq.heappop(pq)
        if node == g:
            return c
        if c > dist.get(node, math.inf) + 1e-12:
            continue
        arr = np.asarray(node)
        for off, w in zip(_OFFSETS, _OFFSET_COSTS):
            nb = arr + off
            if np.any(nb < 0) or np.any(nb >= grid.shape):
                continue
            nbt = (int(nb[0]), int(nb[1]), int(nb[2]))
            if not trav[nbt]:
                continue
            nc = c + float(w) * grid.cell
            if nc < dist.get(nbt, math.inf) - 1e-12:
                dist[nbt] = nc
                heapq.heappush(pq, (nc, nbt))
    return None


class GridExplorer:
    """Random-goal exploration loop over the occupancy grid; yaw always
    follows the velocity direction.

    Per tick the traversable mask and the start cell's connected component
    are computed once; the goal attempts then reduce to membership tests, so
    a tick with 50 unreachable draws stays cheap."""

    def __init__(self, grid: OccupancyGrid, config: GridConfig,
                 rng: np.random.Generator, bbox=None):
        self.grid = grid
        self.config = config
        self.rng = rng
        self.bbox = bbox
        self.goal = None
        self.path = None
        self.failed_plans = 0

    def _path_still_valid(self) -> bool:
        if self.path is None or len(self.path) == 0:
            return False
        cells = self.grid.cell_of(np.asarray(self.path))
        ok = self.grid.in_bounds(cells)
        if not np.all(ok):
            return False
        states = self.grid.state[cells[:, 0], cells[:, 1], cells[:, 2]]
        return bool(np.all(states == FREE))

    def _start_component(self, pose: Pose):
        """(traversable mask, region offset, start component label array,
        start label) or None when the robot has no traversable footing."""
        grid = self.grid
        s_cell = grid.cell_of(pose.position)[0]
        if not grid.in_bounds(s_cell[None, :])[0] or grid.state[tuple(s_cell)] != FREE:
            return None
        half = np.asarray(self.config.goal_box) / 2.0 + 2.0
        lo = np.maximum(grid.cell_of(pose.position - half)[0], 0)
        hi = np.minimum(grid.cell_of(pose.position + half)[0] + 1, np.asarray(grid.shape))
        trav = _traversable_mask(grid, lo, hi, self.config.clearance)
        labels, _ = ndimage.label(trav, structure=np.ones((3, 3, 3), dtype=np.int8))
        s_loc = tuple(s_cell - lo)
        s_label = labels[s_loc]
        if s_label == 0:
            near = _nearest_traversable(grid, trav, lo, s_loc)
            if near is None:
                return None
            s_label = labels[near]
        return trav, lo, labels, s_label

    def tick(self, pose: Pose, t: float):
        """Returns a fresh waypoint list when a new plan is adopted, else
        None to keep following the current one."""
        if self.goal is not None and np.linalg.norm(
                pose.position - self.goal) < self.grid.cell:
            self.goal = None
            self.path = None
        if self._path_still_valid():
            return None
        self.goal = None
        self.path = None
        comp = self._start_component(pose)
        if comp is None:
            return None
        _, lo, labels, s_label = comp
        for _ in range(self.config.goal_attempts):
            goal = random_goal(self.grid, pose, self.rng,
                               goal_box=self.config.goal_box, bbox=self.bbox)
            if goal is None:
                break
            g_loc = self.grid.cell_of(goal)[0] - lo
            if np.any(g_loc < 0) or np.any(g_loc >= labels.shape) \
                    or labels[tuple(g_loc)] != s_label:
                self.failed_plans += 1
                continue
            try:
                path = astar_plan(self.grid, pose.position, goal,
                                  clearance=self.config.clearance, config=self.config)
            except errors.StartNotFree:
                path = None
            if path is not None and len(path) >= 1:
                self.goal = goal
                self.path = path
                return path
            self.failed_plans += 1
        return None
