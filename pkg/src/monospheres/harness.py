"""Episode runner, metrics, artifact export and batch/report helpers.

The loop is single-threaded lockstep: sense at 10 Hz of simulated time, map
update per frame, planner tick every 0.25 s (5 Hz path loop for the grid
baseline). Runs are deterministic per (config, seed); metrics.json carries
no wall-clock data so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .baseline_grid import FREE, GridConfig, GridExplorer, OccupancyGrid, raytrace_update
from .exploration import (
    PlanConfig,
    Planner,
    TrajectorySegment,
    collision_guard,
    heading_profile,
)
from .geometry import Pose
from .sensor_sim import (
    FeatureTracker,
    SensorConfig,
    World,
    ground_truth_collision,
    make_world,
)
from .sphere_map import MapConfig, SphereMap

VALID_ABLATIONS = {"no_fff", "no_dbof", "no_ovde", "no_vpb"}
COLUMN_SIZE = 2.5
VOLUME_VOXEL = 0.25

_DEFAULT_STARTS = {
    "open_field": ((-12.0, 0.0, 1.5), 0.0),
    "corridor": ((-12.0, 0.0, 1.5), 0.0),
    "courtyard_with_rods": ((-6.0, 0.0, 1.5), 0.0),
    "two_rooms": ((-2.5, 0.0, 1.5), math.pi),
}


@dataclass
class EpisodeConfig:
    world: dict | str
    method: str = "monospheres"
    ablations: frozenset = frozenset()
    duration: float = 120.0
    seed: int = 0
    out_dir: str | None = None
    sense_hz: float = 10.0
    plan_period: float = 0.25
    start: tuple | None = None
    start_yaw: float | None = None
    sensor: dict = field(default_factory=dict)
    mapping: dict = field(default_factory=dict)
    planning: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    volume_every: int = 25
    audit: bool = True
    bootstrap: bool = True

    def __post_init__(self):
        if self.method == "grid":
            self.method = "grid_baseline"
        if self.method not in ("monospheres", "grid_baseline"):
            raise errors.MalformedConfig(f"unknown method {self.method!r}")
        self.ablations = frozenset(self.ablations)
        bad = self.ablations - VALID_ABLATIONS
        if bad:
            raise errors.MalformedConfig(f"unknown ablations {sorted(bad)}")
        if self.ablations and self.method != "monospheres":
            raise errors.MalformedConfig("ablations only apply to monospheres")
        if self.duration < 0:
            raise errors.MalformedConfig("duration must be >= 0")


def episode_config_from_dict(d: dict) -> EpisodeConfig:
    try:
        return EpisodeConfig(**d)
    except TypeError as exc:
        raise errors.MalformedConfig(str(exc)) from exc


@dataclass
class EpisodeResult:
    world: str
    method: str
    ablations: list
    seed: int
    duration: float
    explored_area: float
    explored_volume: float
    max_volume: float
    crashed: bool
    crash_time: float | None
    mission_complete: bool
    guard_stops: int
    revisit_count: int
    safety_violations: int
    watertight_failures: int
    audited_polyhedra: int
    frontier_audit_failures: int
    heading_audit_max: float
    path_clearance_min: float
    shell_free_fraction_max: float
    n_frames: int
    columns: list = field(default_factory=list)
    series: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "world": self.world,
            "method": self.method,
            "ablations": sorted(self.ablations),
            "seed": self.seed,
            "duration": self.duration,
            "explored_area": self.explored_area,
            "explored_volume": self.explored_volume,
            "max_volume": self.max_volume,
            "crashed": self.crashed,
            "crash_time": self.crash_time,
            "mission_complete": self.mission_complete,
            "guard_stops": self.guard_stops,
            "revisit_count": self.revisit_count,
            "safety_violations": self.safety_violations,
            "watertight_failures": self.watertight_failures,
            "audited_polyhedra": self.audited_polyhedra,
            "frontier_audit_failures": self.frontier_audit_failures,
            "heading_audit_max": self.heading_audit_max,
            "path_clearance_min": self.path_clearance_min,
            "shell_free_fraction_max": self.shell_free_fraction_max,
            "n_frames": self.n_frames,
            "columns": self.columns,
            "series": self.series,
            "trajectory": self.trajectory,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        d = dict(d)
        d["ablations"] = list(d.get("ablations", []))
        return cls(**d)

    def __eq__(self, other):
        return isinstance(other, EpisodeResult) and self.to_dict() == other.to_dict()


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def explored_area(element_positions, bbox) -> float:
    """6.25 m^2 per 2.5 x 2.5 m bbox column containing at least one map
    element."""
    pts = np.atleast_2d(np.asarray(element_positions, dtype=float)).reshape(-1, 3)
    if len(pts) == 0:
        return 0.0
    lo = np.asarray(bbox[0], dtype=float)
    cols = np.floor((pts[:, :2] - lo[:2]) / COLUMN_SIZE).astype(np.int64)
    return COLUMN_SIZE ** 2 * len(np.unique(cols, axis=0))


def column_indices(element_positions, bbox) -> set:
    pts = np.atleast_2d(np.asarray(element_positions, dtype=float)).reshape(-1, 3)
    if len(pts) == 0:
        return set()
    lo = np.asarray(bbox[0], dtype=float)
    cols = np.floor((pts[:, :2] - lo[:2]) / COLUMN_SIZE).astype(np.int64)
    return {tuple(c) for c in np.unique(cols, axis=0)}


def column_center(col, bbox) -> np.ndarray:
    lo = np.asarray(bbox[0], dtype=float)
    return lo[:2] + (np.asarray(col, dtype=float) + 0.5) * COLUMN_SIZE


def explored_volume(arg) -> float:
    """Union volume: spheres voxelized at 0.25 m, or free grid cells."""
    if isinstance(arg, OccupancyGrid):
        return float((arg.state == FREE).sum()) * arg.cell ** 3
    centers, radii = arg
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.asarray(radii, dtype=float).reshape(-1)
    if len(centers) == 0:
        return 0.0
    h = VOLUME_VOXEL
    seen = []
    for c, r in zip(centers, radii):
        lo = np.floor((c - r) / h).astype(np.int64)
        hi = np.floor((c + r) / h).astype(np.int64) + 1
        xs = np.arange(lo[0], hi[0])
        ys = np.arange(lo[1], hi[1])
        zs = np.arange(lo[2], hi[2])
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = (np.stack([gx, gy, gz], axis=-1).reshape(-1, 3) + 0.5) * h
        inside = np.linalg.norm(pts - c, axis=1) <= r
        cells = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)[inside]
        if len(cells):
            seen.append(cells)
    if not seen:
        return 0.0
    allc = np.vstack(seen)
    return float(len(np.unique(allc, axis=0))) * h ** 3


# ---------------------------------------------------------------------------
# Artifact export
# ---------------------------------------------------------------------------

def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False)


def write_ply(path, obstacle_positions, sphere_centers):
    """Obstacle points colored by height plus sphere centers (green)."""
    obstacle_positions = np.atleast_2d(np.asarray(obstacle_positions, dtype=float)).reshape(-1, 3)
    sphere_centers = np.atleast_2d(np.asarray(sphere_centers, dtype=float)).reshape(-1, 3)
    n = len(obstacle_positions) + len(sphere_centers)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    if len(obstacle_positions):
        z = obstacle_positions[:, 2]
        zlo, zhi = float(z.min()), float(z.max())
        span = max(zhi - zlo, 1e-9)
        for p in obstacle_positions:
            a = (p[2] - zlo) / span
            r = int(round(255 * a))
            b = 255 - r
            lines.append(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f} {r} 0 {b}")
    for p in sphere_centers:
        lines.append(f"{p[0]:.4f} {p[1]:.4f} {p[2]:.4f} 0 255 0")
    try:
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise errors.IoFailure(str(exc)) from exc


def export_artifacts(result: EpisodeResult, snapshot, out_dir: str):
    """metrics.json, series.csv, trajectory.csv, map.ply, snapshot.json,
    events.jsonl (events passed through the snapshot bundle)."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.json"), "w") as f:
            f.write(_json_dumps(result.to_dict()) + "\n")

        with open(os.path.join(out_dir, "series.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "area_m2", "volume_m3", "frontiers", "map_elements",
                        "blocked", "shell_free_fraction"])
            for row in result.series:
                w.writerow(row)

        with open(os.path.join(out_dir, "trajectory.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "x", "y", "z", "yaw"])
            for row in result.trajectory:
                w.writerow(row)

        obstacle = snapshot.get("obstacle_positions", np.zeros((0, 3)))
        centers = snapshot.get("sphere_centers", np.zeros((0, 3)))
        write_ply(os.path.join(out_dir, "map.ply"), obstacle, centers)

        snap_json = {
            "spheres": [
                {"center": [float(x) for x in c], "radius": float(r)}
                for c, r in zip(snapshot.get("sphere_centers", []),
                                snapshot.get("sphere_radii", []))
            ],
            "obstacle_points": [
                {"position": [float(x) for x in p], "d_m": float(d)}
                for p, d in zip(snapshot.get("obstacle_positions", []),
                                snapshot.get("obstacle_dm", []))
            ],
            "grid_cells": snapshot.get("grid_cells", None),
        }
        with open(os.path.join(out_dir, "snapshot.json"), "w") as f:
            f.write(_json_dumps(snap_json) + "\n")

        with open(os.path.join(out_dir, "events.jsonl"), "w") as f:
            for ev in snapshot.get("events", []):
                f.write(json.dumps(ev, sort_keys=True) + "\n")
    except OSError as exc:
        raise errors.IoFailure(str(exc)) from exc


# ---------------------------------------------------------------------------
# Robot and bootstrap
# ---------------------------------------------------------------------------

def bootstrap_trajectory(start: np.ndarray, yaw: float, t0: float = 0.0,
                         speed: float = 1.2) -> TrajectorySegment:
    """Scripted initialization sweep: back off, sweep sideways, return.
    Generates parallax around the start position with a fixed heading."""
    pose = Pose(start, yaw=yaw)
    fwd, left = pose.forward(), pose.left()
    knots = [
        start,
        start - 1.8 * fwd,
        start - 1.8 * fwd + 1.2 * left,
        start - 1.8 * fwd - 1.2 * left,
        start - 1.8 * fwd,
        start,
    ]
    times = [t0]
    for a, b in zip(knots[:-1], knots[1:]):
        times.append(times[-1] + float(np.linalg.norm(b - a)) / speed)
    return TrajectorySegment(
        times=np.asarray(times), positions=np.stack(knots),
        yaws=np.full(len(knots), yaw), terminal_alignment=False)


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------

def _world_name(spec) -> str:
    if isinstance(spec, str):
        return os.path.basename(spec)
    if isinstance(spec, dict) and "generator" in spec:
        return spec["generator"]
    return "custom"


def _resolve_start(config: EpisodeConfig, world: World):
    if config.start is not None:
        start = np.asarray(config.start, dtype=float)
        yaw = float(config.start_yaw or 0.0)
        return start, yaw
    name = _world_name(config.world)
    if name in _DEFAULT_STARTS:
        pos, yaw = _DEFAULT_STARTS[name]
        if config.start_yaw is not None:
            yaw = float(config.start_yaw)
        return np.asarray(pos, dtype=float), yaw
    center = world.bounds.mean(axis=0)
    return np.array([center[0], center[1], 1.5]), float(config.start_yaw or 0.0)


def _shell_free_fraction(grid: OccupancyGrid, robot_pos, radius=10.0, z_min=2.0) -> float:
    """Fraction of grid cells above z_min within `radius` of the robot that
    are marked free."""
    lo = grid.cell_of(np.asarray(robot_pos) - radius)[0]
    hi = grid.cell_of(np.asarray(robot_pos) + radius)[0] + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, np.asarray(grid.shape))
    if np.any(lo >= hi):
        return 0.0
    sub = grid.state[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    xs = (np.arange(lo[0], hi[0]) + grid.lo_cell[0] + 0.5) * grid.cell
    ys = (np.arange(lo[1], hi[1]) + grid.lo_cell[1] + 0.5) * grid.cell
    zs = (np.arange(lo[2], hi[2]) + grid.lo_cell[2] + 0.5) * grid.cell
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    p = np.asarray(robot_pos, dtype=float)
    in_shell = ((gx - p[0]) ** 2 + (gy - p[1]) ** 2 + (gz - p[2]) ** 2
                <= radius ** 2) & (gz > z_min)
    total = int(in_shell.sum())
    if total == 0:
        return 0.0
    return float(((sub == FREE) & in_shell).sum()) / total


class _Robot:
    def __init__(self, start: np.ndarray, yaw: float):
        self.position = start.copy()
        self.yaw = yaw
        self.trajectory: TrajectorySegment | None = None

    def follow(self, traj: TrajectorySegment):
        self.trajectory = traj

    def advance(self, t: float):
        if self.trajectory is not None:
            self.position, self.yaw = self.trajectory.sample(t)

    def pose(self) -> Pose:
        return Pose(self.position.copy(), yaw=self.yaw)


def run_episode(config: EpisodeConfig) -> EpisodeResult:
    try:
        world = make_world(config.world)
    except errors.MalformedSpec:
        raise
    except OSError as exc:
        raise errors.WorldLoadFailure(str(exc)) from exc

    sensor_cfg = SensorConfig(**config.sensor)
    camera = sensor_cfg.camera()
    map_cfg = MapConfig(audit=config.audit, **config.mapping)
    planning = dict(config.planning)
    planning.setdefault("bbox", world.bounds.tolist())
    plan_cfg = PlanConfig(**planning)
    plan_cfg.bbox = np.asarray(plan_cfg.bbox, dtype=float)
    grid_cfg = GridConfig(**config.grid)

    start, start_yaw = _resolve_start(config, world)
    tracker = FeatureTracker(world, sensor_cfg, seed=config.seed, audit=config.audit)
    robot = _Robot(start, start_yaw)

    is_grid = config.method == "grid_baseline"
    smap = planner = grid = gexp = None
    if is_grid:
        tri_lo = world.triangles.reshape(-1, 3).min(axis=0) if len(world.triangles) else world.bounds[0]
        tri_hi = world.triangles.reshape(-1, 3).max(axis=0) if len(world.triangles) else world.bounds[1]
        grid_bounds = [np.minimum(tri_lo, world.bounds[0]), np.maximum(tri_hi, world.bounds[1])]
        grid = OccupancyGrid(grid_bounds, cell_size=grid_cfg.cell_size, m_hit=grid_cfg.m_hit)
        gexp = GridExplorer(grid, grid_cfg, np.random.default_rng((config.seed, 551)),
                            bbox=plan_cfg.bbox)
    else:
        smap = SphereMap(map_cfg, camera, seed=config.seed)
        planner = Planner(plan_cfg, seed=config.seed, ablations=config.ablations)

    dt = 1.0 / config.sense_hz
    n_frames = int(round(config.duration * config.sense_hz))
    boot = bootstrap_trajectory(start, start_yaw) if config.bootstrap else None
    if boot is not None:
        robot.follow(boot)
    boot_end = boot.t_end if boot is not None else 0.0

    columns: set = set()
    series: list = []
    trajectory_log: list = []
    guard_stops = 0
    crashed = False
    crash_time = None
    mission_complete = False
    returning = False
    next_plan_t = boot_end
    volume = 0.0
    max_volume = 0.0
    plan_tick = 0
    shell_max = 0.0
    last_p_full = None

    for k in range(n_frames):
        t = k * dt
        robot.advance(t)
        if ground_truth_collision(world, robot.position, plan_cfg.robot_radius):
            crashed = True
            crash_time = round(t, 6)
            break
        pose = robot.pose()
        trajectory_log.append([round(t, 3)] + [round(float(x), 6) for x in pose.position]
                              + [round(pose.yaw, 6)])
        frame = tracker.observe(pose, t)

        if is_grid:
            if len(frame.stable_subset):
                raytrace_update(grid, pose, frame.stable_positions)
            if t >= next_plan_t and t >= boot_end:
                next_plan_t += grid_cfg.replan_period
                path = gexp.tick(pose, t)
                if path is not None:
                    poly = np.vstack([pose.position[None, :], np.asarray(path)])
                    robot.follow(heading_profile(poly, None, plan_cfg,
                                                 start_yaw=robot.yaw, t0=t))
            shell = _shell_free_fraction(grid, robot.position)
            shell_max = max(shell_max, shell)
            new_cells = grid.known_cells()
            if len(new_cells):
                columns |= column_indices(grid.center_of(new_cells), plan_cfg.bbox)
            n_elem = grid.counts()
            elem_count = n_elem["free"] + n_elem["occupied"]
            frontier_count = 0
            blocked_count = 0
        else:
            delta = smap.update(frame, ablations=config.ablations)
            if delta.p_full is not None:
                last_p_full = delta.p_full
            if t >= next_plan_t and t >= boot_end:
                next_plan_t += config.plan_period
                plan_tick += 1
                if not returning and (planner.no_candidate_ticks >= plan_cfg.mission_end_ticks
                                      or planner.no_plan_ticks >= 60):
                    returning = True
                if returning:
                    done = float(np.linalg.norm(robot.position - start)) <= 1.0
                    if done:
                        mission_complete = True
                        break
                    try:
                        from .exploration import plan_path
                        planned = plan_path(smap.snapshot(), robot.position, start, plan_cfg)
                    except (errors.StartNotInFreeSpace, errors.GoalNotInFreeSpace):
                        planned = None
                    if planned is not None:
                        _, poly, _ = planned
                        robot.follow(heading_profile(
                            poly, None, plan_cfg, start_yaw=robot.yaw, t0=t,
                            no_fff="no_fff" in config.ablations))
                else:
                    traj = planner.tick(smap.snapshot(), last_p_full, robot.position,
                                        robot.yaw, t, audit=config.audit)
                    if traj is not None:
                        robot.follow(traj)
            # The guard engages after the scripted bootstrap (analogous to
            # arming obstacle avoidance after takeoff).
            if t >= boot_end and collision_guard(
                    robot.trajectory, frame, plan_cfg.robot_radius,
                    now_t=t, margin=plan_cfg.guard_margin,
                    lookahead=plan_cfg.guard_lookahead):
                guard_stops += 1
                robot.follow(_evade_sidestep(robot, frame, plan_cfg, t))
                if planner is not None:
                    planner.interrupt()
            ids, centers, radii = smap.graph.arrays()
            pos, _, _ = smap.omap.arrays()
            if len(centers):
                columns |= column_indices(centers, plan_cfg.bbox)
            if len(pos):
                columns |= column_indices(pos, plan_cfg.bbox)
            elem_count = len(centers) + len(pos)
            frontier_count = len(planner.frontiers)
            blocked_count = len(planner.blocked)

        if (k % max(int(config.volume_every), 1)) == 0 or k == n_frames - 1:
            if is_grid:
                volume = explored_volume(grid)
            else:
                _, centers, radii = smap.graph.arrays()
                volume = explored_volume((centers, radii))
            max_volume = max(max_volume, volume)
        area = COLUMN_SIZE ** 2 * len(columns)
        series.append([round(t, 3), round(area, 6), round(volume, 6), frontier_count,
                       elem_count, blocked_count, round(shell_max, 6)])

    # Final volume evaluation (unless the loop never ran).
    if n_frames > 0 and not crashed:
        if is_grid:
            volume = explored_volume(grid)
        else:
            _, centers, radii = smap.graph.arrays()
            volume = explored_volume((centers, radii))
        max_volume = max(max_volume, volume)

    area = COLUMN_SIZE ** 2 * len(columns)
    result = EpisodeResult(
        world=_world_name(config.world),
        method=config.method,
        ablations=sorted(config.ablations),
        seed=config.seed,
        duration=config.duration,
        explored_area=round(area, 6),
        explored_volume=round(volume, 6),
        max_volume=round(max_volume, 6),
        crashed=crashed,
        crash_time=crash_time,
        mission_complete=mission_complete,
        guard_stops=guard_stops,
        revisit_count=planner.revisit_count if planner else 0,
        safety_violations=smap.safety_violations if smap else 0,
        watertight_failures=smap.watertight_failures if smap else 0,
        audited_polyhedra=smap.frames_with_polyhedron if smap else 0,
        frontier_audit_failures=planner.frontier_audit_failures if planner else 0,
        heading_audit_max=round(max(planner.heading_audit), 12) if planner and planner.heading_audit else 0.0,
        path_clearance_min=round(min(planner.path_clearance_audit), 6)
        if planner and planner.path_clearance_audit else math.inf,
        shell_free_fraction_max=round(shell_max, 6),
        n_frames=len(trajectory_log),
        columns=sorted([int(a), int(b)] for a, b in columns),
        series=series,
        trajectory=trajectory_log,
    )
    if result.path_clearance_min == math.inf:
        result.path_clearance_min = -1.0  # no paths were planned

    if config.out_dir:
        bundle = {"events": []}
        if smap is not None:
            snap = smap.snapshot()
            bundle.update({
                "sphere_centers": snap.centers,
                "sphere_radii": snap.radii,
                "obstacle_positions": snap.obstacle_positions,
                "obstacle_dm": snap.obstacle_dm,
            })
            bundle["events"] = [
                {"tick": e.tick, "viewpoint": e.viewpoint, "path_cost": e.path_cost,
                 "frontier_count": e.frontier_count, "blocked_count": e.blocked_count}
                for e in planner.events]
        else:
            occ = grid.occupied_cells()
            bundle.update({
                "obstacle_positions": grid.center_of(occ) if len(occ) else np.zeros((0, 3)),
                "obstacle_dm": np.zeros(len(occ)),
                "sphere_centers": np.zeros((0, 3)),
                "sphere_radii": np.zeros(0),
                "grid_cells": {f"{k_}": v for k_, v in sorted(grid.sparse_cells().items())},
            })
        export_artifacts(result, bundle, config.out_dir)
    return result


def _evade_sidestep(robot: _Robot, frame, plan_cfg: PlanConfig, t: float) -> TrajectorySegment:
    """Guard response: halt and sidestep half a meter away from the nearest
    tracked point, keeping the current heading (sideways motion restores
    parallax on whatever triggered the stop)."""
    pose = robot.pose()
    left = pose.left()
    if len(frame.est_positions):
        d = np.linalg.norm(frame.est_positions - robot.position, axis=1)
        threat = frame.est_positions[int(np.argmin(d))]
        side = 1.0 if float(np.dot(left, robot.position - threat)) >= 0 else -1.0
    else:
        side = 1.0
    target = robot.position + side * 0.5 * left
    times = np.array([t, t + 0.5 / plan_cfg.max_speed])
    return TrajectorySegment(
        times=times, positions=np.stack([robot.position, target]),
        yaws=np.array([robot.yaw, robot.yaw]), terminal_alignment=False)


# ---------------------------------------------------------------------------
# Batch and report
# ---------------------------------------------------------------------------

def run_batch(matrix: dict, out_root: str) -> list:
    """Run the (world x method/ablation x seed) matrix sequentially; one
    output directory per run."""
    results = []
    worlds = matrix.get("worlds", [])
    methods = matrix.get("methods", [{"method": "monospheres"}])
    seeds = matrix.get("seeds", [0])
    duration = float(matrix.get("duration", 120.0))
    overrides = {k: matrix[k] for k in ("sensor", "mapping", "planning", "grid")
                 if k in matrix}
    for wspec in worlds:
        for m in methods:
            for seed in seeds:
                method = m.get("method", "monospheres")
                ablations = frozenset(m.get("ablations", []))
                tag = "-".join([_world_name(wspec), method] + sorted(ablations) + [f"s{seed}"])
                cfg = EpisodeConfig(
                    world=wspec, method=method, ablations=ablations,
                    duration=duration, seed=seed,
                    out_dir=os.path.join(out_root, tag), **overrides)
                results.append(run_episode(cfg))
    return results


def write_report(in_dir: str, out_path: str | None = None) -> str:
    """Aggregate run directories under in_dir into a Markdown table plus a
    CSV; returns the Markdown text."""
    rows = []
    for root, _, files in sorted(os.walk(in_dir)):
        if "metrics.json" in files:
            with open(os.path.join(root, "metrics.json")) as f:
                rows.append(json.load(f))
    groups: dict = {}
    for r in rows:
        key = (r["method"], ",".join(r["ablations"]), r["world"])
        groups.setdefault(key, []).append(r)

    out = io.StringIO()
    out.write("| Method | Ablations | World | Runs | Mean A [m2] | Max A [m2] "
              "| Max V [m3] | Crashes |\n")
    out.write("|---|---|---|---|---|---|---|---|\n")
    csv_rows = [["method", "ablations", "world", "runs", "mean_area", "max_area",
                 "max_volume", "crashes"]]
    for key in sorted(groups):
        rs = groups[key]
        areas = [r["explored_area"] for r in rs]
        vols = [r["max_volume"] for r in rs]
        crashes = sum(1 for r in rs if r["crashed"])
        method, abl, world = key
        out.write(f"| {method} | {abl or '-'} | {world} | {len(rs)} "
                  f"| {np.mean(areas):.1f} | {np.max(areas):.1f} "
                  f"| {np.max(vols):.1f} | {crashes}/{len(rs)} |\n")
        csv_rows.append([method, abl, world, len(rs), f"{np.mean(areas):.3f}",
                         f"{np.max(areas):.3f}", f"{np.max(vols):.3f}",
                         f"{crashes}/{len(rs)}"])
    text = out.getvalue()
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
        with open(os.path.splitext(out_path)[0] + ".csv", "w", newline="") as f:
            csv.writer(f).writerows(csv_rows)
    return text
