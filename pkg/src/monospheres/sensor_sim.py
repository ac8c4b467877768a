"""Synthetic world and a sparse motion-parallax depth sensor.

The sensor emulates a monocular SLAM frontend: features are only usable for
depth once enough perpendicular baseline has accumulated, estimated positions
carry along-ray noise that shrinks as the estimate converges, and features on
textureless or back-facing surfaces are never detected. Poses handed to the
mapping side are ground truth (state estimation drift is out of scope).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .geometry import PinholeCamera, Pose, point_triangle_distance, ray_triangles

BASELINE_EPS = 1e-6


@dataclass(frozen=True)
class SensorConfig:
    hfov_deg: float = 120.0
    vfov_deg: float = 90.0
    sigma0: float = 0.01          # triangulation noise coefficient (m)
    gamma: float = 0.3            # stability threshold on sigma (m)
    sigma_cap: float = 1.0        # cap applied to the noise actually injected
    n_lost: int = 30              # frames of absence before a track dies
    max_range: float = 30.0       # global detection range cap

    def camera(self) -> PinholeCamera:
        return PinholeCamera(math.radians(self.hfov_deg), math.radians(self.vfov_deg))


def depth_stability(depth, baseline, sigma0: float, gamma: float):
    """Triangulation noise sigma = sigma0 * d^2 / max(b, eps) and the
    stability verdict sigma <= gamma."""
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise errors.NonpositiveDepth("depth must be positive")
    b = np.maximum(np.asarray(baseline, dtype=float), BASELINE_EPS)
    sigma = sigma0 * d * d / b
    stable = sigma <= gamma
    if np.isscalar(depth) or d.ndim == 0:
        return float(sigma), bool(stable)
    return sigma, stable


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class World:
    """Triangle soup with per-triangle texture density plus pre-sampled
    surface features and an exploration bounding box."""

    triangles: np.ndarray          # (T, 3, 3)
    texture_density: np.ndarray    # (T,) features per m^2
    detect_range: np.ndarray       # (T,) max detection distance (inf allowed)
    bounds: np.ndarray             # (2, 3) axis-aligned exploration box
    seed: int
    features: np.ndarray = field(default=None)         # (M, 3)
    feature_surface: np.ndarray = field(default=None)  # (M,)
    feature_normal: np.ndarray = field(default=None)   # (M, 3)

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=float).reshape(-1, 3, 3)
        self.texture_density = np.asarray(self.texture_density, dtype=float).reshape(-1)
        self.detect_range = np.asarray(self.detect_range, dtype=float).reshape(-1)
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(2, 3)
        if self.features is None:
            self._sample_features()

    def _sample_features(self):
        rng = np.random.default_rng(self.seed)
        pts, surf = [], []
        for i, tri in enumerate(self.triangles):
            area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
            count = int(round(self.texture_density[i] * area))
            if count <= 0:
                continue
            r1 = np.sqrt(rng.uniform(size=count))
            r2 = rng.uniform(size=count)
            p = ((1 - r1)[:, None] * tri[0]
                 + (r1 * (1 - r2))[:, None] * tri[1]
                 + (r1 * r2)[:, None] * tri[2])
            pts.append(p)
            surf.append(np.full(count, i, dtype=np.int64))
        if pts:
            self.features = np.vstack(pts)
            self.feature_surface = np.concatenate(surf)
        else:
            self.features = np.zeros((0, 3))
            self.feature_surface = np.zeros(0, dtype=np.int64)
        normals = np.cross(self.triangles[:, 1] - self.triangles[:, 0],
                           self.triangles[:, 2] - self.triangles[:, 0])
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = normals / np.where(norms < 1e-12, 1.0, norms)
        self.feature_normal = normals[self.feature_surface]
        self._tri_normals = normals

    @property
    def num_features(self) -> int:
        return len(self.features)

    def surface_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)


def ground_truth_collision(world: World, position, robot_radius: float) -> bool:
    """True iff any world triangle is within robot_radius (closed) of the
    position. Crash detector for the episode loop; never used by mapping."""
    if robot_radius <= 0:
        raise ValueError("robot_radius must be positive")
    if len(world.triangles) == 0:
        return False
    p = np.asarray(position, dtype=float).reshape(1, 3)
    return bool(point_triangle_distance(p, world.triangles).min() <= robot_radius)


# ---------------------------------------------------------------------------
# World generators
# ---------------------------------------------------------------------------

def _quad(p0, p1, p2, p3):
    """Two triangles for the quad p0-p1-p2-p3 (counterclockwise winding;
    the texture side is the one the normal points toward)."""
    p0, p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p0, p1, p2, p3))
    return [np.stack([p0, p1, p2]), np.stack([p0, p2, p3])]


def _box(lo, hi, skip=()):
    """Axis-aligned box faces with outward normals, optionally skipping
    named faces ('x-', 'x+', 'y-', 'y+', 'z-', 'z+')."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    faces = {
        "x-": _quad((x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0)),
        "x+": _quad((x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1)),
        "y-": _quad((x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1)),
        "y+": _quad((x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0)),
        "z-": _quad((x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0)),
        "z+": _quad((x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)),
    }
    out = {}
    for name, tris in faces.items():
        if name not in skip:
            out[name] = tris
    return out


class _WorldBuilder:
    def __init__(self):
        self.tris: list[np.ndarray] = []
        self.density: list[float] = []
        self.rng_range: list[float] = []

    def add(self, tris, density: float, detect_range: float = math.inf):
        for t in tris:
            self.tris.append(t)
            self.density.append(density)
            self.rng_range.append(detect_range)

    def add_box(self, lo, hi, density, detect_range=math.inf, skip=("z-",),
                face_density=None):
        faces = _box(lo, hi, skip=skip)
        for name, tris in faces.items():
            d = density
            if face_density and name in face_density:
                d = face_density[name]
            self.add(tris, d, detect_range)

    def build(self, bounds, seed) -> World:
        return World(
            triangles=np.stack(self.tris) if self.tris else np.zeros((0, 3, 3)),
            texture_density=np.array(self.density),
            detect_range=np.array(self.rng_range),
            bounds=np.asarray(bounds, dtype=float),
            seed=seed,
        )


def _world_open_field(params: dict, seed: int) -> World:
    side = float(params.get("side", 36.0))
    density = float(params.get("ground_density", 0.6))
    h = side / 2.0
    b = _WorldBuilder()
    b.add(_quad((-h, -h, 0), (h, -h, 0), (h, h, 0), (-h, h, 0)), density)
    bounds = [[-h, -h, 0.3], [h, h, float(params.get("ceiling", 6.0))]]
    return b.build(bounds, seed)


def _world_corridor(params: dict, seed: int) -> World:
    length = float(params.get("length", 30.0))
    width = float(params.get("width", 6.0))
    height = float(params.get("height", 3.5))
    gd = float(params.get("ground_density", 0.8))
    wd = float(params.get("wall_density", 1.2))
    hl, hw = length / 2.0, width / 2.0
    b = _WorldBuilder()
    b.add(_quad((-hl, -hw, 0), (hl, -hw, 0), (hl, hw, 0), (-hl, hw, 0)), gd)
    b.add(_quad((-hl, -hw, 0), (-hl, -hw, height), (hl, -hw, height), (hl, -hw, 0)), wd)
    b.add(_quad((-hl, hw, 0), (hl, hw, 0), (hl, hw, height), (-hl, hw, height)), wd)
    bounds = [[-hl, -hw, 0.3], [hl, hw, height - 0.5]]
    return b.build(bounds, seed)


def _world_courtyard_with_rods(params: dict, seed: int) -> World:
    """Textured U-shaped courtyard opening into a field: a one-face-textured
    marker post in the mouth, range-limited crates in the field, and thin
    featureless rods."""
    gd = float(params.get("ground_density", 0.55))
    wd = float(params.get("wall_density", 1.4))
    wall_h = 4.0
    b = _WorldBuilder()
    b.add(_quad((-10, -11, 0), (14, -11, 0), (14, 11, 0), (-10, 11, 0)), gd)
    # Back wall (faces +x, toward the courtyard interior).
    b.add(_quad((-10, -8, 0), (-10, 8, 0), (-10, 8, wall_h), (-10, -8, wall_h)), wd)
    # Side walls, textured on both faces (the outside is world, too).
    b.add(_quad((-10, -8, 0), (-10, -8, wall_h), (0, -8, wall_h), (0, -8, 0)), wd)
    b.add(_quad((-10, -8.05, 0), (0, -8.05, 0), (0, -8.05, wall_h), (-10, -8.05, wall_h)), wd)
    b.add(_quad((-10, 8, 0), (0, 8, 0), (0, 8, wall_h), (-10, 8, wall_h)), wd)
    b.add(_quad((-10, 8.05, 0), (-10, 8.05, wall_h), (0, 8.05, wall_h), (0, 8.05, 0)), wd)
    # Far wall at the field's end, facing back toward the courtyard.
    b.add(_quad((12, -10, 0), (12, -10, wall_h), (12, 10, wall_h), (12, 10, 0)), wd)
    # Smooth pane in the mouth corridor: textured only on the face toward
    # the courtyard, detectable only from nearby; blind from the field side.
    pane_lo, pane_hi = np.array([1.3, -0.4, 0.0]), np.array([1.45, 1.8, 3.2])
    b.add_box(pane_lo, pane_hi, 0.0, skip=("z-",))
    b.add(_quad((pane_lo[0], pane_lo[1], pane_lo[2]),
                (pane_lo[0], pane_lo[1], pane_hi[2]),
                (pane_lo[0], pane_hi[1], pane_hi[2]),
                (pane_lo[0], pane_hi[1], pane_lo[2])),
          float(params.get("post_density", 60.0)),
          detect_range=float(params.get("post_detect_range", 6.0)))
    # Field crates along the exploration axis: textured on all sides but
    # only detectable from close by.
    crate_def = params.get("crates", [((6.5, 1.8), 1.7), ((9.0, -2.8), 1.7),
                                      ((8.5, 4.5), 1.6)])
    for (cx, cy), s in crate_def:
        b.add_box((cx - s / 2, cy - s / 2, 0.0), (cx + s / 2, cy + s / 2, s),
                  float(params.get("crate_density", 30.0)),
                  detect_range=float(params.get("crate_detect_range", 7.0)),
                  skip=("z-",))
    # Featureless rods, tucked inside the clearance shadow of textured walls
    # (present as undetectable geometry without sitting on flight lines).
    for (rx, ry) in params.get("rods", [(11.55, -8.0), (11.55, 8.0), (-9.55, 7.55)]):
        b.add_box((rx - 0.1, ry - 0.1, 0.0), (rx + 0.1, ry + 0.1, 4.0), 0.0, skip=("z-",))
    bounds = [[-9.5, -8.5, 0.3], [11.5, 8.5, 5.0]]
    return b.build(bounds, seed)


def _world_two_rooms(params: dict, seed: int) -> World:
    """Two textured rooms joined by a wide doorway; room A's west wall is
    featureless except for a textured beam along its top edge."""
    wd = float(params.get("wall_density", 3.0))
    gd = float(params.get("ground_density", 1.5))
    wall_h = 4.0
    b = _WorldBuilder()
    # Shared floor under both rooms.
    b.add(_quad((-6, -5, 0), (10, -5, 0), (10, 5, 0), (-6, 5, 0)), gd)
    # Room A (x in [-6, 0], y in [-3, 3]).
    # West wall: featureless, faces +x.
    b.add(_quad((-6, -3, 0), (-6, 3, 0), (-6, 3, wall_h), (-6, -3, wall_h)), 0.0)
    # Textured beam along the featureless wall's top edge.
    b.add(_quad((-6, -3, 3.2), (-6, 3, 3.2), (-6, 3, wall_h), (-6, -3, wall_h)), 0.0)
    b.add(_quad((-5.9, -3, 3.2), (-5.9, 3, 3.2), (-5.9, 3, 3.8), (-5.9, -3, 3.8)), 8.0)
    # Room A side walls (face inward).
    b.add(_quad((-6, -3, 0), (-6, -3, wall_h), (0, -3, wall_h), (0, -3, 0)), wd)
    b.add(_quad((-6, 3, 0), (0, 3, 0), (0, 3, wall_h), (-6, 3, wall_h)), wd)
    # Dividing wall at x=0 with a doorway gap y in [-2, 2]; stubs face -x.
    b.add(_quad((0, -3, 0), (0, -3, wall_h), (0, -2, wall_h), (0, -2, 0)), wd)
    b.add(_quad((0, 2, 0), (0, 2, wall_h), (0, 3, wall_h), (0, 3, 0)), wd)
    # Same stubs seen from room B (face +x).
    b.add(_quad((0.05, -3, 0), (0.05, -2, 0), (0.05, -2, wall_h), (0.05, -3, wall_h)), wd)
    b.add(_quad((0.05, 2, 0), (0.05, 3, 0), (0.05, 3, wall_h), (0.05, 2, wall_h)), wd)
    # Room B (x in [0, 10], y in [-5, 5]) walls, textured, facing inward.
    b.add(_quad((10, -5, 0), (10, -5, wall_h), (10, 5, wall_h), (10, 5, 0)), wd)
    b.add(_quad((0, -5, 0), (0, -5, wall_h), (10, -5, wall_h), (10, -5, 0)), wd)
    b.add(_quad((0, 5, 0), (10, 5, 0), (10, 5, wall_h), (0, 5, wall_h)), wd)
    bounds = [[-5.5, -4.5, 0.4], [9.5, 4.5, 3.0]]
    return b.build(bounds, seed)


_GENERATORS = {
    "open_field": _world_open_field,
    "corridor": _world_corridor,
    "courtyard_with_rods": _world_courtyard_with_rods,
    "two_rooms": _world_two_rooms,
}


def make_world(spec) -> World:
    """Build a world from a spec dict (or a path to a JSON file).

    Either {"generator": name, "seed": int, "params": {...}} for a built-in
    generator, or an explicit {"surfaces": [{"vertices": [[...]x3],
    "density": float, "detect_range": float}], "bounds": [[lo],[hi]],
    "seed": int}.
    """
    if isinstance(spec, str):
        try:
            with open(spec) as f:
                spec = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise errors.WorldLoadFailure(str(exc)) from exc
    if not isinstance(spec, dict):
        raise errors.MalformedSpec("world spec must be a dict or a path")
    seed = int(spec.get("seed", 0))
    if "generator" in spec:
        gen = _GENERATORS.get(spec["generator"])
        if gen is None:
            raise errors.MalformedSpec(f"unknown generator {spec['generator']!r}")
        return gen(spec.get("params", {}), seed)
    if "surfaces" not in spec or "bounds" not in spec:
        raise errors.MalformedSpec("explicit spec needs 'surfaces' and 'bounds'")
    tris, dens, rng_range = [], [], []
    try:
        for s in spec["surfaces"]:
            v = np.asarray(s["vertices"], dtype=float)
            if v.shape != (3, 3):
                raise errors.MalformedSpec("surface vertices must be 3x3")
            tris.append(v)
            dens.append(float(s.get("density", 0.0)))
            rng_range.append(float(s.get("detect_range", math.inf)))
        bounds = np.asarray(spec["bounds"], dtype=float).reshape(2, 3)
    except (KeyError, TypeError, ValueError) as exc:
        raise errors.MalformedSpec(str(exc)) from exc
    return World(
        triangles=np.stack(tris) if tris else np.zeros((0, 3, 3)),
        texture_density=np.array(dens),
        detect_range=np.array(rng_range),
        bounds=bounds,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Tracking
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TrackedPoint:
    """What the frontend exposes for one tracked feature. Ground-truth
    positions never appear here; mapping consumes these fields only."""

    feature_id: int
    est_position: np.ndarray
    d_min_obs: float
    stable: bool
    first_obs_pose: Pose
    last_obs_pose: Pose


@dataclass(eq=False)
class FrameObservation:
    pose: Pose
    tracked: list
    stable_subset: np.ndarray
    timestamp: float

    def __post_init__(self):
        n = len(self.tracked)
        self.est_positions = (np.array([t.est_position for t in self.tracked])
                              if n else np.zeros((0, 3)))
        self.stable_mask = np.zeros(n, dtype=bool)
        self.stable_mask[self.stable_subset] = True
        self.d_min = np.array([t.d_min_obs for t in self.tracked]) if n else np.zeros(0)
        self.feature_ids = (np.array([t.feature_id for t in self.tracked], dtype=np.int64)
                            if n else np.zeros(0, dtype=np.int64))

    @property
    def stable_positions(self) -> np.ndarray:
        return self.est_positions[self.stable_mask]

    @property
    def stable_d_min(self) -> np.ndarray:
        return self.d_min[self.stable_mask]


class _Track:
    __slots__ = ("feature_id", "gen", "first_pose", "noise_u", "baseline",
                 "sigma_min", "stable", "d_min", "miss", "last_pose")

    def __init__(self, feature_id, gen, pose, noise_u):
        self.feature_id = feature_id
        self.gen = gen
        self.first_pose = pose
        self.noise_u = noise_u
        self.baseline = 0.0
        self.sigma_min = math.inf
        self.stable = False
        self.d_min = math.inf
        self.miss = 0
        self.last_pose = pose


class FeatureTracker:
    """Incremental sparse-SLAM frontend emulator.

    Deterministic per (world, seed): the noise draw for a track depends only
    on (seed, feature_id, acquisition generation), so replaying the same pose
    history reproduces the same observations.
    """

    def __init__(self, world: World, config: SensorConfig = SensorConfig(),
                 seed: int = 0, audit: bool = False):
        self.world = world
        self.config = config
        self.camera = config.camera()
        self.seed = seed
        self.audit = audit
        self.tracks: dict[int, _Track] = {}
        self._gen_count: dict[int, int] = {}
        self.audit_failures = 0

    def _visible_mask(self, pose: Pose) -> np.ndarray:
        w = self.world
        if w.num_features == 0:
            return np.zeros(0, dtype=bool)
        _, depth, in_fov = self.camera.project(pose, w.features)
        cam = pose.position
        delta = w.features - cam
        dist = np.linalg.norm(delta, axis=1)
        front = np.einsum("ij,ij->i", w.feature_normal, -delta) > 1e-9
        in_range = (dist <= w.detect_range[w.feature_surface]) & (dist <= self.config.max_range)
        vis = in_fov & front & in_range
        idx = np.nonzero(vis)[0]
        if len(idx) and len(w.triangles):
            dirs = delta[idx] / dist[idx][:, None]
            occluded = np.zeros(len(idx), dtype=bool)
            chunk = 256
            for s in range(0, len(idx), chunk):
                sl = slice(s, min(s + chunk, len(idx)))
                t, hit, _ = ray_triangles(np.tile(cam, (sl.stop - sl.start, 1)),
                                          dirs[sl], w.triangles)
                tmin = t.min(axis=1)
                occluded[sl] = tmin < dist[idx[sl]] - 1e-6
            vis[idx[occluded]] = False
        return vis

    def observe(self, pose: Pose, timestamp: float) -> FrameObservation:
        cfg = self.config
        vis = self._visible_mask(pose)
        vis_ids = np.nonzero(vis)[0]
        vis_set = set(int(i) for i in vis_ids)

        # Age out tracks that left view.
        for fid in sorted(self.tracks):
            if fid not in vis_set:
                tr = self.tracks[fid]
                tr.miss += 1
                if tr.miss >= cfg.n_lost:
                    del self.tracks[fid]

        cam = pose.position
        n = len(vis_ids)
        true_pos = self.world.features[vis_ids] if n else np.zeros((0, 3))
        delta = true_pos - cam
        dist = np.linalg.norm(delta, axis=1) if n else np.zeros(0)
        rays = delta / dist[:, None] if n else np.zeros((0, 3))

        # Acquire new tracks (per-track seeded noise draw).
        for fid in map(int, vis_ids):
            if fid not in self.tracks:
                gen = self._gen_count.get(fid, 0)
                self._gen_count[fid] = gen + 1
                noise_u = float(np.random.default_rng(
                    (self.seed, fid, gen)).standard_normal())
                self.tracks[fid] = _Track(fid, gen, pose, noise_u)

        # Vectorized track refresh: distances, perpendicular baselines
        # against each track's first pose, stability latch, noise scale.
        first_pos = (np.stack([self.tracks[int(f)].first_pose.position for f in vis_ids])
                     if n else np.zeros((0, 3)))
        disp = cam - first_pos
        perp = disp - (np.einsum("ij,ij->i", disp, rays))[:, None] * rays
        perp_n = np.linalg.norm(perp, axis=1) if n else np.zeros(0)
        tracked: list[TrackedPoint] = []
        stable_idx: list[int] = []
        for k, fid in enumerate(map(int, vis_ids)):
            tr = self.tracks[fid]
            tr.miss = 0
            tr.last_pose = pose
            d = float(dist[k])
            if d < tr.d_min:
                tr.d_min = d
            if perp_n[k] > tr.baseline:
                tr.baseline = float(perp_n[k])
            b = tr.baseline if tr.baseline > BASELINE_EPS else BASELINE_EPS
            sigma = cfg.sigma0 * d * d / b
            if sigma < tr.sigma_min:
                tr.sigma_min = sigma
            if sigma <= cfg.gamma:
                tr.stable = True
            noise = tr.noise_u * min(tr.sigma_min, cfg.sigma_cap)
            est = true_pos[k] + noise * rays[k]
            if tr.stable:
                stable_idx.append(len(tracked))
            tracked.append(TrackedPoint(
                feature_id=fid, est_position=est, d_min_obs=tr.d_min,
                stable=tr.stable, first_obs_pose=tr.first_pose, last_obs_pose=pose))

        frame = FrameObservation(pose=pose, tracked=tracked,
                                 stable_subset=np.array(stable_idx, dtype=np.int64),
                                 timestamp=timestamp)
        if self.audit:
            self._audit_frame(pose, vis_ids, true_pos, dist, rays)
        return frame

    def _audit_frame(self, pose: Pose, vis_ids, true_pos, dist, rays):
        # Occlusion soundness: no emitted feature's true sightline may cross
        # a nearer surface. Batched over the frame.
        if len(vis_ids) == 0 or len(self.world.triangles) == 0:
            return
        cam = pose.position
        chunk = 256
        for s in range(0, len(vis_ids), chunk):
            sl = slice(s, min(s + chunk, len(vis_ids)))
            t, hit, _ = ray_triangles(np.tile(cam, (sl.stop - sl.start, 1)),
                                      rays[sl], self.world.triangles)
            tmin = t.min(axis=1)
            self.audit_failures += int((hit.any(axis=1) & (tmin < dist[sl] - 1e-5)).sum())

    def true_position_for_tests(self, feature_id: int) -> np.ndarray:
        """Sim-internal accessor, for test audits only."""
        return self.world.features[feature_id].copy()


def observe(world: World, pose_history, rng_seed: int,
            config: SensorConfig = SensorConfig(),
            timestamps=None) -> FrameObservation:
    """Stateless convenience: replay the pose history through a fresh
    tracker and return the newest frame."""
    if not pose_history:
        raise ValueError("pose_history must be non-empty, newest pose last")
    tracker = FeatureTracker(world, config, seed=rng_seed)
    if timestamps is None:
        timestamps = [0.1 * i for i in range(len(pose_history))]
    frame = None
    for pose, t in zip(pose_history, timestamps):
        frame = tracker.observe(pose, t)
    return frame
