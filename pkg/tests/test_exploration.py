"""Exploration tests: frontier rules, viewpoints, NBV, path planning,
heading contracts, blocking and the collision guard."""

import math

import numpy as np
import pytest

from monospheres import errors
from monospheres.geometry import PinholeCamera, Pose, build_depth_mesh, build_polyhedron
from monospheres.exploration import (
    FrontierPoint,
    PlanConfig,
    Planner,
    Viewpoint,
    collision_guard,
    generate_viewpoints,
    heading_profile,
    mark_visited_and_block,
    plan_path,
    select_nbv,
    update_frontiers,
)
from monospheres.sensor_sim import FrameObservation, TrackedPoint
from monospheres.sphere_map import MapSnapshot, SphereGraph

CAM = PinholeCamera()


def snapshot_from(spheres, obstacles=(), frame_index=0):
    """spheres: list of (center, radius)."""
    g = SphereGraph()
    for c, r in spheres:
        g.add_sphere(c, r)
    g.recompute_edges_for(list(g.spheres))
    ids, centers, radii = g.arrays()
    obs = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    return MapSnapshot(
        frame_index=frame_index,
        sphere_ids=ids, centers=centers, radii=radii,
        edges=g.edges(),
        adjacency={i: sorted(g.adj[i]) for i in g.adj},
        obstacle_positions=obs,
        obstacle_dm=np.full(len(obs), 5.0),
    )


def wall_polyhedron(pose=None, x=10.0, half=6.0):
    pose = pose or Pose(np.zeros(3))
    ys = np.linspace(-half, half, 4)
    zs = np.linspace(-half / 2, half / 2, 4)
    pts = np.array([(x, y, z) for y in ys for z in zs])
    mesh = build_depth_mesh(pts, pose, CAM)
    return build_polyhedron(mesh, pose)


def cfg(**kw):
    return PlanConfig(**kw)


class TestFrontiers:
    def test_candidate_accepted(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 2.0)],
                             obstacles=[(6.0, 0.0, 0.0)])
        p_full = wall_polyhedron()
        out = update_frontiers(snap, p_full, [], cfg(), np.random.default_rng(0))
        assert len(out) > 0
        for f in out:
            d = np.linalg.norm(f.position - np.array([6.0, 0.0, 0.0]))
            assert cfg().zeta_near <= d <= cfg().zeta_far

    def test_inside_sphere_rejected(self):
        snap = snapshot_from([((5.0, 0.0, 0.0), 3.0)],
                             obstacles=[(6.0, 0.0, 0.0)])
        fr = [FrontierPoint(np.array([5.5, 0.0, 0.0]), 0)]
        out = update_frontiers(snap, None, fr, cfg(), np.random.default_rng(0))
        assert out == []

    def test_anchoring_deletes_far_frontier(self):
        snap = snapshot_from([], obstacles=[(0.0, 0.0, 0.0)])
        fr = [FrontierPoint(np.array([8.0, 0.0, 0.0]), 0)]
        out = update_frontiers(snap, None, fr, cfg(zeta_far=6.0), np.random.default_rng(0))
        assert out == []

    def test_close_to_obstacle_rejected(self):
        snap = snapshot_from([], obstacles=[(4.0, 0.0, 0.0)])
        fr = [FrontierPoint(np.array([4.3, 0.0, 0.0]), 0)]
        out = update_frontiers(snap, None, fr, cfg(), np.random.default_rng(0))
        assert out == []

    def test_spacing_between_frontiers(self):
        snap = snapshot_from([], obstacles=[(5.0, 0.0, 0.0)])
        fr = [FrontierPoint(np.array([3.0, 0.0, 0.0]), 0),
              FrontierPoint(np.array([3.2, 0.0, 0.0]), 1)]
        out = update_frontiers(snap, None, fr, cfg(), np.random.default_rng(0))
        assert len(out) == 1  # the earlier one survives
        assert out[0].created_at == 0


class TestViewpoints:
    def test_single_cluster_viewpoint(self):
        snap = snapshot_from([((2.0, 0.0, 0.0), 2.0)],
                             obstacles=[(8.0, 2.0, 0.0)])
        fr = [FrontierPoint(np.array([6.0, 0.0, 0.0]), 0)]
        vps = generate_viewpoints(fr, snap, [], cfg())
        assert len(vps) == 1
        vp = vps[0]
        assert np.linalg.norm(vp.position - snap.centers[0]) < snap.radii[0]
        to_centroid = fr[0].position - vp.position
        to_centroid /= np.linalg.norm(to_centroid)
        assert np.dot(to_centroid, vp.heading) == pytest.approx(1.0, abs=1e-9)
        d = np.linalg.norm(vp.position - fr[0].position)
        assert cfg().standoff_min - 1e-9 <= d <= cfg().standoff_max + 1e-9

    def test_blocked_region_suppresses(self):
        snap = snapshot_from([((2.0, 0.0, 0.0), 2.0)])
        fr = [FrontierPoint(np.array([6.0, 0.0, 0.0]), 0)]
        free = generate_viewpoints(fr, snap, [], cfg())
        assert len(free) == 1
        blocked = [(free[0].position, free[0].heading)]
        vps = generate_viewpoints(fr, snap, blocked, cfg())
        assert vps == []

    def test_no_frontiers_empty(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 2.0)])
        assert generate_viewpoints([], snap, [], cfg()) == []

    def test_clearance_respected(self):
        snap = snapshot_from([((2.0, 0.0, 0.0), 2.0)],
                             obstacles=[(2.0, 0.5, 0.0)])
        fr = [FrontierPoint(np.array([6.0, 0.0, 0.0]), 0)]
        vps = generate_viewpoints(fr, snap, [], cfg())
        for vp in vps:
            assert np.linalg.norm(vp.position - np.array([2.0, 0.5, 0.0])) >= cfg().d_safe


class TestNbv:
    def two_candidate_setup(self):
        snap = snapshot_from([
            ((0.0, 0.0, 0.0), 1.5),
            ((2.0, 0.0, 0.0), 1.5),
            ((4.0, 0.0, 0.0), 1.5),
            ((0.0, 3.0, 0.0), 1.8),
        ])
        near = Viewpoint(id=0, position=np.array([2.0, 0.5, 0.0]),
                         heading=np.array([1.0, 0.0, 0.0]),
                         target_frontiers=[0, 1])
        far = Viewpoint(id=1, position=np.array([4.0, 0.5, 0.0]),
                        heading=np.array([1.0, 0.0, 0.0]),
                        target_frontiers=[2, 3])
        return snap, near, far

    def test_cheaper_candidate_wins_on_equal_counts(self):
        snap, near, far = self.two_candidate_setup()
        pose = Pose(np.zeros(3))
        pick = select_nbv([near, far], snap, pose, cfg())
        assert pick is near

    def test_unreachable_none(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 1.0), ((50.0, 0.0, 0.0), 1.0)])
        vp = Viewpoint(id=0, position=np.array([50.0, 0.0, 0.0]),
                       heading=np.array([1.0, 0.0, 0.0]), target_frontiers=[0])
        # Reachability exists in the graph only if spheres intersect.
        pick = select_nbv([vp], snap, Pose(np.zeros(3)), cfg())
        assert pick is None

    def test_tie_break_smallest_id(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 3.0)])
        a = Viewpoint(id=0, position=np.array([1.0, 0.0, 0.0]),
                      heading=np.array([1.0, 0.0, 0.0]), target_frontiers=[0])
        b = Viewpoint(id=1, position=np.array([-1.0, 0.0, 0.0]),
                      heading=np.array([1.0, 0.0, 0.0]), target_frontiers=[0])
        pick = select_nbv([a, b], snap, Pose(np.zeros(3)), cfg())
        assert pick is a

    def test_determinism(self):
        snap, near, far = self.two_candidate_setup()
        pose = Pose(np.zeros(3))
        picks = {select_nbv([near, far], snap, pose, cfg()).id for _ in range(5)}
        assert picks == {near.id}


class TestPlanPath:
    def test_two_sphere_direct(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 2.0), ((3.0, 0.0, 0.0), 2.0)])
        chain, poly, cost = plan_path(snap, (0.0, 0.0, 0.0), (3.0, 0.0, 0.0), cfg())
        assert chain == [0, 1]
        assert np.allclose(poly[0], [0, 0, 0]) and np.allclose(poly[-1], [3, 0, 0])

    def test_start_not_in_free_space(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 1.0)])
        with pytest.raises(errors.StartNotInFreeSpace):
            plan_path(snap, (9.0, 0.0, 0.0), (0.0, 0.0, 0.0), cfg())

    def test_goal_not_in_free_space(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 1.0)])
        with pytest.raises(errors.GoalNotInFreeSpace):
            plan_path(snap, (0.0, 0.0, 0.0), (9.0, 0.0, 0.0), cfg())

    def test_disconnected_none(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 1.0), ((10.0, 0.0, 0.0), 1.0)])
        assert plan_path(snap, (0.0, 0.0, 0.0), (10.0, 0.0, 0.0), cfg()) is None

    def six_sphere_fixture(self):
        # Two routes between the end spheres: a short one through a narrow
        # sphere and a slightly longer one through a wide sphere, with the
        # crossover near lambda ~ 1.4. Start/goal sit in exactly one sphere.
        return snapshot_from([
            ((0.0, 0.0, 0.0), 1.2),
            ((2.0, 0.0, 0.0), 0.82),           # narrow middle (short route)
            ((4.0, 0.0, 0.0), 1.2),
            ((2.0, 1.5, 0.0), 2.4),            # wide detour
            ((2.0, 3.8, 0.0), 1.5),            # dead-end branch
            ((2.0, -1.6, 0.0), 1.0),           # dead-end branch
        ])

    def enumerate_paths(self, snap, s, g):
        paths = []

        def walk(node, seen, acc):
            if node == g:
                paths.append(list(acc))
                return
            for nb in snap.adjacency[node]:
                if nb not in seen:
                    walk(nb, seen | {nb}, acc + [nb])

        walk(s, {s}, [s])
        return paths

    def test_lambda_zero_is_pure_shortest(self):
        snap = self.six_sphere_fixture()
        c = cfg(lambda_clear=0.0)
        chain, _, cost = plan_path(snap, (0.0, 0.0, 0.0), (4.0, 0.0, 0.0), c)
        # Brute-force: enumerate all simple paths and compute pure lengths.
        def length(path):
            tot = 0.0
            for a, b in zip(path[:-1], path[1:]):
                ia = list(snap.sphere_ids).index(a)
                ib = list(snap.sphere_ids).index(b)
                tot += np.linalg.norm(snap.centers[ia] - snap.centers[ib])
            return tot
        best = min(self.enumerate_paths(snap, 0, 2), key=length)
        assert length(chain) == pytest.approx(length(best), abs=1e-9)

    def test_clearance_weight_monotone(self):
        snap = self.six_sphere_fixture()
        min_clear = []
        for lam in (0.0, 0.5, 1.0, 2.0, 6.0):
            chain, _, _ = plan_path(snap, (0.0, 0.0, 0.0), (4.0, 0.0, 0.0),
                                    cfg(lambda_clear=lam))
            idx = {int(i): k for k, i in enumerate(snap.sphere_ids)}
            min_clear.append(min(snap.radii[idx[s]] for s in chain))
        assert all(b >= a - 1e-12 for a, b in zip(min_clear, min_clear[1:]))
        assert min_clear[-1] > min_clear[0]  # high weight goes wide

    def test_polyline_clearance_pruning(self):
        # An obstacle point sits on the short route's waist; the planner must
        # route around it.
        snap = snapshot_from([
            ((0.0, 0.0, 0.0), 1.2),
            ((2.0, 0.0, 0.0), 0.9),
            ((4.0, 0.0, 0.0), 1.2),
            ((0.8, 2.8, 0.0), 2.6),
            ((3.2, 2.8, 0.0), 2.6),
        ], obstacles=[(2.0, 0.2, 0.0)])
        out = plan_path(snap, (0.0, 0.0, 0.0), (4.0, 0.0, 0.0), cfg(d_safe=1.5))
        assert out is not None
        chain, poly, _ = out
        d = np.linalg.norm(poly - np.array([2.0, 0.2, 0.0]), axis=1)
        assert d.min() >= 1.5 - 1e-9
        assert 1 not in chain  # the narrow route was pruned


class TestHeadingProfile:
    def test_straight_path_split(self):
        poly = np.array([(0.0, 0.0, 0.0), (10.0, 0.0, 0.0)])
        vp = Viewpoint(id=0, position=np.array([10.0, 0.0, 0.0]),
                       heading=np.array([0.0, 1.0, 0.0]))
        c = cfg(d_c=3.0)
        traj = heading_profile(poly, vp, c, start_yaw=0.0)
        assert traj.terminal_alignment
        # Up to 7 m the yaw is the path direction (0), afterwards pi/2.
        pos, yaw = traj.sample(traj.times[0] + 6.9 / c.max_speed)
        assert yaw == pytest.approx(0.0, abs=1e-6)
        assert traj.terminal_yaw_change(c.d_c) <= 1e-9
        _, yaw_end = traj.sample(traj.t_end)
        assert yaw_end == pytest.approx(math.pi / 2, abs=1e-9)

    def test_short_path_fully_locked(self):
        poly = np.array([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)])
        vp = Viewpoint(id=0, position=np.array([1.0, 0.0, 0.0]),
                       heading=np.array([0.0, 1.0, 0.0]))
        traj = heading_profile(poly, vp, cfg(d_c=3.0), start_yaw=0.0)
        # After the initial in-place alignment, yaw stays at the goal value.
        moving = traj.times > traj.times[np.argmax(np.linalg.norm(
            np.diff(traj.positions, axis=0), axis=1) > 0)]
        assert traj.terminal_yaw_change(3.0) <= 1e-9
        _, yaw_end = traj.sample(traj.t_end)
        assert yaw_end == pytest.approx(math.pi / 2, abs=1e-9)

    def test_no_fff_locks_entire_path(self):
        poly = np.array([(0.0, 0.0, 0.0), (5.0, 0.0, 0.0), (5.0, 5.0, 0.0)])
        vp = Viewpoint(id=0, position=np.array([5.0, 5.0, 0.0]),
                       heading=np.array([1.0, 0.0, 0.0]))
        traj = heading_profile(poly, vp, cfg(), start_yaw=0.3, no_fff=True)
        # Every knot after the initial alignment carries the goal yaw.
        assert np.allclose(traj.yaws[1:], vp.yaw, atol=1e-9)

    def test_fff_tracks_velocity(self):
        poly = np.array([(0.0, 0.0, 0.0), (5.0, 0.0, 0.0), (5.0, 8.0, 0.0)])
        traj = heading_profile(poly, None, cfg(), start_yaw=0.0)
        assert not traj.terminal_alignment
        t_mid = traj.times[0] + 2.0 / cfg().max_speed
        _, yaw = traj.sample(t_mid)
        assert yaw == pytest.approx(0.0, abs=1e-9)
        _, yaw2 = traj.sample(traj.t_end)
        assert yaw2 == pytest.approx(math.pi / 2, abs=1e-9)

    def test_yaw_rate_limited_dwells(self):
        poly = np.array([(0.0, 0.0, 0.0), (3.0, 0.0, 0.0), (3.0, 3.0, 0.0)])
        c = cfg()
        traj = heading_profile(poly, None, c, start_yaw=0.0)
        dt = np.diff(traj.times)
        dyaw = np.abs(np.diff(traj.yaws))
        rates = dyaw[dt > 1e-12] / dt[dt > 1e-12]
        assert np.all(rates <= c.max_yaw_rate + 1e-9)


class TestBlockingAndGuard:
    def make_frame(self, pts, pose=None):
        pose = pose or Pose(np.zeros(3))
        tracked = [TrackedPoint(feature_id=i, est_position=np.asarray(p, float),
                                d_min_obs=5.0, stable=False, first_obs_pose=pose,
                                last_obs_pose=pose) for i, p in enumerate(pts)]
        return FrameObservation(pose=pose, tracked=tracked,
                                stable_subset=np.zeros(0, dtype=np.int64), timestamp=0.0)

    def test_blocking_idempotent(self):
        vp = Viewpoint(id=0, position=np.zeros(3), heading=np.array([1.0, 0.0, 0.0]))
        blocked = []
        mark_visited_and_block(vp, 0, blocked, cfg())
        mark_visited_and_block(vp, 0, blocked, cfg())
        assert len(blocked) == 1
        assert vp.state == "visited"

    def test_no_vpb_never_grows(self):
        vp = Viewpoint(id=0, position=np.zeros(3), heading=np.array([1.0, 0.0, 0.0]))
        blocked = []
        mark_visited_and_block(vp, 0, blocked, cfg(), no_vpb=True)
        assert blocked == []

    def test_guard_stop(self):
        poly = np.array([(0.0, 0.0, 0.0), (5.0, 0.0, 0.0)])
        traj = heading_profile(poly, None, cfg(), start_yaw=0.0)
        frame = self.make_frame([(1.0, 0.3, 0.0)])
        assert collision_guard(traj, frame, 0.5, now_t=traj.times[0]) is True

    def test_guard_proceed(self):
        poly = np.array([(0.0, 0.0, 0.0), (5.0, 0.0, 0.0)])
        traj = heading_profile(poly, None, cfg(), start_yaw=0.0)
        frame = self.make_frame([(1.0, 2.5, 0.0), (3.0, -2.0, 0.0)])
        assert collision_guard(traj, frame, 0.5, now_t=traj.times[0]) is False

    def test_guard_empty_frame(self):
        poly = np.array([(0.0, 0.0, 0.0), (5.0, 0.0, 0.0)])
        traj = heading_profile(poly, None, cfg(), start_yaw=0.0)
        frame = self.make_frame([])
        assert collision_guard(traj, frame, 0.5) is False


class TestPlannerLoop:
    def test_tick_produces_trajectory_and_events(self):
        snap = snapshot_from(
            [((0.0, 0.0, 0.0), 2.0), ((3.0, 0.0, 0.0), 2.2), ((6.0, 0.0, 0.0), 2.2)],
            obstacles=[(9.0, 1.0, 0.0)])
        p_full = wall_polyhedron(Pose(np.zeros(3)), x=9.0)
        planner = Planner(cfg(), seed=0)
        traj = planner.tick(snap, p_full, np.zeros(3), 0.0, t=0.0, audit=True)
        assert planner.events
        assert planner.frontier_audit_failures == 0
        if traj is not None:
            assert traj.terminal_alignment
            assert planner.heading_audit[-1] <= 1e-6

    def test_no_candidates_counts_up(self):
        snap = snapshot_from([((0.0, 0.0, 0.0), 2.0)])
        planner = Planner(cfg(), seed=0)
        for _ in range(3):
            planner.tick(snap, None, np.zeros(3), 0.0, t=0.0)
        assert planner.no_candidate_ticks == 3

    def test_revisit_counter(self):
        planner = Planner(cfg(), seed=0)
        vp = Viewpoint(id=0, position=np.zeros(3), heading=np.array([1.0, 0.0, 0.0]))
        planner.note_visit(vp, 0)
        vp2 = Viewpoint(id=1, position=np.array([0.5, 0.0, 0.0]),
                        heading=np.array([1.0, 0.0, 0.0]))
        planner.note_visit(vp2, 0)
        planner.note_visit(vp2, 0)
        assert planner.revisit_count == 2
