import numpy as np
import pytest

from zonegraph.categories import GOAL_SET
from zonegraph.errors import ConfigError, FormatError, GenerationError, UsageError
from zonegraph.sim import (
    Action,
    CELL,
    Pose,
    YAWS,
    generate_scene,
    goal_visible,
    reset_episode,
    scene_from_text,
    scene_to_text,
    shortest_path_length,
    step,
    visible_objects,
)

from conftest import make_scene


def flood_fill(reach):
    """Independent connectivity oracle on a (depth, width) boolean grid."""
    cells = {(ix, iz) for iz in range(reach.shape[0]) for ix in range(reach.shape[1]) if reach[iz, ix]}
    if not cells:
        return set()
    start = next(iter(sorted(cells)))
    seen = {start}
    stack = [start]
    while stack:
        ix, iz = stack.pop()
        for dx, dz in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            c = (ix + dx, iz + dz)
            if c in cells and c not in seen:
                seen.add(c)
                stack.append(c)
    return seen


def flood_fill_hops(reach, start, targets):
    """Independent BFS distance oracle (hop count)."""
    if start in targets:
        return 0
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for ix, iz in frontier:
            for dx, dz in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                c = (ix + dx, iz + dz)
                if c in dist:
                    continue
                if not (0 <= c[0] < reach.shape[1] and 0 <= c[1] < reach.shape[0]):
                    continue
                if not reach[c[1], c[0]]:
                    continue
                dist[c] = dist[(ix, iz)] + 1
                if c in targets:
                    return dist[c]
                nxt.append(c)
        frontier = nxt
    return None


class TestGeneration:
    def test_deterministic_byte_identical(self):
        a = generate_scene("bedroom", (8, 8), 7)
        b = generate_scene("bedroom", (8, 8), 7)
        assert scene_to_text(a) == scene_to_text(b)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 17, 12345])
    def test_kitchen_has_four_goal_objects(self, seed):
        scene = generate_scene("kitchen", (8, 8), seed)
        assert len(scene.goal_categories_present()) >= 4

    def test_bathroom_4x4_connected_by_flood_fill(self):
        scene = generate_scene("bathroom", (4, 4), 1)
        reachable = {(ix, iz) for ix, iz in scene.reachable_cells()}
        assert flood_fill(scene.reachable) == reachable

    @pytest.mark.parametrize("room", ["living_room", "kitchen", "bedroom", "bathroom"])
    @pytest.mark.parametrize("seed", range(8))
    def test_invariants_across_rooms_and_seeds(self, room, seed):
        scene = generate_scene(room, (8, 8), seed)
        assert flood_fill(scene.reachable) == set(scene.reachable_cells())
        goal_objs = [o for o in scene.objects if o.category in GOAL_SET]
        assert len(goal_objs) >= 4
        for o in scene.objects:
            ix, iz = scene.cell_of(o.x, o.z)
            neighbors = [
                (ix + dx, iz + dz)
                for dx, dz in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if scene.in_bounds(ix + dx, iz + dz) and scene.reachable[iz + dz, ix + dx]
            ]
            assert neighbors or scene.reachable[iz, ix]

    def test_too_small_errors(self):
        with pytest.raises(GenerationError):
            generate_scene("kitchen", (3, 3), 0)


class TestVisibility:
    def test_object_one_meter_ahead_visible(self):
        scene = make_scene(8, 8, [("Sink", 2, 6, "mid")])  # (1.0, 3.0)
        obs = visible_objects(scene, Pose(1.0, 2.0, 0, 0))
        assert [s.category for s in obs.visible] == ["Sink"]
        s = obs.visible[0]
        assert s.alpha == 1 and s.distance == pytest.approx(1.0) and s.bearing == pytest.approx(0.0)

    def test_object_two_meters_not_visible(self):
        scene = make_scene(10, 10, [("Sink", 2, 8, "mid")])
        obs = visible_objects(scene, Pose(1.0, 2.0, 0, 0))
        assert obs.visible == ()

    def test_object_behind_not_visible(self):
        scene = make_scene(8, 8, [("Sink", 2, 3, "mid")])
        obs = visible_objects(scene, Pose(1.0, 2.0, 0, 0))
        assert obs.visible == ()

    def test_pitch_gates_height_band(self):
        scene = make_scene(8, 8, [("Bowl", 2, 6, "low"), ("LightSwitch", 2, 6, "high")])
        level = visible_objects(scene, Pose(1.0, 2.0, 0, 0))
        down = visible_objects(scene, Pose(1.0, 2.0, 0, -30))
        up = visible_objects(scene, Pose(1.0, 2.0, 0, 30))
        assert level.visible == ()
        assert [s.category for s in down.visible] == ["Bowl"]
        assert [s.category for s in up.visible] == ["LightSwitch"]

    def test_range_boundary_inclusive(self):
        scene = make_scene(10, 10, [("Sink", 2, 7, "mid")])  # exactly 1.5 m ahead
        obs = visible_objects(scene, Pose(1.0, 2.0, 0, 0))
        assert [s.category for s in obs.visible] == ["Sink"]

    def test_bearing_oracle_against_every_yaw(self):
        # independent oracle: object at a 45-degree multiple bearing is seen
        # exactly from the yaws within 45 degrees of its direction
        scene = make_scene(9, 9, [("Sink", 6, 4, "mid")])  # due east of (4,4)
        seen_from = [yaw for yaw in YAWS if goal_visible(scene, Pose(2.0, 2.0, yaw, 0), "Sink")]
        assert seen_from == [45, 90, 135]


class TestStep:
    def test_rotate_left_wraps(self):
        scene = make_scene(6, 6, [("Sink", 0, 0, "mid")] * 4)
        st = reset_episode(scene, "Sink", seed=0)
        st.pose = Pose(1.0, 1.0, 0, 0)
        _, event = step(st, Action.ROTATE_LEFT)
        assert st.pose.yaw == 315 and event == "rotated"
        _, _ = step(st, Action.ROTATE_RIGHT)
        assert st.pose.yaw == 0

    def test_blocked_move_is_noop_with_event(self):
        scene = make_scene(6, 6, [("Sink", 2, 3, "mid")], blocked=[(2, 3)])
        st = reset_episode(scene, "Sink", seed=0)
        st.pose = Pose(1.0, 1.0, 0, 0)
        _, event = step(st, Action.MOVE_AHEAD)
        assert event == "blocked"
        assert (st.pose.x, st.pose.z) == (1.0, 1.0)

    def test_move_off_grid_blocked(self):
        scene = make_scene(4, 4, [("Sink", 0, 0, "mid")])
        st = reset_episode(scene, "Sink", seed=0)
        st.pose = Pose(0.0, 0.0, 180, 0)
        _, event = step(st, Action.MOVE_AHEAD)
        assert event == "blocked" and (st.pose.x, st.pose.z) == (0.0, 0.0)

    def test_pitch_clamps(self):
        scene = make_scene(4, 4, [("Sink", 0, 0, "mid")])
        st = reset_episode(scene, "Sink", seed=0)
        st.pose = Pose(1.0, 1.0, 0, 0)
        step(st, Action.LOOK_DOWN)
        assert st.pose.pitch == -30
        _, event = step(st, Action.LOOK_DOWN)
        assert event == "clamped" and st.pose.pitch == -30
        step(st, Action.LOOK_UP)
        step(st, Action.LOOK_UP)
        _, event = step(st, Action.LOOK_UP)
        assert event == "clamped" and st.pose.pitch == 30

    def test_done_with_goal_in_view_succeeds(self):
        scene = make_scene(8, 8, [("Sink", 2, 4, "mid")])  # (1.0, 2.0)
        st = reset_episode(scene, "Sink", seed=0)
        st.pose = Pose(1.0, 1.0, 0, 0)  # goal 1.0 m dead ahead
        _, event = step(st, Action.DONE)
        assert event == "success" and st.terminated and st.success

    def test_done_without_goal_fails_and_terminates(self):
        scene = make_scene(8, 8, [("Sink", 6, 6, "mid")])
        st = reset_episode(scene, "Sink", seed=0)
        st.pose = Pose(0.0, 0.0, 180, 0)
        _, event = step(st, Action.DONE)
        assert event == "failed_done" and st.terminated and not st.success

    def test_timeout_terminates_without_success(self):
        scene = make_scene(6, 6, [("Sink", 5, 5, "mid")])
        st = reset_episode(scene, "Sink", seed=0, t_max=3)
        for _ in range(3):
            _, event = step(st, Action.ROTATE_LEFT)
        assert st.terminated and not st.success and event == "timeout"
        assert st.step_count == 3

    def test_step_after_termination_raises(self):
        scene = make_scene(6, 6, [("Sink", 5, 5, "mid")])
        st = reset_episode(scene, "Sink", seed=0)
        step(st, Action.DONE)
        with pytest.raises(UsageError):
            step(st, Action.MOVE_AHEAD)

    def test_pose_closure_random_walk(self):
        scene = generate_scene("bedroom", (8, 8), 3)
        goal = sorted(scene.goal_categories_present())[0]
        rng = np.random.default_rng(0)
        for trial in range(20):
            st = reset_episode(scene, goal, seed=trial, t_max=60)
            while not st.terminated:
                before = st.pose
                _, event = step(st, Action(int(rng.integers(6))))
                p = st.pose
                assert p.x % CELL == 0 and p.z % CELL == 0
                assert scene.is_reachable(p.x, p.z)
                assert p.yaw in YAWS and p.pitch in (-30, 0, 30)
                if event in ("rotated", "looked", "clamped", "blocked"):
                    assert (p.x, p.z) == (before.x, before.z)


class TestReset:
    def test_deterministic(self):
        scene = generate_scene("kitchen", (8, 8), 5)
        goal = sorted(scene.goal_categories_present())[0]
        a = reset_episode(scene, goal, seed=99)
        b = reset_episode(scene, goal, seed=99)
        assert a.pose == b.pose and a.step_count == 0

    def test_seed_sweep_all_starts_valid(self):
        scene = generate_scene("kitchen", (8, 8), 5)
        goal = sorted(scene.goal_categories_present())[0]
        reachable = set(scene.reachable_cells())
        for seed in range(1000):
            st = reset_episode(scene, goal, seed=seed)
            assert scene.cell_of(st.pose.x, st.pose.z) in reachable
            assert st.pose.yaw in YAWS and st.pose.pitch == 0

    def test_goal_absent_errors(self):
        scene = make_scene(6, 6, [("Sink", 5, 5, "mid")])
        with pytest.raises(ConfigError):
            reset_episode(scene, "Fridge", seed=0)


class TestShortestPath:
    def test_zero_when_already_in_success_cell(self):
        scene = make_scene(8, 8, [("Sink", 2, 4, "mid")])
        assert shortest_path_length(scene, Pose(1.0, 2.0, 180, 0), "Sink") == 0.0

    def test_straight_corridor_six_cells(self):
        # 1-wide corridor along z; goal at cell 9, success region starts at
        # cell 6 (1.5 m away); agent at cell 0 -> 6 hops -> 3.0 m
        blocked = [(ix, iz) for ix in (0, 2) for iz in range(10)]
        scene = make_scene(3, 10, [("Sink", 1, 9, "mid")], blocked=blocked)
        assert shortest_path_length(scene, Pose(0.5, 0.0, 0, 0), "Sink") == pytest.approx(3.0)

    def test_detour_matches_flood_fill_oracle(self):
        # wall with a single gap forces a detour
        blocked = [(ix, 3) for ix in range(7) if ix != 6]
        scene = make_scene(7, 7, [("Sink", 0, 6, "mid")], blocked=blocked)
        got = shortest_path_length(scene, Pose(0.0, 0.0, 0, 0), "Sink")
        targets = set()
        for ix in range(7):
            for iz in range(7):
                if scene.reachable[iz, ix] and (0.5 * ix - 0.0) ** 2 + (0.5 * iz - 3.0) ** 2 <= 2.25 + 1e-9:
                    targets.add((ix, iz))
        hops = flood_fill_hops(scene.reachable, (0, 0), targets)
        assert got == pytest.approx(hops * 0.5)

    def test_unreachable_goal_signals(self):
        from zonegraph.errors import UnreachableGoalError

        # goal sealed in the far corner behind a full wall
        blocked = [(ix, 4) for ix in range(6)]
        reach_fix = make_scene(6, 8, [("Sink", 3, 7, "mid")], blocked=blocked)
        # the wall splits the grid; agent side has no success cell
        with pytest.raises(UnreachableGoalError):
            shortest_path_length(reach_fix, Pose(0.0, 0.0, 0, 0), "Sink")


class TestSceneFile:
    def test_round_trip_byte_identical(self, tmp_path):
        scene = generate_scene("living_room", (8, 8), 11)
        text = scene_to_text(scene)
        again = scene_to_text(scene_from_text(text))
        assert text == again

    def test_version_rejected(self):
        with pytest.raises(FormatError):
            scene_from_text("scene-v2\nid x\n")

    def test_corrupt_bitmap_rejected(self):
        scene = generate_scene("kitchen", (6, 6), 2)
        lines = scene_to_text(scene).splitlines()
        lines[5] = "reachable 10"
        with pytest.raises(FormatError):
            scene_from_text("\n".join(lines) + "\n")

    def test_bad_float_rejected(self):
        scene = generate_scene("kitchen", (6, 6), 2)
        lines = scene_to_text(scene).splitlines()
        parts = lines[7].split()
        parts[1] = "nope"
        lines[7] = " ".join(parts)
        with pytest.raises(FormatError):
            scene_from_text("\n".join(lines) + "\n")
