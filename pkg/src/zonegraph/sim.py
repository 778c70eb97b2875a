"""Deterministic gridworld simulator.

The world is a W x D lattice of 0.5 m cells. The agent occupies a cell,
faces one of eight 45-degree headings and one of three 30-degree pitch
levels. Objects sit on cells (several may stack on one cell at different
height bands); a cell holding objects is not walkable. An episode ends
when the agent issues Done (success iff the goal category is visible
within 1.5 m at that moment) or when the step budget runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from importlib import resources

import numpy as np

from .categories import GOAL_SET, ROOM_CATEGORIES
from .errors import ConfigError, FormatError, GenerationError, UnreachableGoalError, UsageError

CELL = 0.5  # meters per lattice step
VIS_RANGE = 1.5  # meters; success / visibility threshold
VIS_RANGE_SQ = VIS_RANGE * VIS_RANGE
HALF_FOV = 45.0  # degrees either side of the heading
EPS = 1e-9

YAWS = (0, 45, 90, 135, 180, 225, 270, 315)
PITCHES = (-30, 0, 30)
BAND_PITCH = {"low": -30, "mid": 0, "high": 30}

# Displacement of one MoveAhead per heading, exact lattice steps.
# Diagonal headings advance one cell on both axes (0.707 m traveled).
HEADING = {
    0: (0.0, CELL),
    45: (CELL, CELL),
    90: (CELL, 0.0),
    135: (CELL, -CELL),
    180: (0.0, -CELL),
    225: (-CELL, -CELL),
    270: (-CELL, 0.0),
    315: (-CELL, CELL),
}

DEFAULT_T_MAX = 100

_SEED_MASK = (1 << 64) - 1


class Action(IntEnum):
    MOVE_AHEAD = 0
    ROTATE_LEFT = 1
    ROTATE_RIGHT = 2
    LOOK_DOWN = 3
    LOOK_UP = 4
    DONE = 5


NUM_ACTIONS = len(Action)


@dataclass(frozen=True)
class Pose:
    x: float  # meters, multiple of 0.5
    z: float  # meters, multiple of 0.5
    yaw: int  # degrees in YAWS
    pitch: int  # degrees in PITCHES


@dataclass(frozen=True)
class ObjectInstance:
    category: str
    x: float
    z: float
    height_band: str  # low / mid / high


@dataclass(frozen=True)
class Sighting:
    category: str
    alpha: int
    bearing: float  # degrees relative to heading, |bearing| <= HALF_FOV
    distance: float  # meters, <= VIS_RANGE


@dataclass(frozen=True)
class Observation:
    visible: tuple[Sighting, ...]
    pose: Pose


@dataclass
class Scene:
    """Immutable after construction; safe to share across workers."""

    id: str
    room_category: str
    width: int  # cells along x
    depth: int  # cells along z
    reachable: np.ndarray  # bool, shape (depth, width), indexed [iz, ix]
    objects: tuple[ObjectInstance, ...]
    seed: int

    def __post_init__(self):
        self.reachable = np.asarray(self.reachable, dtype=bool)
        self.reachable.setflags(write=False)
        self.objects = tuple(self.objects)

    def cell_of(self, x: float, z: float) -> tuple[int, int]:
        return int(round(x / CELL)), int(round(z / CELL))

    def in_bounds(self, ix: int, iz: int) -> bool:
        return 0 <= ix < self.width and 0 <= iz < self.depth

    def is_reachable(self, x: float, z: float) -> bool:
        ix, iz = self.cell_of(x, z)
        return self.in_bounds(ix, iz) and bool(self.reachable[iz, ix])

    def reachable_cells(self) -> list[tuple[int, int]]:
        """Cells (ix, iz) in deterministic scan order."""
        out = []
        for iz in range(self.depth):
            for ix in range(self.width):
                if self.reachable[iz, ix]:
                    out.append((ix, iz))
        return out

    def categories_present(self) -> set[str]:
        return {o.category for o in self.objects}

    def goal_categories_present(self) -> set[str]:
        return {o.category for o in self.objects if o.category in GOAL_SET}


@dataclass
class EpisodeState:
    """Single-owner mutable episode record."""

    scene: Scene
    goal: str
    pose: Pose
    step_count: int = 0
    t_max: int = DEFAULT_T_MAX
    terminated: bool = False
    success: bool = False
    traveled: float = 0.0  # meters actually moved
    start_pose: Pose = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.start_pose is None:
            self.start_pose = self.pose


def _bearing(dx: float, dz: float, yaw: int) -> float:
    ang = math.degrees(math.atan2(dx, dz))
    return (ang - yaw + 180.0) % 360.0 - 180.0


def visible_objects(scene: Scene, pose: Pose) -> Observation:
    """Objects within 1.5 m, inside the +-45 deg horizontal field of view,
    whose height band matches the camera pitch."""
    seen = []
    for obj in scene.objects:
        if BAND_PITCH[obj.height_band] != pose.pitch:
            continue
        dx = obj.x - pose.x
        dz = obj.z - pose.z
        d2 = dx * dx + dz * dz
        if d2 > VIS_RANGE_SQ + EPS:
            continue
        if d2 <= EPS * EPS:
            bearing = 0.0  # object on the agent's cell: visible at any yaw
        else:
            bearing = _bearing(dx, dz, pose.yaw)
            if abs(bearing) > HALF_FOV + EPS:
                continue
        seen.append(Sighting(obj.category, 1, bearing, math.sqrt(d2)))
    return Observation(visible=tuple(seen), pose=pose)


def goal_visible(scene: Scene, pose: Pose, goal: str) -> bool:
    return any(s.category == goal for s in visible_objects(scene, pose).visible)


def step(state: EpisodeState, action: Action) -> tuple[Observation, str]:
    """Advance one action. Returns (observation at the new pose, event tag).

    Events: moved, blocked, rotated, looked, clamped, success, failed_done,
    timeout. Done evaluated before the step cap, so a successful Done on the
    final step still succeeds.
    """
    if state.terminated:
        raise UsageError("step() on a terminated episode")
    pose = state.pose
    action = Action(action)
    event = "moved"
    if action == Action.MOVE_AHEAD:
        dx, dz = HEADING[pose.yaw]
        nx, nz = pose.x + dx, pose.z + dz
        if state.scene.is_reachable(nx, nz):
            pose = replace(pose, x=nx, z=nz)
            state.traveled += math.hypot(dx, dz)
        else:
            event = "blocked"
    elif action == Action.ROTATE_LEFT:
        pose = replace(pose, yaw=(pose.yaw - 45) % 360)
        event = "rotated"
    elif action == Action.ROTATE_RIGHT:
        pose = replace(pose, yaw=(pose.yaw + 45) % 360)
        event = "rotated"
    elif action == Action.LOOK_DOWN:
        np_ = max(PITCHES[0], pose.pitch - 30)
        event = "clamped" if np_ == pose.pitch else "looked"
        pose = replace(pose, pitch=np_)
    elif action == Action.LOOK_UP:
        np_ = min(PITCHES[-1], pose.pitch + 30)
        event = "clamped" if np_ == pose.pitch else "looked"
        pose = replace(pose, pitch=np_)
    elif action == Action.DONE:
        state.terminated = True
        state.success = goal_visible(state.scene, pose, state.goal)
        event = "success" if state.success else "failed_done"

    state.pose = pose
    state.step_count += 1
    if not state.terminated and state.step_count >= state.t_max:
        state.terminated = True
        state.success = False
        event = "timeout"
    return visible_objects(state.scene, pose), event


def reset_episode(scene: Scene, goal: str, seed: int, t_max: int = DEFAULT_T_MAX) -> EpisodeState:
    """Uniform start over reachable cells x 8 yaws, pitch level."""
    if goal not in scene.categories_present():
        raise ConfigError(f"goal {goal!r} not present in scene {scene.id!r}")
    rng = np.random.default_rng(seed & _SEED_MASK)
    cells = scene.reachable_cells()
    if not cells:
        raise ConfigError(f"scene {scene.id!r} has no reachable cells")
    ix, iz = cells[int(rng.integers(len(cells)))]
    yaw = YAWS[int(rng.integers(len(YAWS)))]
    pose = Pose(ix * CELL, iz * CELL, yaw, 0)
    return EpisodeState(scene=scene, goal=goal, pose=pose, t_max=t_max)


def success_cells(scene: Scene, goal: str) -> set[tuple[int, int]]:
    """Reachable cells from which some pose satisfies the success predicate.

    Rotation and pitch are free, and the 8 yaw sectors cover all bearings,
    so a cell qualifies iff it is within 1.5 m of some goal instance.
    """
    instances = [o for o in scene.objects if o.category == goal]
    if not instances:
        raise ConfigError(f"goal {goal!r} not present in scene {scene.id!r}")
    out = set()
    for ix, iz in scene.reachable_cells():
        x, z = ix * CELL, iz * CELL
        for o in instances:
            dx, dz = o.x - x, o.z - z
            if dx * dx + dz * dz <= VIS_RANGE_SQ + EPS:
                out.add((ix, iz))
                break
    return out


def _bfs_hops(scene: Scene, start: tuple[int, int], targets: set[tuple[int, int]]) -> int | None:
    if start in targets:
        return 0
    frontier = [start]
    dist = {start: 0}
    while frontier:
        nxt = []
        for ix, iz in frontier:
            for ddx, ddz in ((0, 1), (1, 0), (0, -1), (-1, 0)):
                c = (ix + ddx, iz + ddz)
                if c in dist or not scene.in_bounds(*c) or not scene.reachable[c[1], c[0]]:
                    continue
                dist[c] = dist[(ix, iz)] + 1
                if c in targets:
                    return dist[c]
                nxt.append(c)
        frontier = nxt
    return None


def shortest_path_length(scene: Scene, pose: Pose, goal: str) -> float:
    """Geodesic meters (4-neighborhood, 0.5 m per hop) from the agent cell to
    the nearest cell satisfying the success predicate. Rotation cost ignored."""
    targets = success_cells(scene, goal)
    start = scene.cell_of(pose.x, pose.z)
    hops = _bfs_hops(scene, start, targets)
    if hops is None:
        raise UnreachableGoalError(f"no reachable success cell for {goal!r} in {scene.id!r}")
    return hops * CELL


# ---------------------------------------------------------------------------
# Procedural generation


@dataclass(frozen=True)
class ZoneTemplate:
    room: str
    name: str
    items: tuple[tuple[str, str], ...]  # (category, band)

    def goal_count(self) -> int:
        return sum(1 for cat, _ in self.items if cat in GOAL_SET)


_TEMPLATE_CACHE: dict[str, list[ZoneTemplate]] | None = None


def _load_templates() -> dict[str, list[ZoneTemplate]]:
    global _TEMPLATE_CACHE
    if _TEMPLATE_CACHE is not None:
        return _TEMPLATE_CACHE
    text = resources.files("zonegraph.data").joinpath("room_zones.txt").read_text()
    out: dict[str, list[ZoneTemplate]] = {r: [] for r in ROOM_CATEGORIES}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] != "zone" or len(parts) < 4:
            raise FormatError(f"room_zones.txt line {ln}: expected 'zone <room> <name> <items...>'")
        room, name = parts[1], parts[2]
        if room not in out:
            raise FormatError(f"room_zones.txt line {ln}: unknown room category {room!r}")
        items = []
        for spec in parts[3:]:
            cat, _, band = spec.partition(":")
            if band not in BAND_PITCH:
                raise FormatError(f"room_zones.txt line {ln}: bad band in {spec!r}")
            items.append((cat, band))
        out[room].append(ZoneTemplate(room, name, tuple(items)))
    _TEMPLATE_CACHE = out
    return out


def _connected(reach: np.ndarray) -> bool:
    cells = np.argwhere(reach)
    if len(cells) == 0:
        return False
    start = (int(cells[0][0]), int(cells[0][1]))  # (iz, ix)
    seen = {start}
    frontier = [start]
    while frontier:
        iz, ix = frontier.pop()
        for dz, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            c = (iz + dz, ix + dx)
            if (
                0 <= c[0] < reach.shape[0]
                and 0 <= c[1] < reach.shape[1]
                and reach[c]
                and c not in seen
            ):
                seen.add(c)
                frontier.append(c)
    return len(seen) == len(cells)


def _has_reachable_neighbor(reach: np.ndarray, iz: int, ix: int) -> bool:
    for dz, dx in ((0, 1), (1, 0), (0, -1), (-1, 0)):
        z, x = iz + dz, ix + dx
        if 0 <= z < reach.shape[0] and 0 <= x < reach.shape[1] and reach[z, x]:
            return True
    return False


def _can_block(reach: np.ndarray, iz: int, ix: int, object_cells: list[tuple[int, int]], min_free: int) -> bool:
    if not reach[iz, ix]:
        return False
    trial = reach.copy()
    trial[iz, ix] = False
    if trial.sum() < min_free:
        return False
    if not _connected(trial):
        return False
    if not _has_reachable_neighbor(trial, iz, ix):
        return False
    return all(_has_reachable_neighbor(trial, z, x) for z, x in object_cells)


def generate_scene(room_category: str, size: tuple[int, int], seed: int) -> Scene:
    """Deterministic procedural scene: 2-4 functional zones of co-occurring
    objects on blocked cells, one connected walkable component, >=4 goal
    objects."""
    if room_category not in ROOM_CATEGORIES:
        raise ConfigError(f"unknown room category {room_category!r}")
    width, depth = size
    if width < 4 or depth < 4:
        raise GenerationError(f"scene size {width}x{depth} too small to host 4 goal objects")
    templates = _load_templates()[room_category]
    rng = np.random.default_rng(seed & _SEED_MASK)
    min_free = max(4, (width * depth) // 2)

    for _ in range(32):  # rare geometric dead ends: redraw
        n_zones = int(rng.integers(2, min(4, len(templates)) + 1))
        order = rng.permutation(len(templates))
        chosen = [templates[i] for i in order[:n_zones]]
        k = n_zones
        while sum(t.goal_count() for t in chosen) < 4 and k < len(templates):
            chosen.append(templates[order[k]])
            k += 1
        if sum(t.goal_count() for t in chosen) < 4:
            continue

        reach = np.ones((depth, width), dtype=bool)
        all_cells = [(iz, ix) for iz in range(depth) for ix in range(width)]
        anchor_idx = rng.choice(len(all_cells), size=len(chosen), replace=False)
        anchors = [all_cells[int(i)] for i in anchor_idx]

        object_cells: list[tuple[int, int]] = []
        objects: list[ObjectInstance] = []
        ok = True
        for tpl, (aiz, aix) in zip(chosen, anchors):
            want = min(3, max(1, (len(tpl.items) + 2) // 3))
            ring = [
                (iz, ix)
                for iz in range(depth)
                for ix in range(width)
                if abs(iz - aiz) + abs(ix - aix) <= 2
            ]
            ring = [ring[int(i)] for i in rng.permutation(len(ring))]
            ring.sort(key=lambda c: abs(c[0] - aiz) + abs(c[1] - aix))  # stable: random in-ring order
            zone_cells: list[tuple[int, int]] = []
            for ciz, cix in ring:
                if len(zone_cells) == want:
                    break
                if _can_block(reach, ciz, cix, object_cells, min_free):
                    reach[ciz, cix] = False
                    zone_cells.append((ciz, cix))
                    object_cells.append((ciz, cix))
            if not zone_cells:
                ok = False
                break
            for j, (cat, band) in enumerate(tpl.items):
                ciz, cix = zone_cells[j % len(zone_cells)]
                objects.append(ObjectInstance(cat, cix * CELL, ciz * CELL, band))
        if not ok:
            continue
        goal_objs = sum(1 for o in objects if o.category in GOAL_SET)
        if goal_objs < 4 or not _connected(reach):
            continue
        scene = Scene(
            id=f"{room_category}-{width}x{depth}-{seed}",
            room_category=room_category,
            width=width,
            depth=depth,
            reachable=reach,
            objects=tuple(objects),
            seed=seed,
        )
        validate_scene(scene)
        return scene
    raise GenerationError(
        f"could not generate a valid {room_category} scene of size {width}x{depth} (seed {seed})"
    )


def validate_scene(scene: Scene) -> None:
    if scene.room_category not in ROOM_CATEGORIES:
        raise FormatError(f"unknown room category {scene.room_category!r}")
    if scene.reachable.shape != (scene.depth, scene.width):
        raise FormatError("reachability bitmap does not match declared size")
    if not _connected(scene.reachable):
        raise FormatError("reachable cells are disconnected")
    goal_objs = sum(1 for o in scene.objects if o.category in GOAL_SET)
    if goal_objs < 4:
        raise FormatError(f"scene has {goal_objs} goal objects, need >= 4")
    for o in scene.objects:
        ix, iz = scene.cell_of(o.x, o.z)
        if not scene.in_bounds(ix, iz):
            raise FormatError(f"object {o.category} at ({o.x}, {o.z}) out of bounds")
        if abs(o.x - ix * CELL) > EPS or abs(o.z - iz * CELL) > EPS:
            raise FormatError(f"object {o.category} off the 0.5 m lattice")
        if o.height_band not in BAND_PITCH:
            raise FormatError(f"object {o.category} has bad height band {o.height_band!r}")
        if not _has_reachable_neighbor(scene.reachable, iz, ix) and not scene.reachable[iz, ix]:
            raise FormatError(f"object {o.category} not adjacent to any reachable cell")


# ---------------------------------------------------------------------------
# Scene file format (scene-v1)


def scene_to_text(scene: Scene) -> str:
    bitmap = "".join(
        "1" if scene.reachable[iz, ix] else "0"
        for iz in range(scene.depth)
        for ix in range(scene.width)
    )
    lines = [
        "scene-v1",
        f"id {scene.id}",
        f"room {scene.room_category}",
        f"size {scene.width} {scene.depth}",
        f"seed {scene.seed}",
        f"reachable {bitmap}",
        f"objects {len(scene.objects)}",
    ]
    for o in scene.objects:
        lines.append(f"{o.category} {o.x!r} {o.z!r} {o.height_band}")
    return "\n".join(lines) + "\n"


def scene_from_text(text: str) -> Scene:
    lines = text.splitlines()

    def need(i: int, key: str) -> str:
        if i >= len(lines):
            raise FormatError(f"line {i + 1}: unexpected end of scene file")
        if key and not lines[i].startswith(key + " "):
            raise FormatError(f"line {i + 1}: expected '{key} ...', got {lines[i]!r}")
        return lines[i][len(key) + 1 :] if key else lines[i]

    if not lines or lines[0].strip() != "scene-v1":
        raise FormatError("line 1: not a scene-v1 file")
    sid = need(1, "id").strip()
    room = need(2, "room").strip()
    try:
        width, depth = (int(v) for v in need(3, "size").split())
        seed = int(need(4, "seed"))
    except ValueError as e:
        raise FormatError(f"bad size/seed header: {e}") from None
    bitmap = need(5, "reachable").strip()
    if len(bitmap) != width * depth or set(bitmap) - {"0", "1"}:
        raise FormatError("line 6: reachability bitmap does not match size")
    reach = np.array([c == "1" for c in bitmap], dtype=bool).reshape(depth, width)
    try:
        count = int(need(6, "objects"))
    except ValueError:
        raise FormatError("line 7: bad object count") from None
    objects = []
    for j in range(count):
        parts = need(7 + j, "").split()
        if len(parts) != 4:
            raise FormatError(f"line {8 + j}: expected 'category x z band'")
        cat, xs, zs, band = parts
        try:
            x, z = float(xs), float(zs)
        except ValueError:
            raise FormatError(f"line {8 + j}: unparsable coordinate") from None
        if band not in BAND_PITCH:
            raise FormatError(f"line {8 + j}: bad height band {band!r}")
        objects.append(ObjectInstance(cat, x, z, band))
    if len(lines) > 7 + count and any(l.strip() for l in lines[7 + count :]):
        raise FormatError(f"line {8 + count}: trailing content after object records")
    scene = Scene(sid, room, width, depth, reach, tuple(objects), seed)
    validate_scene(scene)
    return scene


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scene_to_text(scene))


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_text(fh.read())
