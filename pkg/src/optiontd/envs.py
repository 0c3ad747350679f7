"""The two benchmark environments: a noisy four-room gridworld and a
continuous four-color rooms world navigated by a wheeled robot.

Both expose the pure-step environment contract: ``step(state, action, rng)``
returns ``(reward, next_state, terminal)`` and depends only on its arguments.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .core import Action, ContinuousState, DiscreteState, FloorColor
from .features import RbfGrid, rbf_features, tabular_features

# ---------------------------------------------------------------------------
# Gridworld
# ---------------------------------------------------------------------------

# action ids: 0 up (row-1), 1 down, 2 left, 3 right
GRID_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))
GRID_ACTION_COUNT = 4


@dataclass(frozen=True)
class GridworldSpec:
    """Static description of a gridworld instance.

    ``noise_mode`` selects how action noise resolves: ``any`` redraws the
    executed action uniformly over all four actions, ``other`` over the three
    non-commanded ones.
    """

    width: int
    height: int
    wall_cells: frozenset[int]
    goal_cell: int
    noise: float = 0.15
    reward_goal: float = 10.0
    reward_wall: float = -3.0
    reward_step: float = -1.0
    noise_mode: str = "any"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise must lie in [0, 1], got {self.noise}")
        if self.noise_mode not in ("any", "other"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        n = self.width * self.height
        if not 0 <= self.goal_cell < n:
            raise ValueError("goal cell out of range")
        if self.goal_cell in self.wall_cells:
            raise ValueError("goal cell cannot be a wall")
        for c in self.wall_cells:
            if not 0 <= c < n:
                raise ValueError(f"wall cell {c} out of range")

    @property
    def num_cells(self) -> int:
        return self.width * self.height

    def free_cells(self) -> list[int]:
        """Non-wall cells, goal included."""
        return [c for c in range(self.num_cells) if c not in self.wall_cells]


def load_gridworld_map(text: str, noise: float = 0.15, noise_mode: str = "any") -> GridworldSpec:
    """Parse a text map: ``#`` wall, ``.`` free, ``G`` goal (exactly one)."""
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty map")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("map rows must have equal length")
    walls = set()
    goal = None
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            cell = r * width + c
            if ch == "#":
                walls.add(cell)
            elif ch == "G":
                if goal is not None:
                    raise ValueError("map must contain exactly one goal")
                goal = cell
            elif ch != ".":
                raise ValueError(f"unknown map character {ch!r}")
    if goal is None:
        raise ValueError("map must contain a goal cell")
    return GridworldSpec(
        width=width,
        height=len(rows),
        wall_cells=frozenset(walls),
        goal_cell=goal,
        noise=noise,
        noise_mode=noise_mode,
    )


def load_gridworld_map_file(path, noise: float = 0.15, noise_mode: str = "any") -> GridworldSpec:
    with open(path) as fh:
        return load_gridworld_map(fh.read(), noise=noise, noise_mode=noise_mode)


def canonical_gridworld_spec(noise: float = 0.15, noise_mode: str = "any") -> GridworldSpec:
    """The shipped 11x11 four-room map with the goal in the upper-right room."""
    text = resources.files("optiontd").joinpath("data/fourrooms.txt").read_text()
    return load_gridworld_map(text, noise=noise, noise_mode=noise_mode)


def _sample_executed_action(commanded: int, spec: GridworldSpec, rng) -> int:
    """Resolve action noise: the executed action may differ from the command."""
    if spec.noise > 0.0 and rng.random() < spec.noise:
        if spec.noise_mode == "any":
            return int(rng.integers(GRID_ACTION_COUNT))
        k = int(rng.integers(GRID_ACTION_COUNT - 1))
        return k + (k >= commanded)
    return commanded


def gridworld_step(state: DiscreteState, action: Action, spec: GridworldSpec, rng) -> tuple[float, DiscreteState, bool]:
    """One noisy gridworld step.

    Moving into a wall or off-grid leaves the state unchanged and costs the
    wall-bump penalty; entering the goal ends the episode.
    """
    if not 0 <= action.id < GRID_ACTION_COUNT:
        raise ValueError(f"invalid gridworld action id {action.id}")
    executed = _sample_executed_action(action.id, spec, rng)
    r, c = divmod(state.index, spec.width)
    dr, dc = GRID_DELTAS[executed]
    nr, nc = r + dr, c + dc
    if not (0 <= nr < spec.height and 0 <= nc < spec.width):
        return spec.reward_wall, state, False
    nxt = nr * spec.width + nc
    if nxt in spec.wall_cells:
        return spec.reward_wall, state, False
    if nxt == spec.goal_cell:
        return spec.reward_goal, DiscreteState(nxt), True
    return spec.reward_step, DiscreteState(nxt), False


class Gridworld:
    """Gridworld environment with cached one-hot features over all cells."""

    def __init__(self, spec: GridworldSpec | None = None):
        self.spec = spec if spec is not None else canonical_gridworld_spec()
        self.action_count = GRID_ACTION_COUNT
        n = self.spec.num_cells
        self._phi = [tabular_features(i, n) for i in range(n)]
        self._starts = [c for c in self.spec.free_cells() if c != self.spec.goal_cell]
        self.feature_map = lambda s: self._phi[s.index]

    @property
    def feature_dim(self) -> int:
        return self.spec.num_cells

    def reset(self, rng) -> DiscreteState:
        """Uniform start over non-goal, non-wall cells."""
        return DiscreteState(self._starts[int(rng.integers(len(self._starts)))])

    def step(self, state: DiscreteState, action: Action, rng):
        return gridworld_step(state, action, self.spec, rng)


def bfs_distances(spec: GridworldSpec, target: int) -> dict[int, int]:
    """Step counts from every free cell to ``target``, walls impassable."""
    dist = {target: 0}
    queue = deque([target])
    while queue:
        cell = queue.popleft()
        r, c = divmod(cell, spec.width)
        for dr, dc in GRID_DELTAS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < spec.height and 0 <= nc < spec.width):
                continue
            nxt = nr * spec.width + nc
            if nxt in spec.wall_cells or nxt in dist:
                continue
            dist[nxt] = dist[cell] + 1
            queue.append(nxt)
    return dist


def shortest_path_actions(spec: GridworldSpec, target: int) -> np.ndarray:
    """Per-cell greedy action toward ``target`` (ties to the lowest action id).

    Unreachable cells and walls get action 0; the target cell points at its
    nearest neighbor (an option invoked there walks off and back).
    """
    dist = bfs_distances(spec, target)
    actions = np.zeros(spec.num_cells, dtype=np.int64)
    for cell in spec.free_cells():
        r, c = divmod(cell, spec.width)
        best_a, best_d = 0, math.inf
        for a, (dr, dc) in enumerate(GRID_DELTAS):
            nr, nc = r + dr, c + dc
            if not (0 <= nr < spec.height and 0 <= nc < spec.width):
                continue
            nxt = nr * spec.width + nc
            d = dist.get(nxt, math.inf)
            if d < best_d:
                best_a, best_d = a, d
        actions[cell] = best_a
    return actions


def hallway_cells(spec: GridworldSpec) -> list[int]:
    """Free cells forming a doorway: walls on two opposite sides, free across."""

    def blocked(r, c):
        if not (0 <= r < spec.height and 0 <= c < spec.width):
            return True
        return r * spec.width + c in spec.wall_cells

    out = []
    for cell in spec.free_cells():
        r, c = divmod(cell, spec.width)
        vertical_gap = blocked(r, c - 1) and blocked(r, c + 1) and not blocked(r - 1, c) and not blocked(r + 1, c)
        horizontal_gap = blocked(r - 1, c) and blocked(r + 1, c) and not blocked(r, c - 1) and not blocked(r, c + 1)
        if vertical_gap or horizontal_gap:
            out.append(cell)
    return sorted(out)


# ---------------------------------------------------------------------------
# Continuous rooms world
# ---------------------------------------------------------------------------

# action ids: 0 forward, 1 left (+turn), 2 right (-turn)
ROOMS_ACTION_COUNT = 3

_COLOR_NAMES = {
    "purple": FloorColor.PURPLE,
    "green": FloorColor.GREEN,
    "yellow": FloorColor.YELLOW,
    "blue": FloorColor.BLUE,
}

Rect = tuple[float, float, float, float]  # x1, x2, y1, y2


def _rect_contains(rect: Rect, x: float, y: float) -> bool:
    # lower-left-closed convention: [x1, x2) x [y1, y2)
    x1, x2, y1, y2 = rect
    return x1 <= x < x2 and y1 <= y < y2


@dataclass(frozen=True, eq=False)
class RoomsSpec:
    """Geometry and rewards of the continuous rooms world.

    Walls are axis-aligned segments (x1, y1, x2, y2); color regions are
    rectangles tiling the arena under a lower-left-closed convention.
    """

    walls: tuple[tuple[float, float, float, float], ...]
    color_regions: tuple[tuple[Rect, FloorColor], ...]
    goal_rect: Rect
    respawn_rect: Rect
    arena: Rect = (0.0, 10.0, 0.0, 10.0)
    turn_angle: float = 30.0
    move_distance: float = 1.0
    reward_goal: float = 1.0
    reward_step: float = -0.01

    def __post_init__(self):
        for x1, y1, x2, y2 in self.walls:
            if x1 != x2 and y1 != y2:
                raise ValueError("walls must be axis-aligned segments")
            if x1 == x2 and y1 == y2:
                raise ValueError("zero-length wall segment")
        ax1, ax2, ay1, ay2 = self.arena
        area = sum((r[1] - r[0]) * (r[3] - r[2]) for r, _ in self.color_regions)
        if not math.isclose(area, (ax2 - ax1) * (ay2 - ay1)):
            raise ValueError("color regions must tile the arena")
        for i, (ra, _) in enumerate(self.color_regions):
            for rb, _ in self.color_regions[i + 1 :]:
                ox = min(ra[1], rb[1]) - max(ra[0], rb[0])
                oy = min(ra[3], rb[3]) - max(ra[2], rb[2])
                if ox > 0 and oy > 0:
                    raise ValueError("color regions overlap")


def load_rooms_geometry(data: dict) -> RoomsSpec:
    """Build a RoomsSpec from a structured geometry mapping (see data/rooms.yaml)."""
    ax1, ax2, ay1, ay2 = (float(v) for v in data.get("arena", [0.0, 10.0, 0.0, 10.0]))
    walls = tuple(tuple(float(v) for v in w) for w in data["walls"])
    regions = []
    for entry in data["colors"]:
        x1, y1, x2, y2 = (float(v) for v in entry["rect"])
        regions.append(((x1, x2, y1, y2), _COLOR_NAMES[str(entry["color"]).lower()]))
    gx1, gy1, gx2, gy2 = (float(v) for v in data["goal"])
    rx1, ry1, rx2, ry2 = (float(v) for v in data["respawn"])
    rewards = data.get("rewards", {})
    return RoomsSpec(
        walls=walls,
        color_regions=tuple(regions),
        goal_rect=(gx1, gx2, gy1, gy2),
        respawn_rect=(rx1, rx2, ry1, ry2),
        arena=(ax1, ax2, ay1, ay2),
        turn_angle=float(data.get("turn_angle", 30.0)),
        move_distance=float(data.get("move_distance", 1.0)),
        reward_goal=float(rewards.get("goal", 1.0)),
        reward_step=float(rewards.get("step", -0.01)),
    )


def load_rooms_geometry_file(path) -> RoomsSpec:
    with open(path) as fh:
        return load_rooms_geometry(yaml.safe_load(fh))


def canonical_rooms_spec() -> RoomsSpec:
    text = resources.files("optiontd").joinpath("data/rooms.yaml").read_text()
    return load_rooms_geometry(yaml.safe_load(text))


def floor_color(point, spec: RoomsSpec) -> FloorColor:
    """Color of the region containing ``point`` (lower-left-closed regions).

    Points on the arena's far edges are folded onto the touching region.
    """
    x = min(float(point[0]), spec.arena[1] - 1e-12)
    y = min(float(point[1]), spec.arena[3] - 1e-12)
    for rect, color in spec.color_regions:
        if _rect_contains(rect, x, y):
            return color
    raise ValueError(f"point {point} not covered by any color region")


_WALL_EPS = 1e-9


def slide_move(x: float, y: float, dx: float, dy: float, walls) -> tuple[float, float]:
    """Translate (x, y) by (dx, dy), clipping against axis-aligned walls.

    At the first wall contact the displacement component perpendicular to the
    wall is zeroed for the remainder of the step and the tangential component
    continues (subject to further contacts). The mover is left a hair short of
    the wall plane so it never sits exactly on or beyond it.
    """
    px, py = x, y
    rem_x, rem_y = dx, dy
    for _ in range(3):
        if rem_x == 0.0 and rem_y == 0.0:
            break
        best_t = math.inf
        best_wall = None
        for x1, y1, x2, y2 in walls:
            if x1 == x2:  # vertical wall, normal along x
                if rem_x == 0.0:
                    continue
                t = (x1 - px) / rem_x
                if -1e-12 <= t <= 1.0 and t < best_t:
                    yhit = py + t * rem_y
                    if min(y1, y2) - 1e-12 <= yhit <= max(y1, y2) + 1e-12:
                        best_t, best_wall = t, (x1, y1, x2, y2)
            else:  # horizontal wall, normal along y
                if rem_y == 0.0:
                    continue
                t = (y1 - py) / rem_y
                if -1e-12 <= t <= 1.0 and t < best_t:
                    xhit = px + t * rem_x
                    if min(x1, x2) - 1e-12 <= xhit <= max(x1, x2) + 1e-12:
                        best_t, best_wall = t, (x1, y1, x2, y2)
        if best_wall is None:
            px += rem_x
            py += rem_y
            break
        t = max(best_t, 0.0)
        px += t * rem_x
        py += t * rem_y
        x1, y1, x2, y2 = best_wall
        if x1 == x2:
            px = x1 - math.copysign(_WALL_EPS, rem_x)
            rem_x = 0.0
            rem_y *= 1.0 - t
        else:
            py = y1 - math.copysign(_WALL_EPS, rem_y)
            rem_y = 0.0
            rem_x *= 1.0 - t
    return px, py


def rooms_step(state: ContinuousState, action: Action, spec: RoomsSpec, rng) -> tuple[float, ContinuousState, bool]:
    """One rooms step: forward translation with wall sliding, or a turn in place.

    Entering the goal rectangle pays the goal reward and ends the episode (the
    respawn into the yellow room happens on reset).
    """
    if not 0 <= action.id < ROOMS_ACTION_COUNT:
        raise ValueError(f"invalid rooms action id {action.id}")
    if action.id == 0:
        rad = math.radians(state.psi)
        nx, ny = slide_move(
            state.x, state.y, spec.move_distance * math.cos(rad), spec.move_distance * math.sin(rad), spec.walls
        )
        color = floor_color((nx, ny), spec)
        nxt = ContinuousState(nx, ny, state.psi, color)
        gx1, gx2, gy1, gy2 = spec.goal_rect
        if gx1 <= nx < gx2 and gy1 <= ny < gy2:
            return spec.reward_goal, nxt, True
        return spec.reward_step, nxt, False
    sign = 1.0 if action.id == 1 else -1.0
    npsi = (state.psi + sign * spec.turn_angle) % 360.0
    return spec.reward_step, ContinuousState(state.x, state.y, npsi, state.floor_color), False


class Rooms:
    """Continuous rooms environment with RBF + color-bit features."""

    def __init__(self, spec: RoomsSpec | None = None, grid: RbfGrid | None = None, respawn_margin: float = 0.25):
        self.spec = spec if spec is not None else canonical_rooms_spec()
        self.grid = grid if grid is not None else RbfGrid.canonical()
        self.action_count = ROOMS_ACTION_COUNT
        self.respawn_margin = respawn_margin
        self.feature_map = lambda s: rbf_features(s, self.grid)

    @property
    def feature_dim(self) -> int:
        return self.grid.dim

    def reset(self, rng) -> ContinuousState:
        """Spawn uniformly inside the respawn room on the heading lattice."""
        x1, x2, y1, y2 = self.spec.respawn_rect
        m = self.respawn_margin
        x = rng.uniform(x1 + m, x2 - m)
        y = rng.uniform(y1 + m, y2 - m)
        psi = self.spec.turn_angle * float(rng.integers(int(round(360.0 / self.spec.turn_angle))))
        return ContinuousState(x, y, psi, floor_color((x, y), self.spec))

    def step(self, state: ContinuousState, action: Action, rng):
        return rooms_step(state, action, self.spec, rng)
