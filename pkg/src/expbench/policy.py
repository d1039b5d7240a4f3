"""Hierarchical navigation: global goal strategies, A* planning, local control.

The global strategies replace a learned goal picker with deterministic,
seedable rules: uniform random goals, nearest-frontier goals, and a greedy
argmax over sampled candidates scored by the active reward's estimated
payoff. The planner runs A* on the binarized online map where unexplored
cells are traversable at 1.5x cost, and a local goal is extracted from the
planned trajectory within a fixed range of the agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .errors import NoFrontier, NoPath
from .mapping import AgentMap
from .rewards import CategoricalDensityModel, RewardKind, pseudo_count_from_pg
from .world import CELL_M, TURN_STEP_RAD, Action, Pose, angle_diff, cell_center

LOCAL_GOAL_RANGE_M = 1.25
BEARING_TOLERANCE_RAD = math.radians(5.0)
HEADING_TOLERANCE_RAD = math.radians(10.0)
# Prefer frontier goals at least ~1 m out: with 0.25 m steps and 10-degree
# turns, hopping to a frontier a few cells away spends the whole budget on
# turning in place. Closer frontiers are used only when nothing else is left.
MIN_FRONTIER_HOPS = 20
MIN_FRONTIER_HOPS_FALLBACK = 5


class StrategyKind(Enum):
    RANDOM_GOAL = "random"
    FRONTIER = "frontier"
    GREEDY_REWARD = "greedy"


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    reward_kind: RewardKind | None = None  # greedy only
    candidates: int = 16


@dataclass(frozen=True)
class GlobalGoal:
    cell: tuple[int, int]
    birth_step: int


@dataclass
class Plan:
    path: list[tuple[int, int]]  # 4-adjacent cells from start to goal
    local_goal: tuple[int, int]
    cost: float


def cost_classes(agent_map: AgentMap) -> np.ndarray:
    """0 = explored free, 1 = unexplored, 2 = explored occupied."""
    out = np.ones(agent_map.shape, dtype=np.uint8)
    explored = agent_map.explored_mask()
    occupied = agent_map.binary_occupied()
    out[explored & ~occupied] = 0
    out[explored & occupied] = 2
    return out


def frontier_mask(agent_map: AgentMap) -> np.ndarray:
    """Explored free cells 4-adjacent to at least one unexplored cell."""
    explored = agent_map.explored_mask()
    occupied = agent_map.binary_occupied()
    free = explored & ~occupied
    unknown = ~explored
    near = np.zeros_like(unknown)
    near[1:, :] |= unknown[:-1, :]
    near[:-1, :] |= unknown[1:, :]
    near[:, 1:] |= unknown[:, :-1]
    near[:, :-1] |= unknown[:, 1:]
    return free & near


class GoalScorer:
    """Estimated reward rate of relocating to a candidate cell, per kind.

    All kinds share a sensing-disc payoff: the number of not-yet-seen cells
    within `radius_m` of the candidate. Impact kinds discount it by the
    square root of their pseudo-count at the candidate, and the difference
    term counts unverified cells where the held prior map claims an object.
    The payoff is divided by the estimated actions to get there (forward
    steps plus turn steps), so the argmax picks the best reward per step
    rather than the biggest faraway prize.
    """

    def __init__(
        self,
        reward_kind: RewardKind,
        agent_map: AgentMap,
        seen_mask: np.ndarray,
        agent_pose: Pose | None = None,
        radius_m: float = 2.0,
        grid_counts=None,
        density: CategoricalDensityModel | None = None,
        gain_scale: float = 0.1,
        step_index: int = 1,
        prior_objects: np.ndarray | None = None,
        beta_exp: float = 1.0,
        beta_diff: float = 0.01,
    ):
        self.kind = reward_kind
        self.map = agent_map
        self.unseen = ~seen_mask
        self.agent_pose = agent_pose
        self.radius_cells = max(1, int(radius_m / CELL_M))
        self.grid_counts = grid_counts
        self.density = density
        self.gain_scale = gain_scale
        self.step_index = max(step_index, 1)
        self.prior_objects = prior_objects
        self.beta_exp = beta_exp
        self.beta_diff = beta_diff

    def _disc_sum(self, mask: np.ndarray, cell: tuple[int, int]) -> int:
        r, c = cell
        rad = self.radius_cells
        h, w = mask.shape
        window = mask[max(r - rad, 0) : min(r + rad + 1, h), max(c - rad, 0) : min(c + rad + 1, w)]
        return int(np.count_nonzero(window))

    def _travel_steps(self, cell: tuple[int, int]) -> float:
        if self.agent_pose is None:
            return 0.0
        cx, cy = cell_center(*cell)
        dx = cx - self.agent_pose.x
        dy = cy - self.agent_pose.y
        dist = math.hypot(dx, dy)
        if dist < 1e-9:
            return 0.0
        turn = abs(angle_diff(math.atan2(dy, dx), self.agent_pose.theta))
        return dist / 0.25 + turn / TURN_STEP_RAD

    def _route_gain(self, cell: tuple[int, int]) -> float:
        """Unseen cells in the sensing swath from the agent to the candidate.

        Exploration pays out along the whole traverse, not just at the goal,
        so sample discs every meter along the straight run plus a wider disc
        at the destination.
        """
        gain = float(self._disc_sum(self.unseen, cell))
        if self.agent_pose is None:
            return gain
        cx, cy = cell_center(*cell)
        dx = cx - self.agent_pose.x
        dy = cy - self.agent_pose.y
        dist = math.hypot(dx, dy)
        h, w = self.unseen.shape
        waypoints = int(dist)  # one per meter
        rad = self.radius_cells // 2
        for i in range(1, waypoints + 1):
            t = i / (waypoints + 1)
            r = int((self.agent_pose.y + dy * t) / CELL_M)
            c = int((self.agent_pose.x + dx * t) / CELL_M)
            window = self.unseen[
                max(r - rad, 0) : min(r + rad + 1, h), max(c - rad, 0) : min(c + rad + 1, w)
            ]
            gain += 0.5 * float(np.count_nonzero(window))
        return gain

    def _payoff(self, cell: tuple[int, int]) -> float:
        gain = self._route_gain(cell)
        if self.kind in (RewardKind.COVERAGE, RewardKind.ANTICIPATION, RewardKind.CURIOSITY):
            return gain
        if self.kind == RewardKind.IMPACT_GRID:
            count = 0
            if self.grid_counts is not None:
                x, y = cell_center(*cell)
                side = self.grid_counts.side_m
                count = self.grid_counts.counts.get(
                    (int(math.floor(x / side)), int(math.floor(y / side))), 0
                )
            return (1.0 + gain) / math.sqrt(count + 1.0)
        if self.kind == RewardKind.IMPACT_DME:
            novelty = 1.0
            if self.density is not None:
                patch = map_patch(self.map, cell, self.density.patch_px)
                pg = self.density.prediction_gain(patch)
                count = pseudo_count_from_pg(pg, self.step_index, self.gain_scale)
                novelty = 1.0 / math.sqrt(count)
            return (1.0 + gain) * novelty
        if self.kind == RewardKind.DIFFERENCE:
            return float(self._disc_sum(self.unseen & self.prior_objects, cell))
        if self.kind == RewardKind.COMBINED:
            diff_gain = float(self._disc_sum(self.unseen & self.prior_objects, cell))
            return self.beta_exp * gain + self.beta_diff * diff_gain
        raise ValueError(f"no scorer for {self.kind}")

    def score(self, cell: tuple[int, int]) -> float:
        return self._payoff(cell) / (1.0 + self._travel_steps(cell))


def map_patch(agent_map: AgentMap, cell: tuple[int, int], patch_px: int, bins: int = 8) -> np.ndarray:
    """Quantized north-up crop of the belief map around a cell (for scoring)."""
    half = patch_px * 2
    r, c = cell
    h, w = agent_map.shape
    window = np.full((2 * half, 2 * half), 1.0)
    r0, r1 = max(r - half, 0), min(r + half, h)
    c0, c1 = max(c - half, 0), min(c + half, w)
    prob = np.full((r1 - r0, c1 - c0), 0.5)
    counts = agent_map.counts[r0:r1, c0:c1]
    mask = counts > 0
    prob[mask] = agent_map.sums[r0:r1, c0:c1][mask] / counts[mask]
    window[r0 - (r - half) : r1 - (r - half), c0 - (c - half) : c1 - (c - half)] = prob
    blocks = window.reshape(patch_px, 4, patch_px, 4).mean(axis=(1, 3))
    return np.minimum((blocks * bins).astype(np.int64), bins - 1).astype(np.uint8)


def select_global_goal(
    strategy: Strategy,
    agent_map: AgentMap,
    est_pose: Pose,
    scorer: GoalScorer | None,
    rng: np.random.Generator,
    step: int = 0,
) -> GlobalGoal:
    """Pick the next long-horizon goal cell per the strategy.

    Random and greedy goals are drawn uniformly from cells not known to be
    occupied; frontier picks the reachable frontier cell closest by BFS over
    explored free space. Raises NoFrontier when the map has none left.
    """
    classes = cost_classes(agent_map)
    candidates = np.flatnonzero(classes.ravel() != 2)
    if candidates.size == 0:
        raise NoFrontier("map has no traversable cells")
    w = agent_map.shape[1]

    if strategy.kind == StrategyKind.RANDOM_GOAL:
        flat = int(candidates[rng.integers(candidates.size)])
        return GlobalGoal((flat // w, flat % w), step)

    if strategy.kind == StrategyKind.FRONTIER:
        mask = frontier_mask(agent_map)
        if not mask.any():
            raise NoFrontier("map fully explored")
        ar, ac = est_pose.cell()
        dist = _kernels.bfs_grid(classes == 0, ar, ac)
        dist_f = np.where(mask, dist, -1)
        reachable = np.flatnonzero(dist_f.ravel() >= MIN_FRONTIER_HOPS)
        if reachable.size == 0:
            reachable = np.flatnonzero(dist_f.ravel() >= MIN_FRONTIER_HOPS_FALLBACK)
        if reachable.size == 0:
            raise NoFrontier("no reachable frontier")
        # closest frontier measured in actions, not cells: one forward step
        # covers 5 cells, one 10-degree turn costs a whole step too
        rows = reachable // w
        cols = reachable % w
        hops = dist_f.ravel()[reachable].astype(np.float64)
        bearing = np.arctan2(
            (rows + 0.5) * CELL_M - est_pose.y, (cols + 0.5) * CELL_M - est_pose.x
        )
        turn_err = np.abs(np.angle(np.exp(1j * (bearing - est_pose.theta))))
        time_cost = hops / 5.0 + turn_err / TURN_STEP_RAD
        best = reachable[int(np.argmin(time_cost))]  # first min: (row, col) ties
        return GlobalGoal((int(best) // w, int(best) % w), step)

    # greedy over sampled candidates, ties to the smallest (row, col)
    draws = candidates[rng.integers(0, candidates.size, size=strategy.candidates)]
    best_cell = None
    best_score = -math.inf
    for flat in sorted(int(d) for d in draws):
        cell = (flat // w, flat % w)
        s = scorer.score(cell)
        if s > best_score:
            best_score = s
            best_cell = cell
    return GlobalGoal(best_cell, step)


def plan_path(agent_map: AgentMap, start: tuple[int, int], goal: tuple[int, int]) -> Plan:
    """A* on the binarized map; optimal under its cost model.

    Entering an explored free cell costs 1, an unexplored cell 1.5; explored
    occupied cells are blocked. The local goal is the farthest path cell
    within LOCAL_GOAL_RANGE_M of the start.
    """
    classes = cost_classes(agent_map)
    h, w = classes.shape
    classes[start] = 0  # the agent occupies the start cell, so it is traversable
    if classes[goal] == 2:
        raise NoPath(f"goal {goal} is in occupied space")
    start_flat = start[0] * w + start[1]
    parents, cost = _kernels.astar_grid(classes, start_flat, goal[0] * w + goal[1])
    if cost < 0:
        raise NoPath(f"no route from {start} to {goal}")
    path = []
    cur = goal[0] * w + goal[1]
    while True:
        path.append((cur // w, cur % w))
        if cur == start_flat:
            break
        cur = int(parents[cur])
    path.reverse()
    sx, sy = cell_center(*start)
    return Plan(path, local_goal_on_path(path, (sx, sy), agent_map=agent_map), float(cost))


def _sight_blocked(agent_map: AgentMap, x0, y0, x1, y1) -> bool:
    """True when the segment crosses a cell the map believes occupied."""
    sums = agent_map.sums
    counts = agent_map.counts
    h, w = counts.shape
    dist = math.hypot(x1 - x0, y1 - y0)
    steps = int(dist / 0.0125) + 1
    for i in range(1, steps + 1):
        t = min(i * 0.0125 / dist, 1.0) if dist > 0 else 1.0
        r = int(math.floor((y0 + (y1 - y0) * t) / CELL_M))
        c = int(math.floor((x0 + (x1 - x0) * t) / CELL_M))
        if not (0 <= r < h and 0 <= c < w):
            return True
        n = counts[r, c]
        if n > 0 and sums[r, c] >= 0.5 * n:
            return True
    return False


def local_goal_on_path(
    path: list[tuple[int, int]],
    agent_xy: tuple[float, float],
    d_max: float = LOCAL_GOAL_RANGE_M,
    agent_map: AgentMap | None = None,
) -> tuple[int, int]:
    """Farthest path cell within d_max meters of the agent.

    With a map, the straight run from the agent to the waypoint must also be
    clear of believed obstacles, so the blind controller never cuts a corner
    the planner routed around.
    """
    ax, ay = agent_xy
    fallback = None
    for cell in reversed(path):
        cx, cy = cell_center(*cell)
        if math.hypot(cx - ax, cy - ay) > d_max:
            continue
        if fallback is None:
            fallback = cell
        if agent_map is None or not _sight_blocked(agent_map, ax, ay, cx, cy):
            return cell
    return fallback if fallback is not None else path[0]


def local_controller(
    est_pose: Pose,
    goal_xy: tuple[float, float],
    stop_radius: float | None = None,
    goal_heading: float | None = None,
) -> Action:
    """Deterministic point controller.

    Turns toward the target whenever the bearing error exceeds 5 degrees
    (shorter direction), otherwise steps forward. In navigation mode
    (stop_radius set) it emits Stop inside the success radius, first aligning
    to goal_heading within 10 degrees when one is required.
    """
    dx = goal_xy[0] - est_pose.x
    dy = goal_xy[1] - est_pose.y
    dist = math.hypot(dx, dy)
    if stop_radius is not None and dist <= stop_radius:
        if goal_heading is None:
            return Action.STOP
        err = angle_diff(goal_heading, est_pose.theta)
        if abs(err) < HEADING_TOLERANCE_RAD:
            return Action.STOP
        return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    if dist < 0.125:
        # closer than half a forward step: stepping would overshoot, so spin
        # in place and let the goal logic move on
        return Action.TURN_LEFT
    bearing = math.atan2(dy, dx)
    err = angle_diff(bearing, est_pose.theta)
    if abs(err) > BEARING_TOLERANCE_RAD:
        return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT
    return Action.FORWARD


class GoalReset(Enum):
    KEEP_BOTH = 0
    NEW_LOCAL = 1
    NEW_GLOBAL = 2


def goal_reset_check(
    steps_since_global: int,
    resample_every: int | None,
    agent_cell: tuple[int, int],
    local_goal_cell: tuple[int, int] | None,
    agent_map: AgentMap,
    agent_xy: tuple[float, float] | None = None,
) -> GoalReset:
    """Decide whether the global and/or local goal must be re-picked.

    The global goal is resampled on a fixed cadence (exploration mode only);
    the local goal is renewed when reached (same cell, or within half a
    forward step when the position is given) or when the map now marks it
    occupied. A new global goal implies a new local goal.
    """
    if resample_every is not None and steps_since_global >= resample_every:
        return GoalReset.NEW_GLOBAL
    if local_goal_cell is None:
        return GoalReset.NEW_LOCAL
    if agent_cell == local_goal_cell:
        return GoalReset.NEW_LOCAL
    if agent_xy is not None:
        gx, gy = cell_center(*local_goal_cell)
        if math.hypot(gx - agent_xy[0], gy - agent_xy[1]) < 0.125:
            return GoalReset.NEW_LOCAL
    count = agent_map.counts[local_goal_cell]
    if count > 0 and agent_map.sums[local_goal_cell] >= 0.5 * count:
        return GoalReset.NEW_LOCAL
    return GoalReset.KEEP_BOTH
