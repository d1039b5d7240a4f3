"""Episode drivers and metrics for exploration, navigation, and map-diff tasks.

An episode is a seeded sense -> map -> reward -> act loop over one world. The
log keeps one quantized row per step (9 significant digits, the same values
that are persisted), so every metric recomputed from a saved log is
bit-identical to the live computation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InconsistentInputs, NoFrontier, NoPath, ShapeMismatch
from .mapping import (
    AgentMap,
    LocalMap,
    build_local_map,
    estimate_pose,
    geodesic_distance_m,
    pose_error,
    PoseEstimate,
)
from .policy import (
    GlobalGoal,
    GoalReset,
    GoalScorer,
    Strategy,
    StrategyKind,
    goal_reset_check,
    local_controller,
    local_goal_on_path,
    plan_path,
    select_global_goal,
)
from .rewards import RewardKind, RewardParams, RewardState, StateEncoder, StepContext
from .describe import SpeakerKind, SpeakerPolicy, speaker_trigger
from .world import (
    Action,
    CELL_AREA_M2,
    CELL_M,
    FORWARD_STEP_M,
    GroundTruthWorld,
    NoiseConfig,
    NOISE_FREE,
    OdometrySensor,
    Pose,
    SensorConfig,
    angle_diff,
    cell_center,
    relative_odometry,
    sense,
    step as world_step,
)

NAV_SUCCESS_RADIUS_M = 0.2
NAV_HEADING_TOL_DEG = 10.0


def quantize(x: float) -> float:
    """Round-trip a float through the logging format (9 significant digits)."""
    return float(f"{x:.9g}")


def fmt9(x: float) -> str:
    return f"{x:.9g}"


class TaskKind(Enum):
    EXPLORATION = "exploration"
    POINTNAV = "pointnav"
    POINTNAVPP = "pointnavpp"
    SPOTDIFF = "spotdiff"


def world_digest(world: GroundTruthWorld) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(world.occupancy).tobytes())
    h.update(f"{world.height}x{world.width}".encode())
    return h.hexdigest()[:12]


@dataclass
class EpisodeConfig:
    task: TaskKind
    world: GroundTruthWorld
    start: Pose
    max_steps: int
    seed: int
    noise: NoiseConfig = NOISE_FREE
    sensor: SensorConfig = SensorConfig()
    reward_kind: RewardKind | None = RewardKind.COVERAGE
    reward_params: RewardParams = RewardParams()
    strategy: Strategy = Strategy(StrategyKind.FRONTIER)
    goal: Pose | None = None  # navigation goal, episode frame
    outdated_occupied: np.ndarray | None = None  # spotdiff prior, binary
    speaker: SpeakerPolicy | None = None
    resample_every: int = 25
    stuck_after: int = 50
    prior_weight: int = 1
    encoder_seed: int = 0

    def validate(self) -> None:
        if self.max_steps <= 0:
            raise ConfigError("episode budget must be positive")
        if not self.world.is_free(self.start):
            raise ConfigError(f"start pose {self.start} is not in free space")
        if self.task in (TaskKind.POINTNAV, TaskKind.POINTNAVPP):
            if self.goal is None:
                raise ConfigError("navigation tasks need a goal pose")
            goal_world = self.start.compose(self.goal)
            if not self.world.is_free(goal_world):
                raise ConfigError(f"goal {goal_world} is not in free space")
            if math.isinf(
                geodesic_distance_m(self.world.occupancy, self.start.cell(), goal_world.cell())
            ):
                raise ConfigError("goal is unreachable in the ground truth")
        if self.task == TaskKind.SPOTDIFF:
            if self.outdated_occupied is None:
                raise ConfigError("spot-the-difference needs the outdated map")
            if self.outdated_occupied.shape != self.world.occupancy.shape:
                raise ConfigError("outdated map shape differs from the world")
        if self.speaker is not None and self.speaker.kind == SpeakerKind.SURPRISAL:
            if self.reward_kind != RewardKind.CURIOSITY:
                raise ConfigError("surprisal speaker needs the curiosity reward stream")

    def summary(self) -> dict:
        return {
            "task": self.task.value,
            "world_digest": world_digest(self.world),
            "world_shape": list(self.world.occupancy.shape),
            "start": [self.start.x, self.start.y, self.start.theta],
            "goal": None if self.goal is None else [self.goal.x, self.goal.y, self.goal.theta],
            "max_steps": self.max_steps,
            "seed": self.seed,
            "noise": {
                "sigma_translation": self.noise.sigma_translation,
                "sigma_rotation": self.noise.sigma_rotation,
                "sigma_depth": self.noise.sigma_depth,
                "sigma_odometry_xy": self.noise.sigma_odometry_xy,
                "sigma_odometry_theta": self.noise.sigma_odometry_theta,
            },
            "sensor": {
                "fov_deg": self.sensor.fov_deg,
                "rays": self.sensor.rays,
                "depth_max": self.sensor.depth_max,
                "patch_px": self.sensor.patch_px,
                "patch_cells": self.sensor.patch_cells,
                "patch_bins": self.sensor.patch_bins,
            },
            "reward": None if self.reward_kind is None else self.reward_kind.value,
            "strategy": self.strategy.kind.value,
            "resample_every": self.resample_every,
            "stuck_after": self.stuck_after,
            "encoder_seed": self.encoder_seed,
        }


CSV_COLUMNS = [
    "step",
    "action",
    "true_x",
    "true_y",
    "true_theta",
    "true_ep_x",
    "true_ep_y",
    "true_ep_theta",
    "est_x",
    "est_y",
    "est_theta",
    "bump",
    "reward",
    "seen_cells",
    "acc_cells",
    "match_cells",
    "trigger",
    "goal_row",
    "goal_col",
]
_FLOAT_COLUMNS = {
    "true_x", "true_y", "true_theta", "true_ep_x", "true_ep_y", "true_ep_theta",
    "est_x", "est_y", "est_theta", "reward",
}


class EpisodeLog:
    """Replayable record of one episode: per-step rows plus final artifacts."""

    def __init__(self, config_summary: dict):
        self.config = config_summary
        self.rows: dict[str, list] = {c: [] for c in CSV_COLUMNS}
        self.termination = "Budget"
        self.final_map: AgentMap | None = None
        self.seen_mask: np.ndarray | None = None
        self.metrics: dict = {}

    @property
    def steps(self) -> int:
        return len(self.rows["step"])

    def append(self, **kw) -> None:
        for col in CSV_COLUMNS:
            value = kw[col]
            if col in _FLOAT_COLUMNS:
                value = quantize(value)
            self.rows[col].append(value)

    def column(self, name: str) -> list:
        return self.rows[name]

    def save(self, directory, name: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / f"{name}.csv", "w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for i in range(self.steps):
                row = []
                for col in CSV_COLUMNS:
                    v = self.rows[col][i]
                    if col in _FLOAT_COLUMNS:
                        row.append(fmt9(v))
                    elif isinstance(v, bool):
                        row.append("1" if v else "0")
                    else:
                        row.append(str(v))
                writer.writerow(row)
        sidecar = {
            "config": self.config,
            "termination": self.termination,
            "metrics": self.metrics,
        }
        with open(directory / f"{name}.json", "w") as fh:
            json.dump(sidecar, fh, indent=1, sort_keys=True)
            fh.write("\n")
        if self.final_map is not None:
            self.final_map.save_npz(directory / f"{name}_map.npz")
        if self.seen_mask is not None:
            np.savez_compressed(directory / f"{name}_seen.npz", seen=self.seen_mask)

    @classmethod
    def load(cls, directory, name: str) -> "EpisodeLog":
        directory = Path(directory)
        with open(directory / f"{name}.json") as fh:
            sidecar = json.load(fh)
        log = cls(sidecar["config"])
        log.termination = sidecar["termination"]
        log.metrics = sidecar.get("metrics", {})
        with open(directory / f"{name}.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_COLUMNS:
                raise InconsistentInputs(f"unexpected CSV header in {name}.csv")
            for row in reader:
                for col, raw in zip(CSV_COLUMNS, row):
                    if col in _FLOAT_COLUMNS:
                        log.rows[col].append(float(raw))
                    elif col in ("bump", "trigger"):
                        log.rows[col].append(raw == "1")
                    elif col == "action":
                        log.rows[col].append(raw)
                    else:
                        log.rows[col].append(int(raw))
        map_file = directory / f"{name}_map.npz"
        if map_file.exists():
            log.final_map = AgentMap.load_npz(map_file)
        seen_file = directory / f"{name}_seen.npz"
        if seen_file.exists():
            log.seen_mask = np.load(seen_file)["seen"].astype(bool)
        return log


# ---------------------------------------------------------------------------
# Episode driver

class _MatchTrackers:
    """Incremental occupancy-match and two-channel accuracy counters.

    Equivalent to recomputing the full-map counts after every registration,
    maintained per touched cell so the driver stays O(touched) per step.
    """

    def __init__(self, agent_map: AgentMap, truth_occ: np.ndarray, truth_explored: np.ndarray):
        self.truth_occ = truth_occ.ravel()
        self.truth_explored = truth_explored.ravel()
        binocc = agent_map.binary_occupied().ravel()
        explored = agent_map.explored_mask().ravel()
        self.occ_state = binocc == self.truth_occ
        self.expl_state = explored == self.truth_explored
        self.match = int(np.count_nonzero(self.occ_state))
        self.acc = self.match + int(np.count_nonzero(self.expl_state))

    def update(self, agent_map: AgentMap, touched: np.ndarray) -> None:
        if touched.size == 0:
            return
        sums = agent_map.sums.ravel()[touched]
        counts = agent_map.counts.ravel()[touched]
        binocc = sums >= 0.5 * counts
        occ_new = binocc == self.truth_occ[touched]
        expl_new = self.truth_explored[touched]  # touched cells are explored
        occ_delta = int(np.count_nonzero(occ_new)) - int(np.count_nonzero(self.occ_state[touched]))
        expl_delta = int(np.count_nonzero(expl_new)) - int(
            np.count_nonzero(self.expl_state[touched])
        )
        self.occ_state[touched] = occ_new
        self.expl_state[touched] = expl_new
        self.match += occ_delta
        self.acc += occ_delta + expl_delta


def _prior_object_mask(occupied: np.ndarray) -> np.ndarray:
    """Occupied components that do not touch the border (objects, not walls)."""
    labels, count = ndimage.label(occupied)
    if count == 0:
        return np.zeros_like(occupied, dtype=bool)
    border = np.unique(
        np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    )
    keep = np.ones(count + 1, dtype=bool)
    keep[0] = False
    keep[border[border > 0]] = False
    return keep[labels]


class _Navigator:
    """Owns goals and plans; mirrors the hierarchical reset rules."""

    def __init__(self, cfg: EpisodeConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.exploration = cfg.task in (TaskKind.EXPLORATION, TaskKind.SPOTDIFF)
        self.global_goal: GlobalGoal | None = None
        self.plan = None
        self.local_goal: tuple[int, int] | None = None
        self.steps_since_global = 0
        if not self.exploration:
            goal_world = cfg.start.compose(cfg.goal)
            self.nav_goal_world = goal_world
            self.nav_goal_cell = goal_world.cell()
            self.nav_goal_heading = goal_world.theta

    def _sample_global(self, agent_map, reg_pose, scorer_factory, step):
        if not self.exploration:
            self.global_goal = GlobalGoal(self.nav_goal_cell, step)
            return
        scorer = None
        if self.cfg.strategy.kind == StrategyKind.GREEDY_REWARD and scorer_factory is not None:
            scorer = scorer_factory()
        try:
            self.global_goal = select_global_goal(
                self.cfg.strategy, agent_map, reg_pose, scorer, self.rng, step
            )
        except NoFrontier:
            fallback = Strategy(StrategyKind.RANDOM_GOAL)
            self.global_goal = select_global_goal(
                fallback, agent_map, reg_pose, None, self.rng, step
            )
        self.steps_since_global = 0
        self.plan = None

    def decide(self, agent_map, reg_pose, scorer_factory, step, bump_last) -> Action:
        agent_cell = reg_pose.cell()
        if bump_last:
            self.plan = None  # the path ahead just proved wrong

        resample = self.cfg.resample_every if self.exploration else None
        reset = goal_reset_check(
            self.steps_since_global,
            resample,
            agent_cell,
            self.local_goal,
            agent_map,
            (reg_pose.x, reg_pose.y),
        )
        if (
            self.global_goal is None
            or reset == GoalReset.NEW_GLOBAL
            or agent_cell == self.global_goal.cell
        ):
            self._sample_global(agent_map, reg_pose, scorer_factory, step)
        if self.plan is None or reset == GoalReset.NEW_LOCAL:
            self._refresh_plan(agent_map, agent_cell, reg_pose, scorer_factory)
        self.steps_since_global += 1

        if self.plan is None:
            return Action.TURN_LEFT  # recovery spin until a path exists
        target_xy = cell_center(*self.local_goal)
        if self.exploration:
            return local_controller(reg_pose, target_xy)
        heading = self.nav_goal_heading if self.cfg.task == TaskKind.POINTNAVPP else None
        near_goal = self.local_goal == self.nav_goal_cell
        return local_controller(
            reg_pose,
            target_xy if not near_goal else (self.nav_goal_world.x, self.nav_goal_world.y),
            stop_radius=NAV_SUCCESS_RADIUS_M if near_goal else None,
            goal_heading=heading,
        )

    def _refresh_plan(self, agent_map, agent_cell, reg_pose, scorer_factory):
        stale = self.plan is None or self._local_goal_blocked(agent_map)
        if stale:
            for _ in range(3):
                try:
                    self.plan = plan_path(agent_map, agent_cell, self.global_goal.cell)
                    break
                except NoPath:
                    self.plan = None
                    if not self.exploration:
                        return
                    self._sample_global(
                        agent_map, reg_pose, scorer_factory, self.global_goal.birth_step
                    )
            if self.plan is None:
                return
        self.local_goal = local_goal_on_path(
            self.plan.path, (reg_pose.x, reg_pose.y), agent_map=agent_map
        )

    def _local_goal_blocked(self, agent_map) -> bool:
        if self.local_goal is None:
            return True
        count = agent_map.counts[self.local_goal]
        return count > 0 and agent_map.sums[self.local_goal] >= 0.5 * count


def run_episode(cfg: EpisodeConfig) -> EpisodeLog:
    """Run one seeded episode to termination (budget, Stop, or stuck)."""
    cfg.validate()
    seq = np.random.SeedSequence(cfg.seed)
    rng_sim, rng_policy = (np.random.default_rng(s) for s in seq.spawn(2))

    world = cfg.world
    truth_occ = world.occupancy.astype(bool)
    visible = world.visible_mask()
    visible_flat = visible.ravel()
    h, w = world.occupancy.shape

    if cfg.task == TaskKind.SPOTDIFF:
        agent_map = AgentMap.from_prior(
            cfg.outdated_occupied.astype(np.uint8),
            np.ones_like(cfg.outdated_occupied, dtype=np.uint8),
            cfg.prior_weight,
        )
        prior_objects = _prior_object_mask(cfg.outdated_occupied.astype(bool))
    else:
        agent_map = AgentMap(h, w)
        prior_objects = np.zeros((h, w), dtype=bool)

    trackers = _MatchTrackers(agent_map, truth_occ, visible)
    seen = np.zeros(h * w, dtype=bool)
    seen_visible = 0

    encoder = StateEncoder(
        cfg.sensor.patch_px, cfg.sensor.patch_bins, seed=cfg.encoder_seed
    )
    reward_state = (
        RewardState(cfg.reward_kind, cfg.reward_params, encoder, cfg.sensor.patch_bins)
        if cfg.reward_kind is not None
        else None
    )

    log = EpisodeLog(cfg.summary())
    odom = OdometrySensor(cfg.noise)
    nav = _Navigator(cfg, rng_policy)

    true_pose = cfg.start
    obs = sense(world, true_pose, cfg.sensor, cfg.noise, rng_sim, bump=False, odometry=odom)
    raw0 = obs.odometry
    est = PoseEstimate(relative_odometry(obs.odometry, raw0))
    psi = encoder.encode(obs.ego_patch) if (reward_state and reward_state.needs_encoding) else None

    def register_obs(observation, est_pose_ep):
        nonlocal seen_visible
        reg_pose = cfg.start.compose(est_pose_ep)
        local = build_local_map(observation.depth_scan, cfg.sensor)
        touched = agent_map.register(local, reg_pose)
        if touched.size:
            new = touched[~seen[touched]]
            seen[new] = True
            seen_visible += int(np.count_nonzero(visible_flat[new]))
        trackers.update(agent_map, touched)
        return reg_pose

    reg_pose = register_obs(obs, est.pose)

    stuck_run = 0
    prev_quant = (quantize(true_pose.x), quantize(true_pose.y), quantize(true_pose.theta))
    termination = "Budget"
    bump_last = False

    for t in range(1, cfg.max_steps + 1):
        def scorer_factory(step=None):
            return GoalScorer(
                cfg.strategy.reward_kind or cfg.reward_kind or RewardKind.COVERAGE,
                agent_map,
                seen.reshape(h, w),
                agent_pose=reg_pose,
                grid_counts=reward_state.grid if reward_state else None,
                density=reward_state.density if reward_state else None,
                gain_scale=cfg.reward_params.gain_scale,
                step_index=t,
                prior_objects=prior_objects,
                beta_exp=cfg.reward_params.beta_exp,
                beta_diff=cfg.reward_params.beta_diff,
            )

        action = nav.decide(agent_map, reg_pose, scorer_factory, t, bump_last)

        if action == Action.STOP:
            termination = "Stop"
            break

        seen_prev, acc_prev, match_prev = seen_visible, trackers.acc, trackers.match
        true_pose, bump = world_step(world, true_pose, action, cfg.noise, rng_sim)
        bump_last = bump
        obs = sense(world, true_pose, cfg.sensor, cfg.noise, rng_sim, bump=bump, odometry=odom)
        rel = relative_odometry(obs.odometry, raw0)
        est = PoseEstimate(rel, _body_delta(est.pose, rel))
        if bump:
            # the bump sensor proves something blocks the swept segment; mark
            # the most plausible cell decisively so one collision is enough
            blocked = _blocked_cell(agent_map, cfg.start.compose(est.pose))
            n = int(agent_map.counts[blocked])
            believed_free = n > 0 and agent_map.sums[blocked] < 0.5 * n
            weight = min(n + 1, 1000) if believed_free else 1
            trackers.update(agent_map, agent_map.observe_cell(blocked, 1.0, weight))
        reg_pose = register_obs(obs, est.pose)

        reward = 0.0
        trigger = False
        psi_next = None
        if reward_state is not None:
            if reward_state.needs_encoding:
                psi_next = encoder.encode(obs.ego_patch)
            ctx = StepContext(
                action=int(action),
                step_index=t,
                est_pose=est.pose,
                bump=bump,
                psi_prev=psi,
                psi_next=psi_next,
                patch_next=obs.ego_patch,
                seen_prev=seen_prev,
                seen_curr=seen_visible,
                acc_prev=acc_prev,
                acc_curr=trackers.acc,
                match_prev=match_prev,
                match_curr=trackers.match,
            )
            reward = reward_state.compute(ctx)
            if psi_next is not None:
                psi = psi_next

        if cfg.speaker is not None:
            trigger = _speaker_step(cfg.speaker, obs, reward_state)

        true_ep = true_pose.relative_to(cfg.start)
        goal_cell = nav.global_goal.cell if nav.global_goal else (-1, -1)
        log.append(
            step=t,
            action=action.name,
            true_x=true_pose.x,
            true_y=true_pose.y,
            true_theta=true_pose.theta,
            true_ep_x=true_ep.x,
            true_ep_y=true_ep.y,
            true_ep_theta=true_ep.theta,
            est_x=est.pose.x,
            est_y=est.pose.y,
            est_theta=est.pose.theta,
            bump=bump,
            reward=reward,
            seen_cells=seen_visible,
            acc_cells=trackers.acc,
            match_cells=trackers.match,
            trigger=trigger,
            goal_row=goal_cell[0],
            goal_col=goal_cell[1],
        )

        quant = (quantize(true_pose.x), quantize(true_pose.y), quantize(true_pose.theta))
        if quant == prev_quant:
            stuck_run += 1
            if stuck_run >= cfg.stuck_after:
                termination = "Stuck"
                break
        else:
            stuck_run = 0
            prev_quant = quant

    log.termination = termination
    log.final_map = agent_map
    log.seen_mask = seen.reshape(h, w)
    return log


def _body_delta(prev: Pose, curr: Pose) -> tuple[float, float, float]:
    rel = curr.relative_to(prev)
    return (rel.x, rel.y, rel.theta)


def _blocked_cell(agent_map: AgentMap, pose: Pose) -> tuple[int, int]:
    """Best guess at the cell that caused a forward collision.

    Walks the intended 0.25 m segment and returns the first crossed cell the
    map does not already believe to be explored free space (rays never mark a
    truly occupied cell free, so the blocker is normally still unexplored).
    Falls back to the deepest crossed cell when belief claims the whole
    segment is clear.
    """
    own = pose.cell()
    c = math.cos(pose.theta)
    s = math.sin(pose.theta)
    h, w = agent_map.shape
    last = own
    dist = 0.0
    while dist < FORWARD_STEP_M:
        dist += 0.0125
        cell = (
            int(math.floor((pose.y + s * dist) / CELL_M)),
            int(math.floor((pose.x + c * dist) / CELL_M)),
        )
        if cell == last or cell == own:
            continue
        last = cell
        if not (0 <= cell[0] < h and 0 <= cell[1] < w):
            return last
        n = agent_map.counts[cell]
        believed_free = n > 0 and agent_map.sums[cell] < 0.5 * n
        if not believed_free:
            return cell
    return last


def _speaker_step(policy: SpeakerPolicy, obs, reward_state) -> bool:
    if policy.kind == SpeakerKind.DEPTH:
        stat = float(np.mean(obs.depth_scan)) if obs.depth_scan.size else 0.0
    elif policy.kind == SpeakerKind.OBJECT:
        stat = float(obs.visible_semantics.sum())
    else:
        policy.push_surprisal(getattr(reward_state, "last_surprisal", 0.0))
        stat = policy.rolling_surprisal()
    return speaker_trigger(policy, stat)


# ---------------------------------------------------------------------------
# Metrics

def exploration_metrics(
    final_map: AgentMap,
    world: GroundTruthWorld,
    seen_mask: np.ndarray,
    log: EpisodeLog | None = None,
) -> dict:
    """Map-quality and coverage metrics against the ground truth."""
    if final_map.shape != world.occupancy.shape:
        raise ShapeMismatch("final map and world shapes differ")
    truth_occ = world.occupancy.astype(bool)
    visible = world.visible_mask()
    free_truth = ~truth_occ
    occ_truth_vis = truth_occ & visible

    explored = final_map.explored_mask()
    binocc = final_map.binary_occupied()
    pred_free = explored & ~binocc
    pred_occ = explored & binocc

    fiou = _iou(pred_free, free_truth)
    oiou = _iou(pred_occ, occ_truth_vis)
    seen_vis = seen_mask & visible
    fas = float(np.count_nonzero(seen_mask & free_truth)) * CELL_AREA_M2
    oas = float(np.count_nonzero(seen_mask & occ_truth_vis)) * CELL_AREA_M2
    visible_count = int(np.count_nonzero(visible))

    out = {
        "iou": 0.5 * (fiou + oiou),
        "fiou": fiou,
        "oiou": oiou,
        "acc_m2": float(np.count_nonzero(binocc == truth_occ)) * CELL_AREA_M2,
        "as_m2": fas + oas,
        "fas_m2": fas,
        "oas_m2": oas,
        "pct_as": float(np.count_nonzero(seen_vis)) / visible_count if visible_count else 0.0,
    }
    if log is not None and log.steps:
        est = Pose(log.rows["est_x"][-1], log.rows["est_y"][-1], log.rows["est_theta"][-1])
        true_ep = Pose(
            log.rows["true_ep_x"][-1], log.rows["true_ep_y"][-1], log.rows["true_ep_theta"][-1]
        )
        te, ae = pose_error(est, true_ep)
        out["te_m"] = te
        out["ae_deg"] = ae
        out["steps"] = log.steps
    return out


def _iou(pred: np.ndarray, truth: np.ndarray) -> float:
    union = int(np.count_nonzero(pred | truth))
    if union == 0:
        return 1.0
    return float(np.count_nonzero(pred & truth)) / union


def spotdiff_metrics(
    final_map: AgentMap,
    outdated_occ: np.ndarray,
    truth_occ: np.ndarray,
    visited_mask: np.ndarray | None = None,
) -> dict:
    """Change-detection metrics over the cells that differ between layouts.

    Acc is the fraction of changed cells whose final belief matches the new
    truth; IoU+/- compare predicted added/removed sets against the true ones.
    The m-prefixed variants restrict everything to the visited mask.
    """
    if final_map.shape != truth_occ.shape or outdated_occ.shape != truth_occ.shape:
        raise ShapeMismatch("map shapes differ")
    outdated = outdated_occ.astype(bool)
    truth = truth_occ.astype(bool)
    binocc = final_map.binary_occupied()

    out = _diff_scores(binocc, outdated, truth, None)
    mask = (
        visited_mask.astype(bool)
        if visited_mask is not None
        else np.ones_like(truth, dtype=bool)
    )
    masked = _diff_scores(binocc, outdated, truth, mask)
    out.update({f"m_{k}": v for k, v in masked.items()})
    return out


def _diff_scores(binocc, outdated, truth, mask) -> dict:
    change = outdated != truth
    pred_add = binocc & ~outdated
    true_add = truth & ~outdated
    pred_rem = ~binocc & outdated
    true_rem = ~truth & outdated
    if mask is not None:
        change = change & mask
        pred_add = pred_add & mask
        true_add = true_add & mask
        pred_rem = pred_rem & mask
        true_rem = true_rem & mask
    n_change = int(np.count_nonzero(change))
    correct = int(np.count_nonzero(change & (binocc == truth)))
    return {
        "acc": correct / n_change if n_change else 1.0,
        "iou_plus": _iou(pred_add, true_add),
        "iou_minus": _iou(pred_rem, true_rem),
        "iou": _iou(pred_add | pred_rem, true_add | true_rem),
        "changed_cells": n_change,
    }


def navigation_metrics(log: EpisodeLog, cfg: EpisodeConfig, spl_mode: str = "steps") -> dict:
    """Success, distance/orientation errors, SPL family, and failure rates."""
    goal_world = cfg.start.compose(cfg.goal)
    goal_cell = goal_world.cell()
    if log.steps:
        fx = log.rows["true_x"][-1]
        fy = log.rows["true_y"][-1]
        ftheta = log.rows["true_theta"][-1]
    else:
        fx, fy, ftheta = cfg.start.x, cfg.start.y, cfg.start.theta
    final_cell = (int(math.floor(fy / CELL_M)), int(math.floor(fx / CELL_M)))
    d2g = geodesic_distance_m(cfg.world.occupancy, final_cell, goal_cell)
    oe = abs(math.degrees(angle_diff(ftheta, goal_world.theta)))

    stopped = log.termination == "Stop"
    pnsr = 1.0 if stopped and d2g <= NAV_SUCCESS_RADIUS_M else 0.0
    asr = 1.0 if stopped and oe < NAV_HEADING_TOL_DEG else 0.0
    if cfg.task == TaskKind.POINTNAVPP:
        sr = pnsr * asr
    else:
        sr = pnsr

    optimal_m = geodesic_distance_m(cfg.world.occupancy, cfg.start.cell(), goal_cell)
    taken = max(log.steps, 1)
    if spl_mode == "steps":
        optimal = max(1.0, math.ceil(optimal_m / FORWARD_STEP_M))
        spl = sr * optimal / max(taken, optimal)
    else:
        travelled = _path_length(log)
        optimal = max(optimal_m, CELL_M)
        spl = sr * optimal / max(travelled, optimal)

    d_init = max(optimal_m, 1e-9)
    soft = min(max((d_init - d2g) / d_init, 0.0), 1.0)
    opt_steps = max(1.0, math.ceil(optimal_m / FORWARD_STEP_M))
    sspl = soft * opt_steps / max(taken, opt_steps)

    return {
        "d2g_m": d2g,
        "oe_deg": oe,
        "sr": sr,
        "pnsr": pnsr,
        "asr": asr,
        "spl": spl,
        "sspl": sspl,
        "br": 1.0 if any(log.rows["bump"]) else 0.0,
        "hfr": 0.0 if stopped else 1.0,
        "steps": log.steps,
    }


def _path_length(log: EpisodeLog) -> float:
    xs = log.rows["true_x"]
    ys = log.rows["true_y"]
    total = 0.0
    for i in range(1, len(xs)):
        total += math.hypot(xs[i] - xs[i - 1], ys[i] - ys[i - 1])
    return total
