"""Ground-truth worlds: floorplan generation, motion, and sensing.

A world is a W x H grid of 5 x 5 cm cells, occupied or free, with optional
per-class semantic channels for the clutter objects. Worlds are immutable
after generation and safe to share between episodes; all per-episode state
(pose, RNG) lives with the caller.

Frames and conventions:
  * world frame: x east (columns), y north (rows), meters; heading theta in
    [0, 2pi), counterclockwise, 0 = +x.
  * body frame: x forward, y left.
  * cell (row, col) covers [col*0.05, (col+1)*0.05) x [row*0.05, (row+1)*0.05).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import GenerationFailed, InvalidPose

CELL_M = 0.05
CELL_AREA_M2 = CELL_M * CELL_M
FORWARD_STEP_M = 0.25
TURN_STEP_RAD = math.radians(10.0)

WORLD_MAGIC = "EXPBENCH-WORLD v1"


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [0, 2pi)."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t < 0.0:
        t += 2.0 * math.pi
    return t


def angle_diff(a: float, b: float) -> float:
    """Signed smallest rotation taking heading b onto heading a, in (-pi, pi]."""
    d = math.fmod(a - b, 2.0 * math.pi)
    if d > math.pi:
        d -= 2.0 * math.pi
    elif d <= -math.pi:
        d += 2.0 * math.pi
    return d


@dataclass(frozen=True)
class Pose:
    """Planar position (meters) and heading (radians, normalized)."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def compose(self, delta: "Pose") -> "Pose":
        """Apply a body-frame displacement (forward, left, dtheta)."""
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        return Pose(
            self.x + delta.x * c - delta.y * s,
            self.y + delta.x * s + delta.y * c,
            self.theta + delta.theta,
        )

    def relative_to(self, base: "Pose") -> "Pose":
        """Express this pose in the frame anchored at `base`."""
        c = math.cos(base.theta)
        s = math.sin(base.theta)
        dx = self.x - base.x
        dy = self.y - base.y
        return Pose(c * dx + s * dy, -s * dx + c * dy, self.theta - base.theta)

    def distance_to(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def cell(self) -> tuple[int, int]:
        return int(math.floor(self.y / CELL_M)), int(math.floor(self.x / CELL_M))


def cell_center(row: int, col: int) -> tuple[float, float]:
    return (col + 0.5) * CELL_M, (row + 0.5) * CELL_M


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian noise magnitudes; all zero reproduces ideal kinematics exactly.

    Actuation noise perturbs each action (translation in meters, rotation in
    radians), depth noise is multiplicative on range readings, and odometry
    noise is a per-step random-walk increment on the raw odometry reading.
    """

    sigma_translation: float = 0.0
    sigma_rotation: float = 0.0
    sigma_depth: float = 0.0
    sigma_odometry_xy: float = 0.0
    sigma_odometry_theta: float = 0.0
    seed: int = 0

    def any_noise(self) -> bool:
        return (
            self.sigma_translation > 0
            or self.sigma_rotation > 0
            or self.sigma_depth > 0
            or self.sigma_odometry_xy > 0
            or self.sigma_odometry_theta > 0
        )


NOISE_FREE = NoiseConfig()
# The source hardware noise magnitudes are unpublished; these defaults are
# configuration, not a claim.
DEFAULT_NOISY = NoiseConfig(
    sigma_translation=0.01,
    sigma_rotation=math.radians(0.5),
    sigma_depth=0.01,
    sigma_odometry_xy=0.002,
    sigma_odometry_theta=math.radians(0.1),
)


@dataclass(frozen=True)
class SensorConfig:
    """Depth scanner + egocentric patch parameters."""

    fov_deg: float = 90.0
    rays: int = 61
    depth_max: float = 5.0
    patch_px: int = 16
    patch_cells: int = 64  # ego crop side in ground cells; multiple of patch_px
    patch_bins: int = 8

    def ray_offsets(self) -> np.ndarray:
        return _ray_offsets(self.fov_deg, self.rays)

    def local_map_size(self) -> int:
        reach = int(math.ceil(self.depth_max / CELL_M)) + 1
        return 2 * reach + 1


def _ray_offsets(fov_deg: float, rays: int) -> np.ndarray:
    if rays <= 0 or fov_deg <= 0:
        return np.zeros(0, dtype=np.float64)
    if rays == 1:
        return np.zeros(1, dtype=np.float64)
    half = math.radians(fov_deg) / 2.0
    return np.linspace(-half, half, rays)


@dataclass
class Observation:
    """One step of sensing: depth scan, bump flag, odometry, semantics, patch."""

    depth_scan: np.ndarray
    bump: bool
    odometry: Pose
    visible_semantics: np.ndarray
    ego_patch: np.ndarray


class GroundTruthWorld:
    """Immutable occupancy grid plus optional semantic channels.

    occupancy: (H, W) uint8, 1 = occupied. semantic: (C, H, W) uint8 of
    per-class object masks, each a subset of the occupied cells except for
    stacked-on-top classes whose footprint lies on other objects.
    """

    def __init__(
        self,
        occupancy: np.ndarray,
        semantic: np.ndarray | None = None,
        class_names: tuple[str, ...] = (),
        class_actions: tuple[str, ...] = (),
    ):
        self.occupancy = np.ascontiguousarray(occupancy, dtype=np.uint8)
        self.occupancy.setflags(write=False)
        self.semantic = None
        if semantic is not None:
            self.semantic = np.ascontiguousarray(semantic, dtype=np.uint8)
            self.semantic.setflags(write=False)
        self.class_names = tuple(class_names)
        self.class_actions = tuple(class_actions)
        self._labels: dict[int, tuple[np.ndarray, int]] = {}

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def n_classes(self) -> int:
        return 0 if self.semantic is None else self.semantic.shape[0]

    @property
    def free_mask(self) -> np.ndarray:
        return self.occupancy == 0

    @property
    def navigable_area_m2(self) -> float:
        return float(np.count_nonzero(self.occupancy == 0)) * CELL_AREA_M2

    def visible_mask(self) -> np.ndarray:
        """Free cells plus occupied cells with a 4-adjacent free cell.

        Ray marching advances in axis-aligned cell steps, so exactly these
        occupied cells can ever be hit first by a ray from free space.
        """
        free = self.occupancy == 0
        near = np.zeros_like(free)
        near[1:, :] |= free[:-1, :]
        near[:-1, :] |= free[1:, :]
        near[:, 1:] |= free[:, :-1]
        near[:, :-1] |= free[:, 1:]
        return free | (near & (self.occupancy != 0))

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def is_free(self, pose: Pose) -> bool:
        row, col = pose.cell()
        return self.in_bounds(row, col) and self.occupancy[row, col] == 0

    def instance_labels(self, channel: int) -> tuple[np.ndarray, int]:
        """4-connected instance labeling of one semantic channel (cached)."""
        if channel not in self._labels:
            labels, count = ndimage.label(self.semantic[channel])
            self._labels[channel] = (labels, int(count))
        return self._labels[channel]


def free_space_connected(occupancy: np.ndarray) -> bool:
    """True when all free cells form a single 4-connected component."""
    free = occupancy == 0
    total = int(np.count_nonzero(free))
    if total == 0:
        return False
    rows, cols = np.nonzero(free)
    dist = _kernels.bfs_grid(free, int(rows[0]), int(cols[0]))
    return int(np.count_nonzero(dist >= 0)) == total


@dataclass(frozen=True)
class FloorplanParams:
    """Knobs for the BSP floorplan generator (sizes in cells)."""

    width: int = 300
    height: int = 300
    rooms_min: int = 1
    rooms_max: int = 1
    min_room_side: int = 40
    door_cells: int = 6
    clutter_density: float = 0.0
    clutter_side_min: int = 4
    clutter_side_max: int = 12
    n_classes: int = 0
    retries: int = 20


_CLASS_POOL = (
    ("crate", "removal"),
    ("table", "displacement"),
    ("chair", "displacement"),
    ("shelf", "noop"),
    ("plant", "removal"),
    ("cushion", "overlap_removal"),
)


def generate_floorplan(seed: int, params: FloorplanParams) -> GroundTruthWorld:
    """Generate a connected multi-room world; same seed gives identical grids."""
    if params.rooms_min < 1 or params.rooms_max < params.rooms_min:
        raise GenerationFailed("room count range must be nonempty and >= 1")
    if params.width < 3 or params.height < 3:
        raise GenerationFailed("grid too small for border walls")
    for attempt in range(params.retries):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        world = _try_generate(rng, params)
        if world is not None:
            return world
    raise GenerationFailed(
        f"no connected floorplan for seed={seed} within {params.retries} attempts"
    )


def _try_generate(rng: np.random.Generator, params: FloorplanParams):
    h, w = params.height, params.width
    occ = np.zeros((h, w), dtype=np.uint8)
    occ[0, :] = occ[-1, :] = 1
    occ[:, 0] = occ[:, -1] = 1

    target_rooms = int(rng.integers(params.rooms_min, params.rooms_max + 1))
    rooms = [(1, 1, h - 1, w - 1)]  # half-open (r0, c0, r1, c1) interiors
    while len(rooms) < target_rooms:
        split = _split_largest(rng, rooms, occ, params)
        if not split:
            break

    n_classes = params.n_classes if params.clutter_density > 0 else 0
    semantic = np.zeros((n_classes, h, w), dtype=np.uint8) if n_classes else None
    names = tuple(_CLASS_POOL[i % len(_CLASS_POOL)][0] for i in range(n_classes))
    actions = tuple(_CLASS_POOL[i % len(_CLASS_POOL)][1] for i in range(n_classes))

    if n_classes:
        _place_clutter(rng, occ, semantic, actions, params)

    if not free_space_connected(occ):
        return None
    return GroundTruthWorld(occ, semantic, names, actions)


def _split_largest(rng, rooms, occ, params):
    order = sorted(
        range(len(rooms)),
        key=lambda i: -(rooms[i][2] - rooms[i][0]) * (rooms[i][3] - rooms[i][1]),
    )
    for i in order:
        r0, c0, r1, c1 = rooms[i]
        tall = (r1 - r0) >= 2 * params.min_room_side + 1
        wide = (c1 - c0) >= 2 * params.min_room_side + 1
        if not tall and not wide:
            continue
        horizontal = tall if not wide else (wide if not tall else bool(rng.integers(2)))
        if horizontal:  # horizontal wall row
            wall = int(rng.integers(r0 + params.min_room_side, r1 - params.min_room_side))
            occ[wall, c0:c1] = 1
            door = int(rng.integers(c0, c1 - params.door_cells + 1))
            occ[wall, door : door + params.door_cells] = 0
            rooms[i] = (r0, c0, wall, c1)
            rooms.append((wall + 1, c0, r1, c1))
        else:
            wall = int(rng.integers(c0 + params.min_room_side, c1 - params.min_room_side))
            occ[r0:r1, wall] = 1
            door = int(rng.integers(r0, r1 - params.door_cells + 1))
            occ[door : door + params.door_cells, wall] = 0
            rooms[i] = (r0, c0, r1, wall)
            rooms.append((r0, wall + 1, r1, c1))
        return True
    return False


def _place_clutter(rng, occ, semantic, actions, params):
    h, w = occ.shape
    base_classes = [i for i, a in enumerate(actions) if a != "overlap_removal"]
    top_classes = [i for i, a in enumerate(actions) if a == "overlap_removal"]
    target = params.clutter_density * float(np.count_nonzero(occ == 0))
    placed_cells = 0
    budget = 400
    placed_rects: list[tuple[int, int, int, int, int]] = []
    while placed_cells < target and budget > 0 and base_classes:
        budget -= 1
        ch = int(base_classes[rng.integers(len(base_classes))])
        sh = int(rng.integers(params.clutter_side_min, params.clutter_side_max + 1))
        sw = int(rng.integers(params.clutter_side_min, params.clutter_side_max + 1))
        r = int(rng.integers(1, h - sh - 1))
        c = int(rng.integers(1, w - sw - 1))
        # keep one free cell of clearance so doors and corridors survive
        region = occ[r - 1 : r + sh + 1, c - 1 : c + sw + 1]
        if region.any():
            continue
        occ[r : r + sh, c : c + sw] = 1
        if not free_space_connected(occ):
            occ[r : r + sh, c : c + sw] = 0
            continue
        semantic[ch, r : r + sh, c : c + sw] = 1
        placed_rects.append((ch, r, c, sh, sw))
        placed_cells += sh * sw
    # stack small overlap-removal objects on top of displaceable ones
    if top_classes:
        hosts = [rect for rect in placed_rects if actions[rect[0]] == "displacement"]
        for host in hosts:
            if rng.random() >= 0.5:
                continue
            ch = int(top_classes[rng.integers(len(top_classes))])
            _, hr, hc, hh, hw = host
            sh = max(1, hh // 2)
            sw = max(1, hw // 2)
            r = hr + int(rng.integers(0, hh - sh + 1))
            c = hc + int(rng.integers(0, hw - sw + 1))
            semantic[ch, r : r + sh, c : c + sw] = 1


def step(
    world: GroundTruthWorld,
    pose: Pose,
    action: Action,
    noise: NoiseConfig = NOISE_FREE,
    rng: np.random.Generator | None = None,
) -> tuple[Pose, bool]:
    """Advance one action with sticky collisions.

    A forward move whose noisy swept segment would cross an occupied cell
    leaves the pose unchanged and reports bump=True; there is no sliding
    along walls. Turns always succeed.
    """
    if not world.is_free(pose):
        raise InvalidPose(f"pose {pose} is not in free space")
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    if action == Action.FORWARD:
        dist = FORWARD_STEP_M + rng.normal(0.0, noise.sigma_translation)
        dtheta = rng.normal(0.0, noise.sigma_rotation)
        nx = pose.x + dist * math.cos(pose.theta)
        ny = pose.y + dist * math.sin(pose.theta)
        if _kernels.segment_hits(world.occupancy, pose.x, pose.y, nx, ny):
            return pose, True
        return Pose(nx, ny, pose.theta + dtheta), False
    if action == Action.TURN_LEFT or action == Action.TURN_RIGHT:
        sign = 1.0 if action == Action.TURN_LEFT else -1.0
        dtheta = sign * TURN_STEP_RAD + rng.normal(0.0, noise.sigma_rotation)
        return Pose(pose.x, pose.y, pose.theta + dtheta), False
    return pose, False


class OdometrySensor:
    """Raw odometry readings with a random-walk error; exact when sigma is 0."""

    def __init__(self, noise: NoiseConfig):
        self._noise = noise
        self._err = np.zeros(3, dtype=np.float64)

    def read(self, true_pose: Pose, rng: np.random.Generator) -> Pose:
        n = self._noise
        if n.sigma_odometry_xy > 0 or n.sigma_odometry_theta > 0:
            self._err[0] += rng.normal(0.0, n.sigma_odometry_xy)
            self._err[1] += rng.normal(0.0, n.sigma_odometry_xy)
            self._err[2] += rng.normal(0.0, n.sigma_odometry_theta)
            return Pose(
                true_pose.x + self._err[0],
                true_pose.y + self._err[1],
                true_pose.theta + self._err[2],
            )
        return true_pose


def sense(
    world: GroundTruthWorld,
    true_pose: Pose,
    sensor: SensorConfig,
    noise: NoiseConfig = NOISE_FREE,
    rng: np.random.Generator | None = None,
    bump: bool = False,
    odometry: OdometrySensor | None = None,
) -> Observation:
    """Ray-cast a depth scan and assemble the full observation.

    Ray readings are distances to the first occupied cell along each bearing,
    clamped to depth_max, with multiplicative Gaussian noise applied after.
    Semantic instance counts come from the true (pre-noise) ray endpoints.
    """
    if not world.is_free(true_pose):
        raise InvalidPose(f"pose {true_pose} is not in free space")
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    offsets = sensor.ray_offsets()
    true_readings = _kernels.raycast(
        world.occupancy, true_pose.x, true_pose.y, true_pose.theta, offsets, sensor.depth_max
    )
    if noise.sigma_depth > 0 and true_readings.size:
        factors = 1.0 + rng.normal(0.0, noise.sigma_depth, size=true_readings.size)
        readings = np.clip(true_readings * factors, 0.0, sensor.depth_max)
    else:
        readings = true_readings

    visible = _count_visible_instances(world, true_pose, offsets, true_readings, sensor.depth_max)
    patch = ego_patch(world, true_pose, sensor)
    odom = odometry.read(true_pose, rng) if odometry is not None else true_pose
    return Observation(readings, bump, odom, visible, patch)


def _count_visible_instances(world, pose, offsets, readings, depth_max):
    counts = np.zeros(world.n_classes, dtype=np.int64)
    if world.n_classes == 0 or offsets.size == 0:
        return counts
    hit = readings < depth_max
    if not hit.any():
        return counts
    ang = pose.theta + offsets[hit]
    px = pose.x + np.cos(ang) * readings[hit]
    py = pose.y + np.sin(ang) * readings[hit]
    rows = np.clip((py / CELL_M).astype(np.int64), 0, world.height - 1)
    cols = np.clip((px / CELL_M).astype(np.int64), 0, world.width - 1)
    for ch in range(world.n_classes):
        labels, _ = world.instance_labels(ch)
        ids = labels[rows, cols]
        counts[ch] = np.unique(ids[ids > 0]).size
    return counts


_PATCH_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _patch_offsets(patch_px: int, patch_cells: int):
    """Body-frame sample points for the ego crop, shaped (px*px*sub*sub,)."""
    key = (patch_px, patch_cells)
    if key not in _PATCH_CACHE:
        sub = max(1, patch_cells // patch_px)
        n = patch_px * sub
        # forward distances: row 0 of the patch is farthest ahead
        fwd = (np.arange(n)[::-1] + 0.5) * CELL_M
        lat = (np.arange(n) - n / 2.0 + 0.5) * CELL_M
        fg, lg = np.meshgrid(fwd, lat, indexing="ij")
        _PATCH_CACHE[key] = (fg.ravel(), lg.ravel())
    return _PATCH_CACHE[key]


def ego_patch(world: GroundTruthWorld, pose: Pose, sensor: SensorConfig) -> np.ndarray:
    """Quantized occupancy crop ahead of the agent, downsampled to patch_px.

    Ground-truth occupancy in a patch_cells x patch_cells window in front of
    the agent is block-averaged to patch_px x patch_px and quantized to
    patch_bins levels. Out-of-grid samples as occupied.
    """
    fwd, lat = _patch_offsets(sensor.patch_px, sensor.patch_cells)
    c = math.cos(pose.theta)
    s = math.sin(pose.theta)
    # body frame: x forward, y left
    wx = pose.x + fwd * c - lat * s
    wy = pose.y + fwd * s + lat * c
    rows = np.floor(wy / CELL_M).astype(np.int64)
    cols = np.floor(wx / CELL_M).astype(np.int64)
    inside = (rows >= 0) & (rows < world.height) & (cols >= 0) & (cols < world.width)
    vals = np.ones(rows.size, dtype=np.float64)
    vals[inside] = world.occupancy[rows[inside], cols[inside]]
    sub = max(1, sensor.patch_cells // sensor.patch_px)
    n = sensor.patch_px * sub
    blocks = vals.reshape(sensor.patch_px, sub, sensor.patch_px, sub).mean(axis=(1, 3))
    bins = np.minimum((blocks * sensor.patch_bins).astype(np.int64), sensor.patch_bins - 1)
    return bins.astype(np.uint8)


def relative_odometry(raw_t: Pose, raw_0: Pose) -> Pose:
    """Re-anchor a raw odometry reading to the episode start frame.

    Applies the inverse of the t=0 rigid transform to the position and
    subtracts the initial heading; the t=0 reading maps to (0, 0, 0).
    """
    return raw_t.relative_to(raw_0)


# ---------------------------------------------------------------------------
# World file format (versioned, run-length encoded, byte-exact; see README)

def _rle_encode(flat: np.ndarray) -> str:
    tokens = []
    n = flat.size
    i = 0
    while i < n:
        v = flat[i]
        j = i + 1
        while j < n and flat[j] == v:
            j += 1
        tokens.append(f"{j - i}*{int(v)}")
        i = j
    return " ".join(tokens)


def _rle_decode(line: str, size: int) -> np.ndarray:
    out = np.empty(size, dtype=np.uint8)
    pos = 0
    for token in line.split():
        count_s, value_s = token.split("*")
        count = int(count_s)
        out[pos : pos + count] = int(value_s)
        pos += count
    if pos != size:
        raise ValueError(f"RLE payload has {pos} cells, expected {size}")
    return out


def save_world(world: GroundTruthWorld, path) -> None:
    lines = [
        WORLD_MAGIC,
        f"width {world.width}",
        f"height {world.height}",
        f"cellmm {int(round(CELL_M * 1000))}",
        "occupancy",
        _rle_encode(world.occupancy.ravel()),
        f"channels {world.n_classes}",
    ]
    for ch in range(world.n_classes):
        lines.append(f"channel {ch} {world.class_names[ch]} {world.class_actions[ch]}")
        lines.append(_rle_encode(world.semantic[ch].ravel()))
    lines.append("end")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_world(path) -> GroundTruthWorld:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != WORLD_MAGIC:
        raise ValueError(f"{path}: not a {WORLD_MAGIC} file")
    width = int(lines[1].split()[1])
    height = int(lines[2].split()[1])
    cellmm = int(lines[3].split()[1])
    if cellmm != int(round(CELL_M * 1000)):
        raise ValueError(f"{path}: unsupported cell size {cellmm} mm")
    assert lines[4] == "occupancy"
    occ = _rle_decode(lines[5], width * height).reshape(height, width)
    n_channels = int(lines[6].split()[1])
    semantic = None
    names: list[str] = []
    actions: list[str] = []
    if n_channels:
        semantic = np.empty((n_channels, height, width), dtype=np.uint8)
        row = 7
        for ch in range(n_channels):
            _, idx, name, action = lines[row].split()
            assert int(idx) == ch
            names.append(name)
            actions.append(action)
            semantic[ch] = _rle_decode(lines[row + 1], width * height).reshape(height, width)
            row += 2
    return GroundTruthWorld(occ, semantic, tuple(names), tuple(actions))
