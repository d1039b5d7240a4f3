"""Online mapping: egocentric local maps, global registration, pose tracking.

The global AgentMap shares the ground-truth grid (same W x W cell lattice) and
starts fully unexplored. Registration resamples a local map into the grid with
nearest-cell rounding and merges per-cell observations with a count-weighted
running mean, so repeated identical observations are idempotent and
conflicting ones converge to their empirical frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import OutOfBounds, ShapeMismatch
from .world import CELL_M, Pose, SensorConfig

OCCUPIED_THRESHOLD = 0.5
EXPLORED_THRESHOLD = 0.5


@dataclass
class LocalMap:
    """Egocentric map: agent at bottom-center facing up (decreasing row)."""

    occupied: np.ndarray  # (V, V) in [0, 1]
    explored: np.ndarray  # (V, V) in [0, 1]

    @property
    def size(self) -> int:
        return self.occupied.shape[0]


def build_local_map(scan: np.ndarray, sensor: SensorConfig) -> LocalMap:
    """Rasterize one depth scan with the exact geometric inverse sensor model.

    Cells crossed by a ray before its endpoint are explored free space; the
    endpoint cell is explored occupied when the reading is below depth_max.
    Untouched cells stay unexplored.
    """
    size = sensor.local_map_size()
    offsets = sensor.ray_offsets()
    n = min(len(offsets), len(scan))
    if n == 0:
        empty = np.zeros((size, size), dtype=np.uint8)
        return LocalMap(empty, empty.copy())
    occ, expl = _kernels.paint_local(
        np.asarray(scan[:n], dtype=np.float64), offsets[:n], sensor.depth_max, size
    )
    return LocalMap(occ, expl)


class AgentMap:
    """Probabilistic global map built online, aligned with the world grid.

    Stores per-cell observation sums and counts; the occupied probability is
    sum/count and a cell is explored once it has any registration. Sums stay
    integral (observations are 0/1), so persistence is lossless.
    """

    def __init__(self, height: int, width: int):
        self.sums = np.zeros((height, width), dtype=np.float64)
        self.counts = np.zeros((height, width), dtype=np.int32)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def copy(self) -> "AgentMap":
        out = AgentMap(*self.shape)
        out.sums[:] = self.sums
        out.counts[:] = self.counts
        return out

    @classmethod
    def from_prior(
        cls, occupied: np.ndarray, explored: np.ndarray, weight: int = 1
    ) -> "AgentMap":
        """Seed a map from a held (possibly outdated) representation.

        The prior enters as `weight` pseudo-observations per explored cell, so
        fresh sensing gradually overrides it.
        """
        out = cls(*occupied.shape)
        mask = explored.astype(bool)
        out.counts[mask] = weight
        out.sums[mask] = occupied[mask].astype(np.float64) * weight
        return out

    def explored_mask(self) -> np.ndarray:
        return self.counts > 0

    def occupied_prob(self) -> np.ndarray:
        """Per-cell occupancy probability; unexplored cells read 0.5."""
        out = np.full(self.shape, 0.5, dtype=np.float64)
        mask = self.counts > 0
        out[mask] = self.sums[mask] / self.counts[mask]
        return out

    def binary_occupied(self) -> np.ndarray:
        """Explored cells whose occupancy probability reaches the threshold."""
        mask = self.counts > 0
        out = np.zeros(self.shape, dtype=bool)
        out[mask] = self.sums[mask] >= OCCUPIED_THRESHOLD * self.counts[mask]
        return out

    def values(self) -> np.ndarray:
        """(H, W, 2) view per the map contract: occupied prob, explored prob."""
        occ = self.occupied_prob()
        occ[self.counts == 0] = 0.0
        return np.stack([occ, (self.counts > 0).astype(np.float64)], axis=-1)

    def observe_cell(self, cell: tuple[int, int], occupied: float, weight: int = 1) -> np.ndarray:
        """Fold a direct cell observation in (e.g. from the bump sensor).

        `weight` repeats the observation, letting decisive evidence (a felt
        collision) override accumulated ray paint immediately.
        """
        h, w = self.shape
        r, c = cell
        if not (0 <= r < h and 0 <= c < w):
            return np.empty(0, dtype=np.int64)
        self.sums[r, c] += occupied * weight
        self.counts[r, c] += weight
        return np.array([r * w + c], dtype=np.int64)

    def register(self, local: LocalMap, est_pose: Pose) -> np.ndarray:
        """Fold a local map in at the estimated pose; returns touched indices.

        Raises OutOfBounds when the agent cell itself leaves the grid; cells
        projecting outside are silently clipped.
        """
        h, w = self.shape
        row, col = est_pose.cell()
        if not (0 <= row < h and 0 <= col < w):
            raise OutOfBounds(f"agent cell {(row, col)} outside {h}x{w} map")
        return _kernels.register_scan(
            self.sums,
            self.counts,
            local.occupied,
            local.explored,
            est_pose.x,
            est_pose.y,
            est_pose.theta,
        )

    def save_npz(self, path) -> None:
        np.savez_compressed(path, sums=self.sums, counts=self.counts)

    @classmethod
    def load_npz(cls, path) -> "AgentMap":
        data = np.load(path)
        out = cls(*data["counts"].shape)
        out.sums[:] = data["sums"]
        out.counts[:] = data["counts"]
        return out


def register(global_map: AgentMap, local: LocalMap, est_pose: Pose) -> AgentMap:
    """Operation-shaped wrapper around AgentMap.register (mutates and returns)."""
    global_map.register(local, est_pose)
    return global_map


@dataclass(frozen=True)
class PoseEstimate:
    """Tracked pose plus the body-frame displacement that produced it."""

    pose: Pose
    delta: tuple[float, float, float] = (0.0, 0.0, 0.0)


def estimate_pose(prev: PoseEstimate, odometry_delta: tuple[float, float, float]) -> PoseEstimate:
    """Dead-reckon one step: rotate the body-frame delta into the episode
    frame, add it, and renormalize the heading."""
    dx, dy, dtheta = odometry_delta
    pose = prev.pose.compose(Pose(dx, dy, dtheta))
    return PoseEstimate(pose, (dx, dy, dtheta))


def pose_error(est: Pose, true: Pose) -> tuple[float, float]:
    """(translation error in meters, angular error in degrees, range [0, 180])."""
    te = est.distance_to(true)
    diff = abs(math.degrees(est.theta - true.theta)) % 360.0
    ae = min(diff, 360.0 - diff)
    return te, ae


def map_accuracy_counts(agent: AgentMap, truth_occ: np.ndarray, truth_explored: np.ndarray) -> int:
    """Matches over both channels against a binary reference map.

    Counts cells where the binarized occupied channel agrees with truth_occ
    plus cells where the explored channel agrees with truth_explored.
    """
    if agent.shape != truth_occ.shape:
        raise ShapeMismatch(f"map {agent.shape} vs truth {truth_occ.shape}")
    occ_match = int(np.count_nonzero(agent.binary_occupied() == truth_occ.astype(bool)))
    expl_match = int(np.count_nonzero(agent.explored_mask() == truth_explored.astype(bool)))
    return occ_match + expl_match


def occupancy_match_count(agent: AgentMap, truth_occ: np.ndarray) -> int:
    """Cells whose binarized occupancy agrees with the reference grid."""
    if agent.shape != truth_occ.shape:
        raise ShapeMismatch(f"map {agent.shape} vs truth {truth_occ.shape}")
    return int(np.count_nonzero(agent.binary_occupied() == truth_occ.astype(bool)))


def geodesic_distance_m(occupancy: np.ndarray, from_cell, to_cell) -> float:
    """BFS shortest-path length over free cells, in meters; inf if cut off."""
    dist = _kernels.bfs_grid(occupancy == 0, int(from_cell[0]), int(from_cell[1]))
    d = dist[int(to_cell[0]), int(to_cell[1])]
    return math.inf if d < 0 else float(d) * CELL_M


def export_pgm(values: np.ndarray, path) -> None:
    """Write probabilities in [0, 1] as a binary 8-bit PGM."""
    h, w = values.shape
    data = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
