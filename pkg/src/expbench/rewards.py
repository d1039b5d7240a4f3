"""Intrinsic reward suite: impact, curiosity, coverage, anticipation, difference.

Impact rewards divide the change in the agent's state encoding by the square
root of a visitation count. Two pseudo-counts stand in for true counts in
continuous space: a spatial grid tally over the estimated position, and a
density-model estimate derived from prediction gain, the log-probability
improvement of the model on a state after training on that state once:

    PG = log rho'(s) - log rho(s)
    count ~= 1 / (exp(PG) - 1)            (exact when rho = N/n, rho' = (N+1)/(n+1))
    scaled: PG~ = c * n^(-1/2) * max(PG, 0);  count = max(1/(exp(PG~)-1), 1)

The density model here is a per-pixel categorical with a Laplace prior of one
count per bin. It is learning-positive by construction (observing a state
raises every factor of its probability), so the PG clipping above never fires
for it and the closed forms below are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, NonFiniteInput, ShapeMismatch
from .mapping import AgentMap, map_accuracy_counts, occupancy_match_count
from .world import CELL_M, Observation, Pose

# Pseudo-count reported for a fully predicted state (PG~ = 0): the exact
# formula diverges there, and a huge count keeps the reward-goes-to-zero
# semantics without infinities downstream.
COUNT_CAP = 1e12


class RewardKind(Enum):
    IMPACT_GRID = "impact-grid"
    IMPACT_DME = "impact-dme"
    CURIOSITY = "curiosity"
    COVERAGE = "coverage"
    ANTICIPATION = "anticipation"
    DIFFERENCE = "difference"
    COMBINED = "combined"


# ---------------------------------------------------------------------------
# State encoding

class StateEncoder:
    """Frozen random linear projection of the ego patch.

    kind='projection' uses seeded orthonormal rows (d x P^2) applied to the
    patch normalized to [0, 1]; kind='identity' returns the flattened raw
    patch, which is handy for oracle tests.
    """

    def __init__(
        self,
        patch_px: int,
        patch_bins: int,
        dim: int = 64,
        seed: int = 0,
        kind: str = "projection",
    ):
        self.patch_px = patch_px
        self.patch_bins = patch_bins
        self.kind = kind
        self.input_dim = patch_px * patch_px
        if kind == "identity":
            self.dim = self.input_dim
            self.matrix = None
        elif kind == "projection":
            self.dim = dim
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE5C0DE]))
            gauss = rng.standard_normal((self.input_dim, dim))
            q, _ = np.linalg.qr(gauss)
            self.matrix = np.ascontiguousarray(q.T)  # (dim, input_dim), orthonormal rows
        else:
            raise ValueError(f"unknown encoder kind {kind!r}")

    def encode(self, patch: np.ndarray) -> np.ndarray:
        if patch.shape != (self.patch_px, self.patch_px):
            raise ShapeMismatch(
                f"patch {patch.shape} does not match encoder input "
                f"{(self.patch_px, self.patch_px)}"
            )
        flat = patch.astype(np.float64).ravel()
        if self.kind == "identity":
            return flat
        scale = max(self.patch_bins - 1, 1)
        return self.matrix @ (flat / scale)


def encode_state(obs: Observation, encoder: StateEncoder) -> np.ndarray:
    """Encode one observation's ego patch; deterministic given encoder seed."""
    return encoder.encode(obs.ego_patch)


# ---------------------------------------------------------------------------
# Pseudo-counts

class GridCounter:
    """Episodic visitation tally on a square grid of side G map cells."""

    def __init__(self, grid_cells: int):
        if grid_cells < 1:
            raise DomainError("grid cell size must be >= 1")
        self.side_m = grid_cells * CELL_M
        self.counts: dict[tuple[int, int], int] = {}

    def cell_of(self, pose: Pose) -> tuple[int, int]:
        # heading is deliberately ignored: nearby positions share a cell
        # regardless of orientation
        return (
            int(math.floor(pose.x / self.side_m)),
            int(math.floor(pose.y / self.side_m)),
        )

    def observe(self, pose: Pose) -> int:
        cell = self.cell_of(pose)
        count = self.counts.get(cell, 0) + 1
        self.counts[cell] = count
        return count


def grid_pseudo_count(counter: GridCounter, est_pose: Pose) -> int:
    """Increment and return the visit count of the agent's grid cell."""
    return counter.observe(est_pose)


class CategoricalDensityModel:
    """Per-pixel categorical density over quantized patches, Laplace prior 1.

    Probabilities factorize over pixels: each pixel contributes
    (count(bin)+1) / (updates+B). The recoding probability re-scores the same
    patch after a hypothetical extra observation of it.
    """

    def __init__(self, patch_px: int, bins: int):
        self.patch_px = patch_px
        self.bins = bins
        self.n_pixels = patch_px * patch_px
        self.counts = np.zeros((self.n_pixels, bins), dtype=np.int64)
        self.updates = 0

    def _pixel_counts(self, patch: np.ndarray) -> np.ndarray:
        flat = np.asarray(patch).ravel()
        if flat.size != self.n_pixels:
            raise ShapeMismatch(f"patch has {flat.size} pixels, model expects {self.n_pixels}")
        if flat.min() < 0 or flat.max() >= self.bins:
            raise DomainError(f"patch values must be quantized to [0, {self.bins})")
        return self.counts[np.arange(self.n_pixels), flat]

    def log_prob(self, patch: np.ndarray) -> float:
        c = self._pixel_counts(patch)
        return float(np.log(c + 1.0).sum() - self.n_pixels * math.log(self.updates + self.bins))

    def log_recoding_prob(self, patch: np.ndarray) -> float:
        c = self._pixel_counts(patch)
        return float(
            np.log(c + 2.0).sum() - self.n_pixels * math.log(self.updates + self.bins + 1)
        )

    def prediction_gain(self, patch: np.ndarray) -> float:
        """Closed-form PG; nonnegative for every patch and history."""
        c = self._pixel_counts(patch).astype(np.float64)
        gain = float(np.log1p(1.0 / (c + 1.0)).sum())
        gain -= self.n_pixels * math.log1p(1.0 / (self.updates + self.bins))
        return gain

    def update(self, patch: np.ndarray) -> None:
        flat = np.asarray(patch).ravel()
        self.counts[np.arange(self.n_pixels), flat] += 1
        self.updates += 1

    def observe(self, patch: np.ndarray) -> float:
        """Score then train: returns PG and absorbs the patch into the counts."""
        gain = self.prediction_gain(patch)
        self.update(patch)
        return gain

    # plain-count readouts (no prior), used by the count-recovery oracle
    def empirical_prob(self, patch: np.ndarray) -> float:
        if self.updates == 0:
            return 0.0
        c = self._pixel_counts(patch).astype(np.float64)
        return float(np.prod(c / self.updates))

    def empirical_recoding_prob(self, patch: np.ndarray) -> float:
        c = self._pixel_counts(patch).astype(np.float64)
        return float(np.prod((c + 1.0) / (self.updates + 1.0)))


def prediction_gain(model: CategoricalDensityModel, patch: np.ndarray) -> float:
    """Score the patch, then update the model with it (in that order)."""
    return model.observe(patch)


def pseudo_count_from_pg(pg: float, n: int, c: float, cap: float = COUNT_CAP) -> float:
    """Scaled pseudo-count: PG~ = c * n^(-1/2) * max(PG, 0), count = 1/expm1(PG~).

    Clamped below at 1 so the impact reward denominator never explodes, and
    capped at `cap` when PG~ = 0 where the formula diverges.
    """
    scaled = c * (1.0 / math.sqrt(n)) * max(pg, 0.0)
    if scaled <= 0.0:
        return cap
    return min(max(1.0 / math.expm1(scaled), 1.0), cap)


def exact_pseudo_count(rho: float, rho_prime: float) -> float:
    """Recover the visitation count from (probability, recoding probability)."""
    if not (0.0 < rho < rho_prime < 1.0):
        raise DomainError(f"need 0 < rho < rho' < 1, got rho={rho} rho'={rho_prime}")
    return rho * (1.0 - rho_prime) / (rho_prime - rho)


def impact_reward(psi_t: np.ndarray, psi_next: np.ndarray, pseudo_count: float) -> float:
    """L2 change of the state encoding, discounted by sqrt of the count."""
    diff = np.asarray(psi_next, dtype=np.float64) - np.asarray(psi_t, dtype=np.float64)
    if not np.all(np.isfinite(diff)) or not math.isfinite(pseudo_count):
        raise NonFiniteInput("impact reward inputs must be finite")
    return float(np.linalg.norm(diff)) / math.sqrt(pseudo_count)


# ---------------------------------------------------------------------------
# Curiosity: toy forward/inverse dynamics with online updates

class DynamicsModels:
    """Linear forward model and logistic inverse model, updated online.

    The forward map predicts the next encoding from [psi, one-hot action, 1]
    and trains with a gradient step on the half-squared prediction error; the
    inverse model predicts the action distribution from [psi_t, psi_next, 1]
    and trains on cross-entropy. `loss_balance` splits the learning rate
    between the two, mirroring how the joint objective weighs them;
    `reward_weight` is kept as configuration for the (absent) policy term.
    """

    def __init__(
        self,
        dim: int,
        n_actions: int = 4,
        learning_rate: float = 0.01,
        loss_balance: float = 0.2,
        reward_weight: float = 0.1,
    ):
        self.dim = dim
        self.n_actions = n_actions
        self.learning_rate = learning_rate
        self.loss_balance = loss_balance
        self.reward_weight = reward_weight
        self.forward_w = np.zeros((dim, dim + n_actions + 1), dtype=np.float64)
        self.inverse_w = np.zeros((n_actions, 2 * dim + 1), dtype=np.float64)

    def _forward_input(self, psi: np.ndarray, action: int) -> np.ndarray:
        u = np.zeros(self.dim + self.n_actions + 1, dtype=np.float64)
        u[: self.dim] = psi
        u[self.dim + action] = 1.0
        u[-1] = 1.0
        return u

    def predict_next(self, psi: np.ndarray, action: int) -> np.ndarray:
        return self.forward_w @ self._forward_input(psi, action)

    def forward_loss(self, psi: np.ndarray, action: int, psi_next: np.ndarray) -> float:
        err = self.predict_next(psi, action) - psi_next
        return 0.5 * float(err @ err)

    def action_distribution(self, psi: np.ndarray, psi_next: np.ndarray) -> np.ndarray:
        v = np.concatenate([psi, psi_next, [1.0]])
        logits = self.inverse_w @ v
        logits -= logits.max()
        e = np.exp(logits)
        return e / e.sum()

    def update(self, psi: np.ndarray, action: int, psi_next: np.ndarray) -> None:
        u = self._forward_input(psi, action)
        err = self.forward_w @ u - psi_next
        self.forward_w -= (self.learning_rate * self.loss_balance) * np.outer(err, u)

        v = np.concatenate([psi, psi_next, [1.0]])
        probs = self.action_distribution(psi, psi_next)
        grad = probs.copy()
        grad[action] -= 1.0
        self.inverse_w -= (self.learning_rate * (1.0 - self.loss_balance)) * np.outer(grad, v)


class ActionRepeatTracker:
    """Penalty that fires once the same action repeats long enough."""

    def __init__(self, penalty: float = 0.01, threshold: int = 5):
        self.penalty = penalty
        self.threshold = threshold
        self.last_action: int | None = None
        self.run = 0

    def observe(self, action: int) -> float:
        if action == self.last_action:
            self.run += 1
        else:
            self.last_action = action
            self.run = 1
        return self.penalty if self.run >= self.threshold else 0.0


def curiosity_reward(
    models: DynamicsModels,
    psi_t: np.ndarray,
    action: int,
    psi_next: np.ndarray,
    tracker: ActionRepeatTracker | None = None,
    eta_scale: float = 0.01,
) -> float:
    """Surprisal reward minus the repeat penalty; trains both models after."""
    if not (np.all(np.isfinite(psi_t)) and np.all(np.isfinite(psi_next))):
        raise NonFiniteInput("curiosity reward encodings must be finite")
    err = models.predict_next(psi_t, action) - psi_next
    reward = 0.5 * eta_scale * float(err @ err)
    if tracker is not None:
        reward -= tracker.observe(action)
    models.update(psi_t, action, psi_next)
    return reward


# ---------------------------------------------------------------------------
# Map-delta rewards

def coverage_reward(area_seen_t: float, area_seen_prev: float) -> float:
    """Newly seen area this step (in whatever unit the caller tallies)."""
    return area_seen_t - area_seen_prev


def anticipation_reward(
    map_t: AgentMap,
    map_prev: AgentMap,
    truth_occ: np.ndarray,
    truth_explored: np.ndarray,
) -> float:
    """Increase in two-channel map accuracy against the reference map."""
    acc_t = map_accuracy_counts(map_t, truth_occ, truth_explored)
    acc_prev = map_accuracy_counts(map_prev, truth_occ, truth_explored)
    return float(acc_t - acc_prev)


def difference_reward(map_t: AgentMap, map_prev: AgentMap, truth_occ: np.ndarray) -> float:
    """Increase in occupancy-channel agreement with the changed true map."""
    return float(occupancy_match_count(map_t, truth_occ) - occupancy_match_count(map_prev, truth_occ))


def combined_reward(r_exp: float, r_diff: float, beta_exp: float, beta_diff: float) -> float:
    return beta_exp * r_exp + beta_diff * r_diff


def local_reward(d_prev: float, d_curr: float, bump: bool, alpha: float = 0.25) -> float:
    """Progress toward the local goal minus the collision penalty."""
    return (d_prev - d_curr) - (alpha if bump else 0.0)


# ---------------------------------------------------------------------------
# Per-episode reward stream

@dataclass
class StepContext:
    """Everything a reward stream may need about one step, precomputed cheaply."""

    action: int
    step_index: int  # 1-based step counter n
    est_pose: Pose
    bump: bool
    psi_prev: np.ndarray | None = None
    psi_next: np.ndarray | None = None
    patch_next: np.ndarray | None = None
    seen_prev: int = 0
    seen_curr: int = 0
    acc_prev: int = 0
    acc_curr: int = 0
    match_prev: int = 0
    match_curr: int = 0


@dataclass(frozen=True)
class RewardParams:
    """Hyperparameters for every reward kind (one bundle, kind picks its own)."""

    grid_cells: int = 5          # impact-grid tally cell side, in map cells
    gain_scale: float = 0.1      # prediction-gain scale c
    count_cap: float = COUNT_CAP
    eta_scale: float = 0.01      # curiosity reward scale
    penalty: float = 0.01        # repeat penalty size
    penalty_repeats: int = 5     # consecutive repeats before the penalty fires
    learning_rate: float = 0.01
    loss_balance: float = 0.2
    reward_weight: float = 0.1
    beta_exp: float = 1.0        # combined reward: exploration weight
    beta_diff: float = 0.01      # combined reward: difference weight
    bump_alpha: float = 0.25     # local reward collision penalty


class RewardState:
    """One active reward stream with its episodic state."""

    def __init__(
        self,
        kind: RewardKind,
        params: RewardParams,
        encoder: StateEncoder | None = None,
        patch_bins: int = 8,
        n_actions: int = 4,
    ):
        self.kind = kind
        self.params = params
        self.encoder = encoder
        self.last_surprisal = 0.0
        self.grid: GridCounter | None = None
        self.density: CategoricalDensityModel | None = None
        self.dynamics: DynamicsModels | None = None
        self.tracker: ActionRepeatTracker | None = None
        if kind == RewardKind.IMPACT_GRID:
            self.grid = GridCounter(params.grid_cells)
        elif kind == RewardKind.IMPACT_DME:
            if encoder is None:
                raise ValueError("impact-dme needs an encoder")
            self.density = CategoricalDensityModel(encoder.patch_px, patch_bins)
        elif kind == RewardKind.CURIOSITY:
            if encoder is None:
                raise ValueError("curiosity needs an encoder")
            self.dynamics = DynamicsModels(
                encoder.dim,
                n_actions,
                params.learning_rate,
                params.loss_balance,
                params.reward_weight,
            )
            self.tracker = ActionRepeatTracker(params.penalty, params.penalty_repeats)

    @property
    def needs_encoding(self) -> bool:
        return self.kind in (RewardKind.IMPACT_GRID, RewardKind.IMPACT_DME, RewardKind.CURIOSITY)

    @property
    def needs_match(self) -> bool:
        return self.kind in (RewardKind.DIFFERENCE, RewardKind.COMBINED)

    @property
    def needs_accuracy(self) -> bool:
        return self.kind == RewardKind.ANTICIPATION

    def compute(self, ctx: StepContext) -> float:
        p = self.params
        if self.kind == RewardKind.IMPACT_GRID:
            count = grid_pseudo_count(self.grid, ctx.est_pose)
            return impact_reward(ctx.psi_prev, ctx.psi_next, count)
        if self.kind == RewardKind.IMPACT_DME:
            gain = self.density.observe(ctx.patch_next)
            count = pseudo_count_from_pg(gain, max(ctx.step_index, 1), p.gain_scale, p.count_cap)
            return impact_reward(ctx.psi_prev, ctx.psi_next, count)
        if self.kind == RewardKind.CURIOSITY:
            err = self.dynamics.predict_next(ctx.psi_prev, ctx.action) - ctx.psi_next
            self.last_surprisal = 0.5 * p.eta_scale * float(err @ err)
            return curiosity_reward(
                self.dynamics, ctx.psi_prev, ctx.action, ctx.psi_next, self.tracker, p.eta_scale
            )
        if self.kind == RewardKind.COVERAGE:
            return coverage_reward(ctx.seen_curr, ctx.seen_prev)
        if self.kind == RewardKind.ANTICIPATION:
            return float(ctx.acc_curr - ctx.acc_prev)
        if self.kind == RewardKind.DIFFERENCE:
            return float(ctx.match_curr - ctx.match_prev)
        if self.kind == RewardKind.COMBINED:
            return combined_reward(
                float(ctx.seen_curr - ctx.seen_prev),
                float(ctx.match_curr - ctx.match_prev),
                p.beta_exp,
                p.beta_diff,
            )
        raise ValueError(f"unhandled reward kind {self.kind}")
