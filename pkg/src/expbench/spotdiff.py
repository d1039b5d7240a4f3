"""Alternative environment layouts: semantic map manipulation and episode sets.

A semantic occupancy map (SOM) holds one channel of object-occupancy
probability per class plus a final explorable-space channel that manipulation
never touches. Each class carries an action policy: untouchable, removable,
displaceable, or removed-when-its-support-moves. Manipulating a SOM yields a
plausible alternative layout of the same environment together with the exact
difference map between the two.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import PlacementFailed
from .world import GroundTruthWorld, free_space_connected

BINARIZE = 0.5

UNCHANGED, ADDED, REMOVED = 0, 1, 2


class ClassAction(Enum):
    NO_OPERATION = "noop"
    REMOVAL = "removal"
    DISPLACEMENT = "displacement"
    OVERLAP_REMOVAL = "overlap_removal"


@dataclass
class SemanticOccupancyMap:
    """Per-class object occupancy plus the untouched explorable channel.

    channels: (C+1, H, W) in [0, 1], last channel = explorable space.
    structure: static occupied cells (walls) that are not objects; kept so a
    manipulated SOM can be recomposed into a full occupancy grid.
    """

    channels: np.ndarray
    class_names: tuple[str, ...]
    class_actions: tuple[ClassAction, ...]
    structure: np.ndarray

    @property
    def n_object_channels(self) -> int:
        return self.channels.shape[0] - 1

    @property
    def explorable(self) -> np.ndarray:
        return self.channels[-1] >= BINARIZE

    def object_mask(self, channel: int) -> np.ndarray:
        return self.channels[channel] >= BINARIZE

    def aggregate_objects(self) -> np.ndarray:
        return (self.channels[:-1] >= BINARIZE).any(axis=0)

    def compose_occupancy(self) -> np.ndarray:
        return ((self.structure != 0) | self.aggregate_objects()).astype(np.uint8)

    def copy(self) -> "SemanticOccupancyMap":
        return SemanticOccupancyMap(
            self.channels.copy(), self.class_names, self.class_actions, self.structure.copy()
        )


def som_from_world(world: GroundTruthWorld) -> SemanticOccupancyMap:
    """Attach the synthetic semantic layers of a generated world as a SOM."""
    c = world.n_classes
    h, w = world.occupancy.shape
    channels = np.zeros((c + 1, h, w), dtype=np.float64)
    if c:
        channels[:c] = world.semantic
    channels[-1] = (world.occupancy == 0).astype(np.float64)
    objects = (channels[:c] >= BINARIZE).any(axis=0) if c else np.zeros((h, w), bool)
    structure = ((world.occupancy != 0) & ~objects).astype(np.uint8)
    actions = tuple(ClassAction(a) for a in world.class_actions)
    return SemanticOccupancyMap(channels, world.class_names, actions, structure)


def world_from_som(som: SemanticOccupancyMap) -> GroundTruthWorld:
    """Recompose a SOM into a playable world with binarized semantic layers."""
    semantic = (som.channels[:-1] >= BINARIZE).astype(np.uint8)
    return GroundTruthWorld(
        som.compose_occupancy(),
        semantic if semantic.shape[0] else None,
        som.class_names,
        tuple(a.value for a in som.class_actions),
    )


def save_som(som: SemanticOccupancyMap, path) -> None:
    """Persist a SOM in the world container; the explorable channel comes last."""
    from .world import save_world

    channels = (som.channels >= BINARIZE).astype(np.uint8)
    carrier = GroundTruthWorld(
        som.compose_occupancy(),
        channels,
        som.class_names + ("explorable",),
        tuple(a.value for a in som.class_actions) + (ClassAction.NO_OPERATION.value,),
    )
    save_world(carrier, path)


def load_som(path) -> SemanticOccupancyMap:
    from .world import load_world

    carrier = load_world(path)
    if carrier.n_classes == 0 or carrier.class_names[-1] != "explorable":
        raise ValueError(f"{path}: not a SOM file (missing explorable channel)")
    channels = carrier.semantic.astype(np.float64)
    objects = (channels[:-1] >= BINARIZE).any(axis=0)
    structure = ((carrier.occupancy != 0) & ~objects).astype(np.uint8)
    actions = tuple(ClassAction(a) for a in carrier.class_actions[:-1])
    return SemanticOccupancyMap(channels, carrier.class_names[:-1], actions, structure)


def label_components(som: SemanticOccupancyMap, channel: int) -> list[np.ndarray]:
    """4-connected components of one binarized channel.

    Returns flat index arrays ordered by each component's smallest (row, col).
    """
    mask = som.object_mask(channel)
    labels, count = ndimage.label(mask)
    flat = labels.ravel()
    comps = []
    for lab in range(1, count + 1):
        comps.append(np.flatnonzero(flat == lab))
    # scipy labels in raster order of first pixel, which is exactly the
    # min-(row, col) order; keep an explicit sort as the contract.
    comps.sort(key=lambda idx: int(idx.min()))
    return comps


@dataclass
class ManipulationEvent:
    channel: int
    component: int
    action: str  # removed | displaced | overlap_removed | placement_failed_removed
    cells: list[int]
    new_cells: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "channel": self.channel,
            "component": self.component,
            "action": self.action,
            "cells": self.cells,
            "new_cells": self.new_cells,
        }


def manipulate(
    som: SemanticOccupancyMap,
    rng: np.random.Generator,
    removal_p: float = 0.5,
    displacement_p: float = 0.3,
    placement_retries: int = 100,
) -> tuple[SemanticOccupancyMap, np.ndarray, list[ManipulationEvent]]:
    """Produce an alternative layout plus its difference map and provenance.

    Removal-class components are deleted with probability removal_p.
    Displacement-class components are deleted with probability removal_p or
    else rigidly translated (no rotation) with probability displacement_p to
    a footprint sampled uniformly on free explorable space that touches no
    object and keeps the free space connected; when no placement fits within
    the retry budget the object is removed instead and recorded as such.
    Overlap-removal components disappear iff a removed or displaced component
    previously overlapped them. The explorable channel is never modified.
    """
    out = som.copy()
    h, w = out.structure.shape
    events: list[ManipulationEvent] = []
    before = som.aggregate_objects()
    vacated = np.zeros(h * w, dtype=bool)  # original cells of removed/displaced objects

    for ch in range(out.n_object_channels):
        action = out.class_actions[ch]
        if action in (ClassAction.NO_OPERATION, ClassAction.OVERLAP_REMOVAL):
            continue
        for comp_id, cells in enumerate(label_components(som, ch)):
            draw = rng.random()
            if draw < removal_p:
                _erase(out.channels[ch], cells)
                vacated[cells] = True
                events.append(ManipulationEvent(ch, comp_id, "removed", cells.tolist()))
                continue
            if action is ClassAction.DISPLACEMENT and draw < removal_p + displacement_p:
                _erase(out.channels[ch], cells)
                vacated[cells] = True
                new_cells = _place_translated(out, cells, rng, placement_retries)
                if new_cells is None:
                    events.append(
                        ManipulationEvent(ch, comp_id, "placement_failed_removed", cells.tolist())
                    )
                else:
                    out.channels[ch].ravel()[new_cells] = 1.0
                    events.append(
                        ManipulationEvent(
                            ch, comp_id, "displaced", cells.tolist(), new_cells.tolist()
                        )
                    )

    for ch in range(out.n_object_channels):
        if out.class_actions[ch] is not ClassAction.OVERLAP_REMOVAL:
            continue
        for comp_id, cells in enumerate(label_components(som, ch)):
            if vacated[cells].any():
                _erase(out.channels[ch], cells)
                events.append(ManipulationEvent(ch, comp_id, "overlap_removed", cells.tolist()))

    after = out.aggregate_objects()
    diff = np.full((h, w), UNCHANGED, dtype=np.uint8)
    diff[after & ~before] = ADDED
    diff[before & ~after] = REMOVED
    return out, diff, events


def _erase(channel: np.ndarray, cells: np.ndarray) -> None:
    channel.ravel()[cells] = 0.0


def _place_translated(som, cells, rng, retries) -> np.ndarray | None:
    """Sample a rigid translation of the footprint onto valid free space."""
    h, w = som.structure.shape
    rows = cells // w
    cols = cells % w
    r0, c0 = rows.min(), cols.min()
    bh = rows.max() - r0 + 1
    bw = cols.max() - c0 + 1
    rel_r = rows - r0
    rel_c = cols - c0
    allowed = som.explorable & ~som.aggregate_objects() & (som.structure == 0)
    for _ in range(retries):
        nr = int(rng.integers(0, h - bh + 1))
        nc = int(rng.integers(0, w - bw + 1))
        tr = rel_r + nr
        tc = rel_c + nc
        if not allowed[tr, tc].all():
            continue
        candidate = (som.compose_occupancy() != 0).copy()
        candidate[tr, tc] = True
        if not free_space_connected(candidate.astype(np.uint8)):
            continue
        return tr * w + tc
    return None


def replay_difference(
    som: SemanticOccupancyMap, events: list[ManipulationEvent]
) -> np.ndarray:
    """Reconstruct the difference map from provenance alone."""
    before = som.aggregate_objects()
    channels = (som.channels[:-1] >= BINARIZE).copy()
    for ev in events:
        flat = channels[ev.channel].ravel()
        flat[np.asarray(ev.cells, dtype=np.int64)] = False
        if ev.new_cells:
            flat[np.asarray(ev.new_cells, dtype=np.int64)] = True
    after = channels.any(axis=0)
    diff = np.full(before.shape, UNCHANGED, dtype=np.uint8)
    diff[after & ~before] = ADDED
    diff[before & ~after] = REMOVED
    return diff


@dataclass
class SpotDiffDataset:
    world: GroundTruthWorld
    som: SemanticOccupancyMap
    variants: list[SemanticOccupancyMap]
    differences: list[np.ndarray]
    provenance: list[list[ManipulationEvent]]
    episodes: list[dict]  # {"id", "variant", "start": [x, y, theta]}


def generate_episode_set(
    world: GroundTruthWorld,
    som: SemanticOccupancyMap,
    n_variants: int,
    episodes_per_variant: int,
    rng: np.random.Generator,
    removal_p: float = 0.5,
    displacement_p: float = 0.3,
) -> SpotDiffDataset:
    """Manipulated variants plus start poses on space free in both layouts."""
    variants, diffs, provs, episodes = [], [], [], []
    orig_free = world.occupancy == 0
    for vid in range(n_variants):
        variant, diff, events = manipulate(som, rng, removal_p, displacement_p)
        variants.append(variant)
        diffs.append(diff)
        provs.append(events)
        shared_free = orig_free & (variant.compose_occupancy() == 0)
        flat = np.flatnonzero(shared_free.ravel())
        for e in range(episodes_per_variant):
            cell = int(flat[rng.integers(flat.size)])
            r, c = cell // world.width, cell % world.width
            episodes.append(
                {
                    "id": vid * episodes_per_variant + e,
                    "variant": vid,
                    "start": [(c + 0.5) * 0.05, (r + 0.5) * 0.05, 0.0],
                }
            )
    return SpotDiffDataset(world, som, variants, diffs, provs, episodes)


def save_dataset(dataset: SpotDiffDataset, out_dir) -> None:
    """Write the world, the variant SOM files, and episodes.json."""
    from pathlib import Path

    from .world import save_world

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_world(dataset.world, out / "world.map")
    manifest = {"world": "world.map", "variants": [], "episodes": dataset.episodes}
    for vid, variant in enumerate(dataset.variants):
        name = f"variant_{vid:02d}.som"
        save_som(variant, out / name)
        manifest["variants"].append(
            {
                "id": vid,
                "som": name,
                "provenance": [ev.to_json() for ev in dataset.provenance[vid]],
            }
        )
    with open(out / "episodes.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
