"""Command-line interface, benchmark orchestration, and rendering.

Subcommands: generate-world, run, benchmark, spotdiff-gen, metrics, render,
compare. Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.
All randomness flows from explicit seeds; reruns of the same spec produce
byte-identical artifacts. The benchmark fans episodes out to a process pool
(capped by EXPBENCH_THREADS) and merges results in deterministic order.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigError, ExpbenchError, InconsistentInputs
from .mapping import export_pgm
from .rewards import RewardKind, RewardParams
from .policy import Strategy, StrategyKind
from .spotdiff import generate_episode_set, load_som, save_dataset, som_from_world, world_from_som
from .tasks import (
    EpisodeConfig,
    EpisodeLog,
    TaskKind,
    exploration_metrics,
    fmt9,
    navigation_metrics,
    run_episode,
    spotdiff_metrics,
    world_digest,
)
from .world import (
    DEFAULT_NOISY,
    FloorplanParams,
    GroundTruthWorld,
    NOISE_FREE,
    Pose,
    SensorConfig,
    generate_floorplan,
    load_world,
    save_world,
)

SUMMARY_METRICS = [
    "iou", "fiou", "oiou", "acc_m2", "as_m2", "fas_m2", "oas_m2", "pct_as",
    "te_m", "ae_deg", "sd_acc", "sd_iou", "sd_iou_plus", "sd_iou_minus",
    "sd_m_acc", "sd_m_iou",
]
SUMMARY_HEADER = ["kind", "world", "seed", "T", "termination", "steps"] + SUMMARY_METRICS


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems become exit code 1
        raise _UsageError(message)


def _noise_profile(name: str):
    if name == "noise_free":
        return NOISE_FREE
    if name == "noisy":
        return DEFAULT_NOISY
    raise ConfigError(f"unknown noise profile {name!r}")


def _reward_kind(name: str) -> RewardKind | None:
    if name in ("none", ""):
        return None
    try:
        return RewardKind(name)
    except ValueError:
        raise ConfigError(f"unknown reward kind {name!r}") from None


def _strategy(name: str, reward: RewardKind | None, greedy_reward: str = "") -> Strategy:
    kind = {
        "random": StrategyKind.RANDOM_GOAL,
        "frontier": StrategyKind.FRONTIER,
        "greedy": StrategyKind.GREEDY_REWARD,
    }.get(name)
    if kind is None:
        raise ConfigError(f"unknown strategy {name!r}")
    if kind == StrategyKind.GREEDY_REWARD:
        score_kind = _reward_kind(greedy_reward) if greedy_reward else reward
        if score_kind is None:
            raise ConfigError("greedy strategy needs a reward kind to score goals")
        return Strategy(kind, score_kind)
    return Strategy(kind)


# ---------------------------------------------------------------------------
# Benchmark spec (flat key=value sections)

@dataclass
class KindSpec:
    label: str
    reward: str
    strategy: str
    greedy_reward: str = ""


@dataclass
class BenchmarkSpec:
    out: str
    seeds: list[int]
    horizons: list[int]
    noise: str
    task: str
    kinds: list[KindSpec]
    world_files: list[str]
    world_seeds: list[int]
    world_params: FloorplanParams
    dataset: str = ""
    save_logs: bool = False

    @classmethod
    def parse(cls, path) -> "BenchmarkSpec":
        cp = configparser.ConfigParser(delimiters=("=",), interpolation=None)
        cp.optionxform = str
        read = cp.read(path)
        if not read:
            raise ConfigError(f"cannot read benchmark spec {path}")
        if "benchmark" not in cp:
            raise ConfigError("spec is missing the [benchmark] section")
        b = cp["benchmark"]
        seeds = [int(s) for s in b.get("seeds", "1").split()]
        if not seeds:
            raise ConfigError("need at least one seed")
        params = FloorplanParams(
            width=b.getint("world_cells", 300),
            height=b.getint("world_cells", 300),
            rooms_min=int(b.get("rooms", "4 6").split()[0]),
            rooms_max=int(b.get("rooms", "4 6").split()[-1]),
            clutter_density=b.getfloat("clutter", 0.04),
            n_classes=b.getint("classes", 6),
        )
        kinds = []
        for section in cp.sections():
            if section.startswith("kind "):
                k = cp[section]
                kinds.append(
                    KindSpec(
                        label=section[5:].strip(),
                        reward=k.get("reward", "none"),
                        strategy=k.get("strategy", "frontier"),
                        greedy_reward=k.get("greedy_reward", ""),
                    )
                )
        if not kinds:
            raise ConfigError("spec defines no [kind ...] sections")
        return cls(
            out=b.get("out", "out/benchmark"),
            seeds=seeds,
            horizons=[int(t) for t in b.get("T", "500").split()],
            noise=b.get("noise", "noise_free"),
            task=b.get("task", "exploration"),
            kinds=kinds,
            world_files=b.get("worlds", "").split(),
            world_seeds=[int(s) for s in b.get("world_seeds", "").split()],
            world_params=params,
            dataset=b.get("dataset", ""),
            save_logs=b.getboolean("save_logs", False),
        )


@dataclass
class _EpisodeJob:
    kind: KindSpec
    world_file: str
    world_seed: int
    world_params: FloorplanParams | None
    dataset: str
    episode_id: int
    horizon: int
    seed: int
    noise: str
    task: str
    out: str
    save_log: bool


_WORLD_CACHE: dict = {}


def _job_world(job: _EpisodeJob):
    if job.dataset:
        key = ("dataset", job.dataset, job.episode_id)
        if key not in _WORLD_CACHE:
            root = Path(job.dataset)
            with open(root / "episodes.json") as fh:
                manifest = json.load(fh)
            episode = manifest["episodes"][job.episode_id]
            variant = manifest["variants"][episode["variant"]]
            original = load_world(root / manifest["world"])
            som = load_som(root / variant["som"])
            _WORLD_CACHE[key] = (world_from_som(som), original, Pose(*episode["start"]))
        return _WORLD_CACHE[key]
    if job.world_file:
        key = ("file", job.world_file)
        if key not in _WORLD_CACHE:
            _WORLD_CACHE[key] = load_world(job.world_file)
    else:
        key = ("seed", job.world_seed, job.world_params)
        if key not in _WORLD_CACHE:
            _WORLD_CACHE[key] = generate_floorplan(job.world_seed, job.world_params)
    return _WORLD_CACHE[key]


def default_start(world: GroundTruthWorld, margin_cells: int = 4) -> Pose:
    """Deterministic start: the free cell closest to the map center."""
    free = np.argwhere(world.occupancy == 0)
    center = np.array([world.height / 2.0, world.width / 2.0])
    dists = np.abs(free - center).sum(axis=1)
    r, c = free[int(np.argmin(dists))]
    return Pose((c + 0.5) * 0.05, (r + 0.5) * 0.05, 0.0)


def _run_job(job: _EpisodeJob) -> dict:
    noise = _noise_profile(job.noise)
    reward = _reward_kind(job.kind.reward)
    strategy = _strategy(job.kind.strategy, reward, job.kind.greedy_reward)
    row = {
        "kind": job.kind.label,
        "seed": job.seed,
        "T": job.horizon,
    }
    if job.dataset:
        world, original, start = _job_world(job)
        row["world"] = f"episode{job.episode_id:03d}"
        cfg = EpisodeConfig(
            task=TaskKind.SPOTDIFF,
            world=world,
            start=start,
            max_steps=job.horizon,
            seed=job.seed,
            noise=noise,
            reward_kind=reward,
            strategy=strategy,
            outdated_occupied=original.occupancy.astype(bool),
        )
        log = run_episode(cfg)
        sd = spotdiff_metrics(
            log.final_map, cfg.outdated_occupied, world.occupancy.astype(bool), log.seen_mask
        )
        exp = exploration_metrics(log.final_map, world, log.seen_mask, log)
        row.update(
            {
                "sd_acc": sd["acc"],
                "sd_iou": sd["iou"],
                "sd_iou_plus": sd["iou_plus"],
                "sd_iou_minus": sd["iou_minus"],
                "sd_m_acc": sd["m_acc"],
                "sd_m_iou": sd["m_iou"],
                "pct_as": exp["pct_as"],
            }
        )
    else:
        world = _job_world(job)
        row["world"] = job.world_file or f"seed{job.world_seed}"
        cfg = EpisodeConfig(
            task=TaskKind.EXPLORATION,
            world=world,
            start=default_start(world),
            max_steps=job.horizon,
            seed=job.seed,
            noise=noise,
            reward_kind=reward,
            strategy=strategy,
        )
        log = run_episode(cfg)
        row.update(exploration_metrics(log.final_map, world, log.seen_mask, log))
    row["termination"] = log.termination
    row["steps"] = log.steps
    if job.save_log:
        name = f"{job.kind.label}_{Path(row['world']).stem}_s{job.seed}_T{job.horizon}"
        log.metrics = {k: v for k, v in row.items() if isinstance(v, (int, float))}
        log.save(Path(job.out) / "logs", name)
        export_pgm(log.final_map.occupied_prob(), Path(job.out) / "maps" / f"{name}.pgm")
    return row


def run_benchmark(spec: BenchmarkSpec, pool_size: int | None = None) -> list[dict]:
    """Run every (kind, world, seed, T) episode and write summary.csv."""
    if not spec.world_files and not spec.world_seeds and not spec.dataset:
        raise ConfigError("spec needs worlds, world_seeds, or a dataset")
    out = Path(spec.out)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "maps").mkdir(parents=True, exist_ok=True)

    jobs = []
    episode_ids: list[int] = []
    if spec.dataset:
        with open(Path(spec.dataset) / "episodes.json") as fh:
            episode_ids = [e["id"] for e in json.load(fh)["episodes"]]
    for kind in spec.kinds:
        for horizon in spec.horizons:
            if spec.dataset:
                for episode_id in episode_ids:
                    for seed in spec.seeds:
                        jobs.append(
                            _EpisodeJob(
                                kind, "", 0, None, spec.dataset, episode_id, horizon,
                                seed, spec.noise, spec.task, spec.out, spec.save_logs,
                            )
                        )
            else:
                worlds = spec.world_files or spec.world_seeds
                for wref in worlds:
                    for seed in spec.seeds:
                        jobs.append(
                            _EpisodeJob(
                                kind,
                                wref if spec.world_files else "",
                                0 if spec.world_files else int(wref),
                                spec.world_params,
                                "",
                                0,
                                horizon,
                                seed,
                                spec.noise,
                                spec.task,
                                spec.out,
                                spec.save_logs,
                            )
                        )

    pool_size = pool_size or _pool_size()
    if pool_size > 1 and len(jobs) > 1:
        with Pool(pool_size) as pool:
            rows = pool.map(_run_job, jobs, chunksize=1)
    else:
        rows = [_run_job(j) for j in jobs]

    rows.extend(_aggregate_rows(rows, spec))
    _write_summary(rows, out / "summary.csv")
    return rows


def _pool_size() -> int:
    env = os.environ.get("EXPBENCH_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _aggregate_rows(rows: list[dict], spec: BenchmarkSpec) -> list[dict]:
    extra = []
    for kind in spec.kinds:
        for horizon in spec.horizons:
            group = [r for r in rows if r["kind"] == kind.label and r["T"] == horizon]
            if not group:
                continue
            for stat in ("mean", "stderr"):
                agg = {
                    "kind": kind.label,
                    "world": f"({stat})",
                    "seed": "",
                    "T": horizon,
                    "termination": "",
                    "steps": "",
                }
                for metric in SUMMARY_METRICS:
                    vals = [r[metric] for r in group if metric in r]
                    if not vals:
                        continue
                    arr = np.asarray(vals, dtype=np.float64)
                    if stat == "mean":
                        agg[metric] = float(arr.mean())
                    else:
                        agg[metric] = (
                            float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
                        )
                extra.append(agg)
    return extra


def _write_summary(rows: list[dict], path) -> None:
    lines = [",".join(SUMMARY_HEADER)]
    for row in rows:
        cells = []
        for col in SUMMARY_HEADER:
            v = row.get(col, "")
            if isinstance(v, float):
                cells.append(fmt9(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_summary(path) -> list[dict]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        out.append(dict(zip(header, line.split(","))))
    return out


def compare_rewards(summary_rows: list[dict], metrics=("iou", "as_m2", "pct_as", "acc_m2")) -> dict:
    """Per-kind mean and stderr plus Welch t-test p-values between kinds.

    Needs at least two kinds and five seeds per kind; aggregate rows in the
    input are ignored.
    """
    data: dict[str, dict[str, list[float]]] = {}
    for row in summary_rows:
        if row.get("world", "").startswith("("):
            continue
        kind = row["kind"]
        bucket = data.setdefault(kind, {m: [] for m in metrics})
        for m in metrics:
            raw = row.get(m, "")
            if raw not in ("", None):
                bucket[m].append(float(raw))
    kinds = sorted(data)
    if len(kinds) < 2:
        raise ConfigError("reward comparison needs at least two kinds")
    for kind in kinds:
        n = max((len(v) for v in data[kind].values()), default=0)
        if n < 5:
            raise ConfigError(f"kind {kind!r} has {n} episodes; need at least 5")
    report = {"kinds": {}, "welch_p": {}}
    for kind in kinds:
        entry = {}
        for m in metrics:
            arr = np.asarray(data[kind][m], dtype=np.float64)
            if arr.size == 0:
                continue
            stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            entry[m] = {"mean": float(arr.mean()), "stderr": stderr, "n": int(arr.size)}
        report["kinds"][kind] = entry
    for i, a in enumerate(kinds):
        for b in kinds[i + 1 :]:
            pair = {}
            for m in metrics:
                xa = np.asarray(data[a][m], dtype=np.float64)
                xb = np.asarray(data[b][m], dtype=np.float64)
                if xa.size < 2 or xb.size < 2:
                    continue
                if np.allclose(xa.var(), 0) and np.allclose(xb.var(), 0):
                    p = 1.0 if np.allclose(xa.mean(), xb.mean()) else 0.0
                else:
                    p = float(stats.ttest_ind(xa, xb, equal_var=False).pvalue)
                pair[m] = p
            report["welch_p"][f"{a} vs {b}"] = pair
    return report


# ---------------------------------------------------------------------------
# Rendering

def trajectory_vertices(log: EpisodeLog, start: Pose) -> list[tuple[int, int]]:
    """Polyline vertices (cells) of the true trajectory, start included."""
    vertices = [start.cell()]
    for x, y in zip(log.rows["true_x"], log.rows["true_y"]):
        vertices.append((int(math.floor(y / 0.05)), int(math.floor(x / 0.05))))
    return vertices


def _draw_line(img, r0, c0, r1, c1, color):
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r1 > r0 else -1
    sc = 1 if c1 > c0 else -1
    err = dr - dc
    r, c = r0, c0
    h, w, _ = img.shape
    while True:
        if 0 <= r < h and 0 <= c < w:
            img[r, c] = color
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r += sr
        if e2 < dr:
            err += dr
            c += sc
    return img


def render(log: EpisodeLog, world: GroundTruthWorld, path, scale: int = 2) -> None:
    """Deterministic PPM of the world, explored overlay, and trajectory."""
    if log.config.get("world_digest") != world_digest(world):
        raise InconsistentInputs("log was not produced on this world")
    h, w = world.occupancy.shape
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[world.occupancy == 0] = (245, 245, 245)
    img[world.occupancy != 0] = (40, 40, 40)
    if log.final_map is not None:
        explored = log.final_map.explored_mask()
        occ = log.final_map.binary_occupied()
        img[explored & ~occ] = (205, 225, 245)
        img[explored & occ] = (90, 90, 130)

    start = Pose(*log.config["start"])
    vertices = trajectory_vertices(log, start)
    for (r0, c0), (r1, c1) in zip(vertices[:-1], vertices[1:]):
        _draw_line(img, r0, c0, r1, c1, (200, 30, 30))

    seen_goals = []
    for gr, gc in zip(log.rows["goal_row"], log.rows["goal_col"]):
        if gr >= 0 and (gr, gc) not in seen_goals:
            seen_goals.append((gr, gc))
    for gr, gc in seen_goals:
        for d in range(-2, 3):
            if 0 <= gr + d < h and 0 <= gc < w:
                img[gr + d, gc] = (30, 150, 30)
            if 0 <= gr < h and 0 <= gc + d < w:
                img[gr, gc + d] = (30, 150, 30)

    for i, trig in enumerate(log.rows["trigger"]):
        if trig:
            r, c = vertices[i + 1]
            if 0 <= r < h and 0 <= c < w:
                img[r, c] = (230, 200, 40)

    sr, sc = start.cell()
    if 0 <= sr < h and 0 <= sc < w:
        img[sr, sc] = (30, 60, 200)

    img = np.flipud(img)  # y grows north; image rows grow down
    if scale > 1:
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# CLI

def _build_parser() -> _Parser:
    parser = _Parser(prog="expbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-world", help="generate a floorplan world file")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--cells", type=int, default=300, help="grid side in 5cm cells")
    g.add_argument("--rooms", type=int, nargs=2, default=(4, 6), metavar=("MIN", "MAX"))
    g.add_argument("--clutter", type=float, default=0.04)
    g.add_argument("--classes", type=int, default=6)

    r = sub.add_parser("run", help="run one episode, writing log CSV + metrics JSON")
    r.add_argument("--world", required=True)
    r.add_argument("--task", default="exploration",
                   choices=[t.value for t in TaskKind])
    r.add_argument("--reward", default="coverage")
    r.add_argument("--strategy", default="frontier", choices=["random", "frontier", "greedy"])
    r.add_argument("--greedy-reward", default="")
    r.add_argument("--T", type=int, default=500)
    r.add_argument("--seed", type=int, default=1)
    r.add_argument("--noise", default="noise_free", choices=["noise_free", "noisy"])
    r.add_argument("--goal", default="", help="nav goal 'x,y,theta' in the start frame")
    r.add_argument("--som", default="", help="variant SOM file (spot-the-difference)")
    r.add_argument("--out", required=True)
    r.add_argument("--name", default="episode")
    r.add_argument("--start", default="", help="start pose 'x,y,theta' (world frame)")

    b = sub.add_parser("benchmark", help="run a benchmark spec")
    b.add_argument("--spec", required=True)
    b.add_argument("--out", default="", help="override the spec output directory")
    b.add_argument("--threads", type=int, default=0)

    s = sub.add_parser("spotdiff-gen", help="generate a changing-environment dataset")
    s.add_argument("--world", required=True)
    s.add_argument("--variants", type=int, default=10)
    s.add_argument("--episodes", type=int, default=10)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--removal-p", type=float, default=0.5)
    s.add_argument("--displacement-p", type=float, default=0.3)
    s.add_argument("--out", required=True)

    m = sub.add_parser("metrics", help="recompute metrics from a persisted log")
    m.add_argument("--log", required=True, help="log directory/name prefix")
    m.add_argument("--world", required=True)
    m.add_argument("--som", default="")

    v = sub.add_parser("render", help="render a persisted log to PPM")
    v.add_argument("--log", required=True)
    v.add_argument("--world", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--scale", type=int, default=2)

    c = sub.add_parser("compare", help="compare reward kinds from a summary CSV")
    c.add_argument("--summary", required=True)
    c.add_argument("--out", default="")
    return parser


def _parse_pose(text: str) -> Pose:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"pose must be 'x,y,theta', got {text!r}")
    return Pose(*parts)


def _cmd_run(args) -> int:
    original = load_world(args.world)
    reward = _reward_kind(args.reward)
    strategy = _strategy(args.strategy, reward, args.greedy_reward)
    task = TaskKind(args.task)
    world = original
    outdated = None
    if task == TaskKind.SPOTDIFF:
        if not args.som:
            raise ConfigError("spotdiff runs need --som with the variant file")
        world = world_from_som(load_som(args.som))
        outdated = original.occupancy.astype(bool)
    start = _parse_pose(args.start) if args.start else default_start(world)
    goal = _parse_pose(args.goal) if args.goal else None
    cfg = EpisodeConfig(
        task=task,
        world=world,
        start=start,
        max_steps=args.T,
        seed=args.seed,
        noise=_noise_profile(args.noise),
        reward_kind=reward,
        strategy=strategy,
        goal=goal,
        outdated_occupied=outdated,
    )
    log = run_episode(cfg)
    metrics = compute_all_metrics(log, cfg)
    log.metrics = metrics
    log.save(args.out, args.name)
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return 0


def compute_all_metrics(log: EpisodeLog, cfg: EpisodeConfig) -> dict:
    metrics = exploration_metrics(log.final_map, cfg.world, log.seen_mask, log)
    if cfg.task in (TaskKind.POINTNAV, TaskKind.POINTNAVPP):
        metrics.update(navigation_metrics(log, cfg))
    if cfg.task == TaskKind.SPOTDIFF:
        sd = spotdiff_metrics(
            log.final_map,
            cfg.outdated_occupied,
            cfg.world.occupancy.astype(bool),
            log.seen_mask,
        )
        metrics.update({f"sd_{k}": v for k, v in sd.items()})
    metrics["termination"] = log.termination
    return metrics


def cli_run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "generate-world":
            params = FloorplanParams(
                width=args.cells,
                height=args.cells,
                rooms_min=args.rooms[0],
                rooms_max=args.rooms[1],
                clutter_density=args.clutter,
                n_classes=args.classes,
            )
            world = generate_floorplan(args.seed, params)
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            save_world(world, args.out)
            print(f"wrote {args.out} ({world.width}x{world.height} cells, "
                  f"{world.navigable_area_m2:.2f} m2 navigable)")
            return 0
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "benchmark":
            spec = BenchmarkSpec.parse(args.spec)
            if args.out:
                spec.out = args.out
            run_benchmark(spec, args.threads or None)
            print(f"wrote {Path(spec.out) / 'summary.csv'}")
            return 0
        if args.command == "spotdiff-gen":
            world = load_world(args.world)
            som = som_from_world(world)
            rng = np.random.default_rng(args.seed)
            dataset = generate_episode_set(
                world, som, args.variants, args.episodes, rng,
                args.removal_p, args.displacement_p,
            )
            save_dataset(dataset, args.out)
            print(f"wrote {args.out} ({args.variants} variants, "
                  f"{len(dataset.episodes)} episodes)")
            return 0
        if args.command == "metrics":
            directory, name = str(Path(args.log).parent), Path(args.log).name
            log = EpisodeLog.load(directory, name)
            cfg = _config_from_log(log, args)
            metrics = compute_all_metrics(log, cfg)
            print(json.dumps(metrics, indent=1, sort_keys=True))
            return 0
        if args.command == "render":
            directory, name = str(Path(args.log).parent), Path(args.log).name
            log = EpisodeLog.load(directory, name)
            world = load_world(args.world)
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            render(log, world, args.out, args.scale)
            print(f"wrote {args.out}")
            return 0
        if args.command == "compare":
            report = compare_rewards(read_summary(args.summary))
            text = json.dumps(report, indent=1, sort_keys=True)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text + "\n")
            print(text)
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ExpbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _config_from_log(log: EpisodeLog, args) -> EpisodeConfig:
    c = log.config
    task = TaskKind(c["task"])
    original = load_world(args.world)
    world = original
    outdated = None
    if task == TaskKind.SPOTDIFF:
        if not args.som:
            raise ConfigError("spotdiff metrics need --som")
        world = world_from_som(load_som(args.som))
        outdated = original.occupancy.astype(bool)
    if world_digest(world) != c["world_digest"]:
        raise InconsistentInputs("log does not match the given world")
    return EpisodeConfig(
        task=task,
        world=world,
        start=Pose(*c["start"]),
        max_steps=c["max_steps"],
        seed=c["seed"],
        goal=None if c["goal"] is None else Pose(*c["goal"]),
        outdated_occupied=outdated,
    )


def main() -> None:
    sys.exit(cli_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
