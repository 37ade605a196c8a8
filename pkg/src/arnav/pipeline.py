"""End-to-end pipeline: run configuration (TOML), training loops for the
direction model and the baseline classifier, flight campaigns, and
byte-reproducible reports.

A run is fully determined by its TOML config plus a master seed; every
random choice draws from a named, purpose-keyed rng stream, so reruns (and
resumed training at an epoch boundary) are bit-exact.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import build_dataset, load_dataset
from .frames import Frame
from .geometry import Position, displacement_sequence
from .metrics import MetricsReport, compute_metrics, rows_to_csv
from .model import DirectionModel, FrameClassifier, ModelConfig
from .navigators import (
    ClassifyNavigator,
    MatchNavigator,
    ModelNavigator,
    Navigator,
    OracleNavigator,
)
from .sim import DisturbanceSpec, FlightLog, SimConfig, apply_image_effects, run_flight
from .tensor.checkpoint import config_digest, load_checkpoint, save_checkpoint
from .tensor.optim import AdamW, CosineWarmRestarts
from .tensor.rng import stream
from .world import CameraModel, GridClassMap, RouteFrames, WorldMap, generate_route

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "load_run_config",
    "TrainingDiverged",
    "prepare_dataset",
    "train_model",
    "train_classifier",
    "build_navigator",
    "campaign_endpoints",
    "run_campaign",
    "write_report",
]


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class WorldSection:
    seed: int = 2024
    extent_north: float = 5328.0
    extent_east: float = 2300.0


@dataclass(frozen=True)
class CameraSection:
    fov_deg: float = 60.0
    resolution: int = 32


@dataclass(frozen=True)
class GridSection:
    rows: int = 5
    cols: int = 5


@dataclass(frozen=True)
class DataSection:
    routes: int = 96
    min_length: float = 3000.0
    # training routes vary in length between these bounds so goal distances
    # from a few hundred meters to full-map chords are all represented, and
    # the set of (position, goal) pairs seen in training is much denser than
    # a handful of long routes would give
    train_length_range: Tuple[float, float] = (600.0, 3600.0)
    include_partial: bool = True
    # thin full windows so tripling route coverage does not triple epoch
    # cost; adjacent windows overlap in 4 of 5 frames anyway
    window_stride: int = 2
    augment_fraction: float = 0.5
    first_route_seed: int = 100


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 22
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.1
    # one full cosine cycle over the default run: ending mid-restart leaves
    # the final weights at a high-lr point, measurably worse in closed loop
    restart_epochs: int = 22
    restart_mult: float = 1.0
    classifier_epochs: int = 8
    classifier_lr: float = 1e-3
    # probability of zeroing a sample's displacement inputs during training;
    # keeps the angle head from leaning on dead reckoning alone, so it also
    # learns to steer from the current view relative to the goal view
    displacement_dropout: float = 0.25


@dataclass(frozen=True)
class CampaignSection:
    flights: int = 20
    step_distance: float = 30.0
    max_steps: int = 250
    success_radii: Tuple[float, float] = (25.0, 50.0)
    ideal_altitude: float = 80.0
    deterministic_timing: bool = True
    match_candidates: int = 25

    def sim_config(self, window: int) -> SimConfig:
        return SimConfig(
            step_distance=self.step_distance,
            max_steps=self.max_steps,
            success_radii=tuple(self.success_radii),
            ideal_altitude=self.ideal_altitude,
            window=window,
            deterministic_timing=self.deterministic_timing,
        )


_SECTIONS = {
    "world": WorldSection,
    "camera": CameraSection,
    "grid": GridSection,
    "data": DataSection,
    "train": TrainSection,
    "campaign": CampaignSection,
}


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    model_preset: str = "desk"
    model_overrides: Dict = field(default_factory=dict)
    world: WorldSection = field(default_factory=WorldSection)
    camera: CameraSection = field(default_factory=CameraSection)
    grid: GridSection = field(default_factory=GridSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    campaign: CampaignSection = field(default_factory=CampaignSection)

    def model_config(self) -> ModelConfig:
        if self.model_preset == "desk":
            base = ModelConfig.desk()
        elif self.model_preset == "paper":
            base = ModelConfig()
        else:
            raise ValueError(f"unknown model preset {self.model_preset!r}")
        base = replace(
            base,
            num_classes=self.grid.rows * self.grid.cols,
            image_side=self.camera.resolution,
        )
        if self.model_overrides:
            valid = {f.name for f in fields(ModelConfig)}
            bad = set(self.model_overrides) - valid
            if bad:
                raise ValueError(f"unknown model option(s): {sorted(bad)}")
            base = replace(base, **self.model_overrides)
        return base

    def build_world(self) -> WorldMap:
        return WorldMap(
            seed=self.world.seed,
            extent_north=self.world.extent_north,
            extent_east=self.world.extent_east,
        )

    def build_camera(self) -> CameraModel:
        return CameraModel(fov_deg=self.camera.fov_deg, resolution=self.camera.resolution)

    def build_grid(self) -> GridClassMap:
        return GridClassMap(
            rows=self.grid.rows,
            cols=self.grid.cols,
            extent_north=self.world.extent_north,
            extent_east=self.world.extent_east,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def _section_from_dict(cls, data: dict, where: str):
    valid = {f.name for f in fields(cls)}
    bad = set(data) - valid
    if bad:
        raise ValueError(f"unknown key(s) in [{where}]: {sorted(bad)}")
    return cls(**data)


def load_run_config(path: Optional[str] = None, text: Optional[str] = None) -> RunConfig:
    """Parse a TOML run config; unknown sections or keys are errors."""
    if text is None:
        if path is None:
            return RunConfig()
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    else:
        raw = tomllib.loads(text)
    top_scalars = {"master_seed", "model_preset"}
    kwargs: Dict = {}
    for key, value in raw.items():
        if key in top_scalars:
            kwargs[key] = value
        elif key == "model":
            preset = value.pop("preset", None)
            if preset is not None:
                kwargs["model_preset"] = preset
            kwargs["model_overrides"] = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"[{key}] must be a table")
            if key == "campaign" and "success_radii" in value:
                value["success_radii"] = tuple(value["success_radii"])
            if key == "data" and "train_length_range" in value:
                value["train_length_range"] = tuple(value["train_length_range"])
            kwargs[key] = _section_from_dict(_SECTIONS[key], value, key)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return RunConfig(**kwargs)


# ---------------------------------------------------------------------------
# dataset


def training_image_effects(spec: Optional[DisturbanceSpec] = None):
    """Image-corruption closure used for the augmented share of routes."""
    spec = spec or DisturbanceSpec.standard()

    def apply(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return apply_image_effects(image, spec, rng)

    return apply


def prepare_dataset(cfg: RunConfig, out_dir: str) -> dict:
    seeds = [cfg.data.first_route_seed + i for i in range(cfg.data.routes)]
    lo, hi = cfg.data.train_length_range
    len_rng = stream(cfg.master_seed, "routes")
    lengths = [float(x) for x in len_rng.uniform(lo, hi, size=len(seeds))]
    return build_dataset(
        out_dir,
        cfg.build_world(),
        cfg.build_camera(),
        cfg.build_grid(),
        seeds,
        history_len=cfg.model_config().history_len,
        min_length=lengths,
        include_partial=cfg.data.include_partial,
        full_stride=cfg.data.window_stride,
        image_effects=training_image_effects() if cfg.data.augment_fraction > 0 else None,
        augment_fraction=cfg.data.augment_fraction,
        effect_master_seed=cfg.master_seed,
    )


# ---------------------------------------------------------------------------
# training


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or gradient appears; the last finite
    checkpoint is left on disk."""


def _window_batch(shards: Sequence[RouteFrames], items: Sequence[Tuple[int, int]]):
    """Assemble one fixed-history-length batch from (shard, record) indices."""
    images, disps, angles, cur, nxt = [], [], [], [], []
    for si, ri in items:
        shard = shards[si]
        rec = shard.records[ri]
        w_img, w_pos = shard.window(rec)
        seq = displacement_sequence(
            [Position(float(n), float(e)) for n, e in w_pos], include_end=True
        )
        images.append(np.concatenate([w_img, shard.end_image[None]], axis=0))
        disps.append(np.array([[d.dn, d.de] for d in seq]))
        angles.append(rec.angle_deg)
        cur.append(rec.current_class)
        nxt.append(rec.next_class)
    return (
        np.stack(images),
        np.stack(disps),
        np.array(angles),
        np.array(cur, dtype=np.int64),
        np.array(nxt, dtype=np.int64),
    )


def _epoch_batches(
    shards: Sequence[RouteFrames], batch_size: int, rng: np.random.Generator
) -> List[List[Tuple[int, int]]]:
    """Shuffled batches, bucketed so every batch has one history length."""
    items = [
        (si, ri) for si, s in enumerate(shards) for ri in range(len(s.records))
    ]
    order = rng.permutation(len(items))
    buckets: Dict[int, List[Tuple[int, int]]] = {}
    for k in order:
        si, ri = items[k]
        buckets.setdefault(shards[si].records[ri].history_len, []).append((si, ri))
    batches = [
        bucket[i : i + batch_size]
        for _, bucket in sorted(buckets.items())
        for i in range(0, len(bucket), batch_size)
    ]
    return [batches[i] for i in rng.permutation(len(batches))]


def _save_train_state(path: str, model: DirectionModel, opt: AdamW, epoch: int, cfg: RunConfig):
    params = model.state_dict()
    for name, m in opt.m.items():
        params[f"opt.m.{name}"] = m.copy()
        params[f"opt.v.{name}"] = opt.v[name].copy()
    save_checkpoint(
        path,
        params,
        {"model": model.config.to_dict(), "epoch": epoch, "opt_t": opt.t, "run": cfg.digest()},
    )


def _load_train_state(path: str, cfg: RunConfig) -> Tuple[DirectionModel, AdamW, int]:
    params, meta = load_checkpoint(path)
    if meta.get("run") != cfg.digest():
        raise ValueError("checkpoint was produced by a different run config")
    model = DirectionModel(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict({k: v for k, v in params.items() if not k.startswith("opt.")})
    opt = AdamW(
        model.parameters(), lr=cfg.train.lr, weight_decay=cfg.train.weight_decay
    )
    opt.t = meta["opt_t"]
    for p in model.parameters():
        opt.m[p.name][...] = params[f"opt.m.{p.name}"]
        opt.v[p.name][...] = params[f"opt.v.{p.name}"]
    return model, opt, meta["epoch"]


def train_model(
    cfg: RunConfig,
    shards: Sequence[RouteFrames],
    out_dir: str,
    resume: bool = False,
    progress: Optional[Callable[[str], None]] = None,
) -> DirectionModel:
    """Train the direction model; writes per-epoch ``training_log.csv`` and a
    resumable ``model_last.ckpt``, plus ``model.ckpt`` (weights only) at the
    end.  Resuming from an epoch boundary reproduces the uninterrupted run
    bit for bit."""
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "model_last.ckpt")
    log_path = os.path.join(out_dir, "training_log.csv")
    if resume and os.path.exists(ckpt):
        model, opt, start_epoch = _load_train_state(ckpt, cfg)
    else:
        model = DirectionModel(cfg.model_config(), init_seed=cfg.master_seed)
        opt = AdamW(model.parameters(), lr=cfg.train.lr, weight_decay=cfg.train.weight_decay)
        start_epoch = 0
        with open(log_path, "w", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(
                ["epoch", "lr", "loss", "angle", "current", "next",
                 "s_angle", "s_current", "s_next"]
            )
    sched = CosineWarmRestarts(
        base_lr=cfg.train.lr, t0=cfg.train.restart_epochs, t_mult=cfg.train.restart_mult
    )
    for epoch in range(start_epoch, cfg.train.epochs):
        lr = sched.lr_at(epoch)
        order_rng = stream(cfg.master_seed, "data_order", epoch)
        drop_rng = stream(cfg.master_seed, "dropout", epoch)
        sums: Dict[str, float] = {}
        count = 0
        for batch in _epoch_batches(shards, cfg.train.batch_size, order_rng):
            images, disps, angles, cur, nxt = _window_batch(shards, batch)
            p_disp = cfg.train.displacement_dropout
            if p_disp > 0.0 and model.config.use_displacement:
                blank = drop_rng.random(disps.shape[0]) < p_disp
                disps = disps.copy()
                disps[blank] = 0.0
            loss, parts = model.loss_on_batch(
                images, disps, angles, cur, nxt, train=True, dropout_rng=drop_rng
            )
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            try:
                opt.step(lr=lr)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc)) from exc
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
        row = [
            epoch,
            f"{lr:.6e}",
            f"{sums.get('total', 0.0) / max(count, 1):.6f}",
            f"{sums.get('angle', 0.0) / max(count, 1):.6f}",
            f"{sums.get('current', 0.0) / max(count, 1):.6f}",
            f"{sums.get('next', 0.0) / max(count, 1):.6f}",
            f"{float(model.s_angle.data):.6f}",
            f"{float(model.s_cur.data) if model.s_cur is not None else 0.0:.6f}",
            f"{float(model.s_next.data) if model.s_next is not None else 0.0:.6f}",
        ]
        with open(log_path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(row)
        _save_train_state(ckpt, model, opt, epoch + 1, cfg)
        if progress:
            progress(f"epoch {epoch + 1}/{cfg.train.epochs} loss {row[2]} lr {row[1]}")
    model.save(os.path.join(out_dir, "model.ckpt"))
    return model


def _classifier_samples(shards: Sequence[RouteFrames], grid: GridClassMap):
    images, labels = [], []
    for shard in shards:
        images.append(shard.images)
        labels.extend(
            grid.class_of(Position(float(n), float(e))) for n, e in shard.positions
        )
    return np.concatenate(images, axis=0), np.array(labels, dtype=np.int64)


def train_classifier(
    cfg: RunConfig,
    shards: Sequence[RouteFrames],
    out_dir: str,
    progress: Optional[Callable[[str], None]] = None,
) -> FrameClassifier:
    """Train the single-frame grid-cell classifier used by the two-stage
    baselines."""
    os.makedirs(out_dir, exist_ok=True)
    grid = cfg.build_grid()
    images, labels = _classifier_samples(shards, grid)
    clf = FrameClassifier(cfg.model_config(), init_seed=cfg.master_seed)
    opt = AdamW(clf.parameters(), lr=cfg.train.classifier_lr, weight_decay=cfg.train.weight_decay)
    n = len(labels)
    bs = cfg.train.batch_size
    for epoch in range(cfg.train.classifier_epochs):
        rng = stream(cfg.master_seed, "data_order", 1000 + epoch)
        order = rng.permutation(n)
        total = 0.0
        steps = 0
        for i in range(0, n, bs):
            idx = order[i : i + bs]
            loss = clf.loss_on_batch(images[idx], labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite classifier loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data)
            steps += 1
        if progress:
            progress(f"classifier epoch {epoch + 1}/{cfg.train.classifier_epochs} "
                     f"loss {total / max(steps, 1):.4f}")
    clf.save(os.path.join(out_dir, "classifier.ckpt"))
    return clf


# ---------------------------------------------------------------------------
# campaigns


def campaign_endpoints(cfg: RunConfig, count: int) -> List[Tuple[Position, Position]]:
    """Start/goal pairs for evaluation flights: endpoints of freshly generated
    routes from the campaign's own seed range (same generator family as the
    training routes, disjoint seeds)."""
    world = cfg.build_world()
    base = cfg.data.first_route_seed + 10_000
    out = []
    for i in range(count):
        route = generate_route(world, base + i, min_length=cfg.data.min_length)
        out.append((route.start, route.end))
    return out


def build_navigator(
    name: str,
    cfg: RunConfig,
    model_dir: str,
    endpoints: Optional[Tuple[Position, Position]] = None,
) -> Navigator:
    """``ours``, ``oracle``, ``classify``, or ``match[:N]``."""
    if name == "oracle":
        return OracleNavigator()
    if name == "ours":
        model = DirectionModel.load(os.path.join(model_dir, "model.ckpt"))
        return ModelNavigator(model)
    if name == "classify":
        clf = FrameClassifier.load(os.path.join(model_dir, "classifier.ckpt"))
        return ClassifyNavigator(clf, cfg.build_grid())
    if name == "match" or name.startswith("match:"):
        n = int(name.split(":", 1)[1]) if ":" in name else cfg.campaign.match_candidates
        if endpoints is None:
            raise ValueError("match navigator needs the flight endpoints")
        clf = FrameClassifier.load(os.path.join(model_dir, "classifier.ckpt"))
        return MatchNavigator(
            clf,
            cfg.build_world(),
            cfg.build_camera(),
            endpoints[0],
            endpoints[1],
            candidates=n,
            altitude=cfg.campaign.ideal_altitude,
        )
    raise ValueError(f"unknown navigator {name!r}")


def run_campaign(
    cfg: RunConfig,
    navigator_name: str,
    disturbance: DisturbanceSpec,
    out_dir: str,
    model_dir: str,
    endpoints: Optional[Sequence[Tuple[Position, Position]]] = None,
    navigator_factory: Optional[
        Callable[[Tuple[Position, Position]], Navigator]
    ] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> List[FlightLog]:
    """Fly ``cfg.campaign.flights`` episodes and write one JSONL log each.

    Each flight draws disturbances from a stream keyed by the flight index,
    so results do not depend on execution order."""
    os.makedirs(out_dir, exist_ok=True)
    world = cfg.build_world()
    camera = cfg.build_camera()
    window = cfg.model_config().history_len
    sim = cfg.campaign.sim_config(window)
    if endpoints is None:
        endpoints = campaign_endpoints(cfg, cfg.campaign.flights)
    digest = cfg.digest()
    logs = []
    per_flight = navigator_name == "match" or navigator_name.startswith("match:")
    nav = None
    if not per_flight and navigator_factory is None:
        nav = build_navigator(navigator_name, cfg, model_dir)
    for i, (start, goal) in enumerate(endpoints[: cfg.campaign.flights]):
        if navigator_factory is not None:
            nav_i = navigator_factory((start, goal))
        elif per_flight:
            nav_i = build_navigator(navigator_name, cfg, model_dir, (start, goal))
        else:
            nav_i = nav
        flight = run_flight(
            nav_i, world, camera, start, goal, sim, disturbance,
            master_seed=cfg.master_seed, flight_index=i, config_digest=digest,
        )
        with open(os.path.join(out_dir, f"flight_{i:03d}.jsonl"), "w") as f:
            f.write(flight.to_jsonl())
        logs.append(flight)
        if progress:
            progress(f"flight {i + 1}/{len(endpoints)}: {flight.status}")
    storage = 0
    if per_flight or navigator_factory is not None:
        # storage varies only with the candidate count, not the endpoints
        probe = nav_i
        storage = probe.declared_storage_bytes()
    elif nav is not None:
        storage = nav.declared_storage_bytes()
    report = compute_metrics(logs, storage_bytes=storage)
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        json.dump(
            {"navigator": navigator_name, **dataclasses.asdict(report)},
            f, indent=1, sort_keys=True, default=str,
        )
    return logs


def load_campaign(out_dir: str) -> List[FlightLog]:
    logs = []
    for name in sorted(os.listdir(out_dir)):
        if name.startswith("flight_") and name.endswith(".jsonl"):
            with open(os.path.join(out_dir, name)) as f:
                logs.append(FlightLog.from_jsonl(f.read()))
    if not logs:
        raise ValueError(f"no flight logs under {out_dir}")
    digests = {log.config_digest for log in logs}
    if len(digests) > 1:
        raise ValueError("refusing to aggregate logs from mixed run configs")
    return logs


def write_report(rows: Sequence[Tuple[str, MetricsReport]], path: str) -> str:
    """One CSV row per navigator; output is byte-stable for identical
    inputs."""
    text = rows_to_csv([rep.to_row(label) for label, rep in rows])
    with open(path, "w", newline="") as f:
        f.write(text)
    return text
