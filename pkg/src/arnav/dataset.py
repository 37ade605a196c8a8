"""On-disk training data: one compressed npz shard per route plus a JSON
manifest binding the shards to the exact world/camera/grid configuration that
produced them.  Shards round-trip losslessly (float64 images)."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor.checkpoint import config_digest
from .world import (
    CameraModel,
    GridClassMap,
    RouteFrames,
    TrainingRecord,
    WorldMap,
    generate_route,
    make_training_samples,
)

__all__ = [
    "save_route_shard",
    "load_route_shard",
    "build_dataset",
    "load_dataset",
    "MANIFEST_NAME",
]

MANIFEST_NAME = "manifest.json"


def save_route_shard(path: str, frames: RouteFrames) -> None:
    recs = frames.records
    np.savez_compressed(
        path,
        images=frames.images,
        positions=frames.positions,
        end_image=frames.end_image,
        end_position=frames.end_position,
        altitudes=frames.altitudes,
        rec_last_index=np.array([r.last_index for r in recs], dtype=np.int64),
        rec_history_len=np.array([r.history_len for r in recs], dtype=np.int64),
        rec_angle_deg=np.array([r.angle_deg for r in recs]),
        rec_current_class=np.array([r.current_class for r in recs], dtype=np.int64),
        rec_next_class=np.array([r.next_class for r in recs], dtype=np.int64),
    )


def load_route_shard(path: str) -> RouteFrames:
    with np.load(path) as z:
        records = [
            TrainingRecord(
                last_index=int(li),
                history_len=int(hl),
                angle_deg=float(a),
                current_class=int(c),
                next_class=int(nx),
            )
            for li, hl, a, c, nx in zip(
                z["rec_last_index"],
                z["rec_history_len"],
                z["rec_angle_deg"],
                z["rec_current_class"],
                z["rec_next_class"],
            )
        ]
        return RouteFrames(
            images=z["images"],
            positions=z["positions"],
            end_image=z["end_image"],
            end_position=z["end_position"],
            records=records,
            altitudes=z["altitudes"],
        )


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def build_dataset(
    out_dir: str,
    world: WorldMap,
    camera: CameraModel,
    grid: GridClassMap,
    route_seeds: Sequence[int],
    history_len: int,
    min_length: Union[float, Sequence[float]] = 5800.0,
    include_partial: bool = True,
    full_stride: int = 1,
    image_effects: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]] = None,
    augment_fraction: float = 0.5,
    effect_master_seed: int = 0,
) -> Dict:
    """Generate routes, cut samples, write shards, and write the manifest.

    The first ``augment_fraction`` share of routes (rounded down) is rendered
    with ``image_effects`` applied to history frames; the remainder is clean.
    Returns the manifest dict.
    """
    os.makedirs(out_dir, exist_ok=True)
    from .tensor.rng import stream  # local import avoids a cycle at module load

    n_aug = int(len(route_seeds) * augment_fraction) if image_effects else 0
    if isinstance(min_length, (int, float)):
        lengths = [float(min_length)] * len(route_seeds)
    else:
        lengths = [float(x) for x in min_length]
        if len(lengths) != len(route_seeds):
            raise ValueError("one target length per route seed required")
    shards = []
    for i, seed in enumerate(route_seeds):
        route = generate_route(world, seed, min_length=lengths[i])
        effects = image_effects if i < n_aug else None
        frames = make_training_samples(
            world,
            route,
            history_len,
            camera,
            grid,
            seed,
            include_partial=include_partial,
            full_stride=full_stride,
            image_effects=effects,
            effect_rng=stream(effect_master_seed, "augment", seed) if effects else None,
        )
        name = f"route_{seed:06d}.npz"
        path = os.path.join(out_dir, name)
        save_route_shard(path, frames)
        shards.append(
            {
                "file": name,
                "route_seed": seed,
                "augmented": bool(effects),
                "records": len(frames.records),
                "waypoints": int(frames.images.shape[0]),
                "start": [float(frames.positions[0][0]), float(frames.positions[0][1])],
                "end": [float(frames.end_position[0]), float(frames.end_position[1])],
                "digest": _file_digest(path),
            }
        )
    source_config = {
        "world": {
            "seed": world.seed,
            "extent_north": world.extent_north,
            "extent_east": world.extent_east,
        },
        "camera": {"fov_deg": camera.fov_deg, "resolution": camera.resolution},
        "grid": {"rows": grid.rows, "cols": grid.cols},
        "history_len": history_len,
        "min_length": min_length,
        "include_partial": include_partial,
        "augment_fraction": augment_fraction if image_effects else 0.0,
    }
    manifest = {
        "version": 1,
        "source_config": source_config,
        "source_digest": config_digest(source_config),
        "shards": shards,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_dataset(dir_path: str, verify: bool = True) -> Tuple[List[RouteFrames], Dict]:
    with open(os.path.join(dir_path, MANIFEST_NAME)) as f:
        manifest = json.load(f)
    if manifest.get("version") != 1:
        raise ValueError("unsupported dataset manifest version")
    if config_digest(manifest["source_config"]) != manifest["source_digest"]:
        raise ValueError("dataset manifest digest mismatch")
    out = []
    for shard in manifest["shards"]:
        path = os.path.join(dir_path, shard["file"])
        if verify and _file_digest(path) != shard["digest"]:
            raise ValueError(f"shard digest mismatch: {shard['file']}")
        out.append(load_route_shard(path))
    return out, manifest
