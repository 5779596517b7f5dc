"""On-disk episode datasets.

Layout under a dataset root:

    manifest.json               version, sim config, seed, counts, splits
    episodes/ep_000000/
        states.f32              little-endian float32, row-major [T, N, 4]
        graph.json              non-null edges; absent pairs are null
        frames/frame_0000.png   optional 8-bit RGB frames

Episode e is generated from seed + e, so any slice of the dataset can be
reproduced independently and generation parallelizes across episodes.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .graph import CausalSummaryGraph, sample_summary_graph
from .physics import Episode, SimConfig, simulate_episode

MANIFEST_VERSION = 1


class DatasetExistsError(RuntimeError):
    pass


def episode_dir(root: Path | str, index: int) -> Path:
    return Path(root) / "episodes" / f"ep_{index:06d}"


def _write_episode(root: Path, index: int, ep: Episode) -> None:
    d = episode_dir(root, index)
    d.mkdir(parents=True, exist_ok=True)
    states32 = ep.states.astype("<f4")
    with open(d / "states.f32", "wb") as f:
        f.write(states32.tobytes(order="C"))
    ep.graph.save(d / "graph.json")
    if ep.frames is not None:
        fdir = d / "frames"
        fdir.mkdir(exist_ok=True)
        for t in range(ep.frames.shape[0]):
            Image.fromarray(ep.frames[t]).save(fdir / f"frame_{t:04d}.png")


def _generate_one(args) -> None:
    cfg_dict, root, index, seed = args
    cfg = SimConfig(**cfg_dict)
    rng = np.random.default_rng(seed)
    graph = sample_summary_graph(cfg.n_bodies, rng)
    ep = simulate_episode(cfg, graph, rng, seed=seed)
    _write_episode(Path(root), index, ep)


def split_ranges(n_episodes: int, split_fractions: dict[str, float]) -> dict[str, list[int]]:
    """Contiguous [start, end) index ranges per split, remainder to the first split."""
    total = sum(split_fractions.values())
    if not np.isclose(total, 1.0, atol=1e-9):
        raise ValueError(f"split fractions must sum to 1, got {total}")
    names = list(split_fractions)
    counts = {name: int(np.floor(split_fractions[name] * n_episodes)) for name in names}
    counts[names[0]] += n_episodes - sum(counts.values())
    ranges, start = {}, 0
    for name in names:
        ranges[name] = [start, start + counts[name]]
        start += counts[name]
    return ranges


def generate_dataset(
    cfg: SimConfig,
    n_episodes: int,
    split_fractions: dict[str, float],
    seed: int,
    out_dir: Path | str,
    overwrite: bool = False,
    workers: int = 1,
) -> dict:
    """Simulate and write ``n_episodes`` episodes; returns the manifest dict."""
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()):
        if not overwrite:
            raise DatasetExistsError(f"{root} exists and is not empty; pass overwrite to replace")
    root.mkdir(parents=True, exist_ok=True)

    jobs = [(dataclasses.asdict(cfg), str(root), e, seed + e) for e in range(n_episodes)]
    if workers > 1 and n_episodes > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_generate_one, jobs, chunksize=8))
    else:
        for job in jobs:
            _generate_one(job)

    manifest = {
        "version": MANIFEST_VERSION,
        "sim": dataclasses.asdict(cfg),
        "seed": seed,
        "n_episodes": n_episodes,
        "splits": split_ranges(n_episodes, split_fractions),
    }
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_manifest(root: Path | str) -> dict:
    with open(Path(root) / "manifest.json") as f:
        return json.load(f)


def load_states(root: Path | str, index: int, manifest: dict | None = None) -> np.ndarray:
    """Stored states of one episode as float32 [T, N, 4]."""
    manifest = manifest or load_manifest(root)
    sim = manifest["sim"]
    raw = np.fromfile(episode_dir(root, index) / "states.f32", dtype="<f4")
    return raw.reshape(sim["episode_len"], sim["n_bodies"], 4)


def load_graph(root: Path | str, index: int) -> CausalSummaryGraph:
    return CausalSummaryGraph.load(episode_dir(root, index) / "graph.json")


def load_frames(root: Path | str, index: int) -> np.ndarray:
    """Rendered frames of one episode as uint8 [T, H, W, 3]."""
    fdir = episode_dir(root, index) / "frames"
    paths = sorted(fdir.glob("frame_*.png"))
    if not paths:
        raise FileNotFoundError(f"no frames under {fdir}")
    return np.stack([np.asarray(Image.open(p).convert("RGB")) for p in paths])


def has_frames(root: Path | str, index: int = 0) -> bool:
    fdir = episode_dir(root, index) / "frames"
    return fdir.is_dir() and any(fdir.glob("frame_*.png"))


def split_indices(manifest: dict, split: str) -> list[int]:
    start, end = manifest["splits"][split]
    return list(range(start, end))
