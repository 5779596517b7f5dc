"""Training and checkpointing for the keypoint detector."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ..sim import dataset as ds
from .model import Transporter, image_to_tensor


class UnusableDatasetError(RuntimeError):
    pass


@dataclass
class PerceptionTrainConfig:
    n_keypoints: int = 3
    feature_channels: int = 32
    sigma: float = 0.1
    lr: float = 1e-3
    batch_size: int = 16
    iterations: int = 6000
    pair_offset_max: int = 20
    log_every: int = 500
    seed: int = 0


def load_frame_array(root, indices: list[int]) -> np.ndarray:
    """Stack episode frames into a uint8 array [n_eps, T, H, W, 3]."""
    if not indices:
        raise UnusableDatasetError("no episodes to load")
    if not ds.has_frames(root, indices[0]):
        raise UnusableDatasetError(f"dataset {root} has no rendered frames")
    return np.stack([ds.load_frames(root, e) for e in indices])


def _sample_pairs(frames: np.ndarray, batch: int, offset_max: int, rng: np.random.Generator):
    n_eps, T = frames.shape[:2]
    eps = rng.integers(0, n_eps, size=batch)
    t_src = rng.integers(0, T, size=batch)
    offsets = rng.integers(1, offset_max + 1, size=batch)
    t_tgt = np.minimum(t_src + offsets, T - 1)
    flip = t_tgt == t_src  # clamped at the episode end: look backwards instead
    t_tgt[flip] = np.maximum(t_src[flip] - offsets[flip], 0)
    src = torch.stack([image_to_tensor(frames[e, t]) for e, t in zip(eps, t_src)])
    tgt = torch.stack([image_to_tensor(frames[e, t]) for e, t in zip(eps, t_tgt)])
    return src, tgt


def train_perception(
    data_root,
    cfg: PerceptionTrainConfig,
    out_path: Path | str | None = None,
    frames: np.ndarray | None = None,
) -> tuple[Transporter, list[dict]]:
    """Fit a Transporter on rendered episodes; returns (model, training log).

    The log holds {"iteration", "loss"} entries where loss is the mean over
    the last ``log_every`` batches. Deterministic for a fixed config.
    """
    manifest = ds.load_manifest(data_root)
    if frames is None:
        frames = load_frame_array(data_root, ds.split_indices(manifest, "train"))

    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    model = Transporter(cfg.n_keypoints, cfg.feature_channels, cfg.sigma)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    log, window = [], []
    model.train()
    for it in range(1, cfg.iterations + 1):
        src, tgt = _sample_pairs(frames, cfg.batch_size, cfg.pair_offset_max, rng)
        recon = model(src, tgt)
        loss = ((recon - tgt) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        window.append(loss.item())
        if it % cfg.log_every == 0 or it == cfg.iterations:
            log.append({"iteration": it, "loss": float(np.mean(window))})
            window = []

    if out_path is not None:
        save_perception(model, cfg, Path(out_path), manifest["sim"]["image_size"])
    return model, log


def save_perception(model: Transporter, cfg: PerceptionTrainConfig, path: Path, image_size: int):
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"state_dict": model.state_dict()}, path)
    sidecar = {
        "n_keypoints": cfg.n_keypoints,
        "feature_channels": cfg.feature_channels,
        "sigma_h": cfg.sigma,
        "image_size": image_size,
        "seed": cfg.seed,
        "iteration": cfg.iterations,
    }
    with open(path.with_suffix(path.suffix + ".json"), "w") as f:
        json.dump(sidecar, f, indent=1)


def load_perception(path: Path | str) -> tuple[Transporter, dict]:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as f:
        sidecar = json.load(f)
    model = Transporter(sidecar["n_keypoints"], sidecar["feature_channels"], sidecar["sigma_h"])
    model.load_state_dict(torch.load(path, weights_only=True)["state_dict"])
    model.eval()
    return model, sidecar


def detect_episode_keypoints(model: Transporter, frames: np.ndarray) -> np.ndarray:
    """Detector coords for every frame of one episode -> [T, N, 2] float32."""
    model.eval()
    out = []
    with torch.no_grad():
        for t in range(0, frames.shape[0], 64):
            batch = torch.stack([image_to_tensor(f) for f in frames[t : t + 64]])
            coords, _ = model.detect(batch)
            out.append(coords.numpy())
    return np.concatenate(out).astype(np.float32)


def keypoint_center_distance(
    coords: np.ndarray, states: np.ndarray, arena_w: float, arena_h: float
) -> float:
    """Mean Hungarian-matched distance (world units) between detected keypoints
    and true body centers, averaged over frames."""
    from scipy.optimize import linear_sum_assignment

    world = np.empty_like(coords, dtype=np.float64)
    world[..., 0] = (coords[..., 0] + 1.0) * 0.5 * arena_w
    world[..., 1] = (coords[..., 1] + 1.0) * 0.5 * arena_h
    dists = []
    for t in range(coords.shape[0]):
        cost = np.linalg.norm(world[t][:, None, :] - states[t, :, :2][None, :, :], axis=2)
        rows, cols = linear_sum_assignment(cost)
        dists.append(cost[rows, cols].mean())
    return float(np.mean(dists))
