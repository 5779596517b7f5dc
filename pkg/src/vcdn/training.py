"""Joint training of the graph-inference and dynamics modules.

The objective is a Gaussian rollout negative log-likelihood over a short
prediction horizon plus a KL term pulling every ordered pair's edge-type
posterior toward a factorized prior (null-favoring by default, which acts as
a sparsity pressure on the discovered graph). Edges are drawn once per episode
per step with hard straight-through Gumbel-Softmax samples. A graph-blind
baseline trains the same dynamics on a fully connected single-type edge set.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dynamics import GraphDynamics, fully_connected_edges, gaussian_nll, rollout_batch
from .inference import GraphInference, gumbel_softmax
from .sim import dataset as ds


@dataclass
class JointTrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    iterations: int = 20_000
    tau: float = 0.5
    kl_beta: float = 1.0
    prior: tuple[float, ...] = (0.5, 0.25, 0.25)
    t_obs_min: int = 5
    t_obs_max: int = 50
    horizon: int = 10
    single_step: bool = False
    grad_clip: float = 5.0
    log_every: int = 500
    seed: int = 0
    edge_types: int = 3
    param_dim: int = 1
    hidden: int = 64
    rounds: int = 2
    history: int = 2
    var_floor: float = 1e-4

    def __post_init__(self):
        if abs(sum(self.prior) - 1.0) > 1e-9:
            raise ValueError("prior must sum to 1")
        if len(self.prior) != self.edge_types:
            raise ValueError("prior length must equal the number of edge types")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.t_obs_min < 5:
            raise ValueError("observation window must cover the temporal receptive field")


def kl_categorical(logits: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
    """KL(q || p) per row, summed over all rows; logits [..., K], prior [K]."""
    logq = torch.log_softmax(logits, dim=-1)
    q = logq.exp()
    return (q * (logq - torch.log(prior))).sum()


def normalized_keypoints(states: np.ndarray, arena_w: float, arena_h: float) -> np.ndarray:
    """World positions -> [-1, 1]^2 keypoint coordinates, [T, N, 2] float32."""
    kp = np.empty(states.shape[:-1] + (2,), dtype=np.float32)
    kp[..., 0] = states[..., 0] * (2.0 / arena_w) - 1.0
    kp[..., 1] = states[..., 1] * (2.0 / arena_h) - 1.0
    return kp


@dataclass
class EpisodeBank:
    """In-memory keypoint sequences plus generating graphs for one split."""

    keypoints: np.ndarray  # [n_eps, T, N, 2] float32, normalized coords
    graphs: list
    indices: list[int]
    sim: dict

    @classmethod
    def from_dataset(
        cls, root, split: str, mode: str = "gt", perception=None
    ) -> "EpisodeBank":
        manifest = ds.load_manifest(root)
        idx = ds.split_indices(manifest, split)
        sim = manifest["sim"]
        seqs, graphs = [], []
        for e in idx:
            graphs.append(ds.load_graph(root, e))
            if mode == "gt":
                states = ds.load_states(root, e, manifest)
                seqs.append(normalized_keypoints(states, sim["arena_w"], sim["arena_h"]))
            elif mode == "learned":
                if perception is None:
                    raise ValueError("learned-keypoints mode needs a perception model")
                from .perception import detect_episode_keypoints

                seqs.append(detect_episode_keypoints(perception, ds.load_frames(root, e)))
            else:
                raise ValueError(f"unknown keypoint mode {mode!r}")
        return cls(keypoints=np.stack(seqs), graphs=graphs, indices=idx, sim=sim)

    @property
    def n_bodies(self) -> int:
        return self.keypoints.shape[2]


def _sample_windows(bank: EpisodeBank, cfg: JointTrainConfig, rng: np.random.Generator):
    horizon = 1 if cfg.single_step else cfg.horizon
    t_total = bank.keypoints.shape[1]
    t_obs = int(rng.integers(cfg.t_obs_min, min(cfg.t_obs_max, t_total - horizon) + 1))
    eps = rng.integers(0, bank.keypoints.shape[0], size=cfg.batch_size)
    starts = rng.integers(0, t_total - t_obs - horizon + 1, size=cfg.batch_size)
    windows = np.stack(
        [bank.keypoints[e, s : s + t_obs + horizon] for e, s in zip(eps, starts)]
    )
    return torch.from_numpy(windows), t_obs, horizon


def elbo_loss(
    inference: GraphInference,
    dynamics: GraphDynamics,
    windows: torch.Tensor,  # [B, t_obs + horizon, N, 2]
    t_obs: int,
    cfg: JointTrainConfig,
    generator: torch.Generator | None = None,
) -> tuple[torch.Tensor, dict]:
    """Rollout NLL plus beta-weighted KL to the edge prior, averaged per episode."""
    b = windows.shape[0]
    observed = windows[:, :t_obs]
    targets = windows[:, t_obs:]
    horizon = targets.shape[1]

    h_nodes, h_edges = inference.encode_frames(observed)
    node_sum, edge_sum = inference.aggregate_time(h_nodes, h_edges)
    logits = inference.edge_type_logits(node_sum, edge_sum)
    types = gumbel_softmax(logits, cfg.tau, generator=generator, hard=True)
    params = inference.edge_params(node_sum, edge_sum, types)

    means, variances = rollout_batch(dynamics, observed[:, -2:], types, params, horizon)
    nll = gaussian_nll(means, variances, targets) / b
    prior = torch.as_tensor(cfg.prior, dtype=logits.dtype)
    kl = kl_categorical(logits, prior) / b
    loss = nll + cfg.kl_beta * kl
    return loss, {"nll": nll.item(), "kl": kl.item(), "loss": loss.item()}


def baseline_loss(
    dynamics: GraphDynamics,
    windows: torch.Tensor,
    t_obs: int,
    cfg: JointTrainConfig,
) -> tuple[torch.Tensor, dict]:
    """Same rollout NLL with a fully connected single-type, zero-parameter graph."""
    b, _, n, _ = windows.shape
    observed = windows[:, :t_obs]
    targets = windows[:, t_obs:]
    types, params = fully_connected_edges(n, cfg.edge_types, cfg.param_dim)
    types = types.expand(b, -1, -1)
    params = params.expand(b, -1, -1)
    means, variances = rollout_batch(dynamics, observed[:, -2:], types, params, targets.shape[1])
    nll = gaussian_nll(means, variances, targets) / b
    return nll, {"nll": nll.item(), "loss": nll.item()}


def _train(models, loss_fn, bank, cfg, tag: str):
    params = [p for m in models for p in m.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed + 1)
    log, window = [], []
    for m in models:
        m.train()
    for it in range(1, cfg.iterations + 1):
        windows, t_obs, _ = _sample_windows(bank, cfg, rng)
        loss, parts = loss_fn(windows, t_obs, generator)
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()
        window.append(parts)
        if it % cfg.log_every == 0 or it == cfg.iterations:
            entry = {"iteration": it, "tag": tag}
            for key in window[0]:
                entry[key] = float(np.mean([w[key] for w in window]))
            log.append(entry)
            window = []
    return log


def train_joint(
    bank: EpisodeBank, cfg: JointTrainConfig
) -> tuple[GraphInference, GraphDynamics, list[dict]]:
    """Train inference + dynamics end to end on one episode bank."""
    torch.manual_seed(cfg.seed)
    inference = GraphInference(cfg.edge_types, cfg.param_dim, cfg.hidden, cfg.rounds)
    dynamics = GraphDynamics(cfg.edge_types, cfg.param_dim, cfg.hidden, cfg.history, cfg.var_floor)

    def loss_fn(windows, t_obs, generator):
        return elbo_loss(inference, dynamics, windows, t_obs, cfg, generator)

    log = _train([inference, dynamics], loss_fn, bank, cfg, tag="joint")
    return inference, dynamics, log


def train_baseline_no_inference(
    bank: EpisodeBank, cfg: JointTrainConfig
) -> tuple[GraphDynamics, list[dict]]:
    """Same dynamics and budget, no inference module, no KL term."""
    torch.manual_seed(cfg.seed)
    dynamics = GraphDynamics(cfg.edge_types, cfg.param_dim, cfg.hidden, cfg.history, cfg.var_floor)

    def loss_fn(windows, t_obs, generator):
        return baseline_loss(dynamics, windows, t_obs, cfg)

    log = _train([dynamics], loss_fn, bank, cfg, tag="baseline")
    return dynamics, log


def save_bundle(
    out_dir: Path | str,
    cfg: JointTrainConfig,
    inference: GraphInference | None = None,
    dynamics: GraphDynamics | None = None,
    baseline: GraphDynamics | None = None,
    log: list[dict] | None = None,
):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if inference is not None:
        torch.save({"state_dict": inference.state_dict()}, out / "inference.pt")
        sidecar = {
            "edge_types": cfg.edge_types,
            "param_dim": cfg.param_dim,
            "hidden": cfg.hidden,
            "rounds": cfg.rounds,
            "tau": cfg.tau,
            "min_frames": cfg.t_obs_min,
            "seed": cfg.seed,
        }
        (out / "inference.pt.json").write_text(json.dumps(sidecar, indent=1))
    for name, model in (("dynamics", dynamics), ("baseline", baseline)):
        if model is None:
            continue
        torch.save({"state_dict": model.state_dict()}, out / f"{name}.pt")
        sidecar = {
            "edge_types": model.edge_types,
            "param_dim": model.param_dim,
            "hidden": model.hidden,
            "history": model.history,
            "var_floor": model.var_floor,
        }
        (out / f"{name}.pt.json").write_text(json.dumps(sidecar, indent=1))
    (out / "train_config.json").write_text(json.dumps(asdict(cfg), indent=1))
    if log is not None:
        (out / "train_log.json").write_text(json.dumps(log, indent=1))


def load_bundle(out_dir: Path | str):
    """Load whatever checkpoints exist under a bundle directory."""
    out = Path(out_dir)
    inference = dynamics = baseline = None
    if (out / "inference.pt").exists():
        meta = json.loads((out / "inference.pt.json").read_text())
        inference = GraphInference(
            meta["edge_types"], meta["param_dim"], meta["hidden"], meta["rounds"]
        )
        inference.load_state_dict(
            torch.load(out / "inference.pt", weights_only=True)["state_dict"]
        )
        inference.eval()
    for name in ("dynamics", "baseline"):
        if not (out / f"{name}.pt").exists():
            continue
        meta = json.loads((out / f"{name}.pt.json").read_text())
        model = GraphDynamics(
            meta["edge_types"],
            meta["param_dim"],
            meta["hidden"],
            meta["history"],
            meta["var_floor"],
        )
        model.load_state_dict(torch.load(out / f"{name}.pt", weights_only=True)["state_dict"])
        model.eval()
        if name == "dynamics":
            dynamics = model
        else:
            baseline = model
    return inference, dynamics, baseline
