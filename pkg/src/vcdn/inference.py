"""One-shot interaction-graph inference from keypoint sequences.

Each frame's keypoints (with finite-difference velocities) pass through a
shared graph encoder on the fully connected zero-attribute edge set. Temporal
convolutions with max-pooling compress the per-frame node and edge embeddings
into summaries of fixed size, from which per-ordered-pair heads predict a
categorical distribution over edge types (index 0 is the null type) and a
continuous parameter for non-null pairs. Sampling uses the Gumbel-Softmax
relaxation with optional straight-through hard samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .graphnet import InteractionEncoder, full_edge_index, mlp, ordered_pairs


class TooShortSequenceError(ValueError):
    pass


class InvalidTemperatureError(ValueError):
    pass


MIN_FRAMES = 5  # receptive field of the temporal conv stack


@dataclass
class EdgePosterior:
    """Per-ordered-pair type distribution and (masked) continuous parameters."""

    pairs: list[tuple[int, int]]
    logits: np.ndarray  # [E, K]
    probs: np.ndarray  # [E, K], rows sum to 1
    params: np.ndarray  # [E, P], zero where masked
    param_mask: np.ndarray  # [E] bool, False for pairs sampled as null

    @property
    def entropy(self) -> np.ndarray:
        p = np.clip(self.probs, 1e-12, None)
        return -(p * np.log(p)).sum(axis=1)


@dataclass
class SampledEdgeSet:
    """One Gumbel-Softmax draw per ordered pair plus parameters and temperature."""

    pairs: list[tuple[int, int]]
    types: np.ndarray  # [E, K] one-hot (hard) or simplex (relaxed)
    params: np.ndarray  # [E, P], zero for null-sampled pairs
    tau: float


class TemporalConv(nn.Module):
    """Three dilated conv blocks then max over time: [B, D, T] -> [B, out].

    Same-padded kernels with dilations (1, 2, 4) span ~29 frames so a single
    pooled feature can witness a sizable fraction of an oscillation period,
    while sequences as short as MIN_FRAMES still produce full-length outputs.
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, norm: bool = False):
        super().__init__()
        self.conv1 = nn.Conv1d(in_dim, hidden, kernel_size=5, padding=2)
        self.conv2 = nn.Conv1d(hidden, hidden, kernel_size=5, padding=4, dilation=2)
        self.conv3 = nn.Conv1d(hidden, out_dim, kernel_size=5, padding=8, dilation=4)
        self.norm1 = nn.GroupNorm(1, hidden) if norm else nn.Identity()
        self.norm2 = nn.GroupNorm(1, hidden) if norm else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.norm1(torch.relu(self.conv1(x)))
        x = self.norm2(torch.relu(self.conv2(x)))
        x = self.conv3(x)
        return x.max(dim=-1).values


def velocity_augment(kp_seq: torch.Tensor) -> torch.Tensor:
    """Append per-frame displacement to coordinates: [B, T, N, 2] -> [B, T, N, 4].

    The first frame gets zero velocity.
    """
    vel = torch.zeros_like(kp_seq)
    vel[:, 1:] = kp_seq[:, 1:] - kp_seq[:, :-1]
    return torch.cat([kp_seq, vel], dim=-1)


class GraphInference(nn.Module):
    def __init__(
        self,
        edge_types: int = 3,
        param_dim: int = 1,
        hidden: int = 64,
        rounds: int = 2,
    ):
        super().__init__()
        if edge_types < 2:
            raise ValueError("need at least a null and one interacting edge type")
        self.edge_types = edge_types
        self.param_dim = param_dim
        self.hidden = hidden
        self.encoder = InteractionEncoder(
            node_dim=4, edge_dim=0, hidden=hidden, rounds=rounds, norm=True
        )
        self.cnn_obj = TemporalConv(hidden, hidden, hidden, norm=True)
        self.cnn_rel = TemporalConv(hidden, hidden, hidden, norm=True)
        self.head_type = mlp(3 * hidden, hidden, edge_types, norm=True)
        self.head_param = mlp(3 * hidden, hidden, param_dim, norm=True)

    def encode_frames(self, kp_seq: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-frame embeddings: [B, T, N, 2] -> ([B, T, N, D], [B, T, E, D])."""
        b, t, n, _ = kp_seq.shape
        nodes = velocity_augment(kp_seq).reshape(b * t, n, 4)
        recv, send = full_edge_index(n, device=kp_seq.device)
        h_nodes, h_edges = self.encoder(nodes, None, recv, send)
        return (
            h_nodes.reshape(b, t, n, self.hidden),
            h_edges.reshape(b, t, recv.numel(), self.hidden),
        )

    def aggregate_time(
        self, h_nodes: torch.Tensor, h_edges: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Summaries independent of sequence length: -> ([B, N, D], [B, E, D])."""
        b, t, n, d = h_nodes.shape
        if t < MIN_FRAMES:
            raise TooShortSequenceError(f"need at least {MIN_FRAMES} frames, got {t}")
        node_sum = self.cnn_obj(h_nodes.permute(0, 2, 3, 1).reshape(b * n, d, t))
        out = [node_sum.reshape(b, n, -1)]
        e = h_edges.shape[2]
        if e:
            edge_sum = self.cnn_rel(h_edges.permute(0, 2, 3, 1).reshape(b * e, d, t))
            out.append(edge_sum.reshape(b, e, -1))
        else:
            out.append(h_edges.new_zeros(b, 0, self.hidden))
        return out[0], out[1]

    def _pair_features(self, node_sum: torch.Tensor, edge_sum: torch.Tensor) -> torch.Tensor:
        n = node_sum.shape[1]
        if n < 2:
            raise ValueError("edge heads need at least two keypoints")
        recv, send = full_edge_index(n, device=node_sum.device)
        return torch.cat([node_sum[:, recv], node_sum[:, send], edge_sum], dim=-1)

    def edge_type_logits(self, node_sum, edge_sum) -> torch.Tensor:
        """K logits per ordered pair: -> [B, E, K]."""
        return self.head_type(self._pair_features(node_sum, edge_sum))

    def edge_params(self, node_sum, edge_sum, sampled_types: torch.Tensor) -> torch.Tensor:
        """Continuous parameters, exactly zero for null-sampled pairs: [B, E, P]."""
        raw = self.head_param(self._pair_features(node_sum, edge_sum))
        gate = 1.0 - sampled_types[..., 0:1]
        return raw * gate

    def posterior_logits(self, kp_seq: torch.Tensor) -> torch.Tensor:
        """[B, T, N, 2] -> [B, E, K] edge-type logits."""
        h_nodes, h_edges = self.encode_frames(kp_seq)
        node_sum, edge_sum = self.aggregate_time(h_nodes, h_edges)
        return self.edge_type_logits(node_sum, edge_sum)


def sample_gumbel(
    shape, generator: torch.Generator | None = None, dtype=torch.float32
) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    return -torch.log(-torch.log(u + 1e-20) + 1e-20)


def gumbel_softmax(
    logits: torch.Tensor,
    tau: float,
    generator: torch.Generator | None = None,
    hard: bool = True,
) -> torch.Tensor:
    """Differentiable categorical sample; hard draws are one-hot with
    straight-through gradients of the relaxed sample."""
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    noise = sample_gumbel(logits.shape, generator=generator, dtype=logits.dtype)
    y = torch.softmax((logits + noise) / tau, dim=-1)
    if not hard:
        return y
    idx = y.argmax(dim=-1, keepdim=True)
    y_hard = torch.zeros_like(y).scatter_(-1, idx, 1.0)
    return y_hard + (y - y.detach())  # exact one-hot forward, relaxed gradient


def infer(
    kp_seq: torch.Tensor | np.ndarray,
    model: GraphInference,
    tau: float = 0.5,
    generator: torch.Generator | None = None,
    hard: bool = True,
) -> tuple[EdgePosterior, SampledEdgeSet]:
    """Posterior and one sampled edge set for a single sequence [T, N, 2]."""
    if isinstance(kp_seq, np.ndarray):
        kp_seq = torch.from_numpy(kp_seq).float()
    if kp_seq.dim() != 3:
        raise ValueError(f"expected [T, N, 2], got shape {tuple(kp_seq.shape)}")
    n = kp_seq.shape[1]
    model.eval()
    with torch.no_grad():
        h_nodes, h_edges = model.encode_frames(kp_seq.unsqueeze(0))
        node_sum, edge_sum = model.aggregate_time(h_nodes, h_edges)
        logits = model.edge_type_logits(node_sum, edge_sum)
        types = gumbel_softmax(logits, tau, generator=generator, hard=hard)
        params = model.edge_params(node_sum, edge_sum, types)
    pairs = ordered_pairs(n)
    probs = torch.softmax(logits, dim=-1)
    null_mask = types[0, :, 0] > 0.5
    posterior = EdgePosterior(
        pairs=pairs,
        logits=logits[0].numpy(),
        probs=probs[0].numpy(),
        params=params[0].numpy(),
        param_mask=~null_mask.numpy(),
    )
    sampled = SampledEdgeSet(pairs=pairs, types=types[0].numpy(), params=params[0].numpy(), tau=tau)
    return posterior, sampled


def map_edges(
    kp_seq: torch.Tensor | np.ndarray, model: GraphInference
) -> tuple[EdgePosterior, SampledEdgeSet]:
    """Deterministic maximum-probability edge set (no sampling); used at eval."""
    if isinstance(kp_seq, np.ndarray):
        kp_seq = torch.from_numpy(kp_seq).float()
    n = kp_seq.shape[1]
    model.eval()
    with torch.no_grad():
        h_nodes, h_edges = model.encode_frames(kp_seq.unsqueeze(0))
        node_sum, edge_sum = model.aggregate_time(h_nodes, h_edges)
        logits = model.edge_type_logits(node_sum, edge_sum)
        types = torch.zeros_like(logits).scatter_(-1, logits.argmax(dim=-1, keepdim=True), 1.0)
        params = model.edge_params(node_sum, edge_sum, types)
    pairs = ordered_pairs(n)
    probs = torch.softmax(logits, dim=-1)
    posterior = EdgePosterior(
        pairs=pairs,
        logits=logits[0].numpy(),
        probs=probs[0].numpy(),
        params=params[0].numpy(),
        param_mask=types[0, :, 0].numpy() < 0.5,
    )
    sampled = SampledEdgeSet(pairs=pairs, types=types[0].numpy(), params=params[0].numpy(), tau=0.0)
    return posterior, sampled
