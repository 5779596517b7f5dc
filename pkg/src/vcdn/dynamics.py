"""Graph-recurrent forward model over keypoints.

One interaction pass per step consumes the current keypoint state (position
plus last-frame displacement) and the sampled edge set; messages and edge
attributes of null-typed pairs are gated to exactly zero so nothing flows
through absent interactions. A per-node gated recurrent cell carries state
across steps, and a Gaussian head emits a position delta plus per-axis
variance (softplus, floored). Rollouts feed predicted means back in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .graphnet import full_edge_index, mlp, node_update, relation_messages
from .inference import SampledEdgeSet


@dataclass
class GaussianState:
    mean: np.ndarray  # [N, 2]
    var: np.ndarray  # [N, 2] diagonal variances >= floor


class GraphDynamics(nn.Module):
    def __init__(
        self,
        edge_types: int = 3,
        param_dim: int = 1,
        hidden: int = 64,
        history: int = 2,
        var_floor: float = 1e-4,
    ):
        super().__init__()
        self.edge_types = edge_types
        self.param_dim = param_dim
        self.hidden = hidden
        self.history = history
        self.var_floor = var_floor
        edge_dim = edge_types + param_dim
        self.f_rel = mlp(2 * 4 + edge_dim, hidden, hidden)
        self.f_obj = mlp(4 + hidden, hidden, hidden)
        self.cell = nn.GRUCell(hidden, hidden)
        self.head = mlp(hidden, hidden, 4)

    def init_hidden(self, batch: int, n: int, device=None, dtype=torch.float32) -> torch.Tensor:
        return torch.zeros(batch, n, self.hidden, device=device, dtype=dtype)

    def forward_step(
        self,
        kp_prev: torch.Tensor,  # [B, N, 2] previous positions
        kp_curr: torch.Tensor,  # [B, N, 2] current positions
        hidden: torch.Tensor,  # [B, N, H]
        edge_types: torch.Tensor,  # [B, E, K] one-hot or relaxed
        edge_params: torch.Tensor,  # [B, E, P]
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """One prediction step -> (mean [B, N, 2], var [B, N, 2], new hidden)."""
        b, n, _ = kp_curr.shape
        if edge_types.shape[1] != n * (n - 1):
            raise ValueError(
                f"edge set covers {edge_types.shape[1]} pairs, expected {n * (n - 1)}"
            )
        nodes = torch.cat([kp_curr, kp_curr - kp_prev], dim=-1)
        recv, send = full_edge_index(n, device=kp_curr.device)
        gate = 1.0 - edge_types[..., 0:1]  # zero for null pairs
        attr = torch.cat([edge_types, edge_params], dim=-1) * gate
        messages = relation_messages(nodes, attr, recv, send, self.f_rel) * gate
        h_nodes = node_update(nodes, messages, recv, self.f_obj)
        new_hidden = self.cell(h_nodes.reshape(b * n, -1), hidden.reshape(b * n, -1))
        new_hidden = new_hidden.reshape(b, n, -1)
        out = self.head(new_hidden)
        mean = kp_curr + out[..., :2]
        var = F.softplus(out[..., 2:]) + self.var_floor
        return mean, var, new_hidden


def rollout_batch(
    model: GraphDynamics,
    kp_hist: torch.Tensor,  # [B, >=2, N, 2] observed history (last two frames used)
    edge_types: torch.Tensor,
    edge_params: torch.Tensor,
    horizon: int,
    hidden: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Autoregressive prediction -> (means [B, H, N, 2], vars [B, H, N, 2]).

    Predicted means are fed back as inputs; variances are reported per step
    but never recycled.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    prev, curr = kp_hist[:, -2], kp_hist[:, -1]
    if hidden is None:
        hidden = model.init_hidden(
            kp_hist.shape[0], kp_hist.shape[2], device=kp_hist.device, dtype=kp_hist.dtype
        )
    means, variances = [], []
    for _ in range(horizon):
        mean, var, hidden = model.forward_step(prev, curr, hidden, edge_types, edge_params)
        means.append(mean)
        variances.append(var)
        prev, curr = curr, mean
    return torch.stack(means, dim=1), torch.stack(variances, dim=1)


def edge_tensors(sampled: SampledEdgeSet, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """SampledEdgeSet -> batched (types [1, E, K], params [1, E, P])."""
    types = torch.as_tensor(sampled.types, dtype=dtype).unsqueeze(0)
    params = torch.as_tensor(sampled.params, dtype=dtype).unsqueeze(0)
    return types, params


def fully_connected_edges(
    n: int, edge_types: int, param_dim: int, type_index: int = 1, dtype=torch.float32
) -> tuple[torch.Tensor, torch.Tensor]:
    """Single-type zero-parameter edge set used by the graph-blind baseline."""
    e = n * (n - 1)
    types = torch.zeros(1, e, edge_types, dtype=dtype)
    types[..., type_index] = 1.0
    params = torch.zeros(1, e, param_dim, dtype=dtype)
    return types, params


def forward(
    kp_history: np.ndarray | torch.Tensor,
    hidden: torch.Tensor | None,
    sampled: SampledEdgeSet,
    model: GraphDynamics,
) -> tuple[GaussianState, torch.Tensor]:
    """Single-sequence one-step prediction from the last two history frames."""
    kp = torch.as_tensor(np.asarray(kp_history), dtype=torch.float32)
    if kp.dim() != 3 or kp.shape[0] < 1:
        raise ValueError(f"expected [T, N, 2] history, got {tuple(kp.shape)}")
    if kp.shape[0] == 1:
        kp = kp.repeat(2, 1, 1)  # no displacement information available
    prev, curr = kp[-2].unsqueeze(0), kp[-1].unsqueeze(0)
    types, params = edge_tensors(sampled)
    if hidden is None:
        hidden = model.init_hidden(1, kp.shape[1])
    model.eval()
    with torch.no_grad():
        mean, var, new_hidden = model.forward_step(prev, curr, hidden, types, params)
    return GaussianState(mean=mean[0].numpy(), var=var[0].numpy()), new_hidden


def rollout(
    kp_history: np.ndarray | torch.Tensor,
    sampled: SampledEdgeSet,
    horizon: int,
    model: GraphDynamics,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-sequence rollout -> (means [H, N, 2], vars [H, N, 2])."""
    kp = torch.as_tensor(np.asarray(kp_history), dtype=torch.float32)
    if kp.dim() != 3:
        raise ValueError(f"expected [T, N, 2] history, got {tuple(kp.shape)}")
    if kp.shape[0] == 1:
        kp = kp.repeat(2, 1, 1)
    types, params = edge_tensors(sampled)
    model.eval()
    with torch.no_grad():
        means, variances = rollout_batch(model, kp.unsqueeze(0), types, params, horizon)
    return means[0].numpy(), variances[0].numpy()


def gaussian_nll(
    mean: torch.Tensor, var: torch.Tensor, target: torch.Tensor
) -> torch.Tensor:
    """Negative log-density of a diagonal Gaussian, summed over all entries.

    0.5 * sum[(x - mu)^2 / var + log var + log 2 pi].
    """
    if mean.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(mean.shape)} vs {tuple(target.shape)}")
    log2pi = float(np.log(2.0 * np.pi))
    return 0.5 * (((target - mean) ** 2) / var + torch.log(var) + log2pi).sum()


def gaussian_nll_state(pred: GaussianState, target: np.ndarray) -> float:
    return float(
        gaussian_nll(
            torch.as_tensor(pred.mean, dtype=torch.float64),
            torch.as_tensor(pred.var, dtype=torch.float64),
            torch.as_tensor(np.asarray(target), dtype=torch.float64),
        )
    )
