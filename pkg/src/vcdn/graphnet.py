"""Interaction-network message passing over keypoint graphs.

Graphs are dense batches: node attributes [B, N, Dn], directed edges listed in
canonical order (sorted by (receiver, sender), no self-edges) with attributes
[B, E, De]. A relation MLP maps (receiver, sender, edge attribute) to a
message; messages are summed per receiver and combined with the node attribute
by an object MLP. Stacking rounds re-injects the original node attributes by
concatenation at every round.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def mlp(in_dim: int, hidden: int, out_dim: int, norm: bool = False) -> nn.Sequential:
    """Two-hidden-layer perceptron used for all relation/object encoders.

    With ``norm``, each hidden activation is layer-normalized (per sample, so
    purity and permutation equivariance are unaffected); deep inference stacks
    do not train reliably without it.
    """
    layers: list[nn.Module] = [nn.Linear(in_dim, hidden), nn.ReLU()]
    if norm:
        layers.append(nn.LayerNorm(hidden))
    layers += [nn.Linear(hidden, hidden), nn.ReLU()]
    if norm:
        layers.append(nn.LayerNorm(hidden))
    layers.append(nn.Linear(hidden, out_dim))
    return nn.Sequential(*layers)


def full_edge_index(n: int, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """All N*(N-1) directed pairs (receiver, sender), sorted by (i, j)."""
    recv, send = [], []
    for i in range(n):
        for j in range(n):
            if i != j:
                recv.append(i)
                send.append(j)
    return (
        torch.tensor(recv, dtype=torch.long, device=device),
        torch.tensor(send, dtype=torch.long, device=device),
    )


def ordered_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(n) if i != j]


def relation_messages(
    nodes: torch.Tensor,
    edge_attr: torch.Tensor | None,
    recv: torch.Tensor,
    send: torch.Tensor,
    f_rel: nn.Module,
) -> torch.Tensor:
    """Per-edge message f_rel(o_recv, o_send, g) -> [B, E, D]."""
    if recv.numel() == 0:
        hidden = f_rel[-1].out_features
        return nodes.new_zeros(nodes.shape[0], 0, hidden)
    parts = [nodes[:, recv], nodes[:, send]]
    if edge_attr is not None and edge_attr.shape[-1] > 0:
        parts.append(edge_attr)
    return f_rel(torch.cat(parts, dim=-1))


def node_update(
    nodes: torch.Tensor,
    messages: torch.Tensor,
    recv: torch.Tensor,
    f_obj: nn.Module,
) -> torch.Tensor:
    """Per-node update f_obj(o_i, sum of incoming messages) -> [B, N, D].

    Nodes without incoming edges see a zero aggregate.
    """
    hidden = messages.shape[-1]
    agg = nodes.new_zeros(nodes.shape[0], nodes.shape[1], hidden)
    if recv.numel():
        agg.index_add_(1, recv, messages)
    return f_obj(torch.cat([nodes, agg], dim=-1))


class InteractionLayer(nn.Module):
    """One relation-messages + node-update pass."""

    def __init__(self, node_dim: int, edge_dim: int, hidden: int, out_dim: int, norm: bool = False):
        super().__init__()
        self.f_rel = mlp(2 * node_dim + edge_dim, hidden, out_dim, norm=norm)
        self.f_obj = mlp(node_dim + out_dim, hidden, out_dim, norm=norm)

    def forward(self, nodes, edge_attr, recv, send):
        h_edges = relation_messages(nodes, edge_attr, recv, send, self.f_rel)
        h_nodes = node_update(nodes, h_edges, recv, self.f_obj)
        return h_nodes, h_edges


class InteractionEncoder(nn.Module):
    """Multi-round message passing with untied per-round weights.

    Round 1 sees the raw node attributes; later rounds see the previous
    round's node embeddings concatenated with the originals. Edge attributes
    are fed to every round unchanged. Returns final node and edge embeddings.
    """

    def __init__(
        self, node_dim: int, edge_dim: int, hidden: int = 64, rounds: int = 2, norm: bool = False
    ):
        super().__init__()
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.rounds = rounds
        layers = [InteractionLayer(node_dim, edge_dim, hidden, hidden, norm=norm)]
        for _ in range(rounds - 1):
            layers.append(InteractionLayer(node_dim + hidden, edge_dim, hidden, hidden, norm=norm))
        self.layers = nn.ModuleList(layers)

    def forward(self, nodes, edge_attr, recv, send):
        h_nodes, h_edges = self.layers[0](nodes, edge_attr, recv, send)
        for layer in self.layers[1:]:
            h_nodes, h_edges = layer(torch.cat([nodes, h_nodes], dim=-1), edge_attr, recv, send)
        return h_nodes, h_edges
