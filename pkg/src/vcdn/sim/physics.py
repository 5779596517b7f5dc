"""Deterministic 2-D multi-body integrator.

Bodies are unit-mass discs in a rectangular arena. Springs pull pairs toward
a rest length; rigid rods confine pair distance to a window [L-w, L+w] via
symmetric position projection plus cancellation of the violating radial
relative velocity. Walls reflect elastically at the disc radius. States are
arrays of shape [N, 4] with rows (x, y, vx, vy) in world units.

One compiled kernel performs all substeps; `step` and `simulate_episode` share
it, so a recorded episode is bitwise-reproducible by re-stepping frame 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .graph import CausalSummaryGraph, EdgeType


class PlacementError(RuntimeError):
    """Rejection sampling could not place non-overlapping bodies."""


@dataclass(frozen=True)
class SimConfig:
    n_bodies: int = 3
    arena_w: float = 128.0
    arena_h: float = 128.0
    dt: float = 0.02
    substeps: int = 48
    spring_k: float = 20.0
    rigid_half_window: float = 5.0
    ball_radius: float = 6.0
    episode_len: int = 500
    render: bool = False
    image_size: int = 64
    init_speed: float = 30.0

    def __post_init__(self):
        checks = [
            (self.n_bodies >= 1, "n_bodies must be >= 1"),
            (self.arena_w > 0 and self.arena_h > 0, "arena dimensions must be positive"),
            (self.dt > 0, "dt must be positive"),
            (self.substeps >= 1, "substeps must be >= 1"),
            (self.spring_k > 0, "spring_k must be positive"),
            (self.rigid_half_window > 0, "rigid_half_window must be positive"),
            (self.ball_radius > 0, "ball_radius must be positive"),
            (self.episode_len >= 1, "episode_len must be >= 1"),
            (self.image_size >= 8, "image_size must be >= 8"),
            (self.init_speed >= 0, "init_speed must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass(frozen=True)
class Episode:
    graph: CausalSummaryGraph
    states: np.ndarray  # [T, N, 4] float64, rows (x, y, vx, vy)
    seed: int
    frames: np.ndarray | None = None  # [T, H, W, 3] uint8 when rendered

    @property
    def length(self) -> int:
        return self.states.shape[0]


def _edge_arrays(graph: CausalSummaryGraph, edge_type: EdgeType):
    """(i, j, param) index/parameter arrays for edges of one type."""
    sel = [e for e in graph.edges if e.type == edge_type]
    i = np.array([e.i for e in sel], dtype=np.int64)
    j = np.array([e.j for e in sel], dtype=np.int64)
    p = np.array([e.param for e in sel], dtype=np.float64)
    return i, j, p


@numba.njit(cache=True)
def _substeps_kernel(pos, vel, si, sj, sL, ri, rj, rL, k, w, radius, aw, ah, h, n_sub):
    n = pos.shape[0]
    fx = np.empty(n, dtype=np.float64)
    fy = np.empty(n, dtype=np.float64)
    for _ in range(n_sub):
        # spring forces from pre-substep positions (coincident pairs exert none)
        fx[:] = 0.0
        fy[:] = 0.0
        for e in range(si.shape[0]):
            a, b = si[e], sj[e]
            dx = pos[a, 0] - pos[b, 0]
            dy = pos[a, 1] - pos[b, 1]
            dist = math.sqrt(dx * dx + dy * dy)
            if dist > 1e-12:
                c = -k * (dist - sL[e]) / dist
                fx[a] += c * dx
                fy[a] += c * dy
                fx[b] -= c * dx
                fy[b] -= c * dy
        for b in range(n):
            vel[b, 0] += h * fx[b]
            vel[b, 1] += h * fy[b]
            pos[b, 0] += h * vel[b, 0]
            pos[b, 1] += h * vel[b, 1]
        # elastic wall reflection of disc centers
        for b in range(n):
            if pos[b, 0] < radius:
                pos[b, 0] = 2.0 * radius - pos[b, 0]
                vel[b, 0] = -vel[b, 0]
            elif pos[b, 0] > aw - radius:
                pos[b, 0] = 2.0 * (aw - radius) - pos[b, 0]
                vel[b, 0] = -vel[b, 0]
            if pos[b, 1] < radius:
                pos[b, 1] = 2.0 * radius - pos[b, 1]
                vel[b, 1] = -vel[b, 1]
            elif pos[b, 1] > ah - radius:
                pos[b, 1] = 2.0 * (ah - radius) - pos[b, 1]
                vel[b, 1] = -vel[b, 1]
        # rigid windows: symmetric projection + removal of violating radial velocity
        for e in range(ri.shape[0]):
            a, b = ri[e], rj[e]
            dx = pos[a, 0] - pos[b, 0]
            dy = pos[a, 1] - pos[b, 1]
            dist = math.sqrt(dx * dx + dy * dy)
            if dist <= 1e-12:
                continue
            lo = rL[e] - w
            hi = rL[e] + w
            if dist > hi:
                bound = hi
                sign = 1.0
            elif dist < lo:
                bound = lo
                sign = -1.0
            else:
                continue
            ux = dx / dist
            uy = dy / dist
            corr = 0.5 * (bound - dist)
            pos[a, 0] += corr * ux
            pos[a, 1] += corr * uy
            pos[b, 0] -= corr * ux
            pos[b, 1] -= corr * uy
            vr = (vel[a, 0] - vel[b, 0]) * ux + (vel[a, 1] - vel[b, 1]) * uy
            if vr * sign > 0.0:
                half = 0.5 * vr
                vel[a, 0] -= half * ux
                vel[a, 1] -= half * uy
                vel[b, 0] += half * ux
                vel[b, 1] += half * uy


def _step_arrays(states: np.ndarray, edges, cfg: SimConfig) -> np.ndarray:
    (si, sj, sL), (ri, rj, rL) = edges
    out = np.ascontiguousarray(states, dtype=np.float64).copy()
    pos, vel = out[:, :2], out[:, 2:]
    _substeps_kernel(
        pos, vel, si, sj, sL, ri, rj, rL,
        cfg.spring_k, cfg.rigid_half_window, cfg.ball_radius,
        cfg.arena_w, cfg.arena_h, cfg.dt / cfg.substeps, cfg.substeps,
    )
    return out


def _graph_edges(graph: CausalSummaryGraph):
    return _edge_arrays(graph, EdgeType.SPRING), _edge_arrays(graph, EdgeType.RIGID)


def step(states: np.ndarray, graph: CausalSummaryGraph, cfg: SimConfig) -> np.ndarray:
    """Advance all bodies by one frame (cfg.substeps semi-implicit Euler substeps)."""
    states = np.asarray(states, dtype=np.float64)
    if states.shape != (graph.n_bodies, 4):
        raise ValueError(f"expected states of shape ({graph.n_bodies}, 4), got {states.shape}")
    return _step_arrays(states, _graph_edges(graph), cfg)


def total_energy(states: np.ndarray, graph: CausalSummaryGraph, cfg: SimConfig) -> float:
    """Kinetic plus spring potential energy (unit masses)."""
    states = np.asarray(states, dtype=np.float64)
    kinetic = 0.5 * (states[:, 2:] ** 2).sum()
    potential = 0.0
    si, sj, sL = _edge_arrays(graph, EdgeType.SPRING)
    if si.size:
        d = states[si, :2] - states[sj, :2]
        dist = np.sqrt((d * d).sum(axis=1))
        potential = 0.5 * cfg.spring_k * ((dist - sL) ** 2).sum()
    return float(kinetic + potential)


def near_wall(states: np.ndarray, cfg: SimConfig, margin: float = 1.0) -> bool:
    """True when any body center is within ``margin`` of its reflective bound."""
    pos = np.asarray(states)[:, :2]
    r = cfg.ball_radius
    for axis, extent in ((0, cfg.arena_w), (1, cfg.arena_h)):
        if (pos[:, axis] < r + margin).any() or (pos[:, axis] > extent - r - margin).any():
            return True
    return False


def sample_initial_state(
    graph: CausalSummaryGraph, cfg: SimConfig, rng: np.random.Generator, max_tries: int = 1000
) -> np.ndarray:
    """Place bodies without overlap and settle rigid rods into their windows.

    Positions are uniform over the arena interior (one disc radius of margin),
    rejected until all pairs are at least one diameter apart. Velocities are
    uniform per axis in [-init_speed, init_speed].
    """
    n, r = cfg.n_bodies, cfg.ball_radius
    lo = np.array([r, r])
    hi = np.array([cfg.arena_w - r, cfg.arena_h - r])
    pos = None
    for _ in range(max_tries):
        cand = rng.uniform(lo, hi, size=(n, 2))
        if n == 1:
            pos = cand
            break
        diff = cand[:, None, :] - cand[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        dist[np.arange(n), np.arange(n)] = np.inf
        if dist.min() >= 2 * r:
            pos = cand
            break
    if pos is None:
        raise PlacementError(f"could not place {n} bodies after {max_tries} tries")
    vel = rng.uniform(-cfg.init_speed, cfg.init_speed, size=(n, 2))
    states = np.concatenate([pos, vel], axis=1)

    # settle rigid windows so the first frame starts feasible
    ri, rj, rL = _edge_arrays(graph, EdgeType.RIGID)
    w = cfg.rigid_half_window
    for _ in range(500 if ri.size else 0):
        worst = 0.0
        for e in range(ri.size):
            a, b = ri[e], rj[e]
            d = states[a, :2] - states[b, :2]
            dist = float(np.sqrt((d * d).sum()))
            if dist <= 1e-12:
                continue
            target = min(max(dist, rL[e] - w), rL[e] + w)
            worst = max(worst, abs(target - dist))
            corr = 0.5 * (target - dist) / dist
            states[a, :2] += corr * d
            states[b, :2] -= corr * d
        np.clip(states[:, 0], r, cfg.arena_w - r, out=states[:, 0])
        np.clip(states[:, 1], r, cfg.arena_h - r, out=states[:, 1])
        if worst < 1e-9:
            break
    return states


def simulate_episode(
    cfg: SimConfig,
    graph: CausalSummaryGraph,
    rng: np.random.Generator,
    seed: int = 0,
) -> Episode:
    """Roll the simulator for cfg.episode_len frames from a sampled initial state."""
    if graph.n_bodies != cfg.n_bodies:
        raise ValueError("graph and config disagree on the number of bodies")
    edges = _graph_edges(graph)
    states = np.empty((cfg.episode_len, cfg.n_bodies, 4), dtype=np.float64)
    states[0] = sample_initial_state(graph, cfg, rng)
    for t in range(1, cfg.episode_len):
        states[t] = _step_arrays(states[t - 1], edges, cfg)
    frames = None
    if cfg.render:
        from .render import render_frame

        frames = np.stack([render_frame(states[t], cfg) for t in range(cfg.episode_len)])
    return Episode(graph=graph, states=states, seed=seed, frames=frames)
