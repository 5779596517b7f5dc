"""Evaluation protocols: type mapping, discovery metrics, extrapolation,
latent-to-parameter regression, and counterfactual intervention scoring.

Latent edge types are unsupervised, so scoring against ground truth first fits
a global permutation over types (null fixed to null) that maximizes accuracy.
The continuous latent is likewise only identified up to an affine map, handled
by per-type linear regression onto the true parameter.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import torch

from .dynamics import GraphDynamics, fully_connected_edges, rollout_batch
from .graphnet import ordered_pairs
from .inference import GraphInference, SampledEdgeSet, map_edges
from .sim import CausalSummaryGraph, EdgeType, SimConfig, apply_intervention
from .sim import dataset as ds
from .sim.physics import _graph_edges, _step_arrays
from .training import EpisodeBank, normalized_keypoints


class SingularFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class TypeMapping:
    """Permutation from latent type indices to true types; null stays null."""

    perm: tuple[int, ...]

    def __post_init__(self):
        if self.perm[0] != 0 or sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError(f"invalid type permutation {self.perm}")

    def apply(self, latent_types: np.ndarray) -> np.ndarray:
        return np.asarray(self.perm)[np.asarray(latent_types)]


def fit_type_mapping(pred: np.ndarray, true: np.ndarray, k: int) -> TypeMapping:
    """Exhaustive search over the (k-1)! permutations fixing null -> null."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    best, best_acc = None, -1.0
    for tail in itertools.permutations(range(1, k)):
        perm = (0,) + tail
        acc = float((np.asarray(perm)[pred] == true).mean()) if pred.size else 0.0
        if acc > best_acc:
            best, best_acc = perm, acc
    return TypeMapping(perm=best)


def mapped_accuracy(pred: np.ndarray, true: np.ndarray, mapping: TypeMapping) -> float:
    if pred.size == 0:
        return 0.0
    return float((mapping.apply(pred) == true).mean())


def true_pair_types(graph: CausalSummaryGraph) -> np.ndarray:
    """Ground-truth type per ordered pair, in canonical pair order."""
    return np.array([int(graph.pair_type(i, j)) for i, j in ordered_pairs(graph.n_bodies)])


def true_pair_params(graph: CausalSummaryGraph) -> np.ndarray:
    out = []
    for i, j in ordered_pairs(graph.n_bodies):
        e = graph.edge_for(i, j)
        out.append(e.param if e is not None else 0.0)
    return np.array(out)


def _batched_map_edges(inference: GraphInference, windows: torch.Tensor):
    """Argmax types/params/probs for a batch of windows [B, T, N, 2]."""
    inference.eval()
    with torch.no_grad():
        h_nodes, h_edges = inference.encode_frames(windows)
        node_sum, edge_sum = inference.aggregate_time(h_nodes, h_edges)
        logits = inference.edge_type_logits(node_sum, edge_sum)
        types = torch.zeros_like(logits).scatter_(-1, logits.argmax(dim=-1, keepdim=True), 1.0)
        params = inference.edge_params(node_sum, edge_sum, types)
        probs = torch.softmax(logits, dim=-1)
    return types.numpy(), params.numpy(), probs.numpy()


def predict_split(inference: GraphInference, bank: EpisodeBank, t_obs: int):
    """Predictions over a whole bank at one window length.

    Returns dict with latent argmax types [B, E], params [B, E, P],
    probs [B, E, K], true types [B, E], true params [B, E].
    """
    windows = torch.from_numpy(bank.keypoints[:, :t_obs])
    types, params, probs = _batched_map_edges(inference, windows)
    true_t = np.stack([true_pair_types(g) for g in bank.graphs])
    true_p = np.stack([true_pair_params(g) for g in bank.graphs])
    return {
        "latent": types.argmax(axis=-1),
        "params": params,
        "probs": probs,
        "true_types": true_t,
        "true_params": true_p,
    }


def posterior_entropy(probs: np.ndarray) -> np.ndarray:
    p = np.clip(probs, 1e-12, None)
    return -(p * np.log(p)).sum(axis=-1)


def eval_graph_discovery(
    inference: GraphInference,
    bank: EpisodeBank,
    t_obs_list: list[int],
    mapping: TypeMapping | None = None,
) -> tuple[TypeMapping, dict[int, dict[str, float]]]:
    """Mapped accuracy and mean posterior entropy per observation length.

    The mapping is fit once, on this split at the longest window, then reused.
    """
    t_fit = max(t_obs_list)
    fit_pred = predict_split(inference, bank, t_fit)
    if mapping is None:
        mapping = fit_type_mapping(
            fit_pred["latent"].ravel(), fit_pred["true_types"].ravel(), inference.edge_types
        )
    curves = {}
    for t in sorted(t_obs_list):
        pred = fit_pred if t == t_fit else predict_split(inference, bank, t)
        curves[t] = {
            "accuracy": mapped_accuracy(pred["latent"].ravel(), pred["true_types"].ravel(), mapping),
            "entropy": float(posterior_entropy(pred["probs"]).mean()),
        }
    return mapping, curves


def eval_param_correlation(
    inference: GraphInference, bank: EpisodeBank, mapping: TypeMapping, t_obs: int
) -> dict[int, dict]:
    """Pearson correlation of the continuous latent with the true parameter,
    per non-null type, over correctly-typed ordered pairs."""
    pred = predict_split(inference, bank, t_obs)
    mapped = mapping.apply(pred["latent"])
    out = {}
    for t in range(1, inference.edge_types):
        sel = (mapped == t) & (pred["true_types"] == t)
        n = int(sel.sum())
        if n < 10:
            out[t] = {"r": None, "abs_r": None, "n": n}
            continue
        g = pred["params"][sel][:, 0]
        truth = pred["true_params"][sel]
        if g.std() < 1e-12 or truth.std() < 1e-12:
            out[t] = {"r": None, "abs_r": None, "n": n}
            continue
        r = float(np.corrcoef(g, truth)[0, 1])
        out[t] = {"r": r, "abs_r": abs(r), "n": n}
    return out


def collect_param_scatter(
    inference: GraphInference,
    bank: EpisodeBank,
    mapping: TypeMapping,
    t_obs: int,
    cap: int = 500,
) -> dict[int, dict[str, list[float]]]:
    """Latent/truth value pairs per type for the scatter panel."""
    pred = predict_split(inference, bank, t_obs)
    mapped = mapping.apply(pred["latent"])
    out = {}
    for t in range(1, inference.edge_types):
        sel = (mapped == t) & (pred["true_types"] == t)
        g = pred["params"][sel][:, 0][:cap]
        truth = pred["true_params"][sel][:cap]
        out[t] = {"latent": g.tolist(), "truth": truth.tolist()}
    return out


def fit_latent_to_param(
    inference: GraphInference, bank: EpisodeBank, mapping: TypeMapping, t_obs: int
) -> dict[int, tuple[float, float]]:
    """Per-type least-squares fit true_param ~ a * latent + b."""
    pred = predict_split(inference, bank, t_obs)
    mapped = mapping.apply(pred["latent"])
    maps = {}
    for t in range(1, inference.edge_types):
        sel = (mapped == t) & (pred["true_types"] == t)
        if sel.sum() < 2:
            continue
        g = pred["params"][sel][:, 0].astype(np.float64)
        truth = pred["true_params"][sel].astype(np.float64)
        if g.std() < 1e-12:
            raise SingularFitError(f"latent for type {t} is degenerate")
        a, b = np.polyfit(g, truth, deg=1)
        maps[t] = (float(a), float(b))
    return maps


def linear_fit_residual_rms(
    inference: GraphInference,
    bank: EpisodeBank,
    mapping: TypeMapping,
    linmaps: dict[int, tuple[float, float]],
    t_obs: int,
) -> dict[int, float]:
    pred = predict_split(inference, bank, t_obs)
    mapped = mapping.apply(pred["latent"])
    out = {}
    for t, (a, b) in linmaps.items():
        sel = (mapped == t) & (pred["true_types"] == t)
        if sel.sum() == 0:
            continue
        est = a * pred["params"][sel][:, 0] + b
        out[t] = float(np.sqrt(((est - pred["true_params"][sel]) ** 2).mean()))
    return out


def rollout_error_curve(
    dynamics: GraphDynamics,
    bank: EpisodeBank,
    t_obs: int,
    horizon: int,
    inference: GraphInference | None = None,
) -> np.ndarray:
    """Mean per-keypoint Euclidean error (normalized units) at each horizon step.

    With an inference model, rollouts condition on the inferred argmax edges;
    without one, on the fully connected single-type baseline edge set.
    """
    kp = bank.keypoints
    windows = torch.from_numpy(kp[:, :t_obs])
    b, _, n, _ = windows.shape
    if inference is not None:
        types, params, _ = _batched_map_edges(inference, windows)
        types_t = torch.from_numpy(types)
        params_t = torch.from_numpy(params)
    else:
        types_t, params_t = fully_connected_edges(
            n, dynamics.edge_types, dynamics.param_dim
        )
        types_t = types_t.expand(b, -1, -1)
        params_t = params_t.expand(b, -1, -1)
    dynamics.eval()
    with torch.no_grad():
        means, _ = rollout_batch(dynamics, windows[:, -2:], types_t, params_t, horizon)
    targets = torch.from_numpy(kp[:, t_obs : t_obs + horizon])
    err = torch.linalg.norm(means - targets, dim=-1)  # [B, H, N]
    return err.mean(dim=(0, 2)).numpy()


def eval_extrapolation(
    inference: GraphInference,
    dynamics: GraphDynamics,
    banks: dict[int, EpisodeBank],
    mapping: TypeMapping,
    t_obs: int,
    horizon: int,
) -> dict[int, dict[str, float]]:
    """Same metrics on splits with different body counts, no retraining.

    The type mapping fit on the training-distribution split is reused.
    """
    out = {}
    for n, bank in sorted(banks.items()):
        pred = predict_split(inference, bank, t_obs)
        acc = mapped_accuracy(pred["latent"].ravel(), pred["true_types"].ravel(), mapping)
        err = rollout_error_curve(dynamics, bank, t_obs, horizon, inference=inference)
        out[n] = {"accuracy": acc, "rollout_error": float(err[-1])}
    return out


def resimulate(
    state: np.ndarray, graph: CausalSummaryGraph, cfg: SimConfig, horizon: int
) -> np.ndarray:
    """Continue the simulator from a stored state -> [horizon, N, 4]."""
    edges = _graph_edges(graph)
    out = np.empty((horizon, graph.n_bodies, 4), dtype=np.float64)
    s = np.asarray(state, dtype=np.float64)
    for t in range(horizon):
        s = _step_arrays(s, edges, cfg)
        out[t] = s
    return out


def _choose_intervention_pair(
    latent: np.ndarray, probs: np.ndarray, true_types: np.ndarray, mapping: TypeMapping, n: int
):
    """Most confident ordered pair whose mapped type matches a non-null truth.

    Returns (pair index, unordered pair, true type) or None.
    """
    mapped = mapping.apply(latent)
    pairs = ordered_pairs(n)
    best, best_p = None, -1.0
    for e, (i, j) in enumerate(pairs):
        if mapped[e] == 0 or mapped[e] != true_types[e]:
            continue
        p = float(probs[e, latent[e]])
        if p > best_p:
            best, best_p = e, p
    if best is None:
        return None
    i, j = pairs[best]
    return best, (min(i, j), max(i, j)), int(mapped[best])


def eval_counterfactual(
    inference: GraphInference,
    dynamics: GraphDynamics,
    root,
    split: str,
    mapping: TypeMapping,
    linmaps: dict[int, tuple[float, float]],
    delta: float,
    t_obs: int = 50,
    horizon: int = 30,
    max_episodes: int = 50,
    intervene: bool = True,
) -> dict:
    """Score rollouts against a re-simulated world under a parameter shift.

    Per episode: pick the most confident correctly-typed non-null pair, shift
    its continuous latent by delta translated through the linear map, shift the
    true simulator parameter by delta, re-simulate from the last observed
    state, and compare the intervened rollout (and the non-intervened control)
    against the intervened simulation at the final step.
    """
    manifest = ds.load_manifest(root)
    sim_cfg = SimConfig(**manifest["sim"])
    indices = ds.split_indices(manifest, split)
    results = {"delta": delta, "episodes": [], "skipped": 0}
    pairs_cache: dict[int, list] = {}
    for e in indices:
        if len(results["episodes"]) >= max_episodes:
            break
        states = ds.load_states(root, e, manifest)
        graph = ds.load_graph(root, e)
        n = graph.n_bodies
        kp = normalized_keypoints(states, sim_cfg.arena_w, sim_cfg.arena_h)
        posterior, mapset = map_edges(kp[:t_obs], inference)
        latent = mapset.types.argmax(axis=1)
        choice = _choose_intervention_pair(
            latent, posterior.probs, true_pair_types(graph), mapping, n
        )
        if choice is None:
            results["skipped"] += 1
            continue
        _, (i, j), true_type = choice
        a, _b = linmaps[true_type]
        d_lat = delta / a

        params_int = mapset.params.copy()
        pairs = pairs_cache.setdefault(n, ordered_pairs(n))
        mapped = mapping.apply(latent)
        for k, (pi, pj) in enumerate(pairs):
            if {pi, pj} == {i, j} and mapped[k] == true_type:
                params_int[k, 0] += d_lat

        true_edge = graph.edge_for(i, j)
        if intervene:
            g_sim = apply_intervention(
                graph, (i, j), EdgeType(true_type), true_edge.param + delta
            )
        else:
            g_sim = graph
        sim_traj = resimulate(states[t_obs - 1], g_sim, sim_cfg, horizon)
        target = normalized_keypoints(sim_traj, sim_cfg.arena_w, sim_cfg.arena_h)

        from .dynamics import rollout

        hist = kp[t_obs - 2 : t_obs]
        edge_int = SampledEdgeSet(mapset.pairs, mapset.types, params_int, tau=0.0)
        means_int, _ = rollout(hist, edge_int, horizon, dynamics)
        means_ctrl, _ = rollout(hist, mapset, horizon, dynamics)
        err_int = float(np.linalg.norm(means_int[-1] - target[-1], axis=-1).mean())
        err_ctrl = float(np.linalg.norm(means_ctrl[-1] - target[-1], axis=-1).mean())
        results["episodes"].append(
            {"episode": e, "pair": [i, j], "type": true_type,
             "intervened_error": err_int, "control_error": err_ctrl}
        )
    eps = results["episodes"]
    results["n"] = len(eps)
    results["intervened_error"] = float(np.mean([x["intervened_error"] for x in eps])) if eps else None
    results["control_error"] = float(np.mean([x["control_error"] for x in eps])) if eps else None
    return results
