"""Assembly of the full evaluation report for one trained model bundle."""

from __future__ import annotations

import warnings
from dataclasses import replace

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .config import EvalConfig
from .evaluation import (
    collect_param_scatter,
    eval_counterfactual,
    eval_extrapolation,
    eval_graph_discovery,
    eval_param_correlation,
    fit_latent_to_param,
    linear_fit_residual_rms,
    rollout_error_curve,
)
from .sim import dataset as ds
from .training import EpisodeBank, normalized_keypoints


def align_bank_to_bodies(bank: EpisodeBank, root) -> EpisodeBank:
    """Permute learned keypoint channels to best match body indices.

    Learned detectors assign channels arbitrarily; ground-truth graphs index
    bodies. A per-episode Hungarian match on mean keypoint-to-body distance
    relabels channels so pair metrics are comparable.
    """
    manifest = ds.load_manifest(root)
    sim = manifest["sim"]
    kp = bank.keypoints.copy()
    for b, e in enumerate(bank.indices):
        states = ds.load_states(root, e, manifest)
        truth = normalized_keypoints(states, sim["arena_w"], sim["arena_h"])
        cost = np.linalg.norm(
            kp[b][:, :, None, :] - truth[:, None, :, :], axis=-1
        ).mean(axis=0)
        rows, cols = linear_sum_assignment(cost)
        order = rows[np.argsort(cols)]
        kp[b] = kp[b][:, order]
    return EpisodeBank(keypoints=kp, graphs=bank.graphs, indices=bank.indices, sim=bank.sim)


def build_report(
    inference,
    dynamics,
    baseline,
    data_root,
    eval_cfg: EvalConfig,
    mode: str = "gt",
    perception=None,
    extra_roots: dict[int, str] | None = None,
) -> dict:
    """All evaluation protocols on one dataset; returns a JSON-native dict."""
    bank_test = EpisodeBank.from_dataset(data_root, "test", mode, perception)
    if mode == "learned":
        bank_test = align_bank_to_bodies(bank_test, data_root)

    t_total = bank_test.keypoints.shape[1]
    t_obs_list = [t for t in eval_cfg.t_obs_list if t <= t_total]
    if len(t_obs_list) < len(eval_cfg.t_obs_list):
        warnings.warn(f"dropping observation windows longer than the {t_total}-frame episodes")
    rollout_t_obs = min(eval_cfg.rollout_t_obs, t_total - 1)
    rollout_horizon = min(eval_cfg.rollout_horizon, t_total - rollout_t_obs)
    eval_cfg = replace(
        eval_cfg,
        t_obs_list=tuple(t_obs_list),
        rollout_t_obs=rollout_t_obs,
        rollout_horizon=rollout_horizon,
        param_t_obs=min(eval_cfg.param_t_obs, t_total),
        cf_t_obs=min(eval_cfg.cf_t_obs, t_total - 2),
        cf_horizon=min(eval_cfg.cf_horizon, t_total),
    )

    mapping, curves = eval_graph_discovery(inference, bank_test, list(eval_cfg.t_obs_list))
    correlations = eval_param_correlation(inference, bank_test, mapping, eval_cfg.param_t_obs)
    scatter = collect_param_scatter(
        inference, bank_test, mapping, eval_cfg.param_t_obs, cap=eval_cfg.scatter_cap
    )

    manifest = ds.load_manifest(data_root)
    train_idx = ds.split_indices(manifest, "train")[: eval_cfg.max_train_fit_episodes]
    bank_fit = EpisodeBank.from_dataset(data_root, "train", mode, perception)
    if len(bank_fit.indices) > len(train_idx):
        bank_fit = EpisodeBank(
            keypoints=bank_fit.keypoints[: len(train_idx)],
            graphs=bank_fit.graphs[: len(train_idx)],
            indices=train_idx,
            sim=bank_fit.sim,
        )
    if mode == "learned":
        bank_fit = align_bank_to_bodies(bank_fit, data_root)
    linmaps = fit_latent_to_param(inference, bank_fit, mapping, eval_cfg.param_t_obs)
    residuals = linear_fit_residual_rms(
        inference, bank_test, mapping, linmaps, eval_cfg.param_t_obs
    )

    roll_model = rollout_error_curve(
        dynamics, bank_test, eval_cfg.rollout_t_obs, eval_cfg.rollout_horizon, inference=inference
    )
    roll_baseline = None
    if baseline is not None:
        roll_baseline = rollout_error_curve(
            baseline, bank_test, eval_cfg.rollout_t_obs, eval_cfg.rollout_horizon, inference=None
        )

    extrapolation = {}
    for n, extra_root in sorted((extra_roots or {}).items()):
        extra_bank = EpisodeBank.from_dataset(extra_root, "test", "gt")
        extrapolation[int(n)] = eval_extrapolation(
            inference,
            dynamics,
            {int(n): extra_bank},
            mapping,
            eval_cfg.rollout_t_obs,
            eval_cfg.rollout_horizon,
        )[int(n)]

    counterfactual = None
    if linmaps:
        counterfactual = eval_counterfactual(
            inference,
            dynamics,
            data_root,
            "test",
            mapping,
            linmaps,
            delta=eval_cfg.cf_delta,
            t_obs=eval_cfg.cf_t_obs,
            horizon=eval_cfg.cf_horizon,
            max_episodes=eval_cfg.cf_episodes,
        )

    return {
        "type_mapping": list(mapping.perm),
        "t_obs_list": [int(t) for t in sorted(eval_cfg.t_obs_list)],
        "accuracy_vs_t_obs": [curves[t]["accuracy"] for t in sorted(curves)],
        "entropy_vs_t_obs": [curves[t]["entropy"] for t in sorted(curves)],
        "param_correlation": {str(k): v for k, v in correlations.items()},
        "param_scatter": {str(k): v for k, v in scatter.items()},
        "latent_to_param": {str(k): list(v) for k, v in linmaps.items()},
        "latent_fit_residual_rms": {str(k): v for k, v in residuals.items()},
        "rollout_error": [float(x) for x in roll_model],
        "baseline_rollout_error": (
            [float(x) for x in roll_baseline] if roll_baseline is not None else None
        ),
        "extrapolation": {str(n): v for n, v in extrapolation.items()},
        "counterfactual": counterfactual,
    }
