"""Command-line entry point.

Exit codes: 0 success, 1 domain error (bad data, missing files, failed
invariants), 2 usage error. All stage randomness derives from the single
global seed in the run configuration.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, EvalConfig, RunConfig, config_snapshot, load_config

_DOMAIN_ERRORS = (
    ConfigError,
    FileNotFoundError,
    NotADirectoryError,
    ValueError,
    RuntimeError,
    KeyError,
    json.JSONDecodeError,
)


def _load_run_config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or [])


def _episode_location(episode_dir: Path) -> tuple[Path, int]:
    episode_dir = Path(episode_dir)
    index = int(episode_dir.name.split("_")[-1])
    root = episode_dir.parent.parent
    if not (root / "manifest.json").exists():
        raise FileNotFoundError(f"no manifest.json above {episode_dir}")
    return root, index


def _load_inference(path: Path):
    from .training import load_bundle

    path = Path(path)
    bundle_dir = path if path.is_dir() else path.parent
    inference, _, _ = load_bundle(bundle_dir)
    if inference is None:
        raise FileNotFoundError(f"no inference checkpoint under {bundle_dir}")
    return inference


def _load_dynamics(path: Path, name: str = "dynamics"):
    from .training import load_bundle

    path = Path(path)
    bundle_dir = path if path.is_dir() else path.parent
    _, dynamics, baseline = load_bundle(bundle_dir)
    model = dynamics if name == "dynamics" else baseline
    if model is None:
        raise FileNotFoundError(f"no {name} checkpoint under {bundle_dir}")
    return model


def cmd_gen_data(args) -> int:
    from .sim.dataset import generate_dataset

    cfg = _load_run_config(args)
    generate_dataset(
        cfg.sim,
        cfg.data.n_episodes,
        cfg.data.splits,
        seed=cfg.seed,
        out_dir=args.out,
        overwrite=args.overwrite,
        workers=cfg.data.workers,
    )
    print(f"wrote {cfg.data.n_episodes} episodes to {args.out}")
    return 0


def cmd_train_perception(args) -> int:
    from .perception import train_perception

    cfg = _load_run_config(args)
    pcfg = dataclasses.replace(cfg.perception, seed=cfg.seed)
    _, log = train_perception(args.data, pcfg, out_path=args.out)
    print(f"final reconstruction loss {log[-1]['loss']:.6f}; checkpoint at {args.out}")
    return 0


def cmd_train_joint(args) -> int:
    from .training import (
        EpisodeBank,
        save_bundle,
        train_baseline_no_inference,
        train_joint,
    )

    cfg = _load_run_config(args)
    tcfg = dataclasses.replace(cfg.train, seed=cfg.seed)
    perception = None
    if args.mode == "learned":
        if not args.perception:
            raise ConfigError("learned-keypoints mode needs --perception <ckpt>")
        from .perception import load_perception

        perception, _ = load_perception(args.perception)
    bank = EpisodeBank.from_dataset(args.data, "train", args.mode, perception)
    inference, dynamics, log = train_joint(bank, tcfg)
    baseline = None
    if args.with_baseline:
        baseline, base_log = train_baseline_no_inference(bank, tcfg)
        log = log + base_log
    save_bundle(args.out, tcfg, inference, dynamics, baseline=baseline, log=log)
    (Path(args.out) / "config_snapshot.json").write_text(
        json.dumps(config_snapshot(cfg), indent=1)
    )
    print(f"trained on {len(bank.indices)} episodes; bundle at {args.out}")
    return 0


def cmd_infer_graph(args) -> int:
    import torch

    from .inference import map_edges
    from .sim import dataset as ds
    from .training import normalized_keypoints

    inference = _load_inference(Path(args.ckpt))
    root, index = _episode_location(Path(args.episode))
    manifest = ds.load_manifest(root)
    states = ds.load_states(root, index, manifest)
    if args.frames > states.shape[0]:
        raise ValueError(f"episode has {states.shape[0]} frames, asked for {args.frames}")
    sim = manifest["sim"]
    kp = normalized_keypoints(states[: args.frames], sim["arena_w"], sim["arena_h"])
    posterior, sampled = map_edges(kp, inference)

    type_names = None
    if args.report:
        mapping = json.loads(Path(args.report).read_text())["type_mapping"]
        names = {0: "null", 1: "rigid", 2: "spring"}
        type_names = [names.get(m, f"type_{m}") for m in mapping]

    latent = sampled.types.argmax(axis=1)
    edges = []
    for k, (i, j) in enumerate(sampled.pairs):
        if latent[k] == 0:
            continue
        name = type_names[latent[k]] if type_names else f"latent_{latent[k]}"
        edges.append(
            {
                "i": i,
                "j": j,
                "type": name,
                "param": float(sampled.params[k, 0]),
                "prob": float(posterior.probs[k, latent[k]]),
            }
        )
    out = {
        "n_bodies": kp.shape[1],
        "frames_used": args.frames,
        "edges": edges,
        "pair_probs": {f"{i}-{j}": posterior.probs[k].tolist() for k, (i, j) in enumerate(posterior.pairs)},
        "pair_types_onehot": sampled.types.tolist(),
        "pair_params": sampled.params.tolist(),
    }
    Path(args.out).write_text(json.dumps(out, indent=1))
    print(f"inferred {len(edges)} non-null directed edges -> {args.out}")
    return 0


def cmd_rollout(args) -> int:
    from .dynamics import rollout
    from .graphnet import ordered_pairs
    from .inference import SampledEdgeSet
    from .sim import dataset as ds
    from .training import normalized_keypoints

    dynamics = _load_dynamics(Path(args.dyn_ckpt))
    pred = json.loads(Path(args.graph).read_text())
    root, index = _episode_location(Path(args.episode))
    manifest = ds.load_manifest(root)
    states = ds.load_states(root, index, manifest)
    if not 1 <= args.start < states.shape[0]:
        raise ValueError(f"start must be in [1, {states.shape[0] - 1}]")
    sim = manifest["sim"]
    kp = normalized_keypoints(states, sim["arena_w"], sim["arena_h"])
    n = pred["n_bodies"]
    edge_set = SampledEdgeSet(
        pairs=ordered_pairs(n),
        types=np.asarray(pred["pair_types_onehot"], dtype=np.float32),
        params=np.asarray(pred["pair_params"], dtype=np.float32),
        tau=0.0,
    )
    means, variances = rollout(kp[args.start - 1 : args.start + 1], edge_set, args.horizon, dynamics)
    out = np.concatenate([means, variances], axis=-1).astype("<f4")
    Path(args.out).write_bytes(out.tobytes(order="C"))
    print(f"wrote rollout [{args.horizon}, {n}, 4] to {args.out}")
    return 0


def _eval_config(cfg: RunConfig, args) -> EvalConfig:
    updates = {}
    if getattr(args, "delta", None) is not None:
        updates["cf_delta"] = args.delta
    return dataclasses.replace(cfg.eval, **updates) if updates else cfg.eval


def cmd_eval(args) -> int:
    from .plots import emit_plots
    from .report import build_report
    from .training import load_bundle

    cfg = _load_run_config(args)
    inference, dynamics, baseline = load_bundle(args.ckpt_dir)
    if inference is None or dynamics is None:
        raise FileNotFoundError(f"{args.ckpt_dir} lacks inference/dynamics checkpoints")
    perception = None
    if args.mode == "learned":
        if not args.perception:
            raise ConfigError("learned-keypoints mode needs --perception <ckpt>")
        from .perception import load_perception

        perception, _ = load_perception(args.perception)
    extra = {}
    for item in args.extra_data or []:
        if "=" not in item:
            raise ConfigError(f"--extra-data expects n=path, got {item!r}")
        n, path = item.split("=", 1)
        extra[int(n)] = path
    report = build_report(
        inference,
        dynamics,
        baseline,
        args.data,
        _eval_config(cfg, args),
        mode=args.mode,
        perception=perception,
        extra_roots=extra,
    )
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(json.dumps(report, indent=1))
    print(f"wrote report to {args.report}")
    if args.plots:
        written = emit_plots(report, args.plots)
        print(f"wrote {len(written)} plots to {args.plots}")
    return 0


def cmd_counterfactual(args) -> int:
    from .evaluation import eval_counterfactual, eval_graph_discovery, fit_latent_to_param
    from .training import EpisodeBank, load_bundle

    cfg = _load_run_config(args)
    ecfg = _eval_config(cfg, args)
    inference, dynamics, _ = load_bundle(args.ckpt_dir)
    if inference is None or dynamics is None:
        raise FileNotFoundError(f"{args.ckpt_dir} lacks inference/dynamics checkpoints")
    bank_test = EpisodeBank.from_dataset(args.data, "test", "gt")
    mapping, _ = eval_graph_discovery(inference, bank_test, list(ecfg.t_obs_list))
    bank_fit = EpisodeBank.from_dataset(args.data, "train", "gt")
    linmaps = fit_latent_to_param(inference, bank_fit, mapping, ecfg.param_t_obs)
    result = eval_counterfactual(
        inference,
        dynamics,
        args.data,
        "test",
        mapping,
        linmaps,
        delta=ecfg.cf_delta,
        t_obs=ecfg.cf_t_obs,
        horizon=ecfg.cf_horizon,
        max_episodes=ecfg.cf_episodes,
    )
    Path(args.out).write_text(json.dumps(result, indent=1))
    print(
        f"counterfactual over {result['n']} episodes (skipped {result['skipped']}): "
        f"intervened {result['intervened_error']}, control {result['control_error']}"
    )
    return 0


def cmd_plot(args) -> int:
    from .plots import emit_plots

    report = json.loads(Path(args.report).read_text())
    written = emit_plots(report, args.out)
    print(f"wrote {len(written)} plots to {args.out}")
    return 0


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(prog="vcdn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE", help="dotted config override"
        )

    p = sub.add_parser("gen-data", help="simulate and write a dataset")
    add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-perception", help="train the keypoint detector")
    add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_perception)

    p = sub.add_parser("train-joint", help="train inference + dynamics")
    add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["gt", "learned"], default="gt")
    p.add_argument("--perception", default=None)
    p.add_argument("--with-baseline", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_joint)

    p = sub.add_parser("infer-graph", help="predict the edge set of one episode")
    p.add_argument("--ckpt", required=True, help="bundle dir or inference.pt")
    p.add_argument("--episode", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--report", default=None, help="report.json supplying type names")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer_graph)

    p = sub.add_parser("rollout", help="roll the dynamics model forward")
    p.add_argument("--dyn-ckpt", required=True)
    p.add_argument("--graph", required=True, help="graph_pred.json from infer-graph")
    p.add_argument("--episode", required=True)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="full evaluation report and plots")
    add_config_args(p)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["gt", "learned"], default="gt")
    p.add_argument("--perception", default=None)
    p.add_argument("--extra-data", action="append", metavar="N=PATH")
    p.add_argument("--report", required=True)
    p.add_argument("--plots", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("counterfactual", help="score intervened rollouts")
    add_config_args(p)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("plot", help="render plots from an existing report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0,) else 0
    try:
        return args.func(args)
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
