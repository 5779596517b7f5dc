import json

import numpy as np
import pytest

from vcdn.cli import run_command
from vcdn.config import ConfigError, load_config


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    cfg = load_config(p)
    assert cfg.seed == 0
    assert cfg.sim.n_bodies == 3
    assert cfg.train.prior == (0.5, 0.25, 0.25)


def test_override_changes_single_leaf():
    base = load_config(None)
    cfg = load_config(None, overrides=["sim.n_bodies=7"])
    assert cfg.sim.n_bodies == 7
    assert cfg.sim.dt == base.sim.dt
    assert cfg.train == base.train


def test_invalid_value_names_key_path():
    with pytest.raises(ConfigError) as err:
        load_config(None, overrides=["sim.dt=-1"])
    assert "sim" in str(err.value) and "dt" in str(err.value)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(None, overrides=["sim.bogus=1"])
    assert "sim.bogus" in str(err.value)
    p = tmp_path / "c.json"
    p.write_text('{"nonsense": {}}')
    with pytest.raises(ConfigError):
        load_config(p)


def test_type_mismatch_rejected():
    with pytest.raises(ConfigError) as err:
        load_config(None, overrides=["sim.n_bodies=2.5"])
    assert "sim.n_bodies" in str(err.value)


def test_env_seed_between_file_and_cli(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text('{"seed": 3}')
    monkeypatch.setenv("VCDN_SEED", "11")
    assert load_config(p).seed == 11
    assert load_config(p, overrides=["seed=99"]).seed == 99
    monkeypatch.setenv("VCDN_SEED", "oops")
    with pytest.raises(ConfigError):
        load_config(p)


def test_unknown_subcommand_exits_2(capsys):
    assert run_command(["bogus"]) == 2


def test_missing_data_is_domain_error(tmp_path, capsys):
    rc = run_command(
        ["train-joint", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]
    )
    assert rc == 1
    assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Tiny end-to-end run: gen-data -> train-joint(+baseline) -> eval."""
    root = tmp_path_factory.mktemp("pipe")
    data = root / "data"
    bundle = root / "bundle"
    overrides = [
        "--set", "sim.n_bodies=2",
        "--set", "sim.episode_len=40",
        "--set", "data.n_episodes=10",
        "--set", 'data.splits={"train":0.6,"test":0.4}',
    ]
    assert run_command(["gen-data", "--out", str(data)] + overrides) == 0

    train_over = overrides + [
        "--set", "train.iterations=40",
        "--set", "train.batch_size=4",
        "--set", "train.hidden=16",
        "--set", "train.t_obs_max=10",
        "--set", "train.horizon=3",
        "--set", "train.log_every=20",
    ]
    assert (
        run_command(
            ["train-joint", "--data", str(data), "--out", str(bundle), "--with-baseline"]
            + train_over
        )
        == 0
    )
    return root, data, bundle


def test_pipeline_layout(pipeline):
    root, data, bundle = pipeline
    assert (data / "manifest.json").exists()
    assert (bundle / "inference.pt").exists()
    assert (bundle / "dynamics.pt").exists()
    assert (bundle / "baseline.pt").exists()
    assert (bundle / "config_snapshot.json").exists()
    snapshot = json.loads((bundle / "config_snapshot.json").read_text())
    assert snapshot["sim"]["n_bodies"] == 2


def test_eval_writes_report_and_plots(pipeline, tmp_path):
    root, data, bundle = pipeline
    report_path = root / "report.json"
    plots_dir = root / "plots"
    rc = run_command(
        [
            "eval",
            "--ckpt-dir", str(bundle),
            "--data", str(data),
            "--report", str(report_path),
            "--plots", str(plots_dir),
            "--set", "eval.t_obs_list=[5,10]",
            "--set", "eval.rollout_t_obs=10",
            "--set", "eval.rollout_horizon=5",
            "--set", "eval.param_t_obs=10",
            "--set", "eval.cf_t_obs=10",
            "--set", "eval.cf_horizon=5",
            "--set", "eval.cf_episodes=4",
        ]
    )
    assert rc == 0
    report = json.loads(report_path.read_text())
    for key in (
        "type_mapping",
        "accuracy_vs_t_obs",
        "entropy_vs_t_obs",
        "param_correlation",
        "rollout_error",
        "baseline_rollout_error",
        "extrapolation",
        "counterfactual",
    ):
        assert key in report
    assert len(report["accuracy_vs_t_obs"]) == 2
    assert len(report["rollout_error"]) == 5
    assert (plots_dir / "accuracy_vs_window.png").exists()
    assert (plots_dir / "rollout_error.png").exists()


def test_infer_graph_and_rollout_chain(pipeline):
    root, data, bundle = pipeline
    ep = data / "episodes" / "ep_000006"
    pred_path = root / "graph_pred.json"
    rc = run_command(
        [
            "infer-graph",
            "--ckpt", str(bundle),
            "--episode", str(ep),
            "--frames", "10",
            "--out", str(pred_path),
        ]
    )
    assert rc == 0
    pred = json.loads(pred_path.read_text())
    assert pred["n_bodies"] == 2
    assert len(pred["pair_types_onehot"]) == 2
    for probs in pred["pair_probs"].values():
        assert abs(sum(probs) - 1.0) < 1e-5

    out_path = root / "rollout.f32"
    rc = run_command(
        [
            "rollout",
            "--dyn-ckpt", str(bundle),
            "--graph", str(pred_path),
            "--episode", str(ep),
            "--start", "10",
            "--horizon", "6",
            "--out", str(out_path),
        ]
    )
    assert rc == 0
    arr = np.frombuffer(out_path.read_bytes(), dtype="<f4").reshape(6, 2, 4)
    assert np.isfinite(arr).all()
    assert (arr[..., 2:] >= 1e-4).all()  # variance floor


def test_counterfactual_cli(pipeline):
    root, data, bundle = pipeline
    out = root / "cf.json"
    rc = run_command(
        [
            "counterfactual",
            "--ckpt-dir", str(bundle),
            "--data", str(data),
            "--delta", "10.0",
            "--out", str(out),
            "--set", "eval.t_obs_list=[5,10]",
            "--set", "eval.param_t_obs=10",
            "--set", "eval.cf_t_obs=10",
            "--set", "eval.cf_horizon=5",
            "--set", "eval.cf_episodes=4",
        ]
    )
    assert rc == 0
    result = json.loads(out.read_text())
    assert result["delta"] == 10.0
    assert "skipped" in result


def test_eval_determinism_same_report_bytes(pipeline):
    root, data, bundle = pipeline
    args = [
        "eval",
        "--ckpt-dir", str(bundle),
        "--data", str(data),
        "--set", "eval.t_obs_list=[5,10]",
        "--set", "eval.rollout_t_obs=10",
        "--set", "eval.rollout_horizon=5",
        "--set", "eval.param_t_obs=10",
        "--set", "eval.cf_t_obs=10",
        "--set", "eval.cf_horizon=5",
        "--set", "eval.cf_episodes=4",
    ]
    r1, r2 = root / "r1.json", root / "r2.json"
    assert run_command(args + ["--report", str(r1)]) == 0
    assert run_command(args + ["--report", str(r2)]) == 0
    assert r1.read_bytes() == r2.read_bytes()


def test_plot_from_existing_report(pipeline, tmp_path):
    root, data, bundle = pipeline
    report = root / "report.json"
    if not report.exists():
        pytest.skip("report not produced")
    out = tmp_path / "plots2"
    assert run_command(["plot", "--report", str(report), "--out", str(out)]) == 0
    assert any(out.iterdir())
