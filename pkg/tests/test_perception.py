import numpy as np
import pytest
import torch

from vcdn.perception import (
    PerceptionTrainConfig,
    Transporter,
    UnusableDatasetError,
    detect_keypoints,
    gaussian_heatmap,
    image_to_tensor,
    spatial_softmax,
    train_perception,
    transport,
)
from vcdn.sim import SimConfig
from vcdn.sim.dataset import generate_dataset

torch.manual_seed(0)


def test_uniform_map_gives_origin():
    logits = torch.zeros(1, 2, 8, 8)
    coords, maps = spatial_softmax(logits)
    assert torch.allclose(coords, torch.zeros(1, 2, 2), atol=1e-7)
    assert torch.allclose(maps.sum(dim=(2, 3)), torch.ones(1, 2), atol=1e-5)


def test_top_left_mass_gives_half_cell_offset():
    logits = torch.full((1, 1, 16, 16), -1e9)
    logits[0, 0, 0, 0] = 0.0
    coords, _ = spatial_softmax(logits)
    delta = 1.0 / 16
    assert torch.allclose(coords[0, 0], torch.tensor([-1.0 + delta, -1.0 + delta]), atol=1e-6)


def test_confidence_maps_normalized_and_coords_bounded():
    logits = torch.randn(3, 4, 16, 16) * 5
    coords, maps = spatial_softmax(logits)
    assert torch.allclose(maps.sum(dim=(2, 3)), torch.ones(3, 4), atol=1e-5)
    assert coords.abs().max() <= 1.0


def test_heatmap_peak_and_sigma_contour():
    # keypoint placed exactly on a cell center: peak value 1 there
    grid = (16, 16)
    delta = 1.0 / 16
    c = torch.tensor([[-1.0 + 5 * 2 * delta + delta, -1.0 + 3 * 2 * delta + delta]])
    h = gaussian_heatmap(c, grid, sigma=0.1)
    assert torch.isclose(h[0, 3, 5], torch.tensor(1.0))
    # values are exp(-d^2/2s^2): bounded by the peak, positive up to underflow
    assert h.max() <= 1.0 and h.min() >= 0.0
    near = h[0, 2:5, 4:7]
    assert (near > 0.0).all()
    # analytic value at distance sigma
    x = torch.linspace(-1, 1, 201)
    c2 = torch.tensor([[0.0, 0.0]])
    h2 = gaussian_heatmap(c2, (1, 201), sigma=0.5)
    # grid x spacing: cell centers of 201 cells; find the cell at distance ~0.5
    xs = (2 * torch.arange(201) + 1) / 201 - 1
    k = int(torch.argmin((xs - 0.5).abs()))
    expected = torch.exp(-(xs[k] ** 2) / (2 * 0.25))
    assert torch.isclose(h2[0, 0, k], expected)


def test_mirrored_coords_give_mirrored_heatmaps():
    c = torch.tensor([[0.3, -0.4], [-0.3, 0.4]])
    h = gaussian_heatmap(c, (16, 16), sigma=0.2)
    assert torch.allclose(h[0], torch.flip(h[1], dims=(0, 1)), atol=1e-6)


def test_transport_identity_when_frames_match():
    # with binary masks the identical-frame case reassembles the input exactly
    f = torch.randn(2, 8, 16, 16)
    heat = (torch.rand(2, 3, 16, 16) > 0.5).float()
    phi = transport(f, f, heat, heat)
    assert torch.allclose(phi, f, atol=1e-6)
    # fractional masks follow the transport equation: (1-m)^2 f + m f
    soft = torch.rand(2, 3, 16, 16)
    m = soft.max(dim=1, keepdim=True).values
    expected = (1 - m) ** 2 * f + m * f
    assert torch.allclose(transport(f, f, soft, soft), expected, atol=1e-6)


def test_transport_full_overwrite_and_passthrough():
    f_src = torch.randn(1, 4, 8, 8)
    f_tgt = torch.randn(1, 4, 8, 8)
    ones = torch.ones(1, 2, 8, 8)
    zeros = torch.zeros(1, 2, 8, 8)
    assert torch.equal(transport(f_src, f_tgt, zeros, ones), f_tgt)
    assert torch.equal(transport(f_src, f_tgt, zeros, zeros), f_src)


def test_transport_shape_mismatch_raises():
    with pytest.raises(ValueError):
        transport(
            torch.zeros(1, 4, 8, 8),
            torch.zeros(1, 4, 16, 16),
            torch.zeros(1, 2, 8, 8),
            torch.zeros(1, 2, 16, 16),
        )


def test_reconstruction_shape_and_finite():
    model = Transporter(n_keypoints=3, feature_channels=16)
    src = torch.rand(2, 3, 64, 64)
    tgt = torch.rand(2, 3, 64, 64)
    recon = model(src, tgt)
    assert recon.shape == tgt.shape
    assert torch.isfinite(recon).all()


def test_detect_keypoints_deterministic_in_eval():
    model = Transporter(n_keypoints=2, feature_channels=8)
    img = np.random.default_rng(0).random((32, 32, 3)).astype(np.float32)
    k1 = detect_keypoints(img, model)
    k2 = detect_keypoints(img, model)
    assert torch.equal(k1.coords, k2.coords)
    assert k1.coords.shape == (2, 2)
    assert k1.confidence_maps.shape == (2, 8, 8)


def test_detector_rejects_bad_shape():
    model = Transporter(n_keypoints=2, feature_channels=8)
    with pytest.raises(ValueError):
        detect_keypoints(torch.rand(3, 3, 16, 16), model)


def test_reconstruction_gradients_match_finite_differences():
    torch.manual_seed(1)
    model = Transporter(n_keypoints=2, feature_channels=8).double()
    src = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    tgt = torch.rand(1, 3, 16, 16, dtype=torch.float64)

    def loss_fn():
        return ((model(src, tgt) - tgt) ** 2).mean()

    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(3)
    params = [p for p in model.parameters() if p.grad is not None and p.grad.abs().max() > 1e-8]
    for p in [params[0], params[len(params) // 2], params[-1]]:
        flat_grad = p.grad.reshape(-1)
        idx = int(np.argmax(np.abs(flat_grad.detach().numpy())))
        eps = 1e-5
        with torch.no_grad():
            orig = p.reshape(-1)[idx].item()
            p.reshape(-1)[idx] = orig + eps
            up = loss_fn().item()
            p.reshape(-1)[idx] = orig - eps
            down = loss_fn().item()
            p.reshape(-1)[idx] = orig
        fd = (up - down) / (2 * eps)
        rel = abs(fd - flat_grad[idx].item()) / max(abs(fd), 1e-10)
        assert rel < 1e-3, (fd, flat_grad[idx].item())


@pytest.fixture(scope="module")
def tiny_frame_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("percep_ds")
    cfg = SimConfig(n_bodies=2, episode_len=16, render=True, image_size=32)
    generate_dataset(cfg, 3, {"train": 1.0}, seed=5, out_dir=root / "ds")
    return root / "ds"


def test_training_smoke_loss_decreases(tiny_frame_dataset):
    cfg = PerceptionTrainConfig(
        n_keypoints=2, feature_channels=8, iterations=60, batch_size=4, log_every=20, seed=0
    )
    model, log = train_perception(tiny_frame_dataset, cfg)
    assert len(log) == 3
    assert all(np.isfinite(entry["loss"]) for entry in log)
    assert log[-1]["loss"] < log[0]["loss"]


def test_training_without_frames_errors(tmp_path):
    cfg_sim = SimConfig(n_bodies=2, episode_len=8, render=False)
    generate_dataset(cfg_sim, 2, {"train": 1.0}, seed=0, out_dir=tmp_path / "nf")
    cfg = PerceptionTrainConfig(n_keypoints=2, feature_channels=8, iterations=5)
    with pytest.raises(UnusableDatasetError):
        train_perception(tmp_path / "nf", cfg)


def test_checkpoint_roundtrip(tiny_frame_dataset, tmp_path):
    from vcdn.perception import load_perception

    cfg = PerceptionTrainConfig(
        n_keypoints=2, feature_channels=8, iterations=10, batch_size=4, log_every=5, seed=1
    )
    out = tmp_path / "ckpt.pt"
    model, _ = train_perception(tiny_frame_dataset, cfg, out_path=out)
    loaded, sidecar = load_perception(out)
    assert sidecar["n_keypoints"] == 2 and sidecar["image_size"] == 32
    img = np.random.default_rng(0).random((32, 32, 3)).astype(np.float32)
    a = detect_keypoints(img, model).coords
    b = detect_keypoints(img, loaded).coords
    assert torch.allclose(a, b)


def test_image_to_tensor_scales_uint8():
    img = np.full((4, 4, 3), 255, dtype=np.uint8)
    t = image_to_tensor(img)
    assert t.shape == (3, 4, 4)
    assert torch.allclose(t, torch.ones(3, 4, 4))
