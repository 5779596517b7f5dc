"""Unsupervised keypoint detector with feature transport and reconstruction.

The detector emits one confidence map per keypoint at quarter resolution; a
spatial softmax turns each map into an expected coordinate in [-1, 1]^2
(x along width, y along height, cell-center convention). Training moves local
features between a source and target frame through the keypoint bottleneck and
scores the reconstruction with a pixel L2 loss, which is what makes the
keypoints settle on the moving foreground.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


@dataclass
class KeypointSet:
    coords: torch.Tensor  # [N, 2] in [-1, 1]^2, (x, y)
    confidence_maps: torch.Tensor  # [N, H', W'], each summing to 1


def grid_coords(h: int, w: int, device=None, dtype=torch.float32):
    """Cell-center coordinates of an h x w grid in [-1, 1]^2 -> (xs[w], ys[h])."""
    xs = (2.0 * torch.arange(w, device=device, dtype=dtype) + 1.0) / w - 1.0
    ys = (2.0 * torch.arange(h, device=device, dtype=dtype) + 1.0) / h - 1.0
    return xs, ys


def spatial_softmax(logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Normalize detector channels and take their spatial expectation.

    logits: [B, N, H, W]. Returns coords [B, N, 2] and maps [B, N, H, W].
    """
    b, n, h, w = logits.shape
    flat = logits.reshape(b, n, h * w).softmax(dim=-1)
    maps = flat.reshape(b, n, h, w)
    xs, ys = grid_coords(h, w, device=logits.device, dtype=logits.dtype)
    x = (maps.sum(dim=2) * xs).sum(dim=-1)
    y = (maps.sum(dim=3) * ys).sum(dim=-1)
    return torch.stack([x, y], dim=-1), maps


def gaussian_heatmap(coords: torch.Tensor, grid_hw: tuple[int, int], sigma: float) -> torch.Tensor:
    """Isotropic Gaussian bumps exp(-||p - c||^2 / (2 sigma^2)) on the grid.

    coords: [..., N, 2] normalized. Returns [..., N, H, W] with values in (0, 1].
    """
    h, w = grid_hw
    xs, ys = grid_coords(h, w, device=coords.device, dtype=coords.dtype)
    dx = xs.reshape(1, 1, w) - coords[..., 0:1].unsqueeze(-1)  # [..., N, 1, W]
    dy = ys.reshape(1, h, 1) - coords[..., 1:2].unsqueeze(-1)  # [..., N, H, 1]
    return torch.exp(-(dx**2 + dy**2) / (2.0 * sigma**2))


def transport(
    feat_src: torch.Tensor,
    feat_tgt: torch.Tensor,
    heat_src: torch.Tensor,
    heat_tgt: torch.Tensor,
) -> torch.Tensor:
    """Suppress source features near either frame's keypoints, then paste the
    target's local features at the target keypoints.

    feat_*: [B, C, H, W]; heat_*: [B, N, H, W]. Per-keypoint heatmaps are
    max-reduced over N so the mask stays in [0, 1].
    """
    if feat_src.shape != feat_tgt.shape or heat_src.shape != heat_tgt.shape:
        raise ValueError("transport requires matching source/target shapes")
    if feat_src.shape[-2:] != heat_src.shape[-2:]:
        raise ValueError("feature and heatmap grids disagree")
    m_src = heat_src.max(dim=1, keepdim=True).values
    m_tgt = heat_tgt.max(dim=1, keepdim=True).values
    return (1.0 - m_src) * (1.0 - m_tgt) * feat_src + m_tgt * feat_tgt


def _backbone(out_channels: int, base: int) -> nn.Sequential:
    """Five conv blocks, two with stride 2: output grid is input/4."""
    c = base
    return nn.Sequential(
        nn.Conv2d(3, c, 3, stride=1, padding=1),
        nn.ReLU(),
        nn.Conv2d(c, c, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(c, 2 * c, 3, stride=1, padding=1),
        nn.ReLU(),
        nn.Conv2d(2 * c, 2 * c, 3, stride=2, padding=1),
        nn.ReLU(),
        nn.Conv2d(2 * c, out_channels, 3, stride=1, padding=1),
    )


class Transporter(nn.Module):
    """Feature extractor + keypoint detector + refiner."""

    def __init__(self, n_keypoints: int, feature_channels: int = 32, sigma: float = 0.1):
        super().__init__()
        self.n_keypoints = n_keypoints
        self.feature_channels = feature_channels
        self.sigma = sigma
        base = max(feature_channels // 2, 4)
        self.extractor = _backbone(feature_channels, base)
        self.detector = _backbone(n_keypoints, base)
        c = feature_channels
        self.refiner = nn.Sequential(
            nn.Conv2d(c, c, 3, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(c, c // 2, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c // 2, c // 2, 3, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(c // 2, c // 2, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c // 2, 3, 3, padding=1),
        )

    def features(self, img: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.extractor(img))

    def detect(self, img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """coords [B, N, 2] and confidence maps [B, N, H/4, W/4]."""
        return spatial_softmax(self.detector(img))

    def reconstruct(self, phi: torch.Tensor) -> torch.Tensor:
        return self.refiner(phi)

    def forward(self, src: torch.Tensor, tgt: torch.Tensor) -> torch.Tensor:
        """Reconstruction of the target frame from (src, tgt) through transport."""
        f_src = self.features(src)
        f_tgt = self.features(tgt)
        kp_src, _ = self.detect(src)
        kp_tgt, _ = self.detect(tgt)
        grid = f_src.shape[-2:]
        h_src = gaussian_heatmap(kp_src, grid, self.sigma)
        h_tgt = gaussian_heatmap(kp_tgt, grid, self.sigma)
        phi = transport(f_src, f_tgt, h_src, h_tgt)
        return self.reconstruct(phi)


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    """uint8 [H, W, 3] (or float in [0,1]) -> float32 [3, H, W] in [0, 1]."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()


def detect_keypoints(image: np.ndarray | torch.Tensor, model: Transporter) -> KeypointSet:
    """Run the detector on one image; deterministic in eval mode."""
    if isinstance(image, np.ndarray):
        image = image_to_tensor(image)
    if image.dim() != 3:
        raise ValueError(f"expected one [3, H, W] image, got shape {tuple(image.shape)}")
    model.eval()
    with torch.no_grad():
        coords, maps = model.detect(image.unsqueeze(0))
    return KeypointSet(coords=coords[0], confidence_maps=maps[0])
