"""Rasterization of body states into small RGB frames.

Each body is an anti-aliased filled disc in a fixed per-index color on a dark
background. Edges are never drawn: the interactions stay invisible in pixels.
World coordinates [0, arena] map linearly onto the image, so a body at the
arena center lands at the image center.
"""

from __future__ import annotations

import numpy as np

from .physics import SimConfig

BACKGROUND = np.array([12, 12, 12], dtype=np.float64)

# distinct colors for up to 10 bodies; index-fixed so identity is stable
PALETTE = np.array(
    [
        [236, 64, 56],
        [72, 204, 84],
        [80, 112, 255],
        [240, 224, 48],
        [224, 64, 224],
        [64, 224, 224],
        [248, 144, 32],
        [160, 255, 160],
        [160, 96, 255],
        [255, 160, 200],
    ],
    dtype=np.float64,
)


def render_frame(states: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Draw one frame; returns [image_size, image_size, 3] uint8."""
    size = cfg.image_size
    img = np.tile(BACKGROUND, (size, size, 1))
    states = np.asarray(states, dtype=np.float64)
    if states.size:
        scale_x = size / cfg.arena_w
        scale_y = size / cfg.arena_h
        # pixel-center sample grid
        ys, xs = np.mgrid[0:size, 0:size]
        xs = xs + 0.5
        ys = ys + 0.5
        for b in range(states.shape[0]):
            cx = states[b, 0] * scale_x
            cy = states[b, 1] * scale_y
            rad = cfg.ball_radius * scale_x
            d = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
            alpha = np.clip(rad + 0.5 - d, 0.0, 1.0)[..., None]
            color = PALETTE[b % len(PALETTE)]
            img = (1.0 - alpha) * img + alpha * color
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
