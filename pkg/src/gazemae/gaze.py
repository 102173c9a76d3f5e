"""Gaze heatmaps and their accumulation onto the space-time token grid.

Each valid gaze point becomes an unnormalized Gaussian (peak 1.0 at the
pixel containing the point); frames with invalid gaze render as all-zero.
Heatmap mass is then summed over the pixels of every space-time token,
yielding the per-token weights that drive gaze-weighted masking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GazeHeatmap:
    """Per-frame gaze field, shape (T, H, W), values >= 0."""

    values: np.ndarray
    sigma: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class TokenGazeMass:
    """Accumulated heatmap mass per token, shape (N_r, N_s).

    Spatial tokens are enumerated row-major over the (H/H_c, W/W_c) grid.
    """

    d: np.ndarray
    token_geometry: tuple[int, int, int]


def gaze_pixel(x_norm: float, y_norm: float, height: int, width: int) -> tuple[int, int]:
    """Map normalized gaze coordinates to the pixel cell containing them."""
    x = min(int(x_norm * width), width - 1)
    y = min(int(y_norm * height), height - 1)
    return max(y, 0), max(x, 0)


def render_heatmap(gaze_points: np.ndarray, height: int, width: int, sigma: float) -> GazeHeatmap:
    """Render one Gaussian heatmap per frame from normalized gaze points.

    ``gaze_points`` has shape (T, 3) with columns (x_norm, y_norm, valid).
    A valid frame gets exp(-((x - x_g)^2 + (y - y_g)^2) / (2 sigma^2))
    centered on the gaze pixel; an invalid frame is identically zero.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    gaze_points = np.asarray(gaze_points, dtype=np.float64)
    if gaze_points.ndim != 2 or gaze_points.shape[1] != 3:
        raise ValueError(f"gaze_points must have shape (T, 3), got {gaze_points.shape}")

    n_frames = gaze_points.shape[0]
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    values = np.zeros((n_frames, height, width), dtype=np.float64)
    for t in range(n_frames):
        x_norm, y_norm, valid = gaze_points[t]
        if valid == 0:
            continue
        y_g, x_g = gaze_pixel(x_norm, y_norm, height, width)
        sq_dist = (ys - y_g) ** 2 + (xs - x_g) ** 2
        values[t] = np.exp(-sq_dist / (2.0 * sigma**2))
    return GazeHeatmap(values=values, sigma=float(sigma))


def accumulate_per_token(
    heatmap: GazeHeatmap, geometry: tuple[int, int, int]
) -> TokenGazeMass:
    """Sum heatmap values over each token's T_c x H_c x W_c pixel block.

    Returns mass of shape (N_r, N_s) where N_r = T / T_c and
    N_s = (H / H_c) * (W / W_c).
    """
    t_c, h_c, w_c = geometry
    n_frames, height, width = heatmap.values.shape
    if n_frames % t_c or height % h_c or width % w_c:
        raise ValueError(
            f"heatmap shape {heatmap.values.shape} not divisible by token geometry {geometry}"
        )
    n_r = n_frames // t_c
    grid_h = height // h_c
    grid_w = width // w_c
    blocks = heatmap.values.reshape(n_r, t_c, grid_h, h_c, grid_w, w_c)
    d = blocks.sum(axis=(1, 3, 5)).reshape(n_r, grid_h * grid_w)
    return TokenGazeMass(d=d, token_geometry=(t_c, h_c, w_c))
