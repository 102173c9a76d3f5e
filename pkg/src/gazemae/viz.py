"""Per-frame mask visualization panels.

For each clip frame: the RGB image, the gaze heatmap blended onto it
(inferno colormap, alpha 0.5; black when the frame has no valid gaze),
the random mask, and the gaze-weighted mask, with masked patches drawn
as uniform gray blocks. An extra reconstruction panel is appended when a
pre-trained model is supplied.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from matplotlib import colormaps

from gazemae.data import VideoClip
from gazemae.gaze import accumulate_per_token, render_heatmap
from gazemae.masking import MaskPlan, masking_distribution, sample_gaze_mask, sample_random_mask
from gazemae.model import PretrainModel, token_pixels

log = logging.getLogger(__name__)

MASK_GRAY = 128
HEATMAP_ALPHA = 0.5
HEATMAP_CMAP = "inferno"


def _to_uint8(frame_chw: np.ndarray) -> np.ndarray:
    return (np.clip(frame_chw, 0.0, 1.0) * 255).round().astype(np.uint8).transpose(1, 2, 0)


def _paint_masked(frame: np.ndarray, row_mask: np.ndarray, patch_hw: tuple[int, int]) -> np.ndarray:
    h_c, w_c = patch_hw
    out = frame.copy()
    grid_w = frame.shape[1] // w_c
    for idx in np.flatnonzero(row_mask):
        gy, gx = divmod(int(idx), grid_w)
        out[gy * h_c : (gy + 1) * h_c, gx * w_c : (gx + 1) * w_c] = MASK_GRAY
    return out


def _paste_tokens(frame_pixels: torch.Tensor, values: torch.Tensor, token_ids: np.ndarray,
                  geometry: tuple[int, int, int], shape: tuple[int, int, int, int]) -> torch.Tensor:
    """Scatter per-token pixel vectors back into a (T, C, H, W) clip."""
    t, c, h, w = shape
    t_c, h_c, w_c = geometry
    grid_w = w // w_c
    n_s = (h // h_c) * grid_w
    out = frame_pixels.clone()
    for row, tok in enumerate(token_ids):
        tr, si = divmod(int(tok), n_s)
        gy, gx = divmod(si, grid_w)
        cube = values[row].reshape(t_c, c, h_c, w_c)
        out[tr * t_c : (tr + 1) * t_c, :, gy * h_c : (gy + 1) * h_c, gx * w_c : (gx + 1) * w_c] = cube
    return out


def mask_panels(
    clip: VideoClip,
    geometry: tuple[int, int, int],
    rho: float,
    tau: float,
    sigma: float,
    seed: int,
    model: PretrainModel | None = None,
) -> tuple[list[np.ndarray], MaskPlan, MaskPlan]:
    """Build one horizontal panel strip per frame.

    Returns (frames, random_plan, gaze_plan); each frame image is
    uint8 (H, n_panels * W, 3) with panels in the order RGB, heatmap
    overlay, random mask, gaze mask[, reconstruction].
    """
    n_frames, _, height, width = clip.pixels.shape
    t_c, h_c, w_c = geometry
    heatmap = render_heatmap(clip.gaze_points, height, width, sigma)
    mass = accumulate_per_token(heatmap, geometry)
    n_r, n_s = mass.d.shape
    gaze_plan = sample_gaze_mask(masking_distribution(mass, tau), rho, seed)
    random_plan = sample_random_mask(n_r, n_s, rho, seed)

    recon = None
    if model is not None:
        model.eval()
        with torch.no_grad():
            pixels = torch.from_numpy(clip.pixels).float()[None]
            mask = torch.from_numpy(gaze_plan.mask)[None]
            pred = model(pixels, mask)[0]
            recon = _paste_tokens(
                pixels[0], pred, gaze_plan.masked_indices(), geometry, clip.pixels.shape
            ).numpy()

    cmap = colormaps[HEATMAP_CMAP]
    frames = []
    for t in range(n_frames):
        rgb = _to_uint8(clip.pixels[t])
        if clip.gaze_points[t, 2] == 0:
            log.warning(
                "frame %d of %s/%d has no valid gaze; heatmap panel is black",
                t, clip.video_id, clip.start_frame,
            )
            overlay = np.zeros_like(rgb)
        else:
            colored = (cmap(heatmap.values[t])[..., :3] * 255).astype(np.uint8)
            overlay = ((1 - HEATMAP_ALPHA) * rgb + HEATMAP_ALPHA * colored).astype(np.uint8)
        row = t // t_c
        panels = [
            rgb,
            overlay,
            _paint_masked(rgb, random_plan.mask[row], (h_c, w_c)),
            _paint_masked(rgb, gaze_plan.mask[row], (h_c, w_c)),
        ]
        if recon is not None:
            panels.append(_to_uint8(recon[t]))
        frames.append(np.concatenate(panels, axis=1))
    return frames, random_plan, gaze_plan
