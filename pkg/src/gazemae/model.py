"""Space-time cube tokenizer, transformer encoder, reconstruction decoder,
and phase classification head.

The encoder follows the masked-autoencoder convention: during
pre-training it sees only visible tokens; a shared learned mask token
plus position encodings fill the masked slots at the decoder, which
predicts raw pixel values for each masked cube. For classification the
encoder runs on all tokens and a 2-layer MLP head consumes the
mean-pooled sequence.

Position encodings are fixed sinusoidal tables over the flat token
index, so the only learned ingredients are the linear cube projection,
the transformer weights, and the mask token.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 384
    encoder_depth: int = 12
    encoder_heads: int = 6
    decoder_dim: int = 192
    decoder_depth: int = 4
    decoder_heads: int = 3
    token_geometry: tuple[int, int, int] = (2, 16, 16)  # (T_c, H_c, W_c)
    input_shape: tuple[int, int, int, int] = (10, 3, 224, 224)  # (T, C, H, W)
    n_classes: int = 9
    mlp_ratio: float = 4.0

    def __post_init__(self):
        t, _, h, w = self.input_shape
        t_c, h_c, w_c = self.token_geometry
        if t % t_c or h % h_c or w % w_c:
            raise ValueError(
                f"input shape {self.input_shape} not divisible by token geometry {self.token_geometry}"
            )
        if self.embed_dim % self.encoder_heads or self.decoder_dim % self.decoder_heads:
            raise ValueError("embedding dims must be divisible by their head counts")
        if self.embed_dim % 2 or self.decoder_dim % 2:
            raise ValueError("embedding dims must be even for sinusoidal positions")

    @classmethod
    def preset(cls, name: str) -> "ModelConfig":
        """`vit_small` is the full-scale recipe; `tiny_test` runs in seconds on CPU."""
        if name == "vit_small":
            return cls()
        if name == "tiny_test":
            return cls(
                embed_dim=64,
                encoder_depth=2,
                encoder_heads=2,
                decoder_dim=32,
                decoder_depth=1,
                decoder_heads=2,
                token_geometry=(2, 8, 8),
                input_shape=(4, 3, 64, 64),
            )
        raise ValueError(f"unknown preset {name!r} (expected vit_small or tiny_test)")

    @property
    def n_r(self) -> int:
        return self.input_shape[0] // self.token_geometry[0]

    @property
    def grid_hw(self) -> tuple[int, int]:
        return (
            self.input_shape[2] // self.token_geometry[1],
            self.input_shape[3] // self.token_geometry[2],
        )

    @property
    def n_s(self) -> int:
        gh, gw = self.grid_hw
        return gh * gw

    @property
    def n_tokens(self) -> int:
        return self.n_r * self.n_s

    @property
    def pixels_per_token(self) -> int:
        t_c, h_c, w_c = self.token_geometry
        return t_c * self.input_shape[1] * h_c * w_c


@dataclass(frozen=True)
class PhasePrediction:
    probs: np.ndarray  # (n_classes,), sums to 1
    label: int


def sincos_table(n_positions: int, dim: int) -> torch.Tensor:
    """Fixed 1-D sin/cos position table, shape (n_positions, dim)."""
    pos = torch.arange(n_positions, dtype=torch.float64)[:, None]
    i = torch.arange(dim // 2, dtype=torch.float64)[None, :]
    angles = pos / torch.pow(10000.0, 2 * i / dim)
    table = torch.zeros(n_positions, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles)
    return table.float()


def space_time_positions(cfg: ModelConfig, dim: int) -> torch.Tensor:
    """Sinusoidal encodings over the flat time-major token index, (N_tokens, dim).

    Indexing the 1-D table by flat position keeps every token's code
    distinct; summing separable per-axis tables would not (the same table
    row reached via t or via w collides).
    """
    return sincos_table(cfg.n_tokens, dim)


def token_pixels(pixels: torch.Tensor, geometry: tuple[int, int, int]) -> torch.Tensor:
    """Cut (B, T, C, H, W) pixels into per-token cubes, (B, N_tokens, P).

    Token order is time-major then spatial row-major; within a token the
    pixel vector is ordered (t_c, c, h_c, w_c). The embedding layer and
    the reconstruction targets both use this function, so their
    orderings always agree.
    """
    t_c, h_c, w_c = geometry
    return rearrange(
        pixels,
        "b (nr tc) c (gh hc) (gw wc) -> b (nr gh gw) (tc c hc wc)",
        tc=t_c,
        hc=h_c,
        wc=w_c,
    )


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(x), "b n (three h d) -> three b h n d", three=3, h=self.heads)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(rearrange(out, "b h n d -> b n (h d)"))


class TransformerBlock(nn.Module):
    """Pre-norm attention + MLP block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def _init_weights(module: nn.Module):
    if isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.zeros_(module.bias)
        nn.init.ones_(module.weight)


class VideoEncoder(nn.Module):
    """Cube embedding + transformer over (optionally masked) token sequences."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.to_token = nn.Linear(cfg.pixels_per_token, cfg.embed_dim)
        self.register_buffer("positions", space_time_positions(cfg, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.embed_dim, cfg.encoder_heads, cfg.mlp_ratio)
            for _ in range(cfg.encoder_depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.apply(_init_weights)

    def embed(self, pixels: torch.Tensor) -> torch.Tensor:
        """Cube-project pixels and add position encodings, (B, N_tokens, F)."""
        expected = self.cfg.input_shape
        if tuple(pixels.shape[1:]) != expected:
            raise ValueError(f"clip shape {tuple(pixels.shape[1:])} != configured {expected}")
        tokens = self.to_token(token_pixels(pixels, self.cfg.token_geometry))
        return tokens + self.positions

    def forward_sequence(self, tokens: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens)

    def encode_visible(self, embeddings: torch.Tensor, flat_mask: torch.Tensor) -> torch.Tensor:
        """Run the transformer on unmasked tokens only.

        ``flat_mask`` is (B, N_tokens) boolean, True = masked. Output is
        (B, V, F), rows following ascending visible token index.
        """
        batch, n_tokens, dim = embeddings.shape
        if flat_mask.shape != (batch, n_tokens):
            raise ValueError(f"mask shape {tuple(flat_mask.shape)} != ({batch}, {n_tokens})")
        n_visible = int((~flat_mask[0]).sum())
        if n_visible == 0:
            raise ValueError("mask hides every token; the encoder needs at least one visible token")
        visible = embeddings[~flat_mask].reshape(batch, n_visible, dim)
        return self.forward_sequence(visible)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.forward_sequence(self.embed(pixels))


class ReconstructionDecoder(nn.Module):
    """Lightweight decoder predicting raw pixels of masked cubes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.from_encoder = nn.Linear(cfg.embed_dim, cfg.decoder_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.decoder_dim))
        self.register_buffer("positions", space_time_positions(cfg, cfg.decoder_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.decoder_dim, cfg.decoder_heads, cfg.mlp_ratio)
            for _ in range(cfg.decoder_depth)
        )
        self.norm = nn.LayerNorm(cfg.decoder_dim)
        self.to_pixels = nn.Linear(cfg.decoder_dim, cfg.pixels_per_token)
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def forward(self, encoded: torch.Tensor, flat_mask: torch.Tensor) -> torch.Tensor:
        """(B, V, F) visible encodings -> (B, M, P) masked-pixel predictions.

        Prediction rows follow ascending masked token index (time-major),
        matching the target enumeration of the reconstruction loss.
        """
        batch, n_visible, _ = encoded.shape
        n_masked = int(flat_mask[0].sum())
        if n_visible + n_masked != self.cfg.n_tokens:
            raise ValueError(
                f"{n_visible} visible + {n_masked} masked != {self.cfg.n_tokens} tokens"
            )
        x = self.from_encoder(encoded)
        dim = x.shape[-1]
        pos = self.positions.expand(batch, -1, -1)
        pos_visible = pos[~flat_mask].reshape(batch, n_visible, dim)
        pos_masked = pos[flat_mask].reshape(batch, n_masked, dim)
        full = torch.cat([x + pos_visible, self.mask_token + pos_masked], dim=1)
        for block in self.blocks:
            full = block(full)
        return self.to_pixels(self.norm(full[:, -n_masked:]))


class PretrainModel(nn.Module):
    """Masked autoencoder: encoder over visible tokens, decoder over all slots."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = VideoEncoder(cfg)
        self.decoder = ReconstructionDecoder(cfg)

    def forward(self, pixels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """pixels (B, T, C, H, W), mask (B, N_r, N_s) bool -> (B, M, P)."""
        flat_mask = mask.reshape(mask.shape[0], -1)
        embeddings = self.encoder.embed(pixels)
        encoded = self.encoder.encode_visible(embeddings, flat_mask)
        return self.decoder(encoded, flat_mask)


class PhaseClassifier(nn.Module):
    """Encoder over all tokens, mean pooling, 2-layer MLP head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = VideoEncoder(cfg)
        self.head = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.embed_dim),
            nn.GELU(),
            nn.Linear(cfg.embed_dim, cfg.n_classes),
        )
        self.head.apply(_init_weights)

    def forward(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(pixels).mean(dim=1))


def classify_clip(model: PhaseClassifier, pixels: np.ndarray) -> PhasePrediction:
    """Run one unbatched clip through the classifier; probs sum to 1."""
    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(np.ascontiguousarray(pixels)).float()[None])
        probs = torch.softmax(logits[0], dim=-1).numpy()
    return PhasePrediction(probs=probs, label=int(probs.argmax()))


def encoder_param_count(cfg: ModelConfig) -> int:
    """Analytic encoder parameter count (cube projection through final norm).

    Per block with fused qkv and bias everywhere:
    (4 + 2r) F^2 + (9 + r) F, r = mlp_ratio. vit_small lands at
    21,884,544 (about 22M).
    """
    f = cfg.embed_dim
    r = cfg.mlp_ratio
    per_block = int((4 + 2 * r) * f * f + (9 + r) * f)
    patch_embed = cfg.pixels_per_token * f + f
    return patch_embed + cfg.encoder_depth * per_block + 2 * f


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    cfg: ModelConfig,
    optimizer: torch.optim.Optimizer | None = None,
    epoch: int = 0,
    extra: dict | None = None,
) -> Path:
    """Write a versioned single-file archive of model + training state.

    Contents: config echo, parameter tensors under canonical dotted
    names, optimizer state, epoch counter, and torch RNG state.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": dataclasses.asdict(cfg),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "rng_state": {"torch": torch.get_rng_state()},
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version: {version}")
    return payload


def config_from_checkpoint(payload: dict) -> ModelConfig:
    raw = dict(payload["config"])
    raw["token_geometry"] = tuple(raw["token_geometry"])
    raw["input_shape"] = tuple(raw["input_shape"])
    return ModelConfig(**raw)
