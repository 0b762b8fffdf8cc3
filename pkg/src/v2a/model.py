"""Decoder-only transformer over fused audio-visual embeddings.

Audio rows are the sum of per-level token embeddings; visual rows are an
MLP projection of the raw feature stream, duplicated to the audio rate.  The
two are concatenated channel-wise ("fusion") or, for the baseline, the
visual rows are prepended in time ("prepend").  The backbone is a pre-norm
transformer with RMSNorm, rotary position phases on queries/keys and a
SiLU-gated feed-forward, followed by one classification head per level.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgument, NumericOverflow
from .sequencer import VPAD, fuse, prepend_condition

IGNORE = -100


@dataclass(frozen=True)
class ModelConfig:
    K: int = 256
    N_q: int = 4
    d_a: int = 128
    d_v: int = 64
    d_raw: int = 16
    d_hidden_visual: int = 128
    n_layer: int = 4
    n_head: int = 4
    conditioning: Literal["fusion", "prepend"] = "fusion"
    rope_base: float = 10000.0
    init_std: float = 0.02

    def __post_init__(self):
        if self.d % (2 * self.n_head):
            raise InvalidArgument(f"d = d_a + d_v = {self.d} must be divisible by 2 * n_head = {2 * self.n_head}")
        if self.conditioning not in ("fusion", "prepend"):
            raise InvalidArgument(f"unknown conditioning {self.conditioning!r}")

    @property
    def d(self) -> int:
        return self.d_a + self.d_v

    @property
    def ffn_hidden(self) -> int:
        return 16 * math.ceil(8 * self.d / 3 / 16)

    def to_dict(self) -> dict:
        return asdict(self)


def count_parameters(cfg: ModelConfig) -> dict[str, int]:
    """Parameter count per family, derived from the config alone."""
    d, V = cfg.d, cfg.K + 1
    per_block = 2 * d + 4 * d * d + 3 * d * cfg.ffn_hidden
    counts = {
        "embeddings": cfg.N_q * V * cfg.d_a,
        "visual_proj": cfg.d_raw * cfg.d_hidden_visual + cfg.d_hidden_visual
        + cfg.d_hidden_visual * cfg.d_v + cfg.d_v,
        "u_cond": cfg.d_v,
        "v_pad": cfg.d_v,
        "blocks": cfg.n_layer * per_block,
        "final_norm": d,
        "heads": cfg.N_q * (d * V + V),
    }
    counts["total"] = sum(counts.values())
    return counts


def param_family(name: str) -> str:
    for fam in ("embeddings", "visual_proj", "u_cond", "v_pad", "blocks", "final_norm", "heads"):
        if name.startswith(fam):
            return fam
    raise KeyError(name)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


def rope_tables(positions: torch.Tensor, head_dim: int, base: float, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    inv = 1.0 / (base ** (torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim))
    ang = positions.to(torch.float64)[:, None] * inv[None, :]
    return torch.cos(ang).to(dtype), torch.sin(ang).to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (B, H, T, hd); rotates channel pairs (i, i + hd/2)
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


class KVCache:
    """Per-layer key/value buffers for incremental decoding."""

    def __init__(self, n_layer: int):
        self.layers: list[tuple[torch.Tensor, torch.Tensor] | None] = [None] * n_layer
        self.length = 0


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_head = cfg.n_head
        self.head_dim = cfg.d // cfg.n_head
        self.base = cfg.rope_base
        self.qkv = nn.Linear(cfg.d, 3 * cfg.d, bias=False)
        self.out = nn.Linear(cfg.d, cfg.d, bias=False)

    def forward(self, x, start: int, cache: KVCache | None, layer: int):
        B, T, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)
        q, k, v = (t.view(B, T, self.n_head, self.head_dim).transpose(1, 2) for t in (q, k, v))
        pos = torch.arange(start, start + T)
        cos, sin = rope_tables(pos, self.head_dim, self.base, x.dtype)
        q, k = apply_rope(q, cos, sin), apply_rope(k, cos, sin)
        if cache is not None:
            prev = cache.layers[layer]
            if prev is not None:
                k = torch.cat([prev[0], k], dim=2)
                v = torch.cat([prev[1], v], dim=2)
            cache.layers[layer] = (k, v)
        S = k.shape[2]
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        # query at absolute position start+t may see keys at positions <= start+t
        q_pos = torch.arange(start, start + T)[:, None]
        k_pos = torch.arange(start + T - S, start + T)[None, :]
        att = att.masked_fill(k_pos > q_pos, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, d)
        return self.out(y)


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.gate = nn.Linear(cfg.d, cfg.ffn_hidden, bias=False)
        self.up = nn.Linear(cfg.d, cfg.ffn_hidden, bias=False)
        self.down = nn.Linear(cfg.ffn_hidden, cfg.d, bias=False)

    def forward(self, x):
        return self.down(F.silu(self.gate(x)) * self.up(x))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn_norm = RMSNorm(cfg.d)
        self.attn = Attention(cfg)
        self.ffn_norm = RMSNorm(cfg.d)
        self.ffn = FeedForward(cfg)

    def forward(self, x, start, cache, layer):
        x = x + self.attn(self.attn_norm(x), start, cache, layer)
        return x + self.ffn(self.ffn_norm(x))


class AudioVisualLM(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        V = cfg.K + 1
        self.embeddings = nn.ModuleList([nn.Embedding(V, cfg.d_a) for _ in range(cfg.N_q)])
        self.visual_proj = nn.Sequential(
            nn.Linear(cfg.d_raw, cfg.d_hidden_visual), nn.GELU(), nn.Linear(cfg.d_hidden_visual, cfg.d_v)
        )
        self.u_cond = nn.Parameter(torch.zeros(cfg.d_v))
        self.v_pad = nn.Parameter(torch.zeros(cfg.d_v))
        self.blocks = nn.ModuleList([Block(cfg) for _ in range(cfg.n_layer)])
        self.final_norm = RMSNorm(cfg.d)
        self.heads = nn.ModuleList([nn.Linear(cfg.d, V) for _ in range(cfg.N_q)])
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        std = self.cfg.init_std
        out_std = std / math.sqrt(2 * self.cfg.n_layer)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("norm.weight"):
                    p.fill_(1.0)
                elif name.endswith("bias"):
                    p.zero_()
                elif name.endswith(("out.weight", "down.weight")):
                    p.copy_(torch.randn(p.shape, generator=g) * out_std)
                else:
                    p.copy_(torch.randn(p.shape, generator=g) * std)

    # -- input assembly --------------------------------------------------------

    def embed_audio(self, cells: torch.Tensor) -> torch.Tensor:
        """Sum of level embeddings; ``cells`` is (..., N_q) with PAD == K."""
        if cells.numel() and (int(cells.min()) < 0 or int(cells.max()) > self.cfg.K):
            from .errors import InvalidToken

            raise InvalidToken(f"cell ids must lie in [0, {self.cfg.K}]")
        out = self.embeddings[0](cells[..., 0])
        for i in range(1, self.cfg.N_q):
            out = out + self.embeddings[i](cells[..., i])
        return out

    def project_visual(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.cfg.d_raw:
            raise InvalidArgument(f"feature width {features.shape[-1]} != d_raw {self.cfg.d_raw}")
        return self.visual_proj(features)

    def visual_rows(self, projected: torch.Tensor, frame_of: np.ndarray) -> torch.Tensor:
        """Gather projected frames per fused position; VPAD positions get ``v_pad``."""
        frame_of = np.asarray(frame_of)
        idx = torch.as_tensor(np.maximum(frame_of, 0))
        rows = projected[:, idx]
        is_pad = torch.as_tensor(frame_of == VPAD)[None, :, None]
        return torch.where(is_pad, self.v_pad.to(rows.dtype), rows)

    def drop_condition(self, rows: torch.Tensor, drop: torch.Tensor | None) -> torch.Tensor:
        """Replace every visual row of the dropped samples with ``u_cond``."""
        if drop is None:
            return rows
        return torch.where(drop[:, None, None], self.u_cond.to(rows.dtype), rows)

    def build_inputs(self, cells, features, frame_of, drop=None) -> torch.Tensor:
        """Full teacher-forced input sequence for a batch.

        cells: (B, L, N_q) delayed grids; features: (B, t_v, d_raw).
        """
        audio = self.embed_audio(cells)
        projected = self.project_visual(features)
        if self.cfg.conditioning == "fusion":
            visual = self.drop_condition(self.visual_rows(projected, frame_of), drop)
            return fuse(audio, visual)
        return prepend_condition(audio, self.drop_condition(projected, drop))

    # -- backbone -------------------------------------------------------------

    def forward(self, x: torch.Tensor, cache: KVCache | None = None) -> torch.Tensor:
        """Logits (B, T, N_q, K+1); position t parameterizes the next row."""
        start = 0 if cache is None else cache.length
        for layer, block in enumerate(self.blocks):
            x = block(x, start, cache, layer)
        if cache is not None:
            cache.length += x.shape[1]
        h = self.final_norm(x)
        logits = torch.stack([head(h) for head in self.heads], dim=2)
        if not torch.isfinite(logits).all():
            raise NumericOverflow("non-finite logits")
        return logits


def sequence_targets(cells: torch.Tensor, pad: int, t_v: int = 0, conditioning: str = "fusion") -> torch.Tensor:
    """Targets aligned with forward() positions; IGNORE where no loss applies.

    Logits at position ``p`` predict the following row, so the last position
    has no target; PAD targets and the visual prefix of "prepend" are masked.
    """
    B, L, n_q = cells.shape
    tgt = torch.full_like(cells, IGNORE)
    tgt[:, :-1] = cells[:, 1:]
    tgt = tgt.masked_fill(tgt == pad, IGNORE)
    if conditioning == "prepend":
        prefix = torch.full((B, t_v, n_q), IGNORE, dtype=cells.dtype)
        # logits at t_v - 1 predict audio row 0, which is all PAD
        tgt = torch.cat([prefix, tgt], dim=1)
    return tgt


def masked_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Mean cross-entropy over cells whose target is a real token.

    Returns ``(loss, n_cells)``.  With no contributing cells the loss is
    defined as 0 and a ``RuntimeWarning`` is emitted.
    """
    if logits.shape[:-1] != targets.shape:
        raise InvalidArgument(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    n = int((targets != IGNORE).sum())
    if n == 0:
        warnings.warn("no real-token targets; loss defined as 0", RuntimeWarning, stacklevel=2)
        return logits.sum() * 0.0, 0
    V = logits.shape[-1]
    loss = F.cross_entropy(logits.reshape(-1, V), targets.reshape(-1), ignore_index=IGNORE, reduction="sum")
    return loss / n, n
