"""Index bookkeeping between the audio token grid and the visual stream.

Positions and frames are 0-indexed here.  Row ``r`` of a delayed grid holds
level ``i`` (1-indexed) token of timestep ``r - i``; row 0 is PAD on every
level.  ``VPAD`` marks positions past the last audio timestep, which get the
learned visual padding vector instead of a frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import TokenGrid
from .errors import InvalidArgument, MalformedGrid

VPAD = -1


@dataclass(frozen=True, eq=False)
class DelayedGrid:
    cells: np.ndarray  # (L, N_q) int64, PAD == K
    K: int

    @property
    def pad(self) -> int:
        return self.K

    @property
    def L(self) -> int:
        return self.cells.shape[0]

    @property
    def N_q(self) -> int:
        return self.cells.shape[1]

    @property
    def t_a(self) -> int:
        return self.L - self.N_q


def layout_mask(t_a: int, n_q: int) -> np.ndarray:
    """Boolean (L, N_q) mask, True where the delay layout holds a real token."""
    rows = np.arange(t_a + n_q)[:, None]
    level = np.arange(1, n_q + 1)[None, :]
    return (rows >= level) & (rows < level + t_a)


def apply_delay(grid: TokenGrid) -> DelayedGrid:
    t_a, n_q = grid.tokens.shape
    cells = np.full((t_a + n_q, n_q), grid.K, dtype=np.int64)
    for i in range(1, n_q + 1):
        cells[i:i + t_a, i - 1] = grid.tokens[:, i - 1]
    return DelayedGrid(cells, grid.K)


def remove_delay(delayed: DelayedGrid) -> TokenGrid:
    cells = np.asarray(delayed.cells)
    L, n_q = cells.shape
    t_a = L - n_q
    if t_a < 0:
        raise MalformedGrid(f"grid with {L} rows cannot hold {n_q} delayed levels")
    mask = layout_mask(t_a, n_q)
    if np.any(cells[~mask] != delayed.pad):
        r, i = np.argwhere((cells != delayed.pad) & ~mask)[0]
        raise MalformedGrid(f"token in mandatory PAD cell (row {r}, level {i + 1})")
    interior = cells[mask]
    if interior.size and (interior.min() < 0 or interior.max() >= delayed.K):
        raise MalformedGrid("interior cell is PAD or out of range")
    tokens = np.empty((t_a, n_q), dtype=np.int64)
    for i in range(1, n_q + 1):
        tokens[:, i - 1] = cells[i:i + t_a, i - 1]
    return TokenGrid(tokens, delayed.K)


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    t_a: int
    t_v: int
    n_q: int
    frame_of: np.ndarray  # (L,) frame index or VPAD

    @property
    def L(self) -> int:
        return self.t_a + self.n_q


def build_alignment(t_v: int, t_a: int, n_q: int) -> AlignmentMap:
    """Map every fused position to the visual frame it may see.

    Position ``r < t_a`` sees frame ``floor(r * t_v / t_a)``: each frame is
    duplicated ``t_a / t_v`` times and no position sees a frame that starts
    after it.  Because row 0 of the audio layout is PAD, the frame for
    timestep ``r`` sits one step ahead of that timestep's level-1 token.
    """
    if t_v < 1 or t_a < 1:
        raise InvalidArgument(f"need t_v >= 1 and t_a >= 1, got t_v={t_v}, t_a={t_a}")
    L = t_a + n_q
    frame_of = np.full(L, VPAD, dtype=np.int64)
    r = np.arange(t_a)
    frame_of[:t_a] = np.minimum(t_v - 1, (r * t_v) // t_a)
    return AlignmentMap(t_a, t_v, n_q, frame_of)


def fuse(audio_embeds: np.ndarray, visual_embeds: np.ndarray) -> np.ndarray:
    """Channel-wise concatenation, audio channels first.

    Works on numpy arrays and torch tensors alike (last axis is channels).
    """
    if audio_embeds.shape[:-1] != visual_embeds.shape[:-1]:
        raise InvalidArgument(
            f"length mismatch: audio {tuple(audio_embeds.shape)} vs visual {tuple(visual_embeds.shape)}"
        )
    if isinstance(audio_embeds, np.ndarray):
        return np.concatenate([audio_embeds, visual_embeds], axis=-1)
    import torch

    return torch.cat([audio_embeds, visual_embeds], dim=-1)


def split(fused, d_a: int):
    return fused[..., :d_a], fused[..., d_a:]


def prepend_condition(audio_embeds, visual_embeds):
    """Baseline conditioning: visual rows placed in time before the audio rows.

    Each part is zero-padded to width ``d_a + d_v`` in the other modality's
    channels.
    """
    d_a = audio_embeds.shape[-1]
    d_v = visual_embeds.shape[-1]
    if isinstance(audio_embeds, np.ndarray):
        a = np.concatenate([audio_embeds, np.zeros(audio_embeds.shape[:-1] + (d_v,))], axis=-1)
        v = np.concatenate([np.zeros(visual_embeds.shape[:-1] + (d_a,)), visual_embeds], axis=-1)
        return np.concatenate([v, a], axis=-2)
    import torch

    a = torch.cat([audio_embeds, audio_embeds.new_zeros(audio_embeds.shape[:-1] + (d_v,))], dim=-1)
    v = torch.cat([visual_embeds.new_zeros(visual_embeds.shape[:-1] + (d_a,)), visual_embeds], dim=-1)
    return torch.cat([v, a], dim=-2)


def prepend_loss_mask(t_v: int, delayed: DelayedGrid) -> np.ndarray:
    """(t_v + L, N_q) mask of logit cells that carry a training target.

    Logits at sequence position ``p`` predict the following row; prefix
    positions before the last visual row never carry a target, and PAD
    targets are excluded.
    """
    L, n_q = delayed.cells.shape
    mask = np.zeros((t_v + L, n_q), dtype=bool)
    targets = delayed.cells != delayed.pad
    # logits at t_v - 1 + r predict audio row r
    mask[t_v - 1 + 1: t_v - 1 + L] = targets[1:]
    return mask
