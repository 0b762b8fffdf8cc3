"""Turn clips into model-ready tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .codec import RvqCodebooks, TokenGrid, encode
from .sequencer import apply_delay, build_alignment
from .synthworld import ClipSample, Waveform


def audio_timesteps(n_samples: int, hop: int) -> int:
    """Token count for a clip of ``n_samples``; the tail is padded to a full hop."""
    return (n_samples - hop) // hop + 1


def tokenize_audio(waveform: Waveform, codebooks: RvqCodebooks) -> TokenGrid:
    """Encode with ``frame_len - hop`` trailing zeros so ``t_a = len / hop``."""
    pad = np.zeros(codebooks.frame_len - codebooks.hop)
    return encode(np.concatenate([waveform.samples, pad]), codebooks)


@dataclass
class TokenizedSet:
    ids: list[str]
    cells: torch.Tensor  # (N, L, N_q) int64 delayed grids
    features: torch.Tensor  # (N, t_v, d_raw) float32
    frame_of: np.ndarray  # (L,)
    K: int

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def t_v(self) -> int:
        return self.features.shape[1]

    @property
    def t_a(self) -> int:
        return self.cells.shape[1] - self.cells.shape[2]

    def subset(self, idx) -> "TokenizedSet":
        idx = list(idx)
        return TokenizedSet(
            [self.ids[i] for i in idx], self.cells[idx], self.features[idx], self.frame_of, self.K
        )


def tokenize_clips(clips: list[ClipSample], codebooks: RvqCodebooks) -> TokenizedSet:
    cells, feats = [], []
    for clip in clips:
        grid = tokenize_audio(clip.audio, codebooks)
        cells.append(apply_delay(grid).cells)
        feats.append(clip.video.features)
    cells_arr = np.stack(cells)
    t_v = feats[0].shape[0]
    t_a = cells_arr.shape[1] - codebooks.N_q
    alignment = build_alignment(t_v, t_a, codebooks.N_q)
    return TokenizedSet(
        [c.id for c in clips],
        torch.as_tensor(cells_arr, dtype=torch.int64),
        torch.as_tensor(np.stack(feats), dtype=torch.float32),
        alignment.frame_of,
        codebooks.K,
    )
