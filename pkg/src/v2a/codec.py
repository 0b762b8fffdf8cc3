"""Residual vector quantization codec over Hann-windowed waveform frames.

Analysis is the identity on windowed frames, so the only loss in the
round trip is quantization.  With a periodic Hann window and 50% overlap the
windows sum to one, which makes plain overlap-add an exact inverse of
analysis away from the two edge half-frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import sparse

from .errors import InvalidArgument, InvalidToken, UndefinedSnr
from .synthworld import Waveform

log = logging.getLogger(__name__)

FRAME_LEN = 64
HOP = 32
COLA_GAIN = 1.0
# k-means++ seeding draws from a seeded subsample of this many rows per cluster
SEED_POOL_PER_CLUSTER = 64


def hann(frame_len: int) -> np.ndarray:
    n = np.arange(frame_len)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / frame_len)


def n_frames(n_samples: int, frame_len: int = FRAME_LEN, hop: int = HOP) -> int:
    return (n_samples - frame_len) // hop + 1


@dataclass(frozen=True, eq=False)
class RvqCodebooks:
    codebooks: np.ndarray  # (N_q, K, frame_len) float64
    frame_len: int = FRAME_LEN
    hop: int = HOP

    def __post_init__(self):
        if self.codebooks.ndim != 3:
            raise InvalidArgument("codebooks must have shape (N_q, K, frame_len)")
        if self.N_q < 1 or self.K < 2:
            raise InvalidArgument(f"need N_q >= 1 and K >= 2, got N_q={self.N_q}, K={self.K}")
        if self.codebooks.shape[2] != self.frame_len or self.hop * 2 != self.frame_len:
            raise InvalidArgument("hop must be frame_len / 2 and codebook width must equal frame_len")
        if not np.all(np.isfinite(self.codebooks)):
            raise InvalidArgument("codebooks contain non-finite values")

    @property
    def N_q(self) -> int:
        return self.codebooks.shape[0]

    @property
    def K(self) -> int:
        return self.codebooks.shape[1]

    def truncated(self, n_q: int) -> "RvqCodebooks":
        """The first ``n_q`` levels of this codec."""
        return RvqCodebooks(self.codebooks[:n_q].copy(), self.frame_len, self.hop)


@dataclass(frozen=True, eq=False)
class TokenGrid:
    tokens: np.ndarray  # (t_a, N_q) int64
    K: int

    @property
    def t_a(self) -> int:
        return self.tokens.shape[0]

    @property
    def N_q(self) -> int:
        return self.tokens.shape[1]


def analyze(samples: np.ndarray, frame_len: int = FRAME_LEN, hop: int = HOP) -> np.ndarray:
    """Windowed frames, one row per token timestep."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < frame_len:
        raise InvalidArgument(f"waveform of {len(samples)} samples is shorter than one frame ({frame_len})")
    t_a = n_frames(len(samples), frame_len, hop)
    idx = np.arange(t_a)[:, None] * hop + np.arange(frame_len)[None, :]
    return samples[idx] * hann(frame_len)[None, :]


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def nearest(x: np.ndarray, centers: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Index of the nearest center per row; ties go to the lowest index.

    Runs in the dtype of ``x``; fitting passes float32 for speed, encoding
    stays in float64.
    """
    centers = centers.astype(x.dtype, copy=False)
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = np.argmin(_sq_dists(x[s:s + chunk], centers), axis=1)
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(x) > SEED_POOL_PER_CLUSTER * k:
        x = x[np.sort(rng.choice(len(x), SEED_POOL_PER_CLUSTER * k, replace=False))]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            j = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            j = min(j, len(x) - 1)
        else:
            j = int(rng.integers(len(x)))
        centers[i] = x[j]
        np.minimum(d2, ((x - centers[i]) ** 2).sum(1), out=d2)
    return centers


def kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    iters: int,
    fixed: np.ndarray | None = None,
) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding.

    ``fixed`` rows are prepended to the codebook and never move.  Empty
    clusters are re-seeded to the points farthest from their centroid.
    """
    n_fixed = 0 if fixed is None else len(fixed)
    n_free = k - n_fixed
    free = _kmeans_pp(x, n_free, rng)
    centers = free if fixed is None else np.concatenate([fixed, free])
    x32 = x.astype(np.float32)
    for _ in range(iters):
        assign = nearest(x32, centers)
        counts = np.bincount(assign, minlength=k)
        onehot = sparse.csr_matrix((np.ones(len(x)), (assign, np.arange(len(x)))), shape=(k, len(x)))
        sums = np.asarray(onehot @ x)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        empty = np.flatnonzero(~nz)
        empty = empty[empty >= n_fixed]
        if len(empty):
            err = ((x - new[assign]) ** 2).sum(1)
            far = np.argsort(-err, kind="stable")[: len(empty)]
            new[empty] = x[far]
        if n_fixed:
            new[:n_fixed] = fixed
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def fit_rvq(
    corpus: Iterable[np.ndarray],
    N_q: int = 4,
    K: int = 256,
    seed: int = 0,
    iters: int = 10,
    frame_len: int = FRAME_LEN,
    hop: int = HOP,
) -> RvqCodebooks:
    """Fit one k-means codebook per level on the residual of the levels above.

    Levels after the first reserve entry 0 for the zero vector, so adding a
    level can never increase a frame's residual energy.
    """
    x = np.concatenate([np.asarray(f, dtype=np.float64) for f in corpus], axis=0)
    if len(x) < K:
        raise InvalidArgument(f"corpus has {len(x)} rows, fewer than K={K}")
    rng = np.random.default_rng(seed)
    residual = x.copy()
    books = []
    for level in range(N_q):
        fixed = None if level == 0 else np.zeros((1, frame_len))
        cb = kmeans(residual, K, rng, iters, fixed=fixed)
        books.append(cb)
        residual -= cb[nearest(residual, cb)]
        log.debug("rvq level %d residual energy %.4g", level, float((residual**2).sum()))
    return RvqCodebooks(np.stack(books), frame_len, hop)


def quantize_frames(frames: np.ndarray, codebooks: RvqCodebooks, return_residuals: bool = False):
    """Greedy residual quantization of analysis frames -> (t_a, N_q) tokens."""
    residual = np.array(frames, dtype=np.float64)
    tokens = np.empty((len(frames), codebooks.N_q), dtype=np.int64)
    energies = [(residual**2).sum(1)]
    for i, cb in enumerate(codebooks.codebooks):
        idx = nearest(residual, cb)
        tokens[:, i] = idx
        residual -= cb[idx]
        energies.append((residual**2).sum(1))
    if return_residuals:
        return tokens, np.stack(energies, axis=1)
    return tokens


def encode(waveform: Waveform | np.ndarray, codebooks: RvqCodebooks) -> TokenGrid:
    samples = waveform.samples if isinstance(waveform, Waveform) else waveform
    frames = analyze(samples, codebooks.frame_len, codebooks.hop)
    return TokenGrid(quantize_frames(frames, codebooks), codebooks.K)


def decode(grid: TokenGrid, codebooks: RvqCodebooks, sample_rate: int = 8000) -> Waveform:
    tokens = np.asarray(grid.tokens)
    if tokens.ndim != 2 or tokens.shape[1] != codebooks.N_q:
        raise InvalidArgument(f"grid has shape {tokens.shape}, codec has N_q={codebooks.N_q}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= codebooks.K):
        raise InvalidToken(f"token ids must lie in [0, {codebooks.K - 1}]")
    t_a = tokens.shape[0]
    fl, hop = codebooks.frame_len, codebooks.hop
    frames = np.zeros((t_a, fl))
    for i in range(codebooks.N_q):
        frames += codebooks.codebooks[i][tokens[:, i]]
    out = np.zeros((t_a - 1) * hop + fl if t_a else 0)
    for j in range(t_a):
        out[j * hop: j * hop + fl] += frames[j]
    out /= COLA_GAIN
    np.clip(out, -1.0, 1.0, out=out)
    return Waveform(out, sample_rate)


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    n = min(len(reference), len(estimate))
    ref = np.asarray(reference[:n], dtype=np.float64)
    err = ref - np.asarray(estimate[:n], dtype=np.float64)
    p_sig = float(np.mean(ref**2))
    if p_sig == 0.0:
        raise UndefinedSnr("signal power is zero")
    p_err = float(np.mean(err**2))
    if p_err == 0.0:
        return float("inf")
    return 10.0 * np.log10(p_sig / p_err)


def roundtrip_snr(waveform: Waveform, codebooks: RvqCodebooks) -> float:
    if not np.any(waveform.samples):
        raise UndefinedSnr("silent waveform")
    rec = decode(encode(waveform, codebooks), codebooks, waveform.sample_rate)
    return snr_db(waveform.samples, rec.samples)
