"""Autoregressive generation with classifier-free guidance."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .codec import RvqCodebooks, TokenGrid, decode
from .data import audio_timesteps
from .errors import InvalidArgument, NumericOverflow
from .model import AudioVisualLM, KVCache
from .sequencer import DelayedGrid, build_alignment, layout_mask, remove_delay
from .synthworld import VideoFeatureStream, Waveform, n_samples


@dataclass(frozen=True)
class SampleConfig:
    gamma: float = 6.0
    temperature: float = 1.0
    top_k: int = 0
    seed: int = 0
    duration_s: float = 2.56

    def __post_init__(self):
        if self.temperature < 0:
            raise InvalidArgument(f"temperature must be >= 0, got {self.temperature}")
        if self.top_k < 0:
            raise InvalidArgument(f"top_k must be >= 0, got {self.top_k}")

    def to_dict(self) -> dict:
        return asdict(self)


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def cfg_mix(logp_cond: np.ndarray, logp_uncond: np.ndarray | None, gamma: float) -> np.ndarray:
    """``gamma * logp_cond + (1 - gamma) * logp_uncond``, renormalized.

    ``logp_uncond`` may be None only when ``gamma == 1``.
    """
    if logp_uncond is None:
        if gamma != 1:
            raise InvalidArgument("unconditional log-probabilities required when gamma != 1")
        return log_softmax(logp_cond)
    if logp_cond.shape != logp_uncond.shape:
        raise InvalidArgument(f"shape mismatch {logp_cond.shape} vs {logp_uncond.shape}")
    return log_softmax(gamma * logp_cond + (1.0 - gamma) * logp_uncond)


def sample_tokens(scores: np.ndarray, temperature: float, top_k: int, u: np.ndarray) -> np.ndarray:
    """Vectorized draw: one token per row of ``scores`` using uniforms ``u``.

    ``-inf`` scores are never drawn.  Temperature 0 is argmax with ties to
    the lowest index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if temperature == 0:
        return np.argmax(scores, axis=-1)
    z = scores / temperature
    if top_k and top_k < z.shape[-1]:
        # keep the top_k highest; ties at the cut resolved toward lower ids
        order = np.argsort(-z, axis=-1, kind="stable")
        z = z.copy()
        np.put_along_axis(z, order[:, top_k:], -np.inf, axis=-1)
    z = z - np.max(z, axis=-1, keepdims=True)
    p = np.exp(z)
    cdf = np.cumsum(p, axis=-1)
    target = u * cdf[:, -1]
    idx = np.array([np.searchsorted(c, t, side="right") for c, t in zip(cdf, target)])
    # searchsorted can land on a zero-probability tail entry by rounding
    idx = np.minimum(idx, z.shape[-1] - 1)
    bad = p[np.arange(len(idx)), idx] == 0
    if bad.any():
        idx[bad] = np.argmax(p[bad], axis=-1)
    return idx


def sample_token(scores: np.ndarray, temperature: float, top_k: int, rng: np.random.Generator) -> int:
    return int(sample_tokens(np.asarray(scores)[None, :], temperature, top_k, rng.random(1))[0])


@dataclass
class GenerationTrace:
    """Bookkeeping from one generate call, used by audits and tests."""

    cond_forwards: int = 0
    uncond_forwards: int = 0
    # (step, latest frame index fed, audio timestep being predicted)
    frames_read: list[tuple[int, int, int]] = field(default_factory=list)


def _check_compat(model: AudioVisualLM, codebooks: RvqCodebooks) -> None:
    if model.cfg.K != codebooks.K or model.cfg.N_q != codebooks.N_q:
        raise InvalidArgument(
            f"model (K={model.cfg.K}, N_q={model.cfg.N_q}) does not match codec "
            f"(K={codebooks.K}, N_q={codebooks.N_q})"
        )


@torch.no_grad()
def generate_batch(
    model: AudioVisualLM,
    codebooks: RvqCodebooks,
    videos: list[VideoFeatureStream],
    cfg: SampleConfig,
    seeds: list[int] | None = None,
    sample_rate: int = 8000,
    trace: GenerationTrace | None = None,
) -> tuple[list[TokenGrid], list[Waveform]]:
    """Generate one clip per video, all of length ``cfg.duration_s``.

    Clip ``b`` draws from a generator seeded with ``seeds[b]`` (default
    ``cfg.seed + b``).
    """
    _check_compat(model, codebooks)
    if not videos:
        return [], []
    model.eval()
    B = len(videos)
    seeds = [cfg.seed + b for b in range(B)] if seeds is None else list(seeds)
    rngs = [np.random.default_rng(s) for s in seeds]
    fps = videos[0].fps
    if any(cfg.duration_s > v.duration_s + 1e-9 for v in videos):
        raise InvalidArgument("requested duration exceeds the conditioning video")
    n = n_samples(cfg.duration_s, sample_rate)
    t_a = audio_timesteps(n, codebooks.hop)
    t_v = int(round(cfg.duration_s * fps))
    n_q, K = model.cfg.N_q, model.cfg.K
    alignment = build_alignment(t_v, t_a, n_q)
    L = alignment.L
    layout = layout_mask(t_a, n_q)
    dtype = next(model.parameters()).dtype
    feats = torch.as_tensor(np.stack([v.features[:t_v] for v in videos]), dtype=dtype)

    use_uncond = cfg.gamma != 1
    projected = model.project_visual(feats)
    fusion = model.cfg.conditioning == "fusion"
    cache = KVCache(model.cfg.n_layer)
    if fusion:
        vis = model.visual_rows(projected, alignment.frame_of)
        vis_u = model.u_cond.expand_as(vis)
    else:
        prefix = torch.cat([projected.new_zeros(B, t_v, model.cfg.d_a), projected], dim=-1)
        prefix_u = torch.cat([projected.new_zeros(B, t_v, model.cfg.d_a), model.u_cond.expand_as(projected)], dim=-1)
        x0 = torch.cat([prefix, prefix_u]) if use_uncond else prefix
        model(x0, cache)
        if trace is not None:
            trace.frames_read.append((-1, t_v - 1, -1))

    cells = torch.full((B, L, n_q), K, dtype=torch.int64)
    for r in range(L - 1):
        audio = model.embed_audio(cells[:, r:r + 1])
        if fusion:
            x = torch.cat([audio, vis[:, r:r + 1]], dim=-1)
            xu = torch.cat([audio, vis_u[:, r:r + 1]], dim=-1)
            if trace is not None:
                trace.frames_read.append((r, int(alignment.frame_of[r]), r))
        else:
            x = torch.cat([audio, audio.new_zeros(B, 1, model.cfg.d_v)], dim=-1)
            xu = x
        logits = model(torch.cat([x, xu]) if use_uncond else x, cache)[:, -1].to(torch.float64).numpy()
        lp_c = log_softmax(logits[:B])
        lp_u = log_softmax(logits[B:]) if use_uncond else None
        if trace is not None:
            trace.cond_forwards += 1
            trace.uncond_forwards += int(use_uncond)
        mixed = cfg_mix(lp_c, lp_u, cfg.gamma)  # (B, N_q, K+1)
        mixed[..., K] = -np.inf  # PAD is a layout artifact, never sampled
        if not np.all(np.isfinite(mixed[..., :K])):
            raise NumericOverflow(f"non-finite guided scores at position {r}")
        u = np.stack([g.random(n_q) for g in rngs])  # (B, N_q)
        levels = np.flatnonzero(layout[r + 1])
        if len(levels):
            toks = sample_tokens(
                mixed[:, levels].reshape(-1, K + 1), cfg.temperature, cfg.top_k, u[:, levels].reshape(-1)
            ).reshape(B, len(levels))
            cells[:, r + 1, levels] = torch.as_tensor(toks)

    grids, waves = [], []
    for b in range(B):
        grid = remove_delay(DelayedGrid(cells[b].numpy(), K))
        wav = decode(grid, codebooks, sample_rate)
        grids.append(grid)
        waves.append(Waveform(wav.samples[:n], sample_rate))
    return grids, waves


def generate(model, codebooks, video: VideoFeatureStream, cfg: SampleConfig, trace: GenerationTrace | None = None):
    grids, waves = generate_batch(model, codebooks, [video], cfg, [cfg.seed], trace=trace)
    return grids[0], waves[0]
