"""Evaluation metrics: synchronization offset, class-posterior KL, Fréchet
distance of embedding sets, and audio-visual cosine relevance."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal

from .errors import InvalidArgument, UndefinedOffset
from .synthworld import (
    AUDIO_DECAY_S,
    N_CLASSES,
    EventTimeline,
    VideoFeatureStream,
    Waveform,
    class_frequency,
)

log = logging.getLogger(__name__)

ENVELOPE_RATE = 250.0
MAX_LAG_S = 2.0
OFFSET_STEP_S = 0.2
OFFSET_CLASSES = np.round(np.arange(-10, 11) * OFFSET_STEP_S, 10)  # 21 classes, -2.0 .. +2.0 s


def offset_class(offset_s: float) -> float:
    """Nearest offset class; midpoints round toward +inf."""
    k = int(np.floor(offset_s / OFFSET_STEP_S + 0.5))
    return float(OFFSET_CLASSES[int(np.clip(k, -10, 10)) + 10])


def onset_envelope(waveform: Waveform, win_ms: float = 10.0, rate: float = ENVELOPE_RATE) -> np.ndarray:
    """Rectified first difference of centered short-window RMS, sampled at ``rate``."""
    if win_ms <= 0:
        raise InvalidArgument(f"win_ms must be positive, got {win_ms}")
    x = np.asarray(waveform.samples, dtype=np.float64)
    sr = waveform.sample_rate
    n_out = int(np.floor(len(x) / sr * rate))
    if n_out == 0:
        return np.zeros(0)
    half = max(1, int(round(win_ms / 1000.0 * sr / 2)))
    csum = np.concatenate([[0.0], np.cumsum(x * x)])
    centers = np.round(np.arange(n_out) * sr / rate).astype(np.int64)
    lo = np.clip(centers - half, 0, len(x))
    hi = np.clip(centers + half, 0, len(x))
    rms = np.sqrt((csum[hi] - csum[lo]) / (2 * half))
    diff = np.diff(rms, prepend=0.0)
    return np.maximum(diff, 0.0)


@dataclass(frozen=True)
class OffsetEstimate:
    offset_ms: float
    offset_class_s: float
    class_index: int


def estimate_offset(gen_audio: Waveform, ref: EventTimeline, win_ms: float = 10.0) -> OffsetEstimate:
    """Lag of ``gen_audio`` relative to the reference event train.

    Positive offsets mean the audio lags the video.  Raises
    ``UndefinedOffset`` for an empty timeline and for audio with no detected
    onset (a flat correlation carries no timing information).
    """
    if not ref.events:
        raise UndefinedOffset("reference timeline has no events")
    env = onset_envelope(gen_audio, win_ms)
    n = len(env)
    imp = np.zeros(n)
    for t in ref.times:
        k = int(round(t * ENVELOPE_RATE))
        if k < n:
            imp[k] += 1.0
    max_lag = int(round(MAX_LAG_S * ENVELOPE_RATE))
    lags = np.arange(-max_lag, max_lag + 1)
    full = signal.correlate(env, imp, mode="full", method="direct")  # index n-1 is lag 0
    corr = np.array([full[n - 1 + lag] if 0 <= n - 1 + lag < len(full) else 0.0 for lag in lags])
    best = corr.max()
    if best <= 0:
        raise UndefinedOffset("no onset energy correlates with the reference events")
    cand = lags[corr == best]
    # ties: smaller |lag| first, then the negative lag
    lag = int(sorted(cand, key=lambda l: (abs(l), l))[0])
    off_s = lag / ENVELOPE_RATE
    cls = offset_class(off_s)
    return OffsetEstimate(off_s * 1000.0, cls, int(np.argmin(np.abs(OFFSET_CLASSES - cls))))


def sync_score(pairs) -> tuple[float, int]:
    """Mean |offset| in ms over valid pairs; returns ``(score, n_undefined)``."""
    offs = []
    undefined = 0
    for gen, ref in pairs:
        try:
            offs.append(abs(estimate_offset(gen, ref).offset_ms))
        except UndefinedOffset:
            undefined += 1
    if not offs:
        raise UndefinedOffset("no valid pairs")
    return float(np.mean(offs)), undefined


# -- matched-filter class analysis ------------------------------------------------

def class_templates(C: int = N_CLASSES, sample_rate: int = 8000, length_s: float = 4 * AUDIO_DECAY_S) -> np.ndarray:
    """Unit-energy damped-sinusoid templates, one per class."""
    t = np.arange(int(round(length_s * sample_rate))) / sample_rate
    tmpl = np.stack([np.exp(-t / AUDIO_DECAY_S) * np.sin(2 * np.pi * class_frequency(c) * t) for c in range(C)])
    return tmpl / np.linalg.norm(tmpl, axis=1, keepdims=True)


def matched_filter_energies(waveform: Waveform, C: int = N_CLASSES) -> np.ndarray:
    """Per-class energy of the rectified sliding correlation with each template."""
    x = np.asarray(waveform.samples, dtype=np.float64)
    if len(x) == 0:
        raise InvalidArgument("empty waveform")
    tmpl = class_templates(C, waveform.sample_rate)
    out = np.empty(C)
    for c in range(C):
        corr = signal.fftconvolve(x, tmpl[c][::-1], mode="full")
        out[c] = np.sum(np.maximum(corr, 0.0) ** 2)
    # fft rounding leaves ~1e-30 residue on silence
    out[out < 1e-20] = 0.0
    return out


def classify_audio(waveform: Waveform, C: int = N_CLASSES) -> np.ndarray:
    """Softmax over floored log matched-filter energies."""
    logits = np.log(np.maximum(matched_filter_energies(waveform, C), 1e-12))
    z = np.exp(logits - logits.max())
    return z / z.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def kld_relevance(gen_set, gt_set, C: int = N_CLASSES) -> float:
    if len(gen_set) != len(gt_set):
        raise InvalidArgument("generated and ground-truth sets must be paired")
    if not gen_set:
        raise InvalidArgument("empty sets")
    return float(np.mean([kl_divergence(classify_audio(g, C), classify_audio(r, C)) for g, r in zip(gen_set, gt_set)]))


def frechet_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two embedding sets."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 1 and a.shape[1] > 1 and b.shape[0] == 1:
        raise InvalidArgument("embedding sets must be (n, dim)")
    dim = a.shape[1]
    if b.shape[1] != dim:
        raise InvalidArgument("embedding dimensions differ")
    if len(a) < dim + 1 or len(b) < dim + 1:
        raise InvalidArgument(f"each set needs at least dim+1 = {dim + 1} vectors")
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    return _frechet_from_stats(mu_a, cov_a, mu_b, cov_b)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def _frechet_from_stats(mu_a, cov_a, mu_b, cov_b) -> float:
    # Tr((A B)^1/2) = Tr((A^1/2 B A^1/2)^1/2), the latter symmetric PSD
    s = _psd_sqrt(cov_a)
    mid = s @ cov_b @ s
    w = np.linalg.eigvalsh((mid + mid.T) / 2)
    tr_sqrt = np.sum(np.sqrt(np.maximum(w, 0.0)))
    diff = mu_a - mu_b
    fd = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(fd, 0.0)


def ib_score(gen_audio: Waveform, video: VideoFeatureStream, embedder) -> float:
    from .curation import embed_audio_clip, embed_video_clip

    return 100.0 * float(embed_audio_clip(gen_audio, embedder) @ embed_video_clip(video, embedder))


@dataclass
class MetricsReport:
    sync_ms: float
    kld: float
    fd: float | None
    ib: float
    n_samples: int
    n_generations_per_video: int
    n_undefined_offsets: int = 0

    def to_dict(self) -> dict:
        return asdict(self)
