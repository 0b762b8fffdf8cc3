"""Synthetic audio-visual world.

Every clip is driven by a latent timeline of sound events.  The same timeline
renders both a waveform (one damped sinusoid per event) and a low-rate visual
feature stream (a decaying bump plus an onset spike per event), so the two
modalities are causally tied and their alignment is known exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .errors import InvalidArgument, InvalidState

SAMPLE_RATE = 8000
FPS = 25
DURATION_S = 2.56
N_CLASSES = 8
D_RAW = 16
NOISE_STD = 0.05
EVENT_RATE = 2.0

AUDIO_DECAY_S = 0.05
VIDEO_DECAY_S = 0.2
TONE_HZ = 440.0
TONE_AMPLITUDE = 0.3

Corruption = Literal["none", "replace", "tone", "noise"]
CORRUPTION_MODES = ("replace", "tone", "noise")


@dataclass(frozen=True)
class Event:
    t: float
    class_id: int
    amplitude: float


@dataclass(frozen=True)
class EventTimeline:
    duration_s: float
    events: tuple[Event, ...]
    C: int = N_CLASSES
    seed: int = 0

    def __post_init__(self):
        if self.C < 2:
            raise InvalidArgument(f"need at least 2 classes, got C={self.C}")
        times = [e.t for e in self.events]
        if any(t < 0 or t >= self.duration_s for t in times):
            raise InvalidArgument("event time outside [0, duration_s)")
        if times != sorted(times):
            raise InvalidArgument("events must be sorted by time")

    @property
    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "C": self.C,
            "seed": self.seed,
            "events": [[e.t, e.class_id, e.amplitude] for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EventTimeline":
        events = tuple(Event(float(t), int(c), float(a)) for t, c, a in d["events"])
        return cls(float(d["duration_s"]), events, int(d["C"]), int(d["seed"]))


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True, eq=False)
class VideoFeatureStream:
    features: np.ndarray  # (t_v, d_raw) float32
    fps: float = FPS

    @property
    def t_v(self) -> int:
        return self.features.shape[0]

    @property
    def d_raw(self) -> int:
        return self.features.shape[1]

    @property
    def duration_s(self) -> float:
        return self.t_v / self.fps


@dataclass(frozen=True, eq=False)
class ClipSample:
    id: str
    timeline: EventTimeline
    video: VideoFeatureStream
    audio: Waveform
    corruption: Corruption = "none"
    # timeline the audio was actually rendered from (differs for "replace")
    audio_timeline: EventTimeline | None = field(default=None)


def generate_timeline(
    seed: int,
    duration_s: float = DURATION_S,
    event_rate: float = EVENT_RATE,
    C: int = N_CLASSES,
) -> EventTimeline:
    """Draw a Poisson event timeline; a pure function of its arguments."""
    if duration_s <= 0:
        raise InvalidArgument(f"duration_s must be positive, got {duration_s}")
    if event_rate <= 0:
        raise InvalidArgument(f"event_rate must be positive, got {event_rate}")
    if C < 2:
        raise InvalidArgument(f"need at least 2 classes, got C={C}")
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(event_rate * duration_s))
    times = np.sort(rng.uniform(0.0, duration_s, size=n))
    classes = rng.integers(0, C, size=n)
    amps = rng.uniform(0.5, 1.0, size=n)
    events = tuple(Event(float(t), int(c), float(a)) for t, c, a in zip(times, classes, amps))
    return EventTimeline(duration_s, events, C, seed)


def class_frequency(class_id: int) -> float:
    return 300.0 * (class_id + 1)


def n_samples(duration_s: float, sample_rate: int) -> int:
    return int(round(duration_s * sample_rate))


def render_audio(timeline: EventTimeline, sample_rate: int = SAMPLE_RATE, clip: bool = True) -> Waveform:
    """Sum one damped sinusoid per event.

    ``clip=False`` returns the raw superposition, which is what the
    superposition property is stated over.
    """
    if class_frequency(timeline.C - 1) >= sample_rate / 2:
        raise InvalidArgument(
            f"class {timeline.C - 1} at {class_frequency(timeline.C - 1)} Hz violates Nyquist for {sample_rate} Hz"
        )
    n = n_samples(timeline.duration_s, sample_rate)
    out = np.zeros(n, dtype=np.float64)
    for ev in timeline.events:
        start = int(np.ceil(ev.t * sample_rate - 1e-9))
        if start >= n:
            continue
        dt = np.arange(start, n) / sample_rate - ev.t
        out[start:] += ev.amplitude * np.exp(-dt / AUDIO_DECAY_S) * np.sin(2 * np.pi * class_frequency(ev.class_id) * dt)
    if clip:
        np.clip(out, -1.0, 1.0, out=out)
    return Waveform(out, sample_rate)


def render_video_features(
    timeline: EventTimeline,
    fps: float = FPS,
    d_raw: int = D_RAW,
    noise_std: float = NOISE_STD,
    noise_seed: int | None = None,
) -> VideoFeatureStream:
    """Render the visual feature stream for ``timeline``.

    Class ``c`` drives channel ``2c`` (a bump decaying over 0.2 s) and
    channel ``2c+1`` (a single-frame spike on the onset frame).  Channels wrap
    modulo ``d_raw``.  Noise is seeded from ``noise_seed`` or, by default, the
    timeline seed.
    """
    if fps <= 0:
        raise InvalidArgument(f"fps must be positive, got {fps}")
    if d_raw < 1:
        raise InvalidArgument(f"d_raw must be positive, got {d_raw}")
    t_v = int(round(timeline.duration_s * fps))
    feats = np.zeros((t_v, d_raw), dtype=np.float64)
    frame_t = np.arange(t_v) / fps
    for ev in timeline.events:
        bump_ch = (2 * ev.class_id) % d_raw
        spike_ch = (2 * ev.class_id + 1) % d_raw
        after = frame_t >= ev.t - 1e-12
        feats[after, bump_ch] += ev.amplitude * np.exp(-(frame_t[after] - ev.t) / VIDEO_DECAY_S)
        onset = int(np.floor(ev.t * fps + 1e-9))
        if onset < t_v:
            feats[onset, spike_ch] += ev.amplitude
    if noise_std > 0:
        seed = timeline.seed if noise_seed is None else noise_seed
        rng = np.random.default_rng([seed, 0x7669])
        feats += rng.normal(0.0, noise_std, size=feats.shape)
    return VideoFeatureStream(feats.astype(np.float32), fps)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Snap samples onto the 16-bit PCM grid so WAV storage is lossless."""
    q = np.round(np.clip(samples, -1.0, 1.0) * 32767.0)
    return q / 32767.0


def make_clip(
    clip_id: str,
    seed: int,
    duration_s: float = DURATION_S,
    event_rate: float = EVENT_RATE,
    C: int = N_CLASSES,
    sample_rate: int = SAMPLE_RATE,
    fps: float = FPS,
    d_raw: int = D_RAW,
    noise_std: float = NOISE_STD,
    pcm16: bool = False,
) -> ClipSample:
    timeline = generate_timeline(seed, duration_s, event_rate, C)
    audio = render_audio(timeline, sample_rate)
    if pcm16:
        audio = Waveform(quantize_pcm16(audio.samples), sample_rate)
    video = render_video_features(timeline, fps, d_raw, noise_std)
    return ClipSample(clip_id, timeline, video, audio, "none", timeline)


def _signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x))) if len(x) else 0.0


def corrupt_audio(
    sample: ClipSample,
    mode: str,
    seed: int,
    event_rate: float = EVENT_RATE,
    pcm16: bool = False,
) -> ClipSample:
    """Break the audio-visual correspondence of ``sample``; video is untouched."""
    if sample.corruption != "none":
        raise InvalidState(f"sample {sample.id!r} is already corrupted ({sample.corruption})")
    if mode not in CORRUPTION_MODES:
        raise InvalidArgument(f"unknown corruption mode {mode!r}")
    sr = sample.audio.sample_rate
    n = len(sample.audio)
    rng = np.random.default_rng([seed, 0x636F])
    audio_timeline = sample.timeline
    if mode == "replace":
        other_seed = int(rng.integers(0, 2**62))
        tl = sample.timeline
        audio_timeline = generate_timeline(other_seed, tl.duration_s, event_rate, tl.C)
        samples = render_audio(audio_timeline, sr).samples
    elif mode == "tone":
        audio_timeline = None
        t = np.arange(n) / sr
        samples = TONE_AMPLITUDE * np.sin(2 * np.pi * TONE_HZ * t)
    else:
        orig = sample.audio.samples
        noise = rng.normal(0.0, 1.0, size=n)
        p_sig = _signal_power(orig)
        p_noise = _signal_power(noise)
        scale = np.sqrt(p_sig / p_noise) if p_noise > 0 else 0.0
        samples = np.clip(orig + scale * noise, -1.0, 1.0)
    if pcm16:
        samples = quantize_pcm16(samples)
    return replace(sample, audio=Waveform(samples, sr), corruption=mode, audio_timeline=audio_timeline)
