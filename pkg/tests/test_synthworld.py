import math

import numpy as np
import pytest

from v2a.errors import InvalidArgument, InvalidState
from v2a.metrics import ENVELOPE_RATE, onset_envelope
from v2a.synthworld import (
    Event,
    EventTimeline,
    TONE_HZ,
    corrupt_audio,
    generate_timeline,
    make_clip,
    render_audio,
    render_video_features,
)


def test_timeline_is_deterministic():
    a = generate_timeline(7, 2.56, 3.0, 8)
    b = generate_timeline(7, 2.56, 3.0, 8)
    assert a == b
    assert all(0 <= e.t < 2.56 for e in a.events)
    assert [e.t for e in a.events] == sorted(e.t for e in a.events)
    assert all(0.5 <= e.amplitude <= 1.0 for e in a.events)


def test_timeline_tiny_rate_is_valid():
    tl = generate_timeline(7, 2.56, 0.0001, 8)
    assert len(tl.events) <= 1


def test_timeline_event_count_monte_carlo():
    counts = [len(generate_timeline(s, 10.0, 2.0, 8).events) for s in range(1000)]
    assert min(counts) >= 0 and max(counts) <= 60
    assert abs(np.mean(counts) - 20.0) <= 2.0


@pytest.mark.parametrize("kwargs", [dict(duration_s=0.0), dict(event_rate=-1.0), dict(C=1)])
def test_timeline_rejects_bad_arguments(kwargs):
    args = dict(seed=0, duration_s=1.0, event_rate=1.0, C=8) | kwargs
    with pytest.raises(InvalidArgument):
        generate_timeline(**args)


def test_empty_timeline_renders_silence():
    tl = EventTimeline(1.0, (), 8, 0)
    assert not np.any(render_audio(tl).samples)
    assert len(render_audio(tl).samples) == 8000


def test_single_event_kernel_values():
    tl = EventTimeline(0.01, (Event(0.0, 0, 1.0),), 8, 0)
    w8 = render_audio(tl, 8000)
    assert w8.samples[0] == 0.0
    # 1/1200 s falls on a sample at 12 kHz (index 10)
    w12 = render_audio(tl, 12000)
    expected = math.exp(-1 / (1200 * 0.05)) * math.sin(math.pi / 2)
    assert w12.samples[10] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.9835, abs=1e-4)


def test_superposition_before_clipping():
    one = EventTimeline(0.5, (Event(0.1, 3, 0.9),), 8, 0)
    two = EventTimeline(0.5, (Event(0.1, 3, 0.9), Event(0.1, 3, 0.9)), 8, 0)
    np.testing.assert_array_equal(render_audio(two, clip=False).samples, 2 * render_audio(one, clip=False).samples)
    assert np.max(np.abs(render_audio(two).samples)) <= 1.0


def test_nyquist_violation():
    tl = EventTimeline(0.1, (), 8, 0)
    with pytest.raises(InvalidArgument):
        render_audio(tl, 4000)


def test_video_empty_no_noise_is_zero():
    v = render_video_features(EventTimeline(2.56, (), 8, 0), noise_std=0.0)
    assert v.features.shape == (64, 16)
    assert not np.any(v.features)


def test_video_onset_spike_and_bump():
    a = 0.8
    v = render_video_features(EventTimeline(2.56, (Event(1.0, 2, a),), 8, 0), fps=25, noise_std=0.0)
    f = v.features
    assert f[25, 5] == pytest.approx(a)
    assert np.count_nonzero(f[:, 5]) == 1
    assert f[27, 4] == pytest.approx(a * math.exp(-0.4), rel=1e-6)
    assert f[27, 4] == pytest.approx(0.6703 * a, abs=1e-4)
    assert not np.any(f[:25, 4])


def test_video_rejects_bad_fps():
    with pytest.raises(InvalidArgument):
        render_video_features(EventTimeline(1.0, (), 8, 0), fps=0)


def test_duration_consistency():
    clip = make_clip("x", 3)
    assert abs(clip.audio.duration_s - clip.video.duration_s) <= 1 / 25


def test_tone_corruption():
    clip = make_clip("x", 11)
    bad = corrupt_audio(clip, "tone", 5)
    t = np.arange(len(bad.audio.samples)) / 8000
    np.testing.assert_allclose(bad.audio.samples, 0.3 * np.sin(2 * np.pi * TONE_HZ * t), atol=1e-12)
    assert bad.corruption == "tone"
    assert bad.video.features is clip.video.features or np.array_equal(bad.video.features, clip.video.features)


def _lag0_score(env, timeline):
    idx = [int(round(t * ENVELOPE_RATE)) for t in timeline.times if round(t * ENVELOPE_RATE) < len(env)]
    return float(sum(env[max(0, k - 5):k + 6].max() for k in idx)) / max(1, len(idx))


def test_replace_corruption_follows_new_timeline():
    clip = make_clip("x", 21, event_rate=3.0)
    bad = corrupt_audio(clip, "replace", 3, event_rate=3.0)
    assert not np.array_equal(bad.audio.samples, clip.audio.samples)
    assert bad.audio_timeline is not None and bad.audio_timeline != clip.timeline
    env = onset_envelope(bad.audio)
    assert _lag0_score(env, bad.audio_timeline) > 2 * _lag0_score(env, clip.timeline)
    np.testing.assert_array_equal(bad.video.features, clip.video.features)


def test_noise_corruption_is_zero_db():
    clip = make_clip("x", 33, event_rate=4.0)
    bad = corrupt_audio(clip, "noise", 9)
    noise = bad.audio.samples - clip.audio.samples
    p_sig = np.mean(clip.audio.samples**2)
    p_noise = np.mean(noise**2)
    assert abs(10 * np.log10(p_sig / p_noise)) < 0.5


def test_double_corruption_rejected():
    bad = corrupt_audio(make_clip("x", 1), "tone", 0)
    with pytest.raises(InvalidState):
        corrupt_audio(bad, "noise", 0)


def test_corruption_is_deterministic():
    clip = make_clip("x", 4)
    a = corrupt_audio(clip, "replace", 8)
    b = corrupt_audio(clip, "replace", 8)
    np.testing.assert_array_equal(a.audio.samples, b.audio.samples)
