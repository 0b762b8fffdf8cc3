import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from v2a.curation import AvEmbedder
from v2a.errors import InvalidArgument, UndefinedOffset
from v2a.metrics import (
    OFFSET_CLASSES,
    ENVELOPE_RATE,
    MetricsReport,
    classify_audio,
    estimate_offset,
    frechet_distance,
    ib_score,
    kl_divergence,
    kld_relevance,
    offset_class,
    onset_envelope,
    sync_score,
)
from v2a.synthworld import Event, EventTimeline, Waveform, generate_timeline, render_audio, render_video_features


def _shift(w: Waveform, seconds: float) -> Waveform:
    k = int(round(seconds * w.sample_rate))
    out = np.zeros_like(w.samples)
    if k >= 0:
        out[k:] = w.samples[: len(w.samples) - k]
    else:
        out[:k] = w.samples[-k:]
    return Waveform(out, w.sample_rate)


def test_offset_classes():
    assert len(OFFSET_CLASSES) == 21
    np.testing.assert_allclose(OFFSET_CLASSES, -OFFSET_CLASSES[::-1])
    assert offset_class(0.0) == 0.0
    assert offset_class(0.1) == 0.2
    assert offset_class(-0.1) == 0.0
    assert offset_class(0.29) == 0.2
    assert offset_class(-2.0) == -2.0 and offset_class(2.0) == 2.0


@settings(max_examples=200, deadline=None)
@given(st.integers(-500, 500))
def test_every_lag_maps_to_one_nearby_class(lag):
    s = lag / ENVELOPE_RATE
    c = offset_class(s)
    assert c in OFFSET_CLASSES
    assert abs(c - s) <= 0.1 + 1e-12


def test_envelope_silence_and_errors():
    assert not np.any(onset_envelope(Waveform(np.zeros(8000), 8000)))
    assert len(onset_envelope(Waveform(np.zeros(8000), 8000))) == 250
    with pytest.raises(InvalidArgument):
        onset_envelope(Waveform(np.zeros(100), 8000), win_ms=0)


def test_envelope_single_event_peak():
    w = render_audio(EventTimeline(2.56, (Event(1.0, 3, 0.8),), 8, 0))
    env = onset_envelope(w)
    assert abs(np.argmax(env) / ENVELOPE_RATE - 1.0) <= 0.02


def test_envelope_two_events_local_maxima():
    w = render_audio(EventTimeline(2.56, (Event(0.5, 1, 0.9), Event(1.7, 5, 0.6)), 8, 0))
    env = onset_envelope(w)
    for t in (0.5, 1.7):
        k = int(round(t * ENVELOPE_RATE))
        window = env[k - 5:k + 6]
        assert abs((k - 5 + np.argmax(window)) / ENVELOPE_RATE - t) <= 0.02
        assert window.max() > 10 * np.median(env)


def test_self_alignment():
    tl = generate_timeline(4, 2.56, 2.0, 8)
    est = estimate_offset(render_audio(tl), tl)
    assert est.offset_class_s == 0.0
    assert abs(est.offset_ms) <= 20


def test_constructed_shift():
    tl = EventTimeline(2.56, (Event(0.3, 0, 1.0), Event(0.9, 4, 0.7), Event(1.5, 2, 0.9)), 8, 0)
    est = estimate_offset(_shift(render_audio(tl), 0.4), tl)
    assert est.offset_class_s == pytest.approx(0.4)
    assert abs(abs(est.offset_ms) - 400) <= 20
    early = estimate_offset(_shift(render_audio(tl), -0.2), tl)
    assert early.offset_class_s == pytest.approx(-0.2)


def test_offset_errors():
    with pytest.raises(UndefinedOffset):
        estimate_offset(Waveform(np.ones(8000), 8000), EventTimeline(1.0, (), 8, 0))
    with pytest.raises(UndefinedOffset):
        estimate_offset(Waveform(np.zeros(8000), 8000), EventTimeline(1.0, (Event(0.5, 0, 1.0),), 8, 0))


def test_white_noise_contract():
    tl = generate_timeline(2, 2.56, 2.0, 8)
    noise = Waveform(np.random.default_rng(0).normal(scale=0.1, size=20480), 8000)
    est = estimate_offset(noise, tl)
    assert abs(est.offset_ms) <= 2000 and est.offset_class_s in OFFSET_CLASSES


def test_sync_score():
    tl = EventTimeline(2.56, (Event(0.3, 0, 1.0), Event(1.2, 4, 0.7)), 8, 0)
    w = render_audio(tl)
    assert sync_score([(w, tl), (w, tl)]) == (0.0, 0)
    score, undefined = sync_score([(_shift(w, 0.4), tl), (_shift(w, -0.4), tl)])
    assert abs(score - 400) <= 20 and undefined == 0
    s2, _ = sync_score([(_shift(w, -0.4), tl), (_shift(w, 0.4), tl)])
    assert s2 == score
    _, n_bad = sync_score([(w, tl), (w, EventTimeline(2.56, (), 8, 0))])
    assert n_bad == 1


def test_kl_hand_value():
    expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1438, abs=1e-4)
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_kl_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p, q = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        assert kl_divergence(p, q) >= 0


def test_classifier():
    for c in (0, 2, 7):
        w = render_audio(EventTimeline(1.0, (Event(0.2, c, 0.9),), 8, 0))
        p = classify_audio(w)
        assert int(np.argmax(p)) == c
        assert abs(p.sum() - 1) < 1e-9
    np.testing.assert_allclose(classify_audio(Waveform(np.zeros(4000), 8000)), np.full(8, 1 / 8))


def test_kld_relevance_identity():
    ws = [render_audio(generate_timeline(s, 1.0, 3.0, 8)) for s in range(3)]
    assert kld_relevance(ws, ws) == 0.0
    with pytest.raises(InvalidArgument):
        kld_relevance(ws, ws[:2])


def _fd_reference(a, b):
    """Textbook formula with a general matrix square root."""
    mu_a, mu_b = a.mean(0), b.mean(0)
    ca, cb = np.atleast_2d(np.cov(a, rowvar=False)), np.atleast_2d(np.cov(b, rowvar=False))
    covmean = linalg.sqrtm(ca @ cb).real
    return float(np.sum((mu_a - mu_b) ** 2) + np.trace(ca + cb - 2 * covmean))


def test_frechet_identical_and_symmetric():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(200, 8))
    b = rng.normal(loc=0.3, scale=1.5, size=(150, 8))
    assert abs(frechet_distance(a, a)) <= 1e-6
    assert abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-9
    assert frechet_distance(a, b) == pytest.approx(_fd_reference(a, b), rel=1e-8)


def test_frechet_one_dimensional_monte_carlo():
    rng = np.random.default_rng(42)
    a = rng.normal(0, 1, size=(100_000, 1))
    b = rng.normal(1, 1, size=(100_000, 1))
    assert abs(frechet_distance(a, b) - 1.0) <= 0.05


def test_frechet_degenerate_sizes():
    with pytest.raises(InvalidArgument):
        frechet_distance(np.zeros((8, 8)), np.zeros((20, 8)))
    with pytest.raises(InvalidArgument):
        frechet_distance(np.zeros((20, 8)), np.zeros((20, 4)))


def test_ib_beats_permuted_pairs():
    emb = AvEmbedder()
    tls = [generate_timeline(1000 + i, 2.56, 2.0, 8) for i in range(200)]
    tls = [t for t in tls if t.events]
    audio = [render_audio(t) for t in tls]
    video = [render_video_features(t, noise_std=0.0) for t in tls]
    wins = [ib_score(audio[i], video[i], emb) > ib_score(audio[i], video[(i + 1) % len(tls)], emb)
            for i in range(len(tls))]
    assert np.mean(wins) >= 0.95


def test_ib_extremes():
    emb = AvEmbedder()
    tl0 = EventTimeline(1.0, (Event(0.2, 0, 1.0),), 8, 0)
    tl1 = EventTimeline(1.0, (Event(0.2, 1, 1.0),), 8, 0)
    assert abs(ib_score(render_audio(tl1), render_video_features(tl0, noise_std=0.0), emb)) <= 10


def test_report_fields():
    r = MetricsReport(12.0, 0.1, None, 50.0, 2, 1)
    assert r.to_dict()["fd"] is None and r.to_dict()["n_samples"] == 2
