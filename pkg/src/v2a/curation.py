"""Audio-visual correspondence scoring and threshold filtering of datasets.

The joint embedding is analytic: the audio side measures per-class
matched-filter energy, the video side sums the positive part of each class's
two feature channels.  Both land in the same C-dimensional class space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .io import iter_manifest, read_vfea, read_wav
from .metrics import matched_filter_energies
from .synthworld import N_CLASSES, ClipSample, VideoFeatureStream, Waveform

log = logging.getLogger(__name__)

DEFAULT_SWEEP = (0.0, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class AvEmbedder:
    C: int = N_CLASSES

    def video_channels(self, class_id: int, d_raw: int) -> tuple[int, int]:
        return (2 * class_id) % d_raw, (2 * class_id + 1) % d_raw


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.full(len(v), 1.0 / np.sqrt(len(v)))
    return v / norm


def embed_audio_clip(waveform: Waveform, embedder: AvEmbedder = AvEmbedder()) -> np.ndarray:
    if len(waveform.samples) == 0:
        raise InvalidArgument("empty waveform")
    return _unit(matched_filter_energies(waveform, embedder.C))


def embed_video_clip(stream: VideoFeatureStream, embedder: AvEmbedder = AvEmbedder()) -> np.ndarray:
    feats = np.asarray(stream.features, dtype=np.float64)
    if feats.shape[0] == 0:
        raise InvalidArgument("empty feature stream")
    pos = np.maximum(feats, 0.0).sum(0)
    v = np.zeros(embedder.C)
    for c in range(embedder.C):
        a, b = embedder.video_channels(c, feats.shape[1])
        v[c] = pos[a] + pos[b]
    return _unit(v)


def av_similarity(sample: ClipSample, embedder: AvEmbedder = AvEmbedder()) -> float:
    if abs(sample.audio.duration_s - sample.video.duration_s) > 1.0 / sample.video.fps:
        raise InvalidArgument("audio and video durations differ")
    return float(embed_audio_clip(sample.audio, embedder) @ embed_video_clip(sample.video, embedder))


def roc_auc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Probability a positive outscores a negative (ties count half)."""
    pos = np.asarray(scores_pos)[:, None]
    neg = np.asarray(scores_neg)[None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


@dataclass
class CurationReport:
    threshold: float
    kept: int
    dropped: int
    malformed: int = 0
    sweep: list[tuple[float, int, int]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.kept + self.dropped

    def sweep_csv(self) -> str:
        lines = ["threshold,kept,dropped"]
        lines += [f"{t},{k},{d}" for t, k, d in self.sweep]
        return "\n".join(lines) + "\n"


def load_record(rec: dict, root: Path, fps: float = 25.0) -> tuple[Waveform, VideoFeatureStream]:
    paths = rec["paths"]
    return read_wav(root / paths["audio"]), read_vfea(root / paths["video"], fps)


def score_records(records: list[dict], root: Path, embedder: AvEmbedder = AvEmbedder(),
                  loader: Callable = load_record) -> list[dict]:
    out = []
    for rec in records:
        audio, video = loader(rec, root)
        sim = float(embed_audio_clip(audio, embedder) @ embed_video_clip(video, embedder))
        out.append({**rec, "similarity": sim})
    return out


def filter_scored(scored: list[dict], threshold: float, sweep=DEFAULT_SWEEP, malformed: int = 0):
    """Keep records with similarity >= threshold.

    Output order follows record ids, so the result depends only on manifest
    content, not line order.
    """
    if not -1.0 <= threshold <= 1.0:
        raise InvalidArgument(f"threshold must be in [-1, 1], got {threshold}")
    scored = sorted(scored, key=lambda r: r["id"])
    kept = [r for r in scored if r["similarity"] >= threshold]
    table = []
    for t in sweep:
        k = sum(r["similarity"] >= t for r in scored)
        table.append((float(t), k, len(scored) - k))
    report = CurationReport(threshold, len(kept), len(scored) - len(kept), malformed, table)
    return kept, report


def filter_dataset(manifest_path: str | Path, threshold: float = 0.3, embedder: AvEmbedder = AvEmbedder(),
                   sweep=DEFAULT_SWEEP) -> tuple[list[dict], CurationReport]:
    """Score every clip of a manifest and keep those at or above ``threshold``.

    Malformed lines are skipped with a warning and counted in the report.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records, malformed = [], 0
    for _, rec, _ in iter_manifest(manifest_path):
        if rec is None:
            malformed += 1
        else:
            records.append(rec)
    scored = score_records(records, root, embedder)
    return filter_scored(scored, threshold, sweep, malformed)
