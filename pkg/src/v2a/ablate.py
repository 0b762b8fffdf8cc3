"""Toy-scale trend experiments: conditioning method, guidance scale and
curation threshold."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .codec import RvqCodebooks
from .config import RunConfig
from .curation import AvEmbedder, av_similarity
from .data import tokenize_clips
from .evaluation import evaluate
from .metrics import MetricsReport
from .pipeline import build_clips, fit_codec, train_on
from .synthworld import ClipSample

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["kld", "fd", "ib", "sync_ms"]


@dataclass
class World:
    """In-memory clips plus the codec fitted on the clean training split."""

    train: list[ClipSample]
    test: list[ClipSample]
    codebooks: RvqCodebooks


def make_world(cfg: RunConfig, codebooks: RvqCodebooks | None = None) -> World:
    train = build_clips(cfg, "train", p_corrupt=0.0)
    test = build_clips(cfg, "test")
    return World(train, test, codebooks or fit_codec(cfg, train))


def smoke_sample(cfg: RunConfig, gamma: float):
    """Sampling settings used to score the trend models at guidance ``gamma``."""
    return replace(cfg.sample, gamma=float(gamma), top_k=cfg.ablate.top_k)


def _metrics_row(report: MetricsReport) -> dict:
    return {k: getattr(report, k) for k in METRIC_COLUMNS} | {"n_undefined": report.n_undefined_offsets}


def train_and_eval(cfg: RunConfig, world: World, train_clips: list[ClipSample] | None = None,
                   gammas=None, n_gen: int | None = None, steps: int | None = None):
    """Train on ``train_clips`` (default: the world's training split) and
    evaluate at every guidance scale in ``gammas``."""
    clips = world.train if train_clips is None else train_clips
    if steps is not None:
        cfg = cfg.with_overrides(train={"steps": steps})
    data = tokenize_clips(clips, world.codebooks)
    model, trainer, seconds = train_on(cfg, data)
    gammas = [cfg.sample.gamma] if gammas is None else list(gammas)
    n_gen = cfg.ablate.n_gen if n_gen is None else n_gen
    rows = {}
    for g in gammas:
        report, _ = evaluate(model, world.codebooks, world.test, smoke_sample(cfg, g), n_gen,
                             cfg.eval.base_seed, AvEmbedder(cfg.world.C), cfg.eval.batch_size)
        rows[float(g)] = _metrics_row(report)
    return model, trainer, seconds, rows


def conditioning_ablation(cfg: RunConfig, world: World) -> list[dict]:
    out = []
    for method in ("prepend", "fusion"):
        c = cfg.with_overrides(model={"conditioning": method})
        _, _, seconds, rows = train_and_eval(c, world)
        out.append({"method": method, **rows[float(cfg.sample.gamma)], "train_seconds": seconds})
    return out


def cfg_ablation(cfg: RunConfig, world: World, model=None) -> list[dict]:
    c = cfg.with_overrides(model={"conditioning": "fusion"})
    gammas = list(cfg.ablate.gammas)
    if model is None:
        _, _, _, rows = train_and_eval(c, world, gammas=gammas)
    else:
        rows = {}
        for g in gammas:
            report, _ = evaluate(model, world.codebooks, world.test, smoke_sample(cfg, g),
                                 cfg.ablate.n_gen, cfg.eval.base_seed, AvEmbedder(cfg.world.C), cfg.eval.batch_size)
            rows[float(g)] = _metrics_row(report)
    return [{"gamma": g, **rows[float(g)]} for g in gammas]


def corrupted_training_set(cfg: RunConfig) -> list[ClipSample]:
    return build_clips(cfg, "train", p_corrupt=cfg.ablate.p_corrupt)


def threshold_ablation(cfg: RunConfig, world: World, thresholds=None) -> list[dict]:
    """Train one model per similarity threshold on a partly corrupted set.

    The budget is a fixed number of epochs: a subset keeping fraction ``f``
    of the clips trains for ``ceil(f * steps)`` steps.
    """
    clips = corrupted_training_set(cfg)
    emb = AvEmbedder(cfg.world.C)
    sims = np.array([av_similarity(c, emb) for c in clips])
    thresholds = cfg.ablate.thresholds if thresholds is None else thresholds
    out = []
    for t in thresholds:
        keep = [c for c, s in zip(clips, sims) if s >= t]
        steps = max(1, math.ceil(cfg.train.steps * len(keep) / len(clips)))
        _, _, seconds, rows = train_and_eval(cfg, world, keep, steps=steps)
        n_bad = sum(c.corruption != "none" for c in keep)
        out.append({"threshold": float(t), "n_samples": len(keep), "n_corrupted": n_bad, "steps": steps,
                    "train_seconds": seconds, **rows[float(cfg.sample.gamma)]})
    return out


def write_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
