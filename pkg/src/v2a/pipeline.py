"""Pipeline stages shared by the CLI, the ablations and the acceptance suite.

A run directory holds one sub-directory per stage::

    dataset/   manifest.jsonl, audio/*.wav, video/*.vfea
    codec/     codebooks.vrvq
    train/     model.vckp, train_log.csv
    generate/  <id>.wav, <id>.vtok, <id>.json
    curate/    manifest.jsonl, report.csv
    eval/      report.json, per_video.csv, aggregate.csv
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import io
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import RvqCodebooks, analyze, fit_rvq
from .config import RunConfig, save_config
from .curation import AvEmbedder, filter_scored, score_records
from .data import TokenizedSet, tokenize_clips
from .errors import InvalidArgument
from .evaluation import evaluate
from .model import AudioVisualLM
from .synthworld import ClipSample, EventTimeline, corrupt_audio, make_clip
from .training import Trainer

log = logging.getLogger(__name__)

SPLIT_CODES = {"train": 0, "test": 1}


def clip_seed(world_seed: int, split: str, index: int) -> int:
    return int(np.random.default_rng([world_seed, SPLIT_CODES[split], index]).integers(0, 2**62))


def corrupted_indices(n: int, p: float, seed: int) -> set[int]:
    k = int(round(n * p))
    perm = np.random.default_rng([seed, 0xC0]).permutation(n)
    return set(int(i) for i in perm[:k])


def build_clips(cfg: RunConfig, split: str, p_corrupt: float | None = None) -> list[ClipSample]:
    w = cfg.world
    n = w.n_train if split == "train" else w.n_test
    p = (w.p_corrupt if p_corrupt is None else p_corrupt) if split == "train" else 0.0
    bad = corrupted_indices(n, p, w.seed)
    clips = []
    for i in range(n):
        seed = clip_seed(w.seed, split, i)
        clip = make_clip(f"{split}-{i:05d}", seed, w.duration_s, w.event_rate, w.C, w.sample_rate, w.fps,
                         w.d_raw, w.noise_std, pcm16=True)
        if i in bad:
            clip = corrupt_audio(clip, w.corruption_mode, seed, w.event_rate, pcm16=True)
        clips.append(clip)
    return clips


def _ensure_empty(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise FileExistsError(f"{path} exists and is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


# -- synth ----------------------------------------------------------------------

def synth(cfg: RunConfig, run_dir: Path, force: bool = False) -> Path:
    out = Path(run_dir) / "dataset"
    _ensure_empty(out, force)
    (out / "audio").mkdir(exist_ok=True)
    (out / "video").mkdir(exist_ok=True)
    records = []
    for split in ("train", "test"):
        for clip in build_clips(cfg, split):
            a = f"audio/{clip.id}.wav"
            v = f"video/{clip.id}.vfea"
            io.write_wav(out / a, clip.audio)
            io.write_vfea(out / v, clip.video)
            records.append({
                "id": clip.id,
                "split": split,
                "seed": clip.timeline.seed,
                "duration_s": clip.timeline.duration_s,
                "corruption": clip.corruption,
                "paths": {"audio": a, "video": v},
                "timeline": clip.timeline.to_dict(),
            })
    manifest = out / "manifest.jsonl"
    io.write_manifest(manifest, records)
    save_config(cfg, out / "config.json")
    io.write_provenance(manifest, [], cfg.to_dict(), {"stage": "synth", "n_clips": len(records)})
    return manifest


def load_clips(manifest: Path, split: str | None = None, records: list[dict] | None = None,
               fps: float = 25.0) -> list[ClipSample]:
    manifest = Path(manifest)
    root = manifest.parent
    recs = io.read_manifest(manifest) if records is None else records
    clips = []
    for rec in recs:
        if split is not None and rec.get("split") != split:
            continue
        audio = io.read_wav(root / rec["paths"]["audio"])
        video = io.read_vfea(root / rec["paths"]["video"], fps)
        tl = EventTimeline.from_dict(rec["timeline"])
        clips.append(ClipSample(rec["id"], tl, video, audio, rec.get("corruption", "none")))
    return clips


# -- codec ------------------------------------------------------------------------

def fit_codec(cfg: RunConfig, clips: list[ClipSample]) -> RvqCodebooks:
    c = cfg.codec
    frames = [analyze(clip.audio.samples, c.frame_len, c.hop) for clip in clips]
    return fit_rvq(frames, c.N_q, c.K, c.seed, c.iters, c.frame_len, c.hop)


def codec_fit(cfg: RunConfig, run_dir: Path) -> Path:
    manifest = Path(run_dir) / "dataset" / "manifest.jsonl"
    clips = load_clips(manifest, "train", fps=cfg.world.fps)
    cb = fit_codec(cfg, clips)
    out = Path(run_dir) / "codec"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "codebooks.vrvq"
    io.write_codebooks(path, cb)
    io.write_provenance(path, [manifest], cfg.to_dict(), {"stage": "codec-fit"})
    return path


# -- training -------------------------------------------------------------------

def train_on(cfg: RunConfig, data: TokenizedSet, model: AudioVisualLM | None = None,
             log_path: Path | None = None) -> tuple[AudioVisualLM, Trainer, float]:
    """Train a fresh model on ``data``; returns the model, trainer and wall-clock seconds."""
    torch.manual_seed(cfg.train.seed)
    model = model or AudioVisualLM(cfg.model, seed=cfg.train.seed)
    trainer = Trainer(model, cfg.train)
    t0 = time.perf_counter()
    trainer.run(data, log_path=log_path)
    return model, trainer, time.perf_counter() - t0


def train(cfg: RunConfig, run_dir: Path, resume: bool = False, stop_at: int | None = None,
          manifest: Path | None = None) -> Path:
    run_dir = Path(run_dir)
    manifest = manifest or run_dir / "dataset" / "manifest.jsonl"
    cb_path = run_dir / "codec" / "codebooks.vrvq"
    codebooks = io.read_codebooks(cb_path)
    if codebooks.K != cfg.model.K or codebooks.N_q != cfg.model.N_q:
        raise InvalidArgument("model K/N_q do not match the fitted codec")
    clips = load_clips(manifest, "train", fps=cfg.world.fps)
    data = tokenize_clips(clips, codebooks)
    out = run_dir / "train"
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.vckp"
    log_path = out / "train_log.csv"
    if resume:
        model, train_cfg, step, optimizer, _ = load_checkpoint(ckpt, with_optimizer=True)
        if train_cfg != cfg.train or model.cfg != cfg.model:
            raise InvalidArgument("checkpoint config differs from the requested config; cannot resume")
        trainer = Trainer(model, cfg.train, step=step, optimizer=optimizer)
    else:
        torch.manual_seed(cfg.train.seed)
        model = AudioVisualLM(cfg.model, seed=cfg.train.seed)
        trainer = Trainer(model, cfg.train)
        if log_path.exists():
            log_path.unlink()
    trainer.run(data, until=stop_at, log_path=log_path, dump_path=out / "crash.vckp")
    save_checkpoint(ckpt, model, cfg.train, trainer.step, trainer.optimizer)
    save_config(cfg, out / "config.json")
    io.write_provenance(ckpt, [manifest, cb_path], cfg.to_dict(), {"stage": "train", "step": trainer.step})
    return ckpt


# -- generation -----------------------------------------------------------------

def generate(cfg: RunConfig, run_dir: Path, limit: int | None = None) -> list[Path]:
    from .sampler import generate_batch

    run_dir = Path(run_dir)
    ckpt = run_dir / "train" / "model.vckp"
    cb_path = run_dir / "codec" / "codebooks.vrvq"
    model, *_ = load_checkpoint(ckpt)
    codebooks = io.read_codebooks(cb_path)
    manifest = run_dir / "dataset" / "manifest.jsonl"
    clips = load_clips(manifest, "test", fps=cfg.world.fps)[:limit]
    if not clips:
        raise InvalidArgument("no test clips to condition on")
    out = run_dir / "generate"
    out.mkdir(parents=True, exist_ok=True)
    sample_cfg = replace(cfg.sample, duration_s=cfg.world.duration_s)
    grids, waves = generate_batch(model, codebooks, [c.video for c in clips], sample_cfg,
                                  seeds=[sample_cfg.seed + i for i in range(len(clips))],
                                  sample_rate=cfg.world.sample_rate)
    ckpt_hash = io.sha256_file(ckpt)
    written = []
    for i, (clip, grid, wav) in enumerate(zip(clips, grids, waves)):
        wav_path = out / f"{clip.id}.wav"
        io.write_wav(wav_path, wav)
        io.write_tokens(out / f"{clip.id}.vtok", grid)
        sidecar = {"sample_config": {**sample_cfg.to_dict(), "seed": sample_cfg.seed + i},
                   "checkpoint_sha256": ckpt_hash, "video_id": clip.id}
        (out / f"{clip.id}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        written.append(wav_path)
    io.write_provenance(out / f"{clips[0].id}.wav", [ckpt, cb_path, manifest], cfg.to_dict(),
                        {"stage": "generate", "n_clips": len(clips)})
    return written


# -- curation -------------------------------------------------------------------

def curate(cfg: RunConfig, run_dir: Path, threshold: float | None = None):
    run_dir = Path(run_dir)
    manifest = run_dir / "dataset" / "manifest.jsonl"
    threshold = cfg.curation.threshold if threshold is None else threshold
    records, malformed = [], 0
    for _, rec, _ in io.iter_manifest(manifest):
        if rec is None:
            malformed += 1
        else:
            records.append(rec)
    train_recs = [r for r in records if r.get("split", "train") == "train"]
    scored = score_records(train_recs, manifest.parent, AvEmbedder(cfg.world.C))
    kept, report = filter_scored(scored, threshold, cfg.curation.sweep, malformed)
    out = run_dir / "curate"
    out.mkdir(parents=True, exist_ok=True)
    # paths stay relative to the original dataset directory
    for r in kept:
        r["paths"] = {k: str(Path("..") / "dataset" / v) for k, v in r["paths"].items()}
    test = [dict(r, paths={k: str(Path("..") / "dataset" / v) for k, v in r["paths"].items()})
            for r in records if r.get("split") == "test"]
    filtered = out / "manifest.jsonl"
    io.write_manifest(filtered, kept + test)
    (out / "report.csv").write_text(report.sweep_csv())
    io.write_provenance(filtered, [manifest], cfg.to_dict(),
                        {"stage": "curate", "threshold": threshold, "kept": report.kept,
                         "dropped": report.dropped, "malformed": report.malformed})
    return filtered, report


# -- evaluation -----------------------------------------------------------------

def evaluate_run(cfg: RunConfig, run_dir: Path, n_gen: int | None = None):
    run_dir = Path(run_dir)
    ckpt = run_dir / "train" / "model.vckp"
    cb_path = run_dir / "codec" / "codebooks.vrvq"
    manifest = run_dir / "dataset" / "manifest.jsonl"
    clips = load_clips(manifest, "test", fps=cfg.world.fps)
    if not clips:
        raise InvalidArgument("no samples to evaluate")
    model, *_ = load_checkpoint(ckpt)
    codebooks = io.read_codebooks(cb_path)
    n_gen = cfg.eval.n_gen if n_gen is None else n_gen
    report, rows = evaluate(model, codebooks, clips, cfg.sample, n_gen, cfg.eval.base_seed,
                            AvEmbedder(cfg.world.C), cfg.eval.batch_size)
    out = run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "per_video.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "sync_ms", "kld", "fd_contribution", "ib"])
        for r in rows:
            w.writerow([r["id"], "" if r["sync_ms"] is None else repr(r["sync_ms"]), repr(r["kld"]),
                        r["fd_contribution"], repr(r["ib"])])
    with open(out / "aggregate.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kld", "fd", "ib", "sync_ms"])
        w.writerow([repr(report.kld), "" if report.fd is None else repr(report.fd), repr(report.ib),
                    repr(report.sync_ms)])
    io.write_provenance(out / "report.json", [ckpt, cb_path, manifest], cfg.to_dict(), {"stage": "eval"})
    return report
