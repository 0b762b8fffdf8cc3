"""Teacher-forced training with condition dropout, AdamW and gradient checks."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .data import TokenizedSet
from .errors import InvalidArgument, NumericOverflow
from .model import AudioVisualLM, masked_cross_entropy, param_family, sequence_targets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.01
    cfg_dropout: float = 0.10
    batch_size: int = 8
    steps: int = 500
    warmup: int = 50
    seed: int = 0
    grad_clip: float = 1.0

    def __post_init__(self):
        # 1.0 is accepted as a diagnostic setting (condition never seen)
        if not 0.0 <= self.cfg_dropout <= 1.0:
            raise InvalidArgument(f"cfg_dropout must be in [0, 1], got {self.cfg_dropout}")
        if self.batch_size < 1 or self.steps < 0:
            raise InvalidArgument("batch_size must be >= 1 and steps >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def make_optimizer(model: AudioVisualLM, cfg: TrainConfig) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        # norms, biases and the two learned condition vectors are not decayed
        (no_decay if p.ndim < 2 else decay).append(p)
    return torch.optim.AdamW(
        [{"params": decay, "weight_decay": cfg.weight_decay}, {"params": no_decay, "weight_decay": 0.0}],
        lr=cfg.lr,
        betas=cfg.betas,
    )


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup, then cosine decay to 10% of the peak rate."""
    if step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    span = max(1, cfg.steps - cfg.warmup)
    frac = min(1.0, (step - cfg.warmup) / span)
    return cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + math.cos(math.pi * frac)))


def batch_plan(step: int, n_items: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Batch indices and condition-dropout flags for ``step``.

    Drawn from a generator keyed on ``(seed, step)`` so that a resumed run
    sees exactly the batches an uninterrupted run would.
    """
    rng = np.random.default_rng([cfg.seed, step, 0xBA7C])
    idx = rng.choice(n_items, size=min(cfg.batch_size, n_items), replace=False)
    drop = rng.random(len(idx)) < cfg.cfg_dropout
    return np.sort(idx), drop


def batch_loss(model: AudioVisualLM, cells, features, frame_of, drop) -> tuple[torch.Tensor, int]:
    drop_t = None if drop is None else torch.as_tensor(drop, dtype=torch.bool)
    x = model.build_inputs(cells, features, frame_of, drop_t)
    logits = model(x)
    targets = sequence_targets(cells, model.cfg.K, features.shape[1], model.cfg.conditioning)
    return masked_cross_entropy(logits, targets)


def train_step(model, optimizer, data: TokenizedSet, step: int, cfg: TrainConfig) -> dict:
    idx, drop = batch_plan(step, len(data), cfg)
    lr = lr_at(step, cfg)
    for group in optimizer.param_groups:
        group["lr"] = lr
    model.train()
    optimizer.zero_grad(set_to_none=False)
    loss, _ = batch_loss(model, data.cells[idx], data.features[idx], data.frame_of, drop)
    if not torch.isfinite(loss):
        raise NumericOverflow(f"non-finite loss at step {step}")
    loss.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    return {"step": step, "loss": loss.item(), "grad_norm": grad_norm.item(), "lr": lr}


class Trainer:
    """Owns a model and its optimizer for the duration of a run."""

    def __init__(self, model: AudioVisualLM, cfg: TrainConfig, step: int = 0, optimizer=None):
        self.model = model
        self.cfg = cfg
        self.step = step
        self.optimizer = optimizer or make_optimizer(model, cfg)
        self.history: list[dict] = []

    def run(self, data: TokenizedSet, until: int | None = None, log_path: str | Path | None = None,
            dump_path: str | Path | None = None) -> list[dict]:
        until = self.cfg.steps if until is None else until
        writer = None
        fh = None
        if log_path is not None:
            new = not Path(log_path).exists() or self.step == 0
            fh = open(log_path, "w" if new else "a", newline="")
            writer = csv.writer(fh)
            if new:
                writer.writerow(["step", "loss", "grad_norm", "lr", "seconds"])
        t0 = time.perf_counter()
        try:
            while self.step < until:
                try:
                    rec = train_step(self.model, self.optimizer, data, self.step, self.cfg)
                except NumericOverflow:
                    if dump_path is not None:
                        from .checkpoint import save_checkpoint

                        save_checkpoint(dump_path, self.model, self.cfg, self.step, self.optimizer)
                        log.error("non-finite loss; state dumped to %s", dump_path)
                    raise
                rec["seconds"] = time.perf_counter() - t0
                self.history.append(rec)
                if writer:
                    writer.writerow([rec["step"], repr(rec["loss"]), repr(rec["grad_norm"]), repr(rec["lr"]),
                                     f"{rec['seconds']:.3f}"])
                if self.step % 50 == 0:
                    log.info("step %d loss %.4f", self.step, rec["loss"])
                self.step += 1
        finally:
            if fh:
                fh.close()
        return self.history


# -- gradient verification -------------------------------------------------------

def gradient_coordinates(model: AudioVisualLM, n_coords: int, seed: int = 0) -> list[tuple[str, int]]:
    """Random coordinates, round-robin over every parameter tensor so that
    each family is represented."""
    rng = np.random.default_rng(seed)
    params = [(n, p) for n, p in model.named_parameters()]
    coords = []
    i = 0
    while len(coords) < n_coords:
        name, p = params[i % len(params)]
        coords.append((name, int(rng.integers(p.numel()))))
        i += 1
    return coords


def compare_gradients(model, loss_fn, analytic: dict[str, torch.Tensor], coords, step: float = 2e-4,
                      floor: float = 1e-8) -> dict:
    """Finite-difference gradients at ``coords`` against ``analytic`` ones.

    Each numeric derivative is a Richardson-extrapolated central difference
    over steps ``step`` and ``step / 2``, which cancels the leading truncation
    term.  The relative error uses ``max(|a|, |n|)`` as denominator;
    coordinates where both magnitudes are below ``floor`` sit under the
    float64 round-off of the difference quotient and are skipped.
    """
    params = dict(model.named_parameters())
    errors = []
    skipped = 0
    families = set()

    def central(p, flat, orig, h):
        p[flat] = orig + h
        up = float(loss_fn())
        p[flat] = orig - h
        down = float(loss_fn())
        p[flat] = orig
        return (up - down) / (2 * h)

    with torch.no_grad():
        for name, flat in coords:
            p = params[name].view(-1)
            orig = p[flat].item()
            num = (4.0 * central(p, flat, orig, step / 2) - central(p, flat, orig, step)) / 3.0
            ana = float(analytic[name].view(-1)[flat])
            scale = max(abs(num), abs(ana))
            if scale < floor:
                skipped += 1
                continue
            errors.append(abs(num - ana) / scale)
            families.add(param_family(name))
    return {
        "max_rel_error": max(errors) if errors else 0.0,
        "n_checked": len(errors),
        "n_skipped": skipped,
        "families": sorted(families),
    }


def grad_check(model: AudioVisualLM, data: TokenizedSet, n_coords: int = 200, seed: int = 0,
               drop=None, step: float = 2e-4) -> dict:
    """Check autograd gradients of the training loss against finite differences.

    Runs on a float64 copy of ``model``; the probe batch is the whole of
    ``data``.
    """
    m = AudioVisualLM(model.cfg)
    m.load_state_dict(model.state_dict())
    m = m.double()
    feats = data.features.double()
    if drop is None:
        drop = np.zeros(len(data), dtype=bool)
        drop[len(data) // 2:] = True  # exercise u_cond as well as visual_proj

    def loss_fn():
        return batch_loss(m, data.cells, feats, data.frame_of, drop)[0]

    m.zero_grad()
    loss_fn().backward()
    # parameters the loss never touches (v_pad under "prepend") have no grad
    analytic = {n: (torch.zeros_like(p) if p.grad is None else p.grad.detach().clone())
                for n, p in m.named_parameters()}
    coords = gradient_coordinates(m, n_coords, seed)
    return compare_gradients(m, loss_fn, analytic, coords, step)
