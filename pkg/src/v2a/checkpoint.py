"""VCKP checkpoints: model weights, optimizer moments and the run config.

Layout (little-endian): ``b"VCKP"``, u16 version, u32 config length, config
as UTF-8 JSON, u32 tensor count, then per tensor: u16 name length, name,
u8 rank, u32 dims, f32 data.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import IncompatibleArtifact, InvalidArgument
from .model import AudioVisualLM, ModelConfig
from .training import TrainConfig, make_optimizer

VCKP_VERSION = 1


def _tensor_bytes(name: str, t: torch.Tensor) -> bytes:
    arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, model: AudioVisualLM, train_cfg: TrainConfig | None = None, step: int = 0,
                    optimizer: torch.optim.Optimizer | None = None, extra: dict | None = None) -> None:
    config = {
        "model": model.cfg.to_dict(),
        "train": None if train_cfg is None else train_cfg.to_dict(),
        "step": step,
        "extra": extra or {},
    }
    tensors = [(f"param.{n}", p) for n, p in model.named_parameters()]
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if not st:
                    continue
                n = names[id(p)]
                tensors.append((f"adam.exp_avg.{n}", st["exp_avg"]))
                tensors.append((f"adam.exp_avg_sq.{n}", st["exp_avg_sq"]))
                tensors.append((f"adam.step.{n}", torch.as_tensor(st["step"], dtype=torch.float32).reshape(1)))
    cfg_bytes = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(b"VCKP" + struct.pack("<HI", VCKP_VERSION, len(cfg_bytes)) + cfg_bytes)
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            f.write(_tensor_bytes(name, t))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:4] != b"VCKP":
        raise InvalidArgument(f"{path}: not a VCKP checkpoint")
    version, n_cfg = struct.unpack_from("<HI", buf, 4)
    if version != VCKP_VERSION:
        raise IncompatibleArtifact("VCKP", version, VCKP_VERSION)
    off = 10
    config = json.loads(buf[off:off + n_cfg].decode())
    off += n_cfg
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).copy()
        off += 4 * size
    return config, tensors


def load_checkpoint(path, with_optimizer: bool = False):
    """Returns ``(model, train_cfg, step, optimizer_or_None, extra)``."""
    config, tensors = read_checkpoint(path)
    model_cfg = ModelConfig(**config["model"])
    model = AudioVisualLM(model_cfg)
    state = {n[len("param."):]: torch.from_numpy(a) for n, a in tensors.items() if n.startswith("param.")}
    model.load_state_dict(state, strict=True)
    train_cfg = None
    if config["train"] is not None:
        tc = dict(config["train"])
        tc["betas"] = tuple(tc["betas"])
        train_cfg = TrainConfig(**tc)
    optimizer = None
    if with_optimizer and train_cfg is not None:
        optimizer = make_optimizer(model, train_cfg)
        for n, p in model.named_parameters():
            key = f"adam.exp_avg.{n}"
            if key in tensors:
                optimizer.state[p] = {
                    "step": torch.tensor(float(tensors[f"adam.step.{n}"][0])),
                    "exp_avg": torch.from_numpy(tensors[key]),
                    "exp_avg_sq": torch.from_numpy(tensors[f"adam.exp_avg_sq.{n}"]),
                }
    return model, train_cfg, int(config["step"]), optimizer, config.get("extra", {})


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
