"""On-disk formats: WAV, VFEA feature streams, VRVQ codebooks, VTOK tokens,
JSON Lines manifests and provenance sidecars.

All binary formats are little-endian and start with a 4-byte magic and a u16
format version.  Readers refuse other versions with ``IncompatibleArtifact``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
import wave
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from . import __version__
from .codec import RvqCodebooks, TokenGrid
from .errors import IncompatibleArtifact, InvalidArgument
from .synthworld import VideoFeatureStream, Waveform

log = logging.getLogger(__name__)

VFEA_VERSION = 1
VRVQ_VERSION = 1
VTOK_VERSION = 1


def _check_header(buf: bytes, magic: bytes, version: int, kind: str) -> None:
    if buf[:4] != magic:
        raise InvalidArgument(f"not a {kind} file (magic {buf[:4]!r})")
    (found,) = struct.unpack_from("<H", buf, 4)
    if found != version:
        raise IncompatibleArtifact(kind, found, version)


# -- audio ------------------------------------------------------------------

def write_wav(path: str | Path, waveform: Waveform) -> None:
    pcm = np.round(np.clip(waveform.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(waveform.sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> Waveform:
    with wave.open(str(path), "rb") as w:
        if w.getsampwidth() != 2 or w.getnchannels() != 1:
            raise InvalidArgument(f"{path}: expected mono 16-bit PCM")
        sr = w.getframerate()
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32767.0, sr)


# -- video features -----------------------------------------------------------

def write_vfea(path: str | Path, stream: VideoFeatureStream) -> None:
    feats = np.ascontiguousarray(stream.features, dtype="<f4")
    t_v, d_raw = feats.shape
    with open(path, "wb") as f:
        f.write(b"VFEA" + struct.pack("<HII", VFEA_VERSION, t_v, d_raw))
        f.write(feats.tobytes())


def read_vfea(path: str | Path, fps: float = 25.0) -> VideoFeatureStream:
    buf = Path(path).read_bytes()
    _check_header(buf, b"VFEA", VFEA_VERSION, "VFEA")
    _, t_v, d_raw = struct.unpack_from("<HII", buf, 4)
    feats = np.frombuffer(buf, dtype="<f4", count=t_v * d_raw, offset=14).reshape(t_v, d_raw)
    return VideoFeatureStream(feats.astype(np.float32), fps)


# -- codec ------------------------------------------------------------------

def write_codebooks(path: str | Path, cb: RvqCodebooks) -> None:
    with open(path, "wb") as f:
        f.write(b"VRVQ" + struct.pack("<HHIII", VRVQ_VERSION, cb.N_q, cb.K, cb.frame_len, cb.hop))
        f.write(np.ascontiguousarray(cb.codebooks, dtype="<f4").tobytes())


def read_codebooks(path: str | Path) -> RvqCodebooks:
    buf = Path(path).read_bytes()
    _check_header(buf, b"VRVQ", VRVQ_VERSION, "VRVQ")
    _, n_q, k, frame_len, hop = struct.unpack_from("<HHIII", buf, 4)
    data = np.frombuffer(buf, dtype="<f4", count=n_q * k * frame_len, offset=20)
    return RvqCodebooks(data.reshape(n_q, k, frame_len).astype(np.float64), frame_len, hop)


def write_tokens(path: str | Path, grid: TokenGrid) -> None:
    """Write a token grid; the PAD id of delayed layouts is ``K`` (from the header)."""
    tokens = np.asarray(grid.tokens)
    if grid.K + 1 > 0xFFFF:
        raise InvalidArgument("K too large for u16 token storage")
    with open(path, "wb") as f:
        f.write(b"VTOK" + struct.pack("<HHII", VTOK_VERSION, tokens.shape[1], tokens.shape[0], grid.K))
        f.write(np.ascontiguousarray(tokens, dtype="<u2").tobytes())


def read_tokens(path: str | Path) -> TokenGrid:
    buf = Path(path).read_bytes()
    _check_header(buf, b"VTOK", VTOK_VERSION, "VTOK")
    _, n_q, t_a, k = struct.unpack_from("<HHII", buf, 4)
    data = np.frombuffer(buf, dtype="<u2", count=n_q * t_a, offset=16)
    return TokenGrid(data.reshape(t_a, n_q).astype(np.int64), k)


# -- manifests & provenance ---------------------------------------------------

def write_manifest(path: str | Path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def iter_manifest(path: str | Path) -> Iterator[tuple[int, dict | None, str]]:
    """Yield ``(line_no, record_or_None, raw_line)``; malformed lines give None."""
    with open(path) as f:
        for no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict) or "id" not in rec or "paths" not in rec:
                    raise ValueError("missing id/paths")
            except ValueError as exc:
                log.warning("%s:%d: skipping malformed manifest line (%s)", path, no, exc)
                yield no, None, line
                continue
            yield no, rec, line


def read_manifest(path: str | Path) -> list[dict]:
    return [rec for _, rec, _ in iter_manifest(path) if rec is not None]


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_provenance(artifact: str | Path, inputs: list[str | Path], config: dict, extra: dict | None = None) -> Path:
    """Sidecar ``<artifact>.prov.json``; the only place timestamps are written."""
    artifact = Path(artifact)
    prov = {
        "artifact": artifact.name,
        "artifact_sha256": sha256_file(artifact) if artifact.is_file() else None,
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "config_sha256": sha256_json(config),
        "tool_version": __version__,
        "created_unix": time.time(),
    }
    if extra:
        prov.update(extra)
    out = artifact.with_name(artifact.name + ".prov.json")
    out.write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return out
