"""Small synthetic tensors shared by the model, training and sampler tests."""

import numpy as np
import torch

from v2a.codec import TokenGrid
from v2a.data import TokenizedSet
from v2a.model import ModelConfig
from v2a.sequencer import apply_delay, build_alignment

TINY = dict(K=6, N_q=2, d_a=8, d_v=8, d_raw=3, d_hidden_visual=5, n_layer=1, n_head=2)


def tiny_cfg(**kw) -> ModelConfig:
    return ModelConfig(**(TINY | kw))


def tiny_data(n=4, t_a=6, t_v=3, K=6, N_q=2, d_raw=3, seed=0) -> TokenizedSet:
    rng = np.random.default_rng(seed)
    cells = np.stack([apply_delay(TokenGrid(rng.integers(K, size=(t_a, N_q)), K)).cells for _ in range(n)])
    feats = rng.normal(size=(n, t_v, d_raw)).astype(np.float32)
    fo = build_alignment(t_v, t_a, N_q).frame_of
    return TokenizedSet([f"t{i}" for i in range(n)], torch.as_tensor(cells), torch.as_tensor(feats), fo, K)


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE: list[dict] = []


class criterion:
    """Record one acceptance criterion's outcome for the end-of-run summary.

    The test body stores measured values in ``detail``; any exception marks
    the criterion FAIL and is re-raised.
    """

    def __init__(self, number: int, title: str):
        self.rec = {"n": number, "title": title, "detail": "", "ok": False}

    def __enter__(self):
        return self.rec

    def __exit__(self, exc_type, exc, tb):
        self.rec["ok"] = exc_type is None
        if exc_type is not None and not self.rec["detail"]:
            self.rec["detail"] = f"{exc_type.__name__}: {exc}"
        ACCEPTANCE.append(self.rec)
        return False
