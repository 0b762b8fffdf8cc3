import math

import numpy as np
import pytest
import torch

from helpers import tiny_cfg, tiny_data
from v2a.errors import InvalidArgument, InvalidToken, NumericOverflow
from v2a.model import (
    IGNORE,
    AudioVisualLM,
    KVCache,
    ModelConfig,
    count_parameters,
    masked_cross_entropy,
    param_family,
    sequence_targets,
)
from v2a.sequencer import VPAD


def test_config_validation():
    with pytest.raises(InvalidArgument):
        ModelConfig(d_a=10, d_v=5, n_head=4)
    with pytest.raises(InvalidArgument):
        ModelConfig(conditioning="cross")


def test_parameter_count_hand_value():
    # d=16, V=5, ffn hidden 48: 80 + 68 + 8 + 8 + 3360 + 16 + 170
    cfg = ModelConfig(K=4, N_q=2, d_a=8, d_v=8, d_raw=3, d_hidden_visual=5, n_layer=1, n_head=2)
    assert cfg.ffn_hidden == 48
    assert count_parameters(cfg)["total"] == 3710


@pytest.mark.parametrize("cfg", [tiny_cfg(), ModelConfig(d_a=48, d_v=16, n_layer=2, n_head=2, d_hidden_visual=64)])
def test_parameter_count_matches_module(cfg):
    m = AudioVisualLM(cfg)
    by_family: dict[str, int] = {}
    for name, p in m.named_parameters():
        by_family[param_family(name)] = by_family.get(param_family(name), 0) + p.numel()
    expected = count_parameters(cfg)
    assert by_family == {k: v for k, v in expected.items() if k != "total"}
    assert sum(p.numel() for p in m.parameters()) == expected["total"]


def test_embed_all_pad_rows_are_constant():
    m = AudioVisualLM(tiny_cfg())
    cells = torch.full((1, 5, 2), 6)
    out = m.embed_audio(cells)
    expected = m.embeddings[0].weight[6] + m.embeddings[1].weight[6]
    torch.testing.assert_close(out[0], expected.expand(5, -1))


def test_embed_reads_back_tokens_with_onehot_tables():
    m = AudioVisualLM(tiny_cfg())
    with torch.no_grad():
        for i, emb in enumerate(m.embeddings):
            emb.weight.zero_()
            emb.weight[:, i] = torch.arange(7, dtype=torch.float32)
    cells = torch.tensor([[[1, 6], [3, 2], [0, 5]]])
    out = m.embed_audio(cells)
    torch.testing.assert_close(out[0, :, :2], cells[0].float())


def test_embed_rejects_out_of_range():
    with pytest.raises(InvalidToken):
        AudioVisualLM(tiny_cfg()).embed_audio(torch.tensor([[[7, 0]]]))


def test_project_visual_zero():
    m = AudioVisualLM(tiny_cfg())
    assert not torch.any(m.project_visual(torch.zeros(2, 3, 3)))
    with pytest.raises(InvalidArgument):
        m.project_visual(torch.zeros(1, 3, 4))


def test_visual_rows_use_vpad():
    m = AudioVisualLM(tiny_cfg())
    proj = torch.randn(1, 3, 8)
    rows = m.visual_rows(proj, np.array([0, 1, 2, VPAD]))
    torch.testing.assert_close(rows[0, :3], proj[0])
    torch.testing.assert_close(rows[0, 3], m.v_pad.detach())


@pytest.mark.parametrize("conditioning", ["fusion", "prepend"])
def test_causality_is_bitwise(conditioning):
    m = AudioVisualLM(tiny_cfg(conditioning=conditioning), seed=1).double().eval()
    d = tiny_data()
    x = m.build_inputs(d.cells, d.features.double(), d.frame_of)
    base = m(x)
    t = 5
    x2 = x.clone()
    x2[:, t + 1:] = torch.randn_like(x2[:, t + 1:]) * 10
    changed = m(x2)
    assert torch.equal(base[:, : t + 1], changed[:, : t + 1])
    assert not torch.equal(base[:, t + 1:], changed[:, t + 1:])


def test_single_position_forward():
    m = AudioVisualLM(tiny_cfg())
    out = m(torch.randn(1, 1, 16))
    assert out.shape == (1, 1, 2, 7) and torch.isfinite(out).all()


@pytest.mark.parametrize("conditioning,golden_sum,golden_abs", [
    ("fusion", 2.6113793684917654, 30.96100226119853),
    ("prepend", 3.11280217657659, 40.44069075056541),
])
def test_logit_checksum_golden(conditioning, golden_sum, golden_abs):
    m = AudioVisualLM(tiny_cfg(conditioning=conditioning), seed=3).double()
    d = tiny_data()
    logits = m(m.build_inputs(d.cells, d.features.double(), d.frame_of))
    assert logits.sum().item() == pytest.approx(golden_sum, rel=1e-9)
    assert logits.abs().sum().item() == pytest.approx(golden_abs, rel=1e-9)


def test_same_seed_same_weights():
    a, b = AudioVisualLM(tiny_cfg(), seed=5), AudioVisualLM(tiny_cfg(), seed=5)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)


def test_kv_cache_matches_full_forward():
    m = AudioVisualLM(tiny_cfg(), seed=2).double().eval()
    x = torch.randn(2, 9, 16, dtype=torch.float64)
    full = m(x)
    cache = KVCache(1)
    parts = [m(x[:, :4], cache)] + [m(x[:, t:t + 1], cache) for t in range(4, 9)]
    torch.testing.assert_close(torch.cat(parts, 1), full, rtol=0, atol=1e-12)


def test_non_finite_logits_raise():
    m = AudioVisualLM(tiny_cfg())
    with torch.no_grad():
        m.heads[0].bias[0] = float("inf")
    with pytest.raises(NumericOverflow):
        m(torch.randn(1, 2, 16))


def test_uniform_logits_loss_is_log_vocab():
    logits = torch.zeros(2, 5, 4, 257)
    targets = torch.randint(0, 256, (2, 5, 4))
    loss, n = masked_cross_entropy(logits, targets)
    assert n == 40
    assert loss.item() == pytest.approx(math.log(257), abs=1e-6)
    assert math.log(257) == pytest.approx(5.549, abs=1e-3)


def test_confident_logits_loss_near_zero():
    targets = torch.randint(0, 6, (1, 4, 2))
    logits = torch.nn.functional.one_hot(targets, 7).float() * 100.0
    assert masked_cross_entropy(logits, targets)[0].item() < 1e-30 + 1e-6


def test_all_pad_targets_give_zero_with_warning():
    with pytest.warns(RuntimeWarning):
        loss, n = masked_cross_entropy(torch.randn(1, 3, 2, 7), torch.full((1, 3, 2), IGNORE))
    assert n == 0 and loss.item() == 0.0


def test_loss_shape_mismatch():
    with pytest.raises(InvalidArgument):
        masked_cross_entropy(torch.zeros(1, 3, 2, 7), torch.zeros(1, 4, 2, dtype=torch.long))


def test_sequence_targets_shift_and_mask():
    cells = torch.tensor([[[6, 6], [1, 6], [2, 3], [6, 4]]])
    tgt = sequence_targets(cells, 6)
    expected = torch.tensor([[[1, IGNORE], [2, 3], [IGNORE, 4], [IGNORE, IGNORE]]])
    assert torch.equal(tgt, expected)
    pre = sequence_targets(cells, 6, t_v=2, conditioning="prepend")
    assert pre.shape == (1, 6, 2)
    assert torch.all(pre[:, :2] == IGNORE)
    assert torch.equal(pre[:, 2:], expected)
