"""Cross-attention encoder: shapes, hand-computed weights, properties."""

import math

import pytest
import torch

from seglab.encoder import (
    CrossAttnLayer,
    EncoderConfig,
    ModalEncoder,
    ScoreHead,
    SequencePositions,
    cross_attention_block,
    encode_sequence_positions,
)

torch.manual_seed(0)


def make_identity_ffn(ffn):
    """Configure lin2(relu(lin1(x))) to compute the identity via the
    (x+, x-) split; requires hidden >= 2d."""
    d = ffn.lin1.in_features
    with torch.no_grad():
        ffn.lin1.weight.zero_()
        ffn.lin1.bias.zero_()
        ffn.lin2.weight.zero_()
        ffn.lin2.bias.zero_()
        for i in range(d):
            ffn.lin1.weight[i, i] = 1.0
            ffn.lin1.weight[d + i, i] = -1.0
            ffn.lin2.weight[i, i] = 1.0
            ffn.lin2.weight[i, d + i] = -1.0


def zero_ffn(ffn):
    with torch.no_grad():
        for p in ffn.parameters():
            p.zero_()


# -------------------------------------------------------- sequence positions

def test_seq_positions_zero_table_is_identity():
    sp = SequencePositions(max_history=10, max_segments=10, d=4)
    with torch.no_grad():
        sp.u_table.weight.zero_()
        sp.v_table.weight.zero_()
    u = torch.randn(3, 4)
    v = torch.randn(5, 4)
    u2, v2 = encode_sequence_positions(u, v, sp)
    assert torch.equal(u2, u)
    assert torch.equal(v2, v)


def test_seq_positions_preserve_shapes():
    sp = SequencePositions(max_history=20, max_segments=40, d=8)
    u, v = encode_sequence_positions(torch.randn(7, 8), torch.randn(13, 8), sp)
    assert u.shape == (7, 8)
    assert v.shape == (13, 8)


def test_seq_positions_are_order_sensitive():
    sp = SequencePositions(max_history=6, max_segments=6, d=4)
    u = torch.randn(4, 4)
    v = torch.randn(3, 4)
    perm = torch.tensor([2, 0, 1, 3])
    enc_then_perm = encode_sequence_positions(u, v, sp)[0][perm]
    perm_then_enc = encode_sequence_positions(u[perm], v, sp)[0]
    assert not torch.allclose(enc_then_perm, perm_then_enc)


# ------------------------------------------------------------ attention block

def test_block_shapes():
    layer = CrossAttnLayer(d=16, hidden=32, dropout=0.0)
    u = torch.randn(20, 16)
    v = torch.randn(8, 16)
    v_w, u_w, values = layer.attention_weights(u.unsqueeze(0), v.unsqueeze(0))
    assert v_w.shape == (1, 8, 28)  # scores over [20 U-keys | 8 V-keys]
    assert u_w.shape == (1, 20, 28)
    assert values.shape == (1, 28, 16)
    u2, v2 = cross_attention_block(u, v, layer)
    assert u2.shape == (20, 16)
    assert v2.shape == (8, 16)


def test_attention_rows_are_stochastic():
    layer = CrossAttnLayer(d=8, hidden=16, dropout=0.0)
    v_w, u_w, _ = layer.attention_weights(torch.randn(2, 5, 8), torch.randn(2, 4, 8))
    for w in (v_w, u_w):
        assert torch.all(w >= 0)
        assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-6)


def test_attention_weights_match_hand_calculation():
    """Identity score FFNs and one-hot rows: every score matrix is I/sqrt(2),
    so each softmax row is softmax([r,0,r,0]) with r = 1/sqrt(2)."""
    layer = CrossAttnLayer(d=2, hidden=4, dropout=0.0)
    make_identity_ffn(layer.ffn_u)
    make_identity_ffn(layer.ffn_v)
    eye = torch.eye(2)
    v_w, u_w, values = layer.attention_weights(eye.unsqueeze(0), eye.unsqueeze(0))
    r = 1.0 / math.sqrt(2.0)
    a = math.exp(r)
    hot = a / (2 * a + 2)
    cold = 1.0 / (2 * a + 2)
    expected_row1 = torch.tensor([hot, cold, hot, cold])
    expected_row2 = torch.tensor([cold, hot, cold, hot])
    assert torch.allclose(v_w[0, 0], expected_row1, atol=1e-6)
    assert torch.allclose(v_w[0, 1], expected_row2, atol=1e-6)
    assert torch.allclose(u_w[0, 0], expected_row1, atol=1e-6)
    # value stack is [FU; FV] with identity FFNs
    assert torch.equal(values[0], torch.cat([eye, eye]))
    mixed = v_w[0] @ values[0]
    expected_mixed = torch.tensor([[2 * hot, 2 * cold], [2 * cold, 2 * hot]])
    assert torch.allclose(mixed, expected_mixed, atol=1e-6)


def test_masked_keys_get_zero_weight():
    layer = CrossAttnLayer(d=4, hidden=8, dropout=0.0)
    u = torch.randn(1, 3, 4)
    v = torch.randn(1, 2, 4)
    u_mask = torch.tensor([[True, True, False]])
    v_w, u_w, _ = layer.attention_weights(u, v, u_mask=u_mask)
    assert torch.all(v_w[..., 2] < 1e-12)
    assert torch.all(u_w[..., 2] < 1e-12)
    assert torch.allclose(v_w.sum(-1), torch.ones(1, 2), atol=1e-6)


def test_attention_core_permutation_equivariance():
    layer = CrossAttnLayer(d=8, hidden=16, dropout=0.0).eval()
    u = torch.randn(5, 8)
    v = torch.randn(6, 8)
    perm = torch.tensor([3, 1, 5, 0, 4, 2])
    u_base, v_base = cross_attention_block(u, v, layer)
    u_perm, v_perm = cross_attention_block(u, v[perm], layer)
    assert torch.allclose(v_perm, v_base[perm], atol=1e-5)
    assert torch.allclose(u_perm, u_base, atol=1e-5)


# -------------------------------------------------------------------- encoder

def test_encode_zero_layers_returns_position_encoded_v():
    cfg = EncoderConfig(d=8, layers=0, score_dim=4, dropout=0.0,
                        max_segments=10, max_history=10)
    model = ModalEncoder(cfg).eval()
    u = torch.randn(1, 3, 8)
    v = torch.randn(1, 4, 8)
    out = model.encode(u, v)
    _, expected = model.seq_pos(u, v)
    assert torch.equal(out, expected)


def test_encode_bounded_for_large_inputs():
    cfg = EncoderConfig(d=16, layers=2, score_dim=8, dropout=0.0)
    model = ModalEncoder(cfg).eval()
    out = model(100.0 * torch.randn(1, 6, 16), 100.0 * torch.randn(1, 5, 16))
    assert torch.isfinite(out).all()


def test_encode_deterministic_in_eval_mode():
    cfg = EncoderConfig(d=8, layers=1, score_dim=4, dropout=0.5)
    model = ModalEncoder(cfg)
    u = torch.randn(1, 4, 8)
    v = torch.randn(1, 3, 8)
    model.train()
    assert not torch.equal(model(u, v), model(u, v))
    model.eval()
    assert torch.equal(model(u, v), model(u, v))


def test_encoder_gradients_match_finite_differences():
    cfg = EncoderConfig(d=8, layers=1, score_dim=3, dropout=0.0,
                        max_segments=6, max_history=8)
    model = ModalEncoder(cfg).double()
    u = torch.randn(1, 6, 8, dtype=torch.float64)
    v = torch.randn(1, 4, 8, dtype=torch.float64)

    def loss():
        return (model(u, v) * torch.linspace(
            0.5, 1.5, 12, dtype=torch.float64).reshape(4, 3)).sum()

    model.zero_grad()
    loss().backward()
    # the last layer's U path is never consumed, so its layer norm is inert
    dead = {name for name, p in model.named_parameters() if p.grad is None}
    assert dead == {"layers.0.ln_u.weight", "layers.0.ln_u.bias"}
    eps = 1e-5
    for name, param in model.named_parameters():
        grad = param.grad
        if grad is None:
            continue
        flat = param.data.view(-1)
        for idx in (0, flat.numel() // 2, flat.numel() - 1):
            orig = flat[idx].item()
            flat[idx] = orig + eps
            hi = loss().item()
            flat[idx] = orig - eps
            lo = loss().item()
            flat[idx] = orig
            fd = (hi - lo) / (2 * eps)
            an = grad.view(-1)[idx].item()
            denom = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / denom < 1e-4, f"{name}[{idx}]: {fd} vs {an}"


# ----------------------------------------------------------------- score head

def test_score_head_zero_weights_zero_output():
    head = ScoreHead(d=8, k=4)
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
    assert torch.all(head(torch.randn(5, 8)) == 0)


def test_score_head_is_row_wise():
    head = ScoreHead(d=8, k=4).eval()
    x = torch.randn(6, 8)
    perm = torch.tensor([5, 0, 3, 1, 4, 2])
    assert torch.allclose(head(x[perm]), head(x)[perm], atol=1e-7)


def test_score_head_shape():
    head = ScoreHead(d=64, k=8)
    assert head(torch.randn(8, 64)).shape == (8, 8)
