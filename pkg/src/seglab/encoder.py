"""Modal-aware interest detection: an L-layer user-video cross-attention
stack per modality, followed by a small MLP score head.

Per layer, with FU = FFN_U(U) and FV = FFN_V(V):
    A_VU = FV FU^T / sqrt(d)      A_VV = FV FV^T / sqrt(d)
    A_UU = FU FU^T / sqrt(d)      A_UV = A_VU^T
    V' rows attend over [U-keys | V-keys] with scores [A_VU | A_VV]
    U' rows attend over the same key stack with scores [A_UU | A_UV]
and the value stack is [FU; FV] so value rows align with score columns.
Both paths then pass through an output feedforward with a residual
connection from the layer input and per-path layer normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .core_data import DEFAULT_MAX_HISTORY, DEFAULT_MAX_SEGMENTS

MASK_FILL = -1e30


@dataclass
class EncoderConfig:
    d: int = 32
    layers: int = 2
    score_dim: int = 8
    ffn_hidden: int | None = None  # defaults to 2 * d
    dropout: float = 0.1
    max_segments: int = DEFAULT_MAX_SEGMENTS
    max_history: int = DEFAULT_MAX_HISTORY

    @property
    def hidden(self) -> int:
        return self.ffn_hidden if self.ffn_hidden else 2 * self.d


class FFN(nn.Module):
    """One-hidden-layer ReLU feedforward d -> hidden -> d."""

    def __init__(self, d: int, hidden: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(d, hidden)
        self.lin2 = nn.Linear(hidden, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.drop(torch.relu(self.lin1(x))))


class SequencePositions(nn.Module):
    """Learned additive position encodings: history order on the user side,
    segment order on the video side."""

    def __init__(self, max_history: int, max_segments: int, d: int):
        super().__init__()
        self.u_table = nn.Embedding(max(max_history, 1), d)
        self.v_table = nn.Embedding(max_segments, d)
        nn.init.normal_(self.u_table.weight, std=0.01)
        nn.init.normal_(self.v_table.weight, std=0.01)

    def forward(self, u: torch.Tensor, v: torch.Tensor,
                drop_v_positions: bool = False):
        m = u.shape[-2]
        n = v.shape[-2]
        u = u + self.u_table.weight[:m]
        if not drop_v_positions:
            v = v + self.v_table.weight[:n]
        return u, v


class CrossAttnLayer(nn.Module):
    """One user-video cross-attention layer (see module docstring)."""

    def __init__(self, d: int, hidden: int, dropout: float):
        super().__init__()
        self.d = d
        self.ffn_u = FFN(d, hidden, dropout)
        self.ffn_v = FFN(d, hidden, dropout)
        self.ffn_out = FFN(d, hidden, dropout)
        self.ln_u = nn.LayerNorm(d)
        self.ln_v = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def attention_weights(self, u, v, u_mask=None, v_mask=None):
        """Row-stochastic attention over the joint [U | V] key stack.
        Returns (v_weights B x N x (M+N), u_weights B x M x (M+N), values)."""
        fu = self.ffn_u(u)
        fv = self.ffn_v(v)
        scale = 1.0 / math.sqrt(self.d)
        s_vu = torch.matmul(fv, fu.transpose(-1, -2)) * scale
        s_vv = torch.matmul(fv, fv.transpose(-1, -2)) * scale
        s_uu = torch.matmul(fu, fu.transpose(-1, -2)) * scale
        s_uv = s_vu.transpose(-1, -2)
        v_scores = torch.cat([s_vu, s_vv], dim=-1)
        u_scores = torch.cat([s_uu, s_uv], dim=-1)
        if u_mask is not None or v_mask is not None:
            if u_mask is None:
                u_mask = torch.ones(u.shape[:-1], dtype=torch.bool, device=u.device)
            if v_mask is None:
                v_mask = torch.ones(v.shape[:-1], dtype=torch.bool, device=v.device)
            key_mask = torch.cat([u_mask, v_mask], dim=-1).unsqueeze(-2)
            v_scores = v_scores.masked_fill(~key_mask, MASK_FILL)
            u_scores = u_scores.masked_fill(~key_mask, MASK_FILL)
        v_weights = torch.softmax(v_scores, dim=-1)
        u_weights = torch.softmax(u_scores, dim=-1)
        values = torch.cat([fu, fv], dim=-2)
        return v_weights, u_weights, values

    def forward(self, u, v, u_mask=None, v_mask=None):
        v_weights, u_weights, values = self.attention_weights(u, v, u_mask, v_mask)
        v_mixed = torch.matmul(v_weights, values)
        u_mixed = torch.matmul(u_weights, values)
        v_out = self.ln_v(v + self.ffn_out(self.drop(v_mixed)))
        u_out = self.ln_u(u + self.ffn_out(self.drop(u_mixed)))
        return u_out, v_out


class ScoreHead(nn.Module):
    """Two-layer MLP d -> d/2 -> k applied row-wise."""

    def __init__(self, d: int, k: int):
        super().__init__()
        self.lin1 = nn.Linear(d, d // 2)
        self.lin2 = nn.Linear(d // 2, k)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(torch.relu(self.lin1(x)))


class ModalEncoder(nn.Module):
    """Sequence-position encoding, L cross-attention layers, score head."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.seq_pos = SequencePositions(cfg.max_history, cfg.max_segments, cfg.d)
        self.layers = nn.ModuleList(
            CrossAttnLayer(cfg.d, cfg.hidden, cfg.dropout)
            for _ in range(cfg.layers))
        self.head = ScoreHead(cfg.d, cfg.score_dim)

    def encode(self, u, v, u_mask=None, v_mask=None,
               drop_position: bool = False, drop_attention: bool = False):
        """Returns the V path of the last layer (B x N x d)."""
        u, v = self.seq_pos(u, v, drop_v_positions=drop_position)
        if not drop_attention:
            for layer in self.layers:
                u, v = layer(u, v, u_mask, v_mask)
        return v

    def forward(self, u, v, u_mask=None, v_mask=None,
                drop_position: bool = False, drop_attention: bool = False):
        """Per-segment score features x (B x N x k)."""
        return self.head(self.encode(u, v, u_mask, v_mask,
                                     drop_position, drop_attention))


def encode_sequence_positions(u, v, seq_pos: SequencePositions,
                              drop_v_positions: bool = False):
    """Unbatched wrapper: adds sequence-position encodings, shapes kept."""
    return seq_pos(u, v, drop_v_positions=drop_v_positions)


def cross_attention_block(u, v, layer: CrossAttnLayer):
    """Unbatched wrapper over one layer: (M x d, N x d) -> same shapes."""
    u2, v2 = layer(u.unsqueeze(0), v.unsqueeze(0))
    return u2[0], v2[0]


def encode(u, v, model: ModalEncoder, **kw):
    """Unbatched encode: returns V_final (N x d)."""
    return model.encode(u.unsqueeze(0), v.unsqueeze(0), **kw)[0]


def score_head(v_final, head: ScoreHead):
    """Unbatched score head: (N x d) -> (N x k)."""
    return head(v_final)
