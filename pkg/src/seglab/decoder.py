"""Segment interest decoder: multi-modal bilinear fusion plus an
inner-video position bias, and the composite interest model that ties
representation, per-modality encoders, fusion, and the bias together.

Fusion per segment n over modality features x_i[n] (each of width k):
    o_n = logistic(b_f + sum_i Proj_i(x_i[n])
                        + sum_{i != j} Proj_ij(heads(x_i[n], x_j[n])))
where heads(a, b) splits both vectors into h contiguous sub-vectors and
returns the h per-head dot products. Ordered pairs keep distinct
projectors. Final scores: p = o + w_p * (1..N) + b_p.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
from torch import nn

from .core_data import DEFAULT_MAX_HISTORY, DEFAULT_MAX_SEGMENTS
from .encoder import EncoderConfig, ModalEncoder
from .representation import (
    IdEmbeddings,
    Vocabulary,
    VisualProjector,
    load_checkpoint,
    save_checkpoint,
)


class FusionParams(nn.Module):
    """Per-modality linear projections, per-ordered-pair head projections,
    and the shared fusion bias b_f."""

    def __init__(self, modalities, k: int, heads: int):
        super().__init__()
        if k % heads:
            raise ValueError(f"heads {heads} must divide score_dim {k}")
        self.modalities = list(modalities)
        self.k = k
        self.heads = heads
        self.proj = nn.ModuleDict(
            {m: nn.Linear(k, 1, bias=False) for m in self.modalities})
        self.pair_proj = nn.ModuleDict(
            {f"{a}:{b}": nn.Linear(heads, 1, bias=False)
             for a in self.modalities for b in self.modalities if a != b})
        self.b_f = nn.Parameter(torch.zeros(()))

    def head_products(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Per-head dot products: (..., k) x (..., k) -> (..., h)."""
        shape = a.shape[:-1] + (self.heads, self.k // self.heads)
        return (a.reshape(shape) * b.reshape(shape)).sum(dim=-1)

    def forward(self, xs) -> torch.Tensor:
        """xs: list of (..., k) tensors aligned with self.modalities.
        Returns o in (0, 1) with the leading shape of the inputs."""
        if len(xs) != len(self.modalities):
            raise ValueError(f"expected {len(self.modalities)} modalities, got {len(xs)}")
        by_name = dict(zip(self.modalities, xs))
        total = self.b_f
        for name, x in by_name.items():
            if x.shape[-1] != self.k:
                raise ValueError(f"modality {name}: feature width {x.shape[-1]} != {self.k}")
            total = total + self.proj[name](x).squeeze(-1)
        for a in self.modalities:
            for b in self.modalities:
                if a != b:
                    hp = self.head_products(by_name[a], by_name[b])
                    total = total + self.pair_proj[f"{a}:{b}"](hp).squeeze(-1)
        return torch.sigmoid(total)


class PositionBias(nn.Module):
    """Affine function of the raw 1-based segment index."""

    def __init__(self):
        super().__init__()
        self.w_p = nn.Parameter(torch.zeros(()))
        self.b_p = nn.Parameter(torch.zeros(()))


def position_bias_vector(n: int, pb: PositionBias) -> torch.Tensor:
    idx = torch.arange(1, n + 1, dtype=pb.w_p.dtype, device=pb.w_p.device)
    return pb.w_p * idx + pb.b_p


def fuse(xs, params: FusionParams) -> torch.Tensor:
    """Functional fusion over a list of N x k (or B x N x k) tensors."""
    return params(xs)


@dataclass
class ModelConfig:
    """Sizes and switches of the composite interest model."""

    n_users: int = 1
    n_videos: int = 1
    visual_dim: int = 64
    d: int = 32
    layers: int = 2
    score_dim: int = 8
    heads: int = 4
    ffn_hidden: int | None = None
    dropout: float = 0.1
    max_segments: int = DEFAULT_MAX_SEGMENTS
    max_history: int = DEFAULT_MAX_HISTORY
    use_id: bool = True
    use_visual: bool = True
    drop_position: bool = False
    drop_attention: bool = False

    def modality_names(self):
        names = []
        if self.use_id:
            names.append("id")
        if self.use_visual:
            names.append("visual")
        if not names:
            raise ValueError("at least one modality must be enabled")
        return names


class InterestModel(nn.Module):
    """End-to-end segment interest scorer p(u, v) over target segments."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        names = cfg.modality_names()
        enc_cfg = EncoderConfig(
            d=cfg.d, layers=cfg.layers, score_dim=cfg.score_dim,
            ffn_hidden=cfg.ffn_hidden, dropout=cfg.dropout,
            max_segments=cfg.max_segments, max_history=cfg.max_history)
        self.embeddings = IdEmbeddings(cfg.n_users, cfg.n_videos,
                                       cfg.max_segments, cfg.d) if cfg.use_id else None
        self.projector = VisualProjector(cfg.visual_dim, cfg.d) if cfg.use_visual else None
        self.encoders = nn.ModuleDict({m: ModalEncoder(enc_cfg) for m in names})
        self.fusion = FusionParams(names, cfg.score_dim, cfg.heads)
        self.pos_bias = PositionBias()

    def forward(self, batch) -> torch.Tensor:
        """batch fields (tensors on the model device):
        user_idx B, video_idx B, n_mask B x Nmax bool,
        hist_feats B x Mmax x D_vis, u_mask B x Mmax bool, m B,
        target_feats B x Nmax x D_vis.
        Returns p (B x Nmax); entries outside n_mask are meaningless."""
        cfg = self.cfg
        n_mask = batch["n_mask"]
        b, n_max = n_mask.shape
        xs = []
        if cfg.use_id:
            u = self.embeddings.user_rows(batch["user_idx"]).unsqueeze(1)
            v = self.embeddings.video_segment_rows(
                batch["video_idx"], n_max, drop_position=cfg.drop_position)
            ones = torch.ones(b, 1, dtype=torch.bool, device=n_mask.device)
            xs.append(self.encoders["id"](
                u, v, u_mask=ones, v_mask=n_mask,
                drop_position=cfg.drop_position, drop_attention=cfg.drop_attention))
        if cfg.use_visual:
            u = self.projector(batch["hist_feats"])
            empty = (batch["m"] == 0).view(b, 1, 1)
            u = torch.where(empty, self.projector.no_history.to(u.dtype), u)
            u_mask = batch["u_mask"]
            v = self.projector(batch["target_feats"])
            xs.append(self.encoders["visual"](
                u, v, u_mask=u_mask, v_mask=n_mask,
                drop_position=cfg.drop_position, drop_attention=cfg.drop_attention))
        o = self.fusion(xs)
        if cfg.drop_position:
            return o
        return o + position_bias_vector(n_max, self.pos_bias)


def predict_interest(model: InterestModel, batch) -> torch.Tensor:
    """Inference-mode scores with dropout disabled."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return model(batch)
    finally:
        if was_training:
            model.train()


def save_model(path, model: InterestModel, user_vocab: Vocabulary,
               video_vocab: Vocabulary, extra_meta: dict | None = None) -> None:
    tensors = {name: p.detach().cpu().numpy()
               for name, p in model.state_dict().items()}
    meta = {
        "kind": "interest_model",
        "config": asdict(model.cfg),
        "user_ids": user_vocab.tolist(),
        "video_ids": video_vocab.tolist(),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, tensors, meta)


def load_model(path):
    """Returns (model, user_vocab, video_vocab, meta)."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "interest_model":
        raise ValueError(f"not an interest model checkpoint: {meta.get('kind')!r}")
    cfg = ModelConfig(**meta["config"])
    model = InterestModel(cfg)
    state = {name: torch.from_numpy(arr.copy()) for name, arr in tensors.items()}
    model.load_state_dict(state)
    user_vocab = Vocabulary(meta["user_ids"])
    video_vocab = Vocabulary(meta["video_ids"])
    return model, user_vocab, video_vocab, meta
