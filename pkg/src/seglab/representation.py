"""Hybrid user/video representation.

ID modality: embedding tables for user, video, and segment position; the
video half and the position half concatenate to width d. Visual modality: a
shared linear projector from precomputed segment features to width d, with
a learned placeholder row for users with empty history.

Also defines the checkpoint container format shared by all model parts:
a numpy archive of named float32 tensors plus a JSON metadata blob.
"""

from __future__ import annotations

import json

import numpy as np
import torch
from torch import nn

OOV_INDEX = 0


class Vocabulary:
    """String id to dense index map; index 0 is the out-of-vocabulary bucket."""

    def __init__(self, ids):
        self._ids = sorted(set(str(i) for i in ids))
        self._to_index = {s: i + 1 for i, s in enumerate(self._ids)}

    def __len__(self):
        return len(self._ids) + 1  # including OOV

    def index(self, item) -> int:
        return self._to_index.get(str(item), OOV_INDEX)

    def known(self, item) -> bool:
        return str(item) in self._to_index

    def tolist(self):
        return list(self._ids)


def _init_embedding(table: nn.Embedding, std: float = 0.01) -> None:
    nn.init.normal_(table.weight, mean=0.0, std=std)


class IdEmbeddings(nn.Module):
    """User (d), video (d/2) and segment-position (d/2) embedding tables."""

    def __init__(self, n_users: int, n_videos: int, max_segments: int, d: int):
        super().__init__()
        if d % 2:
            raise ValueError("embedding width d must be even")
        self.d = d
        self.max_segments = max_segments
        self.user_table = nn.Embedding(n_users, d)
        self.video_table = nn.Embedding(n_videos, d // 2)
        self.segment_position_table = nn.Embedding(max_segments, d // 2)
        for t in (self.user_table, self.video_table, self.segment_position_table):
            _init_embedding(t)

    def user_rows(self, user_idx: torch.Tensor) -> torch.Tensor:
        return self.user_table(user_idx)

    def video_segment_rows(self, video_idx: torch.Tensor, n_max: int,
                           drop_position: bool = False) -> torch.Tensor:
        """B x n_max x d rows: concat(video half, position half)."""
        b = video_idx.shape[0]
        vid = self.video_table(video_idx)  # B x d/2
        vid = vid.unsqueeze(1).expand(b, n_max, self.d // 2)
        pos_idx = torch.arange(n_max, device=video_idx.device)
        pos = self.segment_position_table(pos_idx).unsqueeze(0).expand(b, n_max, self.d // 2)
        if drop_position:
            pos = torch.zeros_like(pos)
        return torch.cat([vid, pos], dim=-1)


class VisualProjector(nn.Module):
    """Linear map from stored visual features to width d, shared between the
    user history side and the target video side."""

    def __init__(self, visual_dim: int, d: int):
        super().__init__()
        self.linear = nn.Linear(visual_dim, d)
        self.no_history = nn.Parameter(torch.empty(1, d))
        nn.init.normal_(self.no_history, mean=0.0, std=0.01)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.linear(feats)


def represent_id(user_index: int, video_index: int, n: int,
                 emb: IdEmbeddings, drop_position: bool = False):
    """Single-instance ID bundle: U 1 x d, V n x d."""
    device = emb.user_table.weight.device
    u_idx = torch.tensor([user_index], device=device)
    v_idx = torch.tensor([video_index], device=device)
    u = emb.user_rows(u_idx)
    v = emb.video_segment_rows(v_idx, n, drop_position=drop_position)[0]
    return u, v


def represent_visual(history_feats, target_feats, proj: VisualProjector):
    """Single-instance visual bundle: U M x d (or the learned no-history row
    when the history is empty), V n x d. Inputs are numpy arrays or tensors;
    missing feature rows should already be zero-filled by the caller."""
    weight = proj.linear.weight
    v_in = torch.as_tensor(np.asarray(target_feats), dtype=weight.dtype,
                           device=weight.device)
    v = proj(v_in)
    if history_feats is None or len(history_feats) == 0:
        u = proj.no_history
    else:
        u_in = torch.as_tensor(np.asarray(history_feats), dtype=weight.dtype,
                               device=weight.device)
        u = proj(u_in)
    return u, v


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    """Archive of named float32 tensors plus a JSON metadata entry."""
    payload = {name: np.asarray(arr, dtype=np.float32)
               for name, arr in tensors.items()}
    payload["_meta_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Returns (tensor dict, meta dict)."""
    tensors = {}
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["_meta_json"].tobytes()).decode("utf-8"))
        for name in npz.files:
            if name != "_meta_json":
                tensors[name] = npz[name]
    return tensors, meta
