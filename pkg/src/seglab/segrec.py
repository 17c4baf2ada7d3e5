"""Segment-integrated CTR prediction (Task 2).

A wide+deep backbone scores every segment of a candidate video; a frozen
segment-interest vector p turns those scores into a video-level effective
view prediction:
    y_hat = sum_i softmax(p)_i * logistic(y_i)
Baselines share the backbone: VIDEO scores one pooled pseudo-segment (its
position embedding replaced by a learned whole-video token), SEGSUM uses
uniform weights, SEGADJUST learns per-position weights jointly.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .core_data import DEFAULT_MAX_SEGMENTS, DurationBuckets
from .representation import Vocabulary, load_checkpoint, save_checkpoint

MASK_FILL = -1e30
CLAMP = 1e-7

MODES = ("segrec", "video", "segsum", "segadjust")


def masked_softmax(scores: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return torch.softmax(scores.masked_fill(~mask, MASK_FILL), dim=-1)


def aggregate_segrec(p, y) -> torch.Tensor:
    """softmax(p)-weighted convex combination of per-segment probabilities."""
    p = torch.as_tensor(p, dtype=torch.float64)
    y = torch.as_tensor(y, dtype=torch.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {tuple(p.shape)} vs {tuple(y.shape)}")
    return (torch.softmax(p, dim=-1) * torch.sigmoid(y)).sum(dim=-1)


def aggregate_baseline(mode: str, p=None, y=None, learned_w=None) -> torch.Tensor:
    """Self-info aggregation variants over per-segment scores y."""
    y = torch.as_tensor(y, dtype=torch.float64)
    if mode == "video":
        return torch.sigmoid(y.reshape(()) if y.numel() == 1 else y[..., 0])
    if mode == "segsum":
        return torch.sigmoid(y).mean(dim=-1)
    if mode == "segadjust":
        if learned_w is None:
            raise ValueError("segadjust needs learned weights")
        w = torch.softmax(torch.as_tensor(learned_w, dtype=torch.float64), dim=-1)
        return (w * torch.sigmoid(y)).sum(dim=-1)
    if mode == "segrec":
        return aggregate_segrec(p, y)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class BackboneConfig:
    n_users: int = 1
    n_videos: int = 1
    visual_dim: int = 64
    embed_dim: int = 32
    hidden: int = 64
    n_duration_buckets: int = 10
    max_segments: int = DEFAULT_MAX_SEGMENTS
    use_visual: bool = True


class BackboneModel(nn.Module):
    """Wide (linear) + deep (two-hidden-layer MLP) scorer over per-segment
    context features: user, video, position embeddings, duration-bucket
    one-hot, and projected visual features. The extra position row at index
    max_segments is the whole-video token used by the VIDEO baseline."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.user_emb = nn.Embedding(cfg.n_users, d)
        self.video_emb = nn.Embedding(cfg.n_videos, d)
        self.pos_emb = nn.Embedding(cfg.max_segments + 1, d)
        for t in (self.user_emb, self.video_emb, self.pos_emb):
            nn.init.normal_(t.weight, std=0.01)
        self.vis_proj = nn.Linear(cfg.visual_dim, d) if cfg.use_visual else None
        in_dim = 3 * d + cfg.n_duration_buckets + (d if cfg.use_visual else 0)
        self.wide = nn.Linear(in_dim, 1)
        self.deep = nn.Sequential(
            nn.Linear(in_dim, cfg.hidden), nn.ReLU(),
            nn.Linear(cfg.hidden, cfg.hidden), nn.ReLU(),
            nn.Linear(cfg.hidden, 1))

    def forward(self, user_idx, video_idx, pos_idx, dur_onehot, vis):
        """user_idx/video_idx: B; pos_idx: B x N; dur_onehot: B x nb;
        vis: B x N x D_vis. Returns per-segment scores B x N."""
        b, n = pos_idx.shape
        parts = [
            self.user_emb(user_idx).unsqueeze(1).expand(b, n, -1),
            self.video_emb(video_idx).unsqueeze(1).expand(b, n, -1),
            self.pos_emb(pos_idx),
            dur_onehot.unsqueeze(1).expand(b, n, -1),
        ]
        if self.vis_proj is not None:
            parts.append(self.vis_proj(vis))
        x = torch.cat(parts, dim=-1)
        return (self.wide(x) + self.deep(x)).squeeze(-1)


class SegRecModel(nn.Module):
    """Backbone plus an aggregation mode. Interest scores p arrive with the
    batch (precomputed from a frozen interest model or the planted oracle),
    so they can never receive gradients."""

    def __init__(self, backbone: BackboneModel, mode: str):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.backbone = backbone
        self.mode = mode
        self.seg_adjust = nn.Parameter(
            torch.zeros(backbone.cfg.max_segments)) if mode == "segadjust" else None

    def weights_and_probs(self, batch):
        """Returns (weights B x N, per-segment probabilities B x N)."""
        y = self.backbone(batch["user_idx"], batch["video_idx"],
                          batch["pos_idx"], batch["dur_onehot"], batch["vis"])
        mask = batch["n_mask"]
        probs = torch.sigmoid(y)
        if self.mode == "video":
            weights = torch.ones_like(y)
        elif self.mode == "segsum":
            weights = mask.to(y.dtype) / mask.sum(dim=-1, keepdim=True)
        elif self.mode == "segadjust":
            n = mask.shape[-1]
            weights = masked_softmax(
                self.seg_adjust[:n].unsqueeze(0).expand_as(y), mask)
        else:  # segrec
            weights = masked_softmax(batch["p"], mask)
        return weights, probs

    def forward(self, batch) -> torch.Tensor:
        weights, probs = self.weights_and_probs(batch)
        if self.mode == "video":
            return probs[:, 0]
        return (weights * probs * batch["n_mask"]).sum(dim=-1)


@dataclass
class CTRSample:
    sample: object          # training.Sample
    label: int
    p: np.ndarray | None    # frozen interest scores, segrec mode only
    bucket: int


def prepare_ctr_samples(samples, buckets: DurationBuckets, p_arrays=None):
    """Attach effective-view labels (and optional frozen p) to samples.
    The label rule matches core_data.derive_effective_view_label: positive
    iff the view ratio reaches its duration bucket's threshold. p_arrays
    aligns with `samples` when given."""
    out = []
    for i, s in enumerate(samples):
        label = 1 if s.watch_ratio >= buckets.threshold(s.duration_s) else 0
        p = None if p_arrays is None else np.asarray(p_arrays[i], dtype=np.float32)
        out.append(CTRSample(sample=s, label=label, p=p,
                             bucket=buckets.bucket_index(s.duration_s)))
    return out


def collate_ctr(ctr_samples, store, mode: str, n_buckets: int,
                max_segments: int, dtype=torch.float32):
    b = len(ctr_samples)
    if mode == "video":
        n_max = 1
    else:
        n_max = max(c.sample.n for c in ctr_samples)
    dim = store.dim
    data = store.data
    vis = np.zeros((b, n_max, dim), dtype=np.float32)
    pos = np.zeros((b, n_max), dtype=np.int64)
    n_mask = np.zeros((b, n_max), dtype=bool)
    dur = np.zeros((b, n_buckets), dtype=np.float32)
    p = np.zeros((b, n_max), dtype=np.float32)
    for i, c in enumerate(ctr_samples):
        s = c.sample
        dur[i, c.bucket] = 1.0
        rows = s.target_rows
        ok = rows >= 0
        if mode == "video":
            n_mask[i, 0] = True
            pos[i, 0] = max_segments  # whole-video token
            if ok.any():
                vis[i, 0] = data[rows[ok]].mean(axis=0)
        else:
            n_mask[i, : s.n] = True
            pos[i, : s.n] = np.arange(s.n)
            vis[i, : s.n][ok] = data[rows[ok]]
            if c.p is not None:
                p[i, : s.n] = c.p[: s.n]
    return {
        "user_idx": torch.tensor([c.sample.user_idx for c in ctr_samples]),
        "video_idx": torch.tensor([c.sample.video_idx for c in ctr_samples]),
        "pos_idx": torch.from_numpy(pos),
        "dur_onehot": torch.from_numpy(dur).to(dtype),
        "vis": torch.from_numpy(vis).to(dtype),
        "n_mask": torch.from_numpy(n_mask),
        "p": torch.from_numpy(p).to(dtype),
        "label": torch.tensor([float(c.label) for c in ctr_samples], dtype=dtype),
    }


@dataclass
class RecTrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 1024
    patience: int = 3
    max_epochs: int = 10
    seed: int = 42
    threads: int = 4


def predict_ctr(model: SegRecModel, ctr_samples, store, n_buckets: int,
                max_segments: int, batch_size: int = 1024) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for lo in range(0, len(ctr_samples), batch_size):
            chunk = ctr_samples[lo: lo + batch_size]
            batch = collate_ctr(chunk, store, model.mode, n_buckets, max_segments)
            out.append(model(batch).cpu().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def train_segrec(model: SegRecModel, train_ctr, valid_ctr, store,
                 cfg: RecTrainConfig, verbose: bool = True):
    """BCE training of the backbone (interest p stays frozen by
    construction); early stopping on validation AUC."""
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(cfg.threads)
    nb = model.backbone.cfg.n_duration_buckets
    ms = model.backbone.cfg.max_segments
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                           betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(cfg.seed)
    labels_valid = np.array([c.label for c in valid_ctr])
    history = []
    best = -np.inf
    best_state = None
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.time()
        model.train()
        order = rng.permutation(len(train_ctr))
        total = 0.0
        count = 0
        for lo in range(0, len(train_ctr), cfg.batch_size):
            chunk = [train_ctr[i] for i in order[lo: lo + cfg.batch_size]]
            batch = collate_ctr(chunk, store, model.mode, nb, ms)
            y_hat = model(batch).clamp(CLAMP, 1.0 - CLAMP)
            label = batch["label"]
            loss = -(label * torch.log(y_hat)
                     + (1 - label) * torch.log(1 - y_hat)).mean()
            if not torch.isfinite(loss):
                raise RuntimeError(f"segrec training diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(chunk)
            count += len(chunk)
        scores = predict_ctr(model, valid_ctr, store, nb, ms, cfg.batch_size)
        auc = ctr_metrics(scores, labels_valid).auc
        history.append((epoch, total / max(count, 1), auc, time.time() - t0))
        if verbose:
            print(f"epoch {epoch}: bce={history[-1][1]:.4f} "
                  f"valid_auc={auc:.4f} ({history[-1][3]:.1f}s)")
        if auc > best:
            best = auc
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best >= max(1, cfg.patience):
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    return history


@dataclass
class CTRReport:
    auc: float
    f1: float
    logloss: float
    sample_count: int

    def to_dict(self) -> dict:
        return {"auc": self.auc, "f1": self.f1, "logloss": self.logloss,
                "sample_count": self.sample_count}


def ctr_metrics(scores, labels) -> CTRReport:
    """AUC by the tie-averaged rank statistic, F1 at threshold 0.5, and
    mean binary cross-entropy of the probability-valued scores."""
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    auc = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    pred = scores >= 0.5
    tp = int((pred & pos).sum())
    fp = int((pred & ~pos).sum())
    fn = int((~pred & pos).sum())
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    clipped = np.clip(scores, 1e-15, 1 - 1e-15)
    logloss = float(-np.mean(np.where(pos, np.log(clipped), np.log(1 - clipped))))
    return CTRReport(auc=float(auc), f1=float(f1), logloss=logloss,
                     sample_count=len(labels))


def save_rec_model(path, model: SegRecModel, user_vocab: Vocabulary,
                   video_vocab: Vocabulary, buckets: DurationBuckets,
                   extra_meta: dict | None = None) -> None:
    tensors = {name: p.detach().cpu().numpy()
               for name, p in model.state_dict().items()}
    meta = {
        "kind": "segrec_model",
        "mode": model.mode,
        "config": asdict(model.backbone.cfg),
        "user_ids": user_vocab.tolist(),
        "video_ids": video_vocab.tolist(),
        "bucket_boundaries": list(buckets.boundaries),
        "bucket_thresholds": list(buckets.thresholds),
        "bucket_ranges": [list(r) for r in buckets.ranges],
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, tensors, meta)


def load_rec_model(path):
    """Returns (model, user_vocab, video_vocab, buckets, meta)."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "segrec_model":
        raise ValueError(f"not a segrec checkpoint: {meta.get('kind')!r}")
    cfg = BackboneConfig(**meta["config"])
    model = SegRecModel(BackboneModel(cfg), meta["mode"])
    state = {name: torch.from_numpy(arr.copy()) for name, arr in tensors.items()}
    model.load_state_dict(state)
    buckets = DurationBuckets(
        boundaries=tuple(meta["bucket_boundaries"]),
        thresholds=tuple(meta["bucket_thresholds"]),
        ranges=tuple(tuple(r) for r in meta["bucket_ranges"]))
    return model, Vocabulary(meta["user_ids"]), Vocabulary(meta["video_ids"]), buckets, meta
