"""Intra-video pairwise loss, batch assembly, and the training loop.

The per-interaction loss asserts that the exit segment y scores below the
segments the user sat through:
    WATCHED_ONLY:  L = -sum_{j<y} ln sigmoid(p_j - p_y)
    ALL_EXCEPT_Y:  L = -sum_{j!=y} ln sigmoid(p_j - p_y)
computed stably as softplus(p_y - p_j). Batches average interactions that
contribute at least one pair; completed views never enter the loss.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F

from .core_data import (
    DEFAULT_COMPLETED_EPSILON_S,
    DEFAULT_MAX_HISTORY,
    DatasetSplit,
    SegmentGrid,
    SkipKind,
    derive_skip_label,
    num_segments,
)
from .decoder import InterestModel, predict_interest
from .representation import Vocabulary


class PairMode(Enum):
    WATCHED_ONLY = "watched_only"
    ALL_EXCEPT_Y = "all_except_y"


@dataclass
class LossConfig:
    pair_mode: PairMode = PairMode.WATCHED_ONLY


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 1024
    embed_dim: int = 32
    patience: int = 10
    max_epochs: int = 30
    seed: int = 42
    threads: int = 4
    loss: str = "intra"  # "intra" or "bce" (ablation)
    eval_batch_size: int = 1024
    # fraction of training samples whose user id is masked to the OOV
    # bucket, forcing taste inference from the watch history; this is what
    # lets the model personalize for users never seen in training
    user_dropout: float = 0.0


def intra_video_loss(p, y: int, cfg: LossConfig | None = None) -> torch.Tensor:
    """Pairwise loss for one interaction; p has one score per segment and y
    is the 1-based exit segment. Returns a scalar tensor (0 for y=1 in
    watched-only mode, where the pair set is empty)."""
    cfg = cfg or LossConfig()
    p = torch.as_tensor(p, dtype=torch.get_default_dtype()) if not torch.is_tensor(p) else p
    n = p.shape[-1]
    if not 1 <= y <= n:
        raise ValueError(f"y={y} out of range 1..{n}")
    if cfg.pair_mode is PairMode.WATCHED_ONLY:
        others = p[: y - 1]
    else:
        others = torch.cat([p[: y - 1], p[y:]])
    if others.numel() == 0:
        return p.sum() * 0.0
    return F.softplus(p[y - 1] - others).sum()


def bce_ablation_loss(p, y: int, n: int | None = None) -> torch.Tensor:
    """Binary cross-entropy substitute: watched segments 1..y-1 are label 1,
    the exit segment y is label 0, later segments are ignored. Mean over
    the y labeled segments."""
    p = torch.as_tensor(p, dtype=torch.get_default_dtype()) if not torch.is_tensor(p) else p
    n = p.shape[-1] if n is None else n
    if not 1 <= y <= n:
        raise ValueError(f"y={y} out of range 1..{n}")
    terms = torch.cat([F.softplus(-p[: y - 1]), F.softplus(p[y - 1 : y])])
    return terms.mean()


def batch_loss(scored, cfg: LossConfig | None = None):
    """Mean loss over (p, y) pairs with at least one pair each; `scored` is
    an iterable of (scores, y). Returns None when nothing is usable."""
    cfg = cfg or LossConfig()
    losses = []
    for p, y in scored:
        p = torch.as_tensor(p) if not torch.is_tensor(p) else p
        n = p.shape[-1]
        count = y - 1 if cfg.pair_mode is PairMode.WATCHED_ONLY else n - 1
        if count > 0:
            losses.append(intra_video_loss(p, y, cfg))
    if not losses:
        return None
    return torch.stack(losses).mean()


def batch_loss_from_scores(p: torch.Tensor, y: torch.Tensor, n: torch.Tensor,
                           cfg: LossConfig):
    """Vectorized batch loss. p is B x Nmax, y and n are B (1-based y).
    Returns (loss, used_count); loss is None when no sample has pairs."""
    b, n_max = p.shape
    idx = torch.arange(n_max, device=p.device).unsqueeze(0)
    y_col = (y - 1).unsqueeze(1)
    p_y = p.gather(1, y_col)
    z = F.softplus(p_y - p)
    if cfg.pair_mode is PairMode.WATCHED_ONLY:
        mask = idx < y_col
    else:
        mask = (idx != y_col) & (idx < n.unsqueeze(1))
    per = (z * mask).sum(dim=1)
    counts = mask.sum(dim=1)
    usable = counts > 0
    used = int(usable.sum())
    if used == 0:
        return None, 0
    return per[usable].mean(), used


def bce_batch_loss_from_scores(p: torch.Tensor, y: torch.Tensor,
                               n: torch.Tensor):
    """Vectorized BCE ablation loss over a batch; every sample is usable."""
    b, n_max = p.shape
    idx = torch.arange(n_max, device=p.device).unsqueeze(0)
    y_col = (y - 1).unsqueeze(1)
    watched = idx < y_col
    pos_terms = (F.softplus(-p) * watched).sum(dim=1)
    exit_terms = F.softplus(p.gather(1, y_col)).squeeze(1)
    per = (pos_terms + exit_terms) / y.to(p.dtype)
    return per.mean(), b


@dataclass
class Sample:
    """One interaction prepared for the model."""

    row: int
    user_id: str
    video_id: str
    user_idx: int
    video_idx: int
    n: int
    y: int  # 0 for completed views
    duration_s: float
    watch_ratio: float
    hist_rows: np.ndarray     # feature rows of history segments, -1 when missing
    target_rows: np.ndarray   # feature rows of target segments, -1 when missing
    missing_features: int = 0

    @property
    def skipped(self) -> bool:
        return self.y > 0


class SamplePrep:
    """Builds model-ready samples from records and resolves feature rows.

    Vocabularies cover the training split only, so valid/test users and
    cold videos map to the out-of-vocabulary index. Histories roll forward
    chronologically within each user's own log (matching
    core_data.build_history with unit "segments").
    """

    def __init__(self, records, store, split: DatasetSplit,
                 grid: SegmentGrid | None = None,
                 epsilon_s: float = DEFAULT_COMPLETED_EPSILON_S,
                 m_max: int = DEFAULT_MAX_HISTORY,
                 history_unit: str = "segments"):
        self.grid = grid or SegmentGrid()
        self.store = store
        self.split = split
        self.m_max = m_max
        self.epsilon_s = epsilon_s
        self.history_unit = history_unit

        by_user = {}
        for i, rec in enumerate(records):
            by_user.setdefault(rec.user_id, []).append((rec.timestamp, i, rec))
        for seq in by_user.values():
            seq.sort(key=lambda t: (t[0], t[1]))

        train_videos = set()
        for uid in split.train:
            for _, _, rec in by_user.get(uid, []):
                train_videos.add(rec.video_id)
        self.user_vocab = Vocabulary(sorted(split.train))
        self.video_vocab = Vocabulary(sorted(train_videos))
        self.train_video_ids = train_videos

        self.samples = [None] * len(records)
        for uid in sorted(by_user):
            u_idx = self.user_vocab.index(uid)
            blocks = []  # per prior interaction: its watched (video_id, seg) entries
            for _, row, rec in by_user[uid]:
                n = num_segments(rec.duration_s, self.grid)
                label = derive_skip_label(rec, self.grid, epsilon_s)
                y = 0 if label.kind is SkipKind.COMPLETED else label.y
                if history_unit == "videos":
                    kept = [e for blk in blocks[-m_max:] for e in blk]
                else:
                    kept = []
                    for blk in reversed(blocks):
                        kept = list(blk) + kept
                        if len(kept) >= m_max:
                            break
                    kept = kept[-m_max:]
                self.samples[row] = self._make_sample(
                    row, rec, u_idx, n, y, kept)
                watched = n if y == 0 else y
                blocks.append([(rec.video_id, s) for s in range(1, watched + 1)])

    def _make_sample(self, row, rec, u_idx, n, y, hist_entries):
        index = self.store.index
        hist_rows = np.array([index.get(e, -1) for e in hist_entries],
                             dtype=np.int64)
        target_rows = np.array(
            [index.get((rec.video_id, s), -1) for s in range(1, n + 1)],
            dtype=np.int64)
        missing = int((hist_rows < 0).sum() + (target_rows < 0).sum())
        return Sample(
            row=row, user_id=rec.user_id, video_id=rec.video_id,
            user_idx=u_idx, video_idx=self.video_vocab.index(rec.video_id),
            n=n, y=y, duration_s=rec.duration_s,
            watch_ratio=rec.watch_time_s / rec.duration_s,
            hist_rows=hist_rows, target_rows=target_rows,
            missing_features=missing)

    def subset(self, user_ids, skips_only: bool = False):
        users = set(user_ids)
        out = [s for s in self.samples if s.user_id in users]
        if skips_only:
            out = [s for s in out if s.skipped]
        return out

    def collate(self, samples, dtype=torch.float32):
        """Pad a list of samples into the model's batch dict."""
        b = len(samples)
        n_max = max(s.n for s in samples)
        m_max = max(1, max(len(s.hist_rows) for s in samples))
        data = self.store.data
        dim = self.store.dim
        target = np.zeros((b, n_max, dim), dtype=np.float32)
        hist = np.zeros((b, m_max, dim), dtype=np.float32)
        n_mask = np.zeros((b, n_max), dtype=bool)
        u_mask = np.zeros((b, m_max), dtype=bool)
        m_len = np.zeros(b, dtype=np.int64)
        for i, s in enumerate(samples):
            n_mask[i, : s.n] = True
            ok = s.target_rows >= 0
            target[i, : s.n][ok] = data[s.target_rows[ok]]
            m = len(s.hist_rows)
            m_len[i] = m
            if m:
                u_mask[i, :m] = True
                ok = s.hist_rows >= 0
                hist[i, :m][ok] = data[s.hist_rows[ok]]
            else:
                u_mask[i, 0] = True  # the learned no-history row
        return {
            "user_idx": torch.tensor([s.user_idx for s in samples]),
            "video_idx": torch.tensor([s.video_idx for s in samples]),
            "n": torch.tensor([s.n for s in samples]),
            "y": torch.tensor([s.y for s in samples]),
            "n_mask": torch.from_numpy(n_mask),
            "u_mask": torch.from_numpy(u_mask),
            "m": torch.from_numpy(m_len),
            "target_feats": torch.from_numpy(target).to(dtype),
            "hist_feats": torch.from_numpy(hist).to(dtype),
        }


def make_model_scorer(model: InterestModel, prep: SamplePrep,
                      batch_size: int = 1024):
    """Returns scorer(samples) -> list of per-interaction score arrays."""

    def scorer(samples):
        out = []
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo: lo + batch_size]
            batch = prep.collate(chunk, dtype=next(model.parameters()).dtype)
            p = predict_interest(model, batch).cpu().numpy()
            out.extend(p[i, : s.n].astype(np.float64)
                       for i, s in enumerate(chunk))
        return out

    return scorer


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_metric: float
    seconds: float


def train(model: InterestModel, prep: SamplePrep, train_samples,
          valid_samples, cfg: TrainConfig, loss_cfg: LossConfig,
          valid_metric_fn=None, verbose: bool = True):
    """Adam loop with early stopping on a validation metric (greater is
    better; NDCG@5 for this task). Keeps and restores the best checkpoint.
    Stops after max(1, patience) epochs without improvement. Returns the
    training history as a list of EpochStats."""
    from .skip_eval import evaluate_skip  # local import avoids a cycle

    torch.manual_seed(cfg.seed)
    torch.set_num_threads(cfg.threads)
    usable = [s for s in train_samples if s.skipped]
    if not usable:
        raise ValueError("no skip-labeled training samples")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                           betas=(0.9, 0.999), eps=1e-8)
    if valid_metric_fn is None:
        scorer = make_model_scorer(model, prep, cfg.eval_batch_size)

        def valid_metric_fn():
            return evaluate_skip(scorer, valid_samples).n5

    rng = np.random.default_rng(cfg.seed)
    history = []
    best_metric = -np.inf
    best_state = None
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.time()
        model.train()
        order = rng.permutation(len(usable))
        total_loss = 0.0
        total_used = 0
        for lo in range(0, len(usable), cfg.batch_size):
            chunk = [usable[i] for i in order[lo: lo + cfg.batch_size]]
            batch = prep.collate(chunk)
            if cfg.user_dropout > 0:
                drop = torch.from_numpy(
                    rng.random(len(chunk)) < cfg.user_dropout)
                batch["user_idx"] = batch["user_idx"].masked_fill(drop, 0)
            p = model(batch)
            if cfg.loss == "bce":
                loss, used = bce_batch_loss_from_scores(p, batch["y"], batch["n"])
            else:
                loss, used = batch_loss_from_scores(p, batch["y"], batch["n"], loss_cfg)
            if loss is None:
                continue
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += float(loss.detach()) * used
            total_used += used
        train_loss = total_loss / max(total_used, 1)
        metric = float(valid_metric_fn())
        history.append(EpochStats(epoch, train_loss, metric, time.time() - t0))
        if verbose:
            print(f"epoch {epoch}: train_loss={train_loss:.4f} "
                  f"valid={metric:.4f} ({history[-1].seconds:.1f}s)")
        if metric > best_metric:
            best_metric = metric
            best_state = copy.deepcopy(model.state_dict())
            since_best = 0
        else:
            since_best += 1
            if since_best >= max(1, cfg.patience):
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    return history
