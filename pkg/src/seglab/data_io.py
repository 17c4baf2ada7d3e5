"""Dataset ingestion and synthetic generation with planted ground truth.

Interaction logs are CSV with the fixed header
`user_id,video_id,timestamp,duration_s,watch_time_s`. Visual features live
in a binary file (16-byte header: magic "SGMF", version, dim, row count;
then row-major little-endian float32) plus a text index mapping
`video_id<TAB>segment_index<TAB>row`.

The synthetic generator plants a per-(user, video, segment) interest value
g and simulates viewing as a segment-by-segment Bernoulli exit with hazard
logistic(alpha - beta * g), which makes g a verification oracle for the
trained model.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .core_data import (
    InteractionRecord,
    SegmentGrid,
    split_users,
)

MAGIC = b"SGMF"
FORMAT_VERSION = 1
CSV_HEADER = ["user_id", "video_id", "timestamp", "duration_s", "watch_time_s"]


def load_interactions(path) -> list:
    """Parse an interaction CSV, applying ingest clamping. Row order kept."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"bad header {header!r}, expected {CSV_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"line {lineno}: expected 5 fields, got {len(row)}")
            try:
                rec = InteractionRecord(
                    user_id=row[0], video_id=row[1],
                    timestamp=float(row[2]), duration_s=float(row[3]),
                    watch_time_s=float(row[4]))
                records.append(rec.clamped())
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from exc
    return records


def write_interactions(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([r.user_id, r.video_id,
                             f"{r.timestamp:g}", f"{r.duration_s:g}",
                             f"{r.watch_time_s:g}"])


@dataclass
class VisualFeatureStore:
    """Dense per-segment feature matrix with O(1) (video, segment) lookup."""

    dim: int
    index: dict  # (video_id, segment_index) -> row
    data: np.ndarray  # rows x dim float32

    def get(self, video_id: str, segment_index: int):
        """Feature row, or None when the segment is not indexed."""
        row = self.index.get((video_id, segment_index))
        return None if row is None else self.data[row]


def write_visual_features(data_path, index_path, store: VisualFeatureStore) -> None:
    data = np.ascontiguousarray(store.data, dtype="<f4")
    with open(data_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, store.dim, data.shape[0]))
        fh.write(data.tobytes())
    lines = sorted(store.index.items(), key=lambda kv: kv[1])
    with open(index_path, "w", encoding="utf-8") as fh:
        for (vid, seg), row in lines:
            fh.write(f"{vid}\t{seg}\t{row}\n")


def load_visual_features(data_path, index_path) -> VisualFeatureStore:
    with open(data_path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != MAGIC:
            raise ValueError("bad feature file magic")
        version, dim, rows = struct.unpack("<III", head[4:])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported feature format version {version}")
        payload = fh.read()
    expected = rows * dim * 4
    if len(payload) != expected:
        raise ValueError(f"feature payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()
    if np.isnan(data).any():
        raise ValueError("feature matrix contains NaN")
    index = {}
    with open(index_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"index line {lineno}: expected 3 fields")
            vid, seg, row = parts[0], int(parts[1]), int(parts[2])
            if not 0 <= row < rows:
                raise ValueError(f"index line {lineno}: row {row} out of range")
            index[(vid, seg)] = row
    if len(index) != rows:
        raise ValueError(f"index has {len(index)} entries for {rows} rows")
    return VisualFeatureStore(dim=dim, index=index, data=data)


@dataclass
class SyntheticConfig:
    """Generator knobs. The planted world: user latents z ~ N(0, I_k),
    AR(1) segment contents, interest g = z.c - gamma * i + noise, and a
    Bernoulli exit hazard logistic(alpha - beta * g) per segment."""

    n_users: int = 1000
    n_videos: int = 2000
    latent_dim: int = 1
    content_smoothness: float = 0.8  # AR(1) rho
    position_drift: float = 0.05     # gamma
    hazard_base: float = -3.8        # alpha
    interest_gain: float = 2.0       # beta
    noise_sd: float = 0.02
    interactions_per_user: int = 100
    seed: int = 0
    # world shape
    cold_fraction: float = 0.3
    min_duration_s: float = 30.0
    max_duration_s: float = 120.0
    segment_length_s: float = 5.0
    max_segments: int = 40
    visual_dim: int = 64
    visual_noise_sd: float = 0.02

    def validate(self) -> None:
        if self.n_users <= 0 or self.n_videos <= 0:
            raise ValueError("n_users and n_videos must be positive")
        if not 0 <= self.content_smoothness < 1:
            raise ValueError("content_smoothness must be in [0, 1)")
        if self.interest_gain < 0:
            raise ValueError("interest_gain must be >= 0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.latent_dim <= 0 or self.interactions_per_user <= 0:
            raise ValueError("latent_dim and interactions_per_user must be positive")
        if not 0 <= self.cold_fraction < 1:
            raise ValueError("cold_fraction must be in [0, 1)")
        if self.min_duration_s > self.max_duration_s:
            raise ValueError("min_duration_s > max_duration_s")
        warm = self.n_videos - int(self.n_videos * self.cold_fraction)
        if warm < self.interactions_per_user:
            raise ValueError("warm video pool smaller than interactions_per_user")


@dataclass
class PlantedGroundTruth:
    """Per-interaction planted interest vectors, aligned with the record
    list: interaction i covers g_values[g_offsets[i]:g_offsets[i + 1]]."""

    g_values: np.ndarray   # flat float32
    g_offsets: np.ndarray  # int64, len = n_interactions + 1
    z: np.ndarray          # n_users x k user latents
    user_ids: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def g_for(self, interaction_index: int) -> np.ndarray:
        lo = int(self.g_offsets[interaction_index])
        hi = int(self.g_offsets[interaction_index + 1])
        return self.g_values[lo:hi]


def _user_name(i: int, width: int) -> str:
    return f"u{i:0{width}d}"


def _video_name(i: int, width: int) -> str:
    return f"v{i:0{width}d}"


def generate_synthetic(cfg: SyntheticConfig):
    """Build (records, VisualFeatureStore, PlantedGroundTruth).

    Durations are multiples of the segment length so the simulated exit
    (watch time = mid point of the exit segment) round-trips exactly
    through derive_skip_label. Videos in the cold holdout never appear in
    train users' logs; valid and test users sample from all videos.
    Fully deterministic for a given seed.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    t = cfg.segment_length_s
    uw = max(4, len(str(cfg.n_users - 1)))
    vw = max(5, len(str(cfg.n_videos - 1)))
    k = cfg.latent_dim
    rho = cfg.content_smoothness

    lo_units = int(math.ceil(cfg.min_duration_s / t))
    hi_units = int(cfg.max_duration_s // t)
    units = rng.integers(lo_units, hi_units + 1, size=cfg.n_videos)
    durations = units.astype(np.float64) * t
    nseg = units.astype(int)  # exact multiples: N = duration / t

    contents = []
    for v in range(cfg.n_videos):
        n = nseg[v]
        eta = rng.standard_normal((n, k))
        c = np.empty((n, k))
        c[0] = eta[0]
        scale = math.sqrt(1.0 - rho * rho)
        for i in range(1, n):
            c[i] = rho * c[i - 1] + scale * eta[i]
        contents.append(c)

    z = rng.standard_normal((cfg.n_users, k))

    vis_map = rng.standard_normal((k, cfg.visual_dim)) / math.sqrt(k)
    feat_rows = []
    index = {}
    row = 0
    for v in range(cfg.n_videos):
        vid = _video_name(v, vw)
        noise = rng.standard_normal((nseg[v], cfg.visual_dim))
        feats = contents[v] @ vis_map + cfg.visual_noise_sd * noise
        for s in range(nseg[v]):
            index[(vid, s + 1)] = row
            row += 1
        feat_rows.append(feats.astype(np.float32))
    store = VisualFeatureStore(dim=cfg.visual_dim, index=index,
                               data=np.vstack(feat_rows))

    cold = set(rng.permutation(cfg.n_videos)[:int(cfg.n_videos * cfg.cold_fraction)].tolist())
    warm_pool = np.array([v for v in range(cfg.n_videos) if v not in cold])
    all_pool = np.arange(cfg.n_videos)

    user_ids = [_user_name(u, uw) for u in range(cfg.n_users)]
    split = split_users(user_ids, (8, 1, 1), seed=cfg.seed)

    records = []
    g_chunks = []
    offsets = [0]
    total = 0
    for u in range(cfg.n_users):
        uid = user_ids[u]
        pool = warm_pool if uid in split.train else all_pool
        vids = rng.choice(pool, size=cfg.interactions_per_user, replace=False)
        for j, v in enumerate(vids):
            n = nseg[v]
            g = contents[v] @ z[u] - cfg.position_drift * np.arange(1, n + 1)
            if cfg.noise_sd > 0:
                g = g + cfg.noise_sd * rng.standard_normal(n)
            hazard = expit(cfg.hazard_base - cfg.interest_gain * g)
            draws = rng.random(n) < hazard
            if draws.any():
                exit_seg = int(np.argmax(draws)) + 1
                watch = (exit_seg - 0.5) * t
            else:
                watch = durations[v]
            records.append(InteractionRecord(
                user_id=uid, video_id=_video_name(v, vw),
                timestamp=10.0 * j, duration_s=float(durations[v]),
                watch_time_s=float(watch)))
            g_chunks.append(g.astype(np.float32))
            total += n
            offsets.append(total)

    truth = PlantedGroundTruth(
        g_values=np.concatenate(g_chunks),
        g_offsets=np.array(offsets, dtype=np.int64),
        z=z,
        user_ids=user_ids,
        config=asdict(cfg))
    return records, store, truth


def grid_of(cfg: SyntheticConfig) -> SegmentGrid:
    return SegmentGrid(segment_length_s=cfg.segment_length_s,
                       max_segments=cfg.max_segments)


def save_ground_truth(path, truth: PlantedGroundTruth) -> None:
    np.savez_compressed(
        path,
        g_values=truth.g_values,
        g_offsets=truth.g_offsets,
        z=truth.z,
        user_ids=np.array(truth.user_ids),
        config_json=np.frombuffer(
            json.dumps(truth.config, sort_keys=True).encode("utf-8"), dtype=np.uint8))


def load_ground_truth(path) -> PlantedGroundTruth:
    with np.load(path) as npz:
        config = json.loads(bytes(npz["config_json"].tobytes()).decode("utf-8"))
        return PlantedGroundTruth(
            g_values=npz["g_values"],
            g_offsets=npz["g_offsets"],
            z=npz["z"],
            user_ids=[str(u) for u in npz["user_ids"]],
            config=config)


def write_dataset(out_dir, records, store, truth) -> dict:
    """Write the canonical dataset layout; returns the file map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": out / "interactions.csv",
        "features_bin": out / "features.bin",
        "features_idx": out / "features.idx",
        "ground_truth": out / "ground_truth.npz",
    }
    write_interactions(paths["interactions"], records)
    write_visual_features(paths["features_bin"], paths["features_idx"], store)
    save_ground_truth(paths["ground_truth"], truth)
    return paths
