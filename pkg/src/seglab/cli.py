"""Command-line surface: dataset generation, training of both models, both
evaluations, ablations, and heatmap export.

Configuration is a flat key=value document. Resolution order (later wins):
built-in defaults, config file (one key=value per line, # comments),
environment variables named SEGLAB_<KEY>, then key=value pairs given on the
command line. Unknown keys are rejected. Every report embeds the sha256
hash of the fully resolved configuration, so a report plus the input files
pins the run.

Reports are written as line-oriented key=value files with a JSON twin at
<path>.json; a short human-readable summary goes to standard output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .core_data import (
    SegmentGrid,
    compute_duration_buckets,
    split_users,
)
from .data_io import (
    SyntheticConfig,
    generate_synthetic,
    grid_of,
    load_ground_truth,
    load_interactions,
    load_visual_features,
    write_dataset,
)
from .decoder import InterestModel, ModelConfig, load_model, save_model
from .segrec import (
    MODES,
    BackboneConfig,
    BackboneModel,
    RecTrainConfig,
    SegRecModel,
    collate_ctr,
    ctr_metrics,
    load_rec_model,
    predict_ctr,
    prepare_ctr_samples,
    save_rec_model,
    train_segrec,
)
from .skip_eval import (
    PositionModelKind,
    baseline_scorer,
    cold_item_slice,
    evaluate_skip,
    fit_position_model,
    pooled_spearman,
)
from .training import (
    LossConfig,
    PairMode,
    SamplePrep,
    TrainConfig,
    make_model_scorer,
    train,
)

DEFAULTS = {
    # segment grid
    "segment_length_s": 5.0,
    "max_segments": 40,
    "completed_epsilon_s": 0.25,
    # synthetic world
    "synth_users": 1000,
    "synth_videos": 2000,
    "synth_latent_dim": 1,
    "synth_content_smoothness": 0.8,
    "synth_position_drift": 0.05,
    "synth_hazard_base": -3.8,
    "synth_interest_gain": 2.0,
    "synth_noise_sd": 0.02,
    "synth_interactions_per_user": 100,
    "synth_cold_fraction": 0.3,
    "synth_min_duration_s": 30.0,
    "synth_max_duration_s": 120.0,
    "synth_visual_dim": 64,
    "synth_visual_noise_sd": 0.02,
    "synth_seed": 0,
    # user split (8/1/1); -1 means reuse the generator seed stored with
    # the dataset's ground truth, falling back to 0
    "split_seed": -1,
    # interest model
    "embed_dim": 32,
    "layers": 2,
    "score_dim": 8,
    "heads": 4,
    "ffn_hidden": 0,  # 0 selects 2 * embed_dim
    "dropout": 0.1,
    "max_history": 20,
    "history_unit": "segments",
    "use_id": True,
    "use_visual": True,
    # loss
    "loss": "intra",
    "pair_mode": "watched_only",
    # interest training
    "learning_rate": 3e-3,
    "batch_size": 1024,
    "patience": 10,
    "max_epochs": 30,
    "eval_batch_size": 1024,
    "threads": 4,
    "seed": 42,
    "user_dropout": 0.0,
    # CTR backbone
    "rec_embed_dim": 32,
    "rec_hidden": 64,
    "duration_buckets": 10,
    "rec_use_visual": True,
    "rec_learning_rate": 3e-3,
    "rec_batch_size": 1024,
    "rec_patience": 3,
    "rec_max_epochs": 10,
}

ENV_PREFIX = "SEGLAB_"


class CliError(Exception):
    """Anticipated failure reported as a one-line cause."""


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise CliError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise CliError(
            f"config key {key}: expected {type(default).__name__}, got {raw!r}")
    return raw


def _split_pair(item: str):
    if "=" not in item:
        raise CliError(f"expected key=value, got {item!r}")
    key, _, raw = item.partition("=")
    key = key.strip()
    if key not in DEFAULTS:
        raise CliError(f"unknown config key {key!r}")
    return key, _parse_value(key, raw.strip())


def resolve_config(config_path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                key, value = _split_pair(line)
            except CliError as e:
                raise CliError(f"{path}:{line_no}: {e}")
            cfg[key] = value
    for key in DEFAULTS:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            cfg[key] = _parse_value(key, env)
    for item in overrides:
        key, value = _split_pair(item)
        cfg[key] = value
    return cfg


def config_hash(cfg: dict) -> str:
    lines = "".join(f"{k}={cfg[k]!r}\n" for k in sorted(cfg))
    return hashlib.sha256(lines.encode("utf-8")).hexdigest()


def write_report(path, payload: dict) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for key, value in payload.items():
            if isinstance(value, float):
                value = repr(value)
            elif isinstance(value, (list, tuple, dict)):
                value = json.dumps(value)
            fh.write(f"{key}={value}\n")
    with open(str(path) + ".json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- data


def _dataset_paths(data_dir):
    data = Path(data_dir)
    if not data.is_dir():
        raise CliError(f"data directory not found: {data}")
    paths = {
        "interactions": data / "interactions.csv",
        "features_bin": data / "features.bin",
        "features_idx": data / "features.idx",
        "ground_truth": data / "ground_truth.npz",
    }
    for name in ("interactions", "features_bin", "features_idx"):
        if not paths[name].exists():
            raise CliError(f"missing dataset file: {paths[name]}")
    return paths


def _load_dataset(data_dir, cfg, need_truth=False):
    """Returns (records, store, truth_or_None, split, grid)."""
    paths = _dataset_paths(data_dir)
    records = load_interactions(paths["interactions"])
    store = load_visual_features(paths["features_bin"], paths["features_idx"])
    truth = None
    if paths["ground_truth"].exists():
        truth = load_ground_truth(paths["ground_truth"])
    elif need_truth:
        raise CliError(f"ground truth required but missing: {paths['ground_truth']}")
    split_seed = cfg["split_seed"]
    if split_seed < 0:
        split_seed = truth.config.get("seed", 0) if truth else 0
    user_ids = sorted({r.user_id for r in records})
    split = split_users(user_ids, (8, 1, 1), seed=split_seed)
    grid = SegmentGrid(segment_length_s=cfg["segment_length_s"],
                       max_segments=cfg["max_segments"])
    return records, store, truth, split, grid


def _build_prep(records, store, split, grid, cfg) -> SamplePrep:
    return SamplePrep(records, store, split, grid=grid,
                      epsilon_s=cfg["completed_epsilon_s"],
                      m_max=cfg["max_history"],
                      history_unit=cfg["history_unit"])


def _model_config(prep: SamplePrep, cfg, **flags) -> ModelConfig:
    return ModelConfig(
        n_users=len(prep.user_vocab),
        n_videos=len(prep.video_vocab),
        visual_dim=prep.store.dim,
        d=cfg["embed_dim"],
        layers=cfg["layers"],
        score_dim=cfg["score_dim"],
        heads=cfg["heads"],
        ffn_hidden=cfg["ffn_hidden"] or None,
        dropout=cfg["dropout"],
        max_segments=cfg["max_segments"],
        max_history=cfg["max_history"],
        use_id=flags.get("use_id", cfg["use_id"]),
        use_visual=flags.get("use_visual", cfg["use_visual"]),
        drop_position=flags.get("drop_position", False),
        drop_attention=flags.get("drop_attention", False),
    )


def _train_config(cfg, **flags) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        embed_dim=cfg["embed_dim"],
        patience=cfg["patience"],
        max_epochs=cfg["max_epochs"],
        seed=cfg["seed"],
        threads=cfg["threads"],
        loss=flags.get("loss", cfg["loss"]),
        eval_batch_size=cfg["eval_batch_size"],
        user_dropout=cfg["user_dropout"],
    )


def _loss_config(cfg, **flags) -> LossConfig:
    mode = flags.get("pair_mode", cfg["pair_mode"])
    try:
        return LossConfig(pair_mode=PairMode(mode))
    except ValueError:
        raise CliError(f"config key pair_mode: unknown value {mode!r}")


def _check_vocabs(prep: SamplePrep, user_vocab, video_vocab, source) -> None:
    if (prep.user_vocab.tolist() != user_vocab.tolist()
            or prep.video_vocab.tolist() != video_vocab.tolist()):
        raise CliError(
            f"vocabulary mismatch between {source} and this dataset/split; "
            "use the data directory and split_seed the model was trained with")


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    synth = SyntheticConfig(
        n_users=cfg["synth_users"],
        n_videos=cfg["synth_videos"],
        latent_dim=cfg["synth_latent_dim"],
        content_smoothness=cfg["synth_content_smoothness"],
        position_drift=cfg["synth_position_drift"],
        hazard_base=cfg["synth_hazard_base"],
        interest_gain=cfg["synth_interest_gain"],
        noise_sd=cfg["synth_noise_sd"],
        interactions_per_user=cfg["synth_interactions_per_user"],
        seed=cfg["synth_seed"],
        cold_fraction=cfg["synth_cold_fraction"],
        min_duration_s=cfg["synth_min_duration_s"],
        max_duration_s=cfg["synth_max_duration_s"],
        segment_length_s=cfg["segment_length_s"],
        max_segments=cfg["max_segments"],
        visual_dim=cfg["synth_visual_dim"],
        visual_noise_sd=cfg["synth_visual_noise_sd"],
    )
    try:
        synth.validate()
    except ValueError as e:
        raise CliError(f"invalid generator config: {e}")
    t0 = time.time()
    records, store, truth = generate_synthetic(synth)
    paths = write_dataset(args.out, records, store, truth)
    grid = grid_of(synth)
    # reports carry no wall-clock so identical runs produce identical bytes
    payload = {
        "command": "synth",
        "config_hash": config_hash(cfg),
        "out_dir": str(Path(args.out)),
        "interactions": len(records),
        "users": synth.n_users,
        "videos": synth.n_videos,
        "feature_rows": store.data.shape[0],
        "segment_length_s": grid.segment_length_s,
    }
    write_report(Path(args.out) / "synth.report", payload)
    print(f"wrote {len(records)} interactions and "
          f"{store.data.shape[0]} feature rows to {args.out} "
          f"in {time.time() - t0:.1f}s")
    return 0


def cmd_train_interest(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    records, store, _, split, grid = _load_dataset(args.data, cfg)
    prep = _build_prep(records, store, split, grid, cfg)
    # seed before construction so initial weights do not depend on whatever
    # the process RNG did earlier; train() re-seeds for the loop itself
    torch.manual_seed(cfg["seed"])
    model = InterestModel(_model_config(prep, cfg))
    train_cfg = _train_config(cfg)
    loss_cfg = _loss_config(cfg)
    train_samples = prep.subset(split.train)
    valid_samples = prep.subset(split.valid, skips_only=True)
    t0 = time.time()
    history = train(model, prep, train_samples, valid_samples,
                    train_cfg, loss_cfg, verbose=not args.quiet)
    seconds = time.time() - t0
    save_model(args.out, model, prep.user_vocab, prep.video_vocab,
               extra_meta={"config_hash": config_hash(cfg)})
    best = max(h.valid_metric for h in history)
    payload = {
        "command": "train-interest",
        "config_hash": config_hash(cfg),
        "checkpoint": str(args.out),
        "epochs": len(history),
        "best_valid_ndcg@5": best,
        "final_train_loss": history[-1].train_loss,
        "train_interactions": len(train_samples),
        "valid_interactions": len(valid_samples),
        "history": [
            {"epoch": h.epoch, "train_loss": h.train_loss,
             "valid_ndcg@5": h.valid_metric}
            for h in history],
    }
    write_report(args.report or str(args.out) + ".report", payload)
    print(f"trained {len(history)} epochs in {seconds:.1f}s, "
          f"best valid ndcg@5 {best:.4f}, checkpoint {args.out}")
    return 0


def _baseline_kind(name: str) -> PositionModelKind:
    try:
        return PositionModelKind(name)
    except ValueError:
        known = ", ".join(k.value for k in PositionModelKind)
        raise CliError(f"unknown baseline {name!r} (expected one of {known})")


def cmd_eval_skip(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    records, store, truth, split, grid = _load_dataset(args.data, cfg)
    prep = _build_prep(records, store, split, grid, cfg)
    test = prep.subset(split.test, skips_only=True)
    if args.slice == "cold":
        test = cold_item_slice(test, prep.train_video_ids)
    elif args.slice == "noncold":
        cold = {s.row for s in cold_item_slice(test, prep.train_video_ids)}
        test = [s for s in test if s.row not in cold]
    if not test:
        raise CliError(f"no skip-labeled test interactions in slice {args.slice!r}")

    if args.baseline:
        kind = _baseline_kind(args.baseline)
        if kind is PositionModelKind.RANDOM:
            scorer = baseline_scorer(
                fit_position_model([], kind), seed=cfg["seed"])
        else:
            fit = prep.subset(split.train | split.valid, skips_only=True)
            scorer = baseline_scorer(fit_position_model(fit, kind))
        source = f"baseline:{args.baseline}"
    else:
        model, user_vocab, video_vocab, _ = load_model(args.checkpoint)
        _check_vocabs(prep, user_vocab, video_vocab, args.checkpoint)
        scorer = make_model_scorer(model, prep, cfg["eval_batch_size"])
        source = str(args.checkpoint)

    report = evaluate_skip(scorer, test, slice_name=args.slice)
    payload = {"command": "eval-skip", "config_hash": config_hash(cfg),
               "scorer": source, **report.to_dict()}
    if truth is not None:
        payload["spearman_vs_planted"] = pooled_spearman(scorer, test, truth)
    write_report(args.report or "eval_skip.report", payload)
    print(f"{source} slice={args.slice} hr@5={report.hr5:.4f} "
          f"ndcg@5={report.n5:.4f} over {report.sample_count} interactions")
    return 0


def _interest_scores(args, cfg, prep, truth, samples):
    """Frozen per-interaction interest vectors for segrec aggregation."""
    if args.oracle:
        if truth is None:
            raise CliError("--oracle needs ground_truth.npz in the data directory")
        return [truth.g_for(s.row)[: s.n].astype(np.float64) for s in samples]
    if not args.interest:
        raise CliError("segrec mode needs --interest CHECKPOINT or --oracle")
    model, user_vocab, video_vocab, _ = load_model(args.interest)
    _check_vocabs(prep, user_vocab, video_vocab, args.interest)
    return make_model_scorer(model, prep, cfg["eval_batch_size"])(samples)


def cmd_train_rec(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    records, store, truth, split, grid = _load_dataset(
        args.data, cfg, need_truth=args.oracle)
    prep = _build_prep(records, store, split, grid, cfg)
    train_samples = prep.subset(split.train)
    valid_samples = prep.subset(split.valid)
    buckets = compute_duration_buckets(
        [records[s.row] for s in train_samples], cfg["duration_buckets"])

    mode = args.mode
    if mode == "segrec":
        p_train = _interest_scores(args, cfg, prep, truth, train_samples)
        p_valid = _interest_scores(args, cfg, prep, truth, valid_samples)
    else:
        p_train = p_valid = None
    train_ctr = prepare_ctr_samples(train_samples, buckets, p_train)
    valid_ctr = prepare_ctr_samples(valid_samples, buckets, p_valid)

    torch.manual_seed(cfg["seed"])
    backbone = BackboneModel(BackboneConfig(
        n_users=len(prep.user_vocab),
        n_videos=len(prep.video_vocab),
        visual_dim=store.dim,
        embed_dim=cfg["rec_embed_dim"],
        hidden=cfg["rec_hidden"],
        n_duration_buckets=cfg["duration_buckets"],
        max_segments=cfg["max_segments"],
        use_visual=cfg["rec_use_visual"],
    ))
    model = SegRecModel(backbone, mode)
    rec_cfg = RecTrainConfig(
        learning_rate=cfg["rec_learning_rate"],
        batch_size=cfg["rec_batch_size"],
        patience=cfg["rec_patience"],
        max_epochs=cfg["rec_max_epochs"],
        seed=cfg["seed"],
        threads=cfg["threads"],
    )
    t0 = time.time()
    history = train_segrec(model, train_ctr, valid_ctr, store, rec_cfg,
                           verbose=not args.quiet)
    seconds = time.time() - t0
    interest_source = "oracle" if args.oracle else (args.interest or "none")
    save_rec_model(args.out, model, prep.user_vocab, prep.video_vocab, buckets,
                   extra_meta={"config_hash": config_hash(cfg),
                               "interest_source": str(interest_source)})
    best = max(h[2] for h in history)
    payload = {
        "command": "train-rec",
        "config_hash": config_hash(cfg),
        "mode": mode,
        "interest_source": str(interest_source),
        "checkpoint": str(args.out),
        "epochs": len(history),
        "best_valid_auc": best,
        "train_interactions": len(train_ctr),
        "valid_interactions": len(valid_ctr),
        "history": [
            {"epoch": e, "train_bce": l, "valid_auc": a}
            for e, l, a, s in history],
    }
    write_report(args.report or str(args.out) + ".report", payload)
    print(f"mode={mode} trained {len(history)} epochs in {seconds:.1f}s, "
          f"best valid auc {best:.4f}, checkpoint {args.out}")
    return 0


def cmd_eval_rec(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    model, user_vocab, video_vocab, buckets, meta = load_rec_model(args.checkpoint)
    if args.mode and args.mode != model.mode:
        raise CliError(
            f"--mode {args.mode} does not match checkpoint mode {model.mode}")
    records, store, truth, split, grid = _load_dataset(
        args.data, cfg, need_truth=args.oracle)
    prep = _build_prep(records, store, split, grid, cfg)
    _check_vocabs(prep, user_vocab, video_vocab, args.checkpoint)
    users = split.valid if args.split == "valid" else split.test
    samples = prep.subset(users)
    p = (_interest_scores(args, cfg, prep, truth, samples)
         if model.mode == "segrec" else None)
    ctr = prepare_ctr_samples(samples, buckets, p)
    scores = predict_ctr(model, ctr, store,
                         model.backbone.cfg.n_duration_buckets,
                         model.backbone.cfg.max_segments,
                         cfg["rec_batch_size"])
    labels = np.array([c.label for c in ctr])
    report = ctr_metrics(scores, labels)
    payload = {"command": "eval-rec", "config_hash": config_hash(cfg),
               "checkpoint": str(args.checkpoint), "mode": model.mode,
               "split": args.split, **report.to_dict(),
               "positive_rate": float(labels.mean())}
    write_report(args.report or "eval_rec.report", payload)
    if args.dump:
        with open(args.dump, "w") as fh:
            fh.write("row,score,label\n")
            for c, s in zip(ctr, scores):
                fh.write(f"{c.sample.row},{s:.6f},{c.label}\n")
    print(f"mode={model.mode} split={args.split} auc={report.auc:.4f} "
          f"f1={report.f1:.4f} logloss={report.logloss:.4f}")
    return 0


def normalize_heatmap(p) -> np.ndarray:
    """Shift the minimum to zero, then divide by the sum; all-equal scores
    normalize to the uniform vector."""
    p = np.asarray(p, dtype=np.float64)
    q = p - p.min()
    total = q.sum()
    if total <= 0:
        return np.full(len(p), 1.0 / len(p))
    return q / total


def cmd_predict_heatmap(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    records, store, _, split, grid = _load_dataset(args.data, cfg)
    prep = _build_prep(records, store, split, grid, cfg)
    model, user_vocab, video_vocab, _ = load_model(args.checkpoint)
    _check_vocabs(prep, user_vocab, video_vocab, args.checkpoint)
    matches = [s for s in prep.samples
               if s.user_id == args.user and s.video_id == args.video]
    if not matches:
        raise CliError(
            f"no interaction of user {args.user!r} with video {args.video!r}")
    sample = matches[-1]  # latest view carries the fullest history
    p = make_model_scorer(model, prep, cfg["eval_batch_size"])([sample])[0]
    payload = {
        "command": "predict-heatmap",
        "config_hash": config_hash(cfg),
        "user_id": sample.user_id,
        "video_id": sample.video_id,
        "n": sample.n,
        "p": [float(v) for v in p],
        "p_normalized": [float(v) for v in normalize_heatmap(p)],
        "skip_label": sample.y,
    }
    write_report(args.report or "heatmap.report", payload)
    peak = int(np.argmax(p)) + 1
    print(f"user={sample.user_id} video={sample.video_id} n={sample.n} "
          f"peak_interest_segment={peak} skip_label={sample.y}")
    return 0


DROP_CHOICES = ("attention", "position", "loss-bce", "modality-id",
                "modality-visual")


def _variant_flags(drop: str) -> dict:
    return {
        "attention": {"drop_attention": True},
        "position": {"drop_position": True},
        "loss-bce": {"loss": "bce"},
        "modality-id": {"use_id": False},
        "modality-visual": {"use_visual": False},
    }[drop]


def cmd_ablate(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    records, store, _, split, grid = _load_dataset(args.data, cfg)
    prep = _build_prep(records, store, split, grid, cfg)
    train_samples = prep.subset(split.train)
    valid_samples = prep.subset(split.valid, skips_only=True)
    test = prep.subset(split.test, skips_only=True)
    flags = _variant_flags(args.drop)
    model_flags = {k: v for k, v in flags.items() if k != "loss"}

    results = {}
    for name, mf in (("full", {}), (args.drop, model_flags)):
        torch.manual_seed(cfg["seed"])
        model = InterestModel(_model_config(prep, cfg, **mf))
        loss = flags.get("loss", cfg["loss"]) if name != "full" else cfg["loss"]
        train(model, prep, train_samples, valid_samples,
              _train_config(cfg, loss=loss), _loss_config(cfg),
              verbose=not args.quiet)
        scorer = make_model_scorer(model, prep, cfg["eval_batch_size"])
        results[name] = evaluate_skip(scorer, test)

    full, variant = results["full"], results[args.drop]
    payload = {"command": "ablate", "config_hash": config_hash(cfg),
               "drop": args.drop,
               "test_interactions": full.sample_count}
    for key, value in full.to_dict().items():
        if isinstance(value, float):
            payload[f"full_{key}"] = value
    for key, value in variant.to_dict().items():
        if isinstance(value, float):
            payload[f"ablated_{key}"] = value
            payload[f"delta_{key}"] = value - getattr(
                full, {"hr@1": "hr1", "hr@5": "hr5", "ndcg@5": "n5",
                       "hr@10": "hr10", "ndcg@10": "n10"}[key])
    write_report(args.report or f"ablate_{args.drop}.report", payload)
    print(f"drop={args.drop}: full ndcg@5={full.n5:.4f} "
          f"ablated ndcg@5={variant.n5:.4f} "
          f"delta={variant.n5 - full.n5:+.4f}")
    return 0


# ---------------------------------------------------------------- parser


def _add_common(sub, data=True):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--report", help="report path (JSON twin at PATH.json)")
    sub.add_argument("--quiet", action="store_true",
                     help="suppress per-epoch progress")
    if data:
        sub.add_argument("--data", required=True, help="dataset directory")
    sub.add_argument("overrides", nargs="*", metavar="key=value",
                     help="config overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seglab",
        description="Segment-level interest modeling for short-video feeds: "
                    "synthetic data, skip-position ranking, and segment-"
                    "integrated CTR prediction.")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True, help="output directory")
    _add_common(s, data=False)
    s.set_defaults(func=cmd_synth)

    s = subs.add_parser("train-interest", help="train the interest model")
    s.add_argument("--out", required=True, help="checkpoint path (.npz)")
    _add_common(s)
    s.set_defaults(func=cmd_train_interest)

    s = subs.add_parser("eval-skip", help="skip-position ranking evaluation")
    group = s.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="interest model checkpoint")
    group.add_argument("--baseline",
                       help="random | allposition | userposition | itemposition")
    s.add_argument("--slice", choices=("all", "cold", "noncold"), default="all")
    _add_common(s)
    s.set_defaults(func=cmd_eval_skip)

    s = subs.add_parser("train-rec", help="train the CTR backbone")
    s.add_argument("--out", required=True, help="checkpoint path (.npz)")
    s.add_argument("--mode", choices=MODES, default="segrec")
    s.add_argument("--interest", help="frozen interest checkpoint (segrec mode)")
    s.add_argument("--oracle", action="store_true",
                   help="use planted ground-truth interest instead")
    _add_common(s)
    s.set_defaults(func=cmd_train_rec)

    s = subs.add_parser("eval-rec", help="CTR evaluation")
    s.add_argument("--checkpoint", required=True, help="CTR checkpoint")
    s.add_argument("--mode", choices=MODES,
                   help="sanity check against the checkpoint mode")
    s.add_argument("--interest", help="frozen interest checkpoint (segrec mode)")
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--split", choices=("valid", "test"), default="test")
    s.add_argument("--dump", help="write per-interaction scores as CSV")
    _add_common(s)
    s.set_defaults(func=cmd_eval_rec)

    s = subs.add_parser("predict-heatmap",
                        help="per-segment interest for one interaction")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--user", required=True, help="user id")
    s.add_argument("--video", required=True, help="video id")
    _add_common(s)
    s.set_defaults(func=cmd_predict_heatmap)

    s = subs.add_parser("ablate", help="train full and ablated models, compare")
    s.add_argument("--drop", choices=DROP_CHOICES, required=True)
    _add_common(s)
    s.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
