"""Vocabularies, ID/position embeddings, visual projector, checkpoints."""

import numpy as np
import pytest
import torch

from seglab.representation import (
    OOV_INDEX,
    IdEmbeddings,
    Vocabulary,
    VisualProjector,
    load_checkpoint,
    represent_id,
    represent_visual,
    save_checkpoint,
)


# ----------------------------------------------------------------- vocabulary

def test_vocabulary_indices_sorted_and_one_based():
    vocab = Vocabulary(["b", "a", "c", "a"])
    assert vocab.tolist() == ["a", "b", "c"]
    assert [vocab.index(x) for x in ("a", "b", "c")] == [1, 2, 3]
    assert len(vocab) == 4  # three ids plus the OOV bucket


def test_vocabulary_unknown_maps_to_oov():
    vocab = Vocabulary(["a"])
    assert vocab.index("zzz") == OOV_INDEX
    assert not vocab.known("zzz")
    assert vocab.known("a")


def test_vocabulary_coerces_to_str():
    vocab = Vocabulary([1, 2])
    assert vocab.index("1") == vocab.index(1)


# -------------------------------------------------------------- id embeddings

def test_id_bundle_shapes():
    emb = IdEmbeddings(n_users=5, n_videos=7, max_segments=10, d=32)
    u, v = represent_id(1, 2, 4, emb)
    assert u.shape == (1, 32)
    assert v.shape == (4, 32)


def test_id_rejects_odd_width():
    with pytest.raises(ValueError, match="even"):
        IdEmbeddings(n_users=2, n_videos=2, max_segments=4, d=33)


def test_id_segments_differ_only_in_position_half():
    emb = IdEmbeddings(n_users=3, n_videos=3, max_segments=6, d=16)
    _, v = represent_id(1, 1, 3, emb)
    video_half = v[:, :8]
    pos_half = v[:, 8:]
    assert torch.equal(video_half[0], video_half[1])
    assert torch.equal(video_half[0], video_half[2])
    assert not torch.equal(pos_half[0], pos_half[1])


def test_id_oov_video_shares_bucket_row():
    emb = IdEmbeddings(n_users=3, n_videos=3, max_segments=6, d=8)
    _, v_oov = represent_id(1, OOV_INDEX, 2, emb)
    expected = emb.video_table.weight[OOV_INDEX]
    assert torch.equal(v_oov[0, :4], expected)
    assert torch.equal(v_oov[1, :4], expected)


def test_id_user_changes_u_not_v():
    emb = IdEmbeddings(n_users=4, n_videos=3, max_segments=6, d=8)
    u1, v1 = represent_id(1, 2, 3, emb)
    u2, v2 = represent_id(2, 2, 3, emb)
    assert not torch.equal(u1, u2)
    assert torch.equal(v1, v2)


def test_id_drop_position_zeroes_position_half():
    emb = IdEmbeddings(n_users=3, n_videos=3, max_segments=6, d=8)
    _, v = represent_id(1, 1, 3, emb, drop_position=True)
    assert torch.all(v[:, 4:] == 0)
    assert not torch.all(v[:, :4] == 0)


def test_id_embedding_init_scale():
    emb = IdEmbeddings(n_users=2000, n_videos=2000, max_segments=40, d=32)
    w = emb.user_table.weight.detach()
    assert abs(w.std().item() - 0.01) < 0.002
    assert abs(w.mean().item()) < 0.002


# ------------------------------------------------------------- visual bundles

def test_visual_bundle_shapes():
    proj = VisualProjector(visual_dim=12, d=64)
    hist = np.random.default_rng(0).standard_normal((20, 12)).astype(np.float32)
    target = np.random.default_rng(1).standard_normal((8, 12)).astype(np.float32)
    with torch.no_grad():
        u, v = represent_visual(hist, target, proj)
    assert u.shape == (20, 64)
    assert v.shape == (8, 64)


def test_visual_zero_projector_gives_zero_bundle():
    proj = VisualProjector(visual_dim=4, d=6)
    with torch.no_grad():
        proj.linear.weight.zero_()
        proj.linear.bias.zero_()
        u, v = represent_visual(np.ones((3, 4), np.float32),
                                np.ones((2, 4), np.float32), proj)
    assert torch.all(u == 0)
    assert torch.all(v == 0)


def test_visual_empty_history_uses_learned_row():
    proj = VisualProjector(visual_dim=4, d=6)
    with torch.no_grad():
        u, _ = represent_visual(None, np.zeros((2, 4), np.float32), proj)
    assert u.shape == (1, 6)
    assert torch.equal(u, proj.no_history)


def test_visual_homogeneity_with_zero_bias():
    proj = VisualProjector(visual_dim=5, d=7)
    rng = np.random.default_rng(2)
    feats = rng.standard_normal((6, 5)).astype(np.float32)
    with torch.no_grad():
        proj.linear.bias.zero_()
        _, v1 = represent_visual(None, feats, proj)
        _, v2 = represent_visual(None, 2.0 * feats, proj)
    assert torch.allclose(v2, 2.0 * v1, atol=1e-6)


# ----------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3),
               "b.weight": np.ones((4,), dtype=np.float64)}
    meta = {"kind": "test", "nested": {"x": 1}, "names": ["p", "q"]}
    path = tmp_path / "ck.npz"
    save_checkpoint(path, tensors, meta)
    loaded, got_meta = load_checkpoint(path)
    assert got_meta == meta
    assert set(loaded) == {"a", "b.weight"}
    np.testing.assert_array_equal(loaded["a"], tensors["a"])
    assert loaded["b.weight"].dtype == np.float32
