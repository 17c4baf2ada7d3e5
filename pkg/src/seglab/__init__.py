"""Segment-level user-interest modeling for short-video recommendation.

Provides the full pipeline: interaction ingestion and synthetic data with
planted ground truth, hybrid ID/visual representation, a user-video
cross-attention encoder, bilinear fusion with an inner-video position bias,
the intra-video pairwise skip loss, skip-position ranking evaluation
(HR@K/NDCG@K with position-statistics baselines), and segment-integrated
CTR prediction (SegRec) with AUC/F1/Logloss.
"""

__version__ = "0.1.0"
