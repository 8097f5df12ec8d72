"""Feature-level similarity between two feature maps."""

import numpy as np

from . import numkernel
from .errors import ShapeMismatch

EPSILON = 0.01


def as_feature_matrix(z):
    """Flatten an (H, W, D) feature map into an (H*W, D) matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        return z
    if z.ndim != 3:
        raise ShapeMismatch(f"feature map must be (H, W, D), got {z.shape}")
    return z.reshape(-1, z.shape[-1])


def s_feat(za, zb, mode="rank", *, center=True, rank_method="svd",
           rel_tol=numkernel.RANK_REL_TOL, eps=EPSILON):
    """Similarity of two feature maps in [eps, 1].

    In ``rank`` mode the maps are stacked row-wise and the similarity is
    ``1 - rank / D``, clamped below at ``eps`` (and equal to ``eps`` exactly
    once the stacked rank reaches D). ``cosine`` mode is the ablation: the
    mean cosine similarity of corresponding feature vectors mapped to [0, 1].
    """
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    if za.shape != zb.shape:
        raise ShapeMismatch(f"feature maps differ in shape: {za.shape} vs {zb.shape}")
    a = as_feature_matrix(za)
    b = as_feature_matrix(zb)
    d = a.shape[1]
    if d < 1:
        raise ShapeMismatch("feature depth must be at least 1")

    if mode == "rank":
        # fixed stacking order keeps the result bitwise symmetric
        if b.tobytes() < a.tobytes():
            a, b = b, a
        stacked = np.concatenate([a, b], axis=0)
        if center:
            stacked = stacked - stacked.mean(axis=0, keepdims=True)
        r = numkernel.estimate_rank(stacked, rank_method, rel_tol)
        if r >= d:
            return eps
        return max(1.0 - r / d, eps)
    if mode == "cosine":
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na * nb
        dots = np.einsum("ij,ij->i", a, b)
        # rows where either vector is zero: identical if both zero, else orthogonal
        cos = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0),
                       np.where((na == 0) & (nb == 0), 1.0, 0.0))
        return float(max((1.0 + cos.mean()) / 2.0, eps))
    raise ValueError(f"unknown feature similarity mode {mode!r}")
