"""Generalized Gram matrix, synergy weights and super-model assembly."""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numkernel
from .boxsim import s_box_classwise
from .errors import InvalidMatrix, LayoutMismatch
from .featsim import s_feat
from .params import ParamVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityConfig:
    feat_mode: str = "rank"
    rank_method: str = "svd"
    rank_rel_tol: float = numkernel.RANK_REL_TOL
    center_features: bool = True
    box_cost_mean: bool = False


@dataclass(frozen=True)
class SynergyWeights:
    """Projected convex weights plus the raw solve they came from."""

    weights: np.ndarray
    raw: np.ndarray

    def __len__(self):
        return len(self.weights)


def pair_similarity(out_i, out_j, cfg=SimilarityConfig()):
    """Scene-averaged ``s_box * s_feat`` between two checkpoints' outputs.

    ``out_i`` and ``out_j`` are per-scene lists of (feature_map, BoxSet).
    """
    if len(out_i) != len(out_j):
        raise ValueError("both outputs must cover the same scenes")
    vals = []
    for (zi, bi), (zj, bj) in zip(out_i, out_j):
        sf = s_feat(zi, zj, cfg.feat_mode, center=cfg.center_features,
                    rank_method=cfg.rank_method, rel_tol=cfg.rank_rel_tol)
        sb = s_box_classwise(bi, bj, mean_cost=cfg.box_cost_mean)
        vals.append(sb * sf)
    return float(np.mean(vals))


def gram_matrix(bank_outputs, cfg=SimilarityConfig(), workers=0):
    """K x K generalized Gram matrix for one test batch.

    Entry (i, j) is the feature similarity times the box-set similarity of
    checkpoints i and j, averaged over the scenes in the batch. The diagonal
    is computed by the same formula rather than fixed at 1.
    """
    k = len(bank_outputs)
    pairs = list(itertools.combinations_with_replacement(range(k), 2))
    job = lambda ij: pair_similarity(bank_outputs[ij[0]], bank_outputs[ij[1]], cfg)  # noqa: E731
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = list(pool.map(job, pairs))
    else:
        vals = [job(ij) for ij in pairs]
    g = np.empty((k, k))
    for (i, j), v in zip(pairs, vals):
        g[i, j] = g[j, i] = v
    return g


def synergy_weights(g, ridge=0.0):
    """Weights ``G^-1 1`` clamped at zero and renormalized to sum to one.

    Falls back to uniform weights when every component clamps to zero.
    """
    g = numkernel.as_matrix(g)
    if g.shape[0] != g.shape[1]:
        raise InvalidMatrix("Gram matrix must be square")
    raw = numkernel.regularized_solve_ones(g, ridge)
    w = np.clip(raw, 0.0, None)
    total = w.sum()
    if total <= 0.0:
        w = np.full(len(raw), 1.0 / len(raw))
    else:
        w = w / total
    return SynergyWeights(w, raw)


def uniform_weights(k):
    w = np.full(k, 1.0 / k)
    return SynergyWeights(w, w.copy())


def assemble(checkpoints, weights):
    """Weighted parameter average ``sum_i w_i f_i`` over a sequence of ParamVectors.

    ``checkpoints`` may be a lazy iterable; only one input vector needs to be
    resident at a time.
    """
    w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    acc = None
    manifest = None
    count = 0
    for wi, params in zip(w, checkpoints):
        count += 1
        if manifest is None:
            manifest = params.manifest
            acc = np.zeros(len(params), dtype=np.float64)
        elif params.manifest != manifest:
            raise LayoutMismatch("checkpoints in the bank have different layouts")
        if wi != 0.0:
            acc += wi * params.values.astype(np.float64)
    if count != len(w):
        raise ValueError(f"got {count} checkpoints for {len(w)} weights")
    return ParamVector(manifest, acc)
