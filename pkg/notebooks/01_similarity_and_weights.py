# %% [markdown]
# Similarity between checkpoints and the weights they earn
#
# Two checkpoints that agree on both their feature maps and their boxes are
# redundant; the weighting should favour whichever model brings something new.

# %%
import numpy as np

from synergy_tta.boxsim import BoxSet, s_box
from synergy_tta.featsim import s_feat
from synergy_tta.synergy import gram_matrix, synergy_weights

rng = np.random.default_rng(0)
D = 16


def feature_map(basis):
    return (rng.normal(size=(64, len(basis))) @ basis).reshape(8, 8, D)


def boxes(rows):
    rows = np.asarray(rows, dtype=float)
    return BoxSet(rows, np.zeros(len(rows), int), np.ones(len(rows)))


# %% Feature similarity only sees the span of the stacked maps
e = np.eye(D)
za = feature_map(e[:3])
zb = feature_map(e[:3])   # same 3-d subspace, different coefficients
zc = feature_map(e[8:12])  # a disjoint subspace
print("s_feat(a, b) =", s_feat(za, zb))   # 1 - 3/16
print("s_feat(a, c) =", s_feat(za, zc))   # 1 - 7/16
print("cosine mode  =", round(s_feat(za, zb, "cosine"), 4))

# %% Box similarity: total matched cost squashed through a sigmoid
car = [10.0, 2.0, 0.75, 4.0, 1.7, 1.5, 0.3]
nudged = [10.4, 2.1, 0.75, 4.1, 1.7, 1.5, 0.35]
print("identical  :", s_box(boxes([car]), boxes([car])))
print("nudged     :", round(s_box(boxes([car]), boxes([nudged])), 4))
print("vs nothing :", round(s_box(boxes([car]), BoxSet()), 4))

# %% A Gram matrix for three checkpoints, two of them near-duplicates
outs = [[(za, boxes([car]))], [(zb, boxes([car]))], [(zc, boxes([nudged]))]]
g = gram_matrix(outs)
w = synergy_weights(g)
np.set_printoptions(precision=4, suppress=True)
print(g)
print("raw weights   ", w.raw)
print("synergy weights", w.weights)   # the odd one out gets the largest share
