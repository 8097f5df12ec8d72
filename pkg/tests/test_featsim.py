import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ortho_group

from synergy_tta.errors import ShapeMismatch
from synergy_tta.featsim import EPSILON, s_feat

from test_numkernel import elimination_rank

D = 8


def low_rank_map(rng, r, h=4, w=4, d=D):
    return (rng.normal(size=(h * w, r)) @ rng.normal(size=(r, d))).reshape(h, w, d)


@pytest.mark.parametrize("r", range(0, D))
def test_known_rank(r):
    rng = np.random.default_rng(r)
    z = low_rank_map(rng, r) if r else np.zeros((4, 4, D))
    stacked = np.concatenate([z.reshape(-1, D)] * 2)
    centered = stacked - stacked.mean(axis=0)
    assert elimination_rank(centered) == r
    assert s_feat(z, z) == 1.0 - r / D


def test_full_rank_gives_epsilon():
    rng = np.random.default_rng(0)
    za, zb = rng.normal(size=(4, 4, D)), rng.normal(size=(4, 4, D))
    assert s_feat(za, zb) == EPSILON == 0.01
    # rank D - 1 of D = 100 still clamps to the floor
    assert s_feat(low_rank_map(rng, 99, d=100, h=10, w=10),
                  low_rank_map(rng, 99, d=100, h=10, w=10)) == 0.01


def test_zero_maps():
    z = np.zeros((3, 3, 5))
    assert s_feat(z, z) == 1.0
    assert s_feat(z, z, "cosine") == 1.0


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        s_feat(np.zeros((2, 2, 3)), np.zeros((2, 2, 4)))
    with pytest.raises(ValueError):
        s_feat(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), mode="dot")


def test_adding_directions_lowers_similarity():
    rng = np.random.default_rng(3)
    a = low_rank_map(rng, 2)
    b = low_rank_map(rng, 3)
    assert s_feat(a, a) > s_feat(a, b)


maps = st.tuples(st.integers(0, D), st.integers(0, D), st.integers(0, 2**31 - 1))


@given(maps)
def test_symmetric_and_bounded(args):
    ra, rb, seed = args
    rng = np.random.default_rng(seed)
    a, b = low_rank_map(rng, ra), low_rank_map(rng, rb)
    for mode in ("rank", "cosine"):
        v = s_feat(a, b, mode)
        assert v == s_feat(b, a, mode)
        assert EPSILON <= v <= 1.0


@given(st.integers(0, D), st.integers(0, 2**31 - 1))
def test_rotation_invariance(r, seed):
    rng = np.random.default_rng(seed)
    a, b = low_rank_map(rng, r), low_rank_map(rng, max(r - 1, 0))
    q = ortho_group.rvs(D, random_state=seed % (2**32 - 1))
    assert s_feat(a @ q, b @ q) == s_feat(a, b)


def test_nuclear_rank_method():
    rng = np.random.default_rng(1)
    z = low_rank_map(rng, 1)
    v = s_feat(z, z, rank_method="nuclear")
    assert v == pytest.approx(1 - 1 / D)


def test_cosine_mode_values():
    a = np.ones((2, 2, 3))
    assert s_feat(a, a, "cosine") == pytest.approx(1.0)
    assert s_feat(a, -a, "cosine") == EPSILON
