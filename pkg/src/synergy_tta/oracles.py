"""Brute-force reference checks for the numerical kernels.

Each check draws random instances, compares the fast implementation with a
slow independent one and returns a small report dict. The CLI ``oracle``
subcommand and the acceptance tests both call these.
"""

import itertools
import math
import time

import numpy as np

from . import detector as det
from . import fileio
from .bank import eviction_index
from .boxsim import hungarian_match
from .params import ParamVector
from .synergy import assemble, synergy_weights


def brute_force_assignment(cost):
    """Minimum total cost over all permutations (exact, via fsum)."""
    n = len(cost)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        total = math.fsum(cost[i][perm[i]] for i in range(n))
        best = min(best, total)
    return 0.0 if n == 0 else best


def check_hungarian(trials=500, max_n=6, seed=0):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    mismatches = 0
    for k in range(trials):
        n = int(rng.integers(1, max_n + 1))
        if k % 3 == 0:
            # small integer costs produce many tied optima
            cost = rng.integers(0, 4, size=(n, n)).astype(float)
        else:
            cost = rng.uniform(0.0, 10.0, size=(n, n))
        got = hungarian_match(cost)
        if sorted(got.permutation) != list(range(n)):
            mismatches += 1
        elif got.total_cost != brute_force_assignment(cost):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    return {"name": "hungarian", "trials": trials, "mismatches": mismatches,
            "seconds": elapsed, "passed": mismatches == 0 and elapsed < 5.0}


def gauss_solve(a, b):
    """Gaussian elimination with partial pivoting, in plain Python floats."""
    n = len(b)
    m = [[float(a[i][j]) for j in range(n)] + [float(b[i])] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        m[col], m[piv] = m[piv], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= f * m[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))) / m[r][r]
    return np.array(x)


def random_spd(rng, k):
    a = rng.normal(size=(k, k))
    return a @ a.T + k * np.eye(k)


def check_synergy_solver(trials=200, max_k=6, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(1, max_k + 1))
        g = random_spd(rng, k)
        ref = gauss_solve(g, np.ones(k))
        worst = max(worst, float(np.max(np.abs(synergy_weights(g).raw - ref))))
    uniform_ok = True
    for k in range(1, max_k + 1):
        for v in (1.0, 0.5, 0.01, 0.3):
            # all-equal (singular, needs the ridge) and equicorrelated Grams
            for g in (np.full((k, k), v), np.full((k, k), v * 0.5) + v * 0.5 * np.eye(k)):
                w = synergy_weights(g).weights
                uniform_ok &= bool(np.all(w == w[0]))
    return {"name": "synergy_solver", "trials": trials, "max_abs_err": worst,
            "uniform_exact": uniform_ok, "passed": worst <= 1e-8 and uniform_ok}


def check_assembly(trials=20, seed=0):
    rng = np.random.default_rng(seed)
    manifest = (("a", (3, 4)), ("b", (5,)))
    ok_onehot = ok_mean = ok_roundtrip = True
    for _ in range(trials):
        k = int(rng.integers(1, 6))
        bank = [ParamVector(manifest, rng.normal(size=17) * 10.0 ** rng.integers(-3, 4))
                for _ in range(k)]
        for i in range(k):
            w = np.zeros(k)
            w[i] = 1.0
            got = assemble(bank, w).values
            ulps = np.abs(got.view(np.int32).astype(np.int64)
                          - bank[i].values.view(np.int32).astype(np.int64))
            ok_onehot &= bool(np.all(ulps <= 1))
        mean = np.mean([p.values.astype(np.float64) for p in bank], axis=0).astype(np.float32)
        got = assemble(bank, np.full(k, 1.0 / k)).values
        ok_mean &= bool(np.allclose(got, mean, rtol=1e-6, atol=0.0))
        back = fileio.decode_checkpoint(fileio.encode_checkpoint(bank[0]))
        ok_roundtrip &= (back.manifest == bank[0].manifest
                         and back.values.tobytes() == bank[0].values.tobytes())
    return {"name": "assembly", "onehot_within_ulp": ok_onehot, "uniform_mean": ok_mean,
            "checkpoint_roundtrip": ok_roundtrip,
            "passed": ok_onehot and ok_mean and ok_roundtrip}


def check_eviction(trials=300, seed=0):
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(trials):
        k = int(rng.integers(1, 7))
        rows = int(rng.integers(1, 10))
        # coarse values so ties are common
        h = rng.integers(0, 3, size=(rows, k)) / 2.0
        ids = list(rng.permutation(100)[:k])
        means = [sum(h[r][c] for r in range(rows)) / rows for c in range(k)]
        low = min(means)
        expect = min((c for c in range(k) if means[c] == low), key=lambda c: ids[c])
        mismatches += eviction_index(h, ids) != expect
    return {"name": "eviction", "trials": trials, "mismatches": int(mismatches),
            "passed": mismatches == 0}


SMALL_DETECTOR = det.DetectorConfig(input_grid=8, conv_channels=3, feature_dim=4,
                                    head_hidden=5, x_range=(0.0, 16.0),
                                    y_range=(-8.0, 8.0))


def _random_instance(rng, cfg):
    from .boxsim import BoxSet

    b = int(rng.integers(1, 3))
    x = rng.normal(size=(b, cfg.input_grid, cfg.input_grid, det.IN_CHANNELS))
    labels = []
    for _ in range(b):
        n = int(rng.integers(0, 3))
        boxes = np.column_stack([
            rng.uniform(cfg.x_range[0] + 1, cfg.x_range[1] - 1, n),
            rng.uniform(cfg.y_range[0] + 1, cfg.y_range[1] - 1, n),
            rng.uniform(0.5, 1.0, n),
            rng.uniform(3.0, 5.0, n), rng.uniform(1.4, 2.0, n), rng.uniform(1.3, 1.8, n),
            rng.uniform(-np.pi, np.pi, n),
        ]) if n else np.zeros((0, 7))
        labels.append(BoxSet(boxes, np.zeros(n, dtype=np.int64), np.ones(n)))
    return x, labels


def check_gradients(instances=20, coords=40, seed=0, cfg=SMALL_DETECTOR, step=1e-6):
    """Central finite differences on randomly chosen parameter coordinates."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    errors = []
    for k in range(instances):
        p = det.init_params(cfg, seed=seed * 1000 + k)
        t = p.tensors()
        for name in t:
            t[name] = t[name] + rng.normal(scale=0.05, size=t[name].shape)
        x, labels = _random_instance(rng, cfg)
        _, grad = det.loss_and_grad(t, x, labels, cfg)
        names = [n for n, _ in cfg.manifest()]
        offsets = np.cumsum([0] + [t[n].size for n in names])
        picks = rng.choice(offsets[-1], size=min(coords, offsets[-1]), replace=False)
        num = np.empty(len(picks))
        for m, flat in enumerate(picks):
            ti = int(np.searchsorted(offsets, flat, side="right")) - 1
            name = names[ti]
            idx = np.unravel_index(flat - offsets[ti], t[name].shape)
            orig = t[name][idx]
            t[name][idx] = orig + step
            lp, _ = det.loss_and_grad(t, x, labels, cfg)
            t[name][idx] = orig - step
            lm, _ = det.loss_and_grad(t, x, labels, cfg)
            t[name][idx] = orig
            num[m] = (lp - lm) / (2 * step)
        ana = grad[picks]
        denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
        errors.append(float(np.linalg.norm(ana - num) / denom))
    elapsed = time.perf_counter() - t0
    worst = max(errors)
    return {"name": "gradients", "instances": instances, "max_rel_err": worst,
            "seconds": elapsed, "passed": worst <= 1e-4 and elapsed < 60.0}


ALL_CHECKS = (check_hungarian, check_synergy_solver, check_assembly, check_eviction,
              check_gradients)


def run_all(seed=0):
    return [check(seed=seed) for check in ALL_CHECKS]
