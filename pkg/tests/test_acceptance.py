"""Acceptance gate: one PASS/FAIL line per criterion.

Lines are written straight to the terminal and appended to
``acceptance_results.txt`` next to this package's pyproject.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from synergy_tta import oracles, runner
from synergy_tta.bank import ModelBank, eviction_index
from synergy_tta.boxsim import s_box
from synergy_tta.config import load_config
from synergy_tta.featsim import s_feat
from synergy_tta.params import ParamVector
from synergy_tta.simstream import generate_stream

from conftest import make_boxes
from test_bank import brute_force_evict
from test_numkernel import elimination_rank

ROOT = Path(__file__).resolve().parents[1]
RESULTS = ROOT / "acceptance_results.txt"
SEEDS = (0, 1, 2)


@pytest.fixture(scope="session", autouse=True)
def _fresh_results():
    RESULTS.write_text("")
    yield


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        with capsys.disabled():
            print("\n" + line)
        with open(RESULTS, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        assert ok, line
    return emit


def test_criterion_1_hungarian(report):
    r = oracles.check_hungarian(trials=500, max_n=6, seed=11)
    report(1, r["passed"], f"{r['trials']} matrices, {r['mismatches']} mismatches, "
                           f"{r['seconds']:.2f}s")


def test_criterion_2_synergy_solver(report):
    r = oracles.check_synergy_solver(trials=200, max_k=6, seed=12)
    report(2, r["passed"], f"max |raw - dense solve| = {r['max_abs_err']:.2e}, "
                           f"uniform exact = {r['uniform_exact']}")


def test_criterion_3_similarities(report):
    rng = np.random.default_rng(13)
    d = 16
    rank_ok = True
    for r in range(d):
        z = (rng.normal(size=(64, r)) @ rng.normal(size=(r, d))).reshape(8, 8, d)
        stacked = np.concatenate([z.reshape(-1, d)] * 2)
        rank_ok &= elimination_rank(stacked - stacked.mean(axis=0)) == r
        rank_ok &= s_feat(z, z) == 1.0 - r / d
    full = s_feat(rng.normal(size=(8, 8, d)), rng.normal(size=(8, 8, d))) == 0.01
    self_ok = sym_ok = True
    for _ in range(1000):
        na, nb = rng.integers(0, 5, 2)
        a = make_boxes(np.column_stack([rng.uniform(-5, 5, (na, 3)),
                                        rng.uniform(0.5, 4, (na, 3)),
                                        rng.uniform(-np.pi, np.pi, na)]))
        b = make_boxes(np.column_stack([rng.uniform(-5, 5, (nb, 3)),
                                        rng.uniform(0.5, 4, (nb, 3)),
                                        rng.uniform(-np.pi, np.pi, nb)]))
        self_ok &= s_box(a, a) == 1.0
        sym_ok &= s_box(a, b) == s_box(b, a)
        ra, rb = rng.integers(0, 8, 2)
        za = (rng.normal(size=(16, ra)) @ rng.normal(size=(ra, 8))).reshape(4, 4, 8)
        zb = (rng.normal(size=(16, rb)) @ rng.normal(size=(rb, 8))).reshape(4, 4, 8)
        sym_ok &= s_feat(za, zb) == s_feat(zb, za)
    ok = bool(rank_ok and full and self_ok and sym_ok)
    report(3, ok, f"rank formula {rank_ok}, full rank -> 0.01 {full}, "
                  f"S_box(a,a)=1 {self_ok}, symmetry on 1000 pairs {sym_ok}")


def test_criterion_4_assembly(report, tmp_path):
    r = oracles.check_assembly(trials=50, seed=14)
    from synergy_tta import fileio
    rng = np.random.default_rng(14)
    p = ParamVector((("w", (31, 7)),), rng.normal(size=217) * 1e3)
    fileio.save_checkpoint(tmp_path / "p.mosc", p)
    disk = fileio.load_checkpoint(tmp_path / "p.mosc").values.tobytes() == p.values.tobytes()
    ok = r["passed"] and disk
    report(4, ok, f"one-hot within 1 ulp {r['onehot_within_ulp']}, uniform = mean "
                  f"{r['uniform_mean']}, file round-trip bit-exact {r['checkpoint_roundtrip'] and disk}")


def test_criterion_5_bank(report):
    rng = np.random.default_rng(15)
    mismatches = 0
    for _ in range(500):
        k, rows = int(rng.integers(1, 7)), int(rng.integers(1, 12))
        h = rng.integers(0, 4, size=(rows, k)) / 3.0
        ids = [int(i) for i in rng.permutation(99)[:k] + 1]
        mismatches += eviction_index(h, ids) != brute_force_evict(h, ids)
    m = (("w", (1,)),)
    size_ok = count_ok = True
    for k, period, total in [(3, 16, 256), (5, 112, 256), (3, 8, 32), (2, 1, 9), (4, 5, 4)]:
        bank, ev = ModelBank(k, period), 0
        for t in range(total):
            if not bank.warmed_up:
                bank.push_warmup(ParamVector(m, [t]), t)
                continue
            bank.record_weights(rng.dirichlet(np.ones(k)))
            if bank.update_due:
                bank.update(ParamVector(m, [t]), t)
                ev += 1
            size_ok &= len(bank) == k
        count_ok &= ev == (total - k) // period
    ok = mismatches == 0 and size_ok and count_ok
    report(5, ok, f"argmin mismatches {mismatches}/500, size K throughout {size_ok}, "
                  f"evictions = floor((T-K)/L) {count_ok}")


def test_criterion_6_gradients(report):
    r = oracles.check_gradients(instances=24, coords=40, seed=16)
    report(6, r["passed"], f"{r['instances']} instances, max rel err {r['max_rel_err']:.2e}, "
                           f"{r['seconds']:.1f}s")


ORDER_MODES = (("mos_sw_first", 3), ("mean_ensemble", 3), ("no_ensemble", 3),
               ("no_adapt", 3), ("mos_latest_first", 5))


@pytest.fixture(scope="module")
def ordering_runs(source_params):
    base = load_config(ROOT / "configs" / "ordering.yaml")
    t0 = time.perf_counter()
    ap = {m: [] for m in ORDER_MODES}
    replays = []
    for seed in SEEDS:
        stream = generate_stream(base.stream, seed)
        for mode, k in ORDER_MODES:
            cfg = replace(base, mode=mode, bank_size=k, seed=seed)
            res = runner.run_tta(cfg, source_params, stream)
            ap[(mode, k)].append(res.final_ap)
            if mode == "mos_sw_first":
                replays.append(runner.replay_early_set(res))
    return {"ap": ap, "replays": replays, "seconds": time.perf_counter() - t0}


def test_criterion_7_ordering(report, ordering_runs):
    mean = {m: 100.0 * float(np.mean(v)) for m, v in ordering_runs["ap"].items()}
    mos, avg = mean[("mos_sw_first", 3)], mean[("mean_ensemble", 3)]
    solo, none = mean[("no_ensemble", 3)], mean[("no_adapt", 3)]
    latest = mean[("mos_latest_first", 5)]
    gaps = (mos - avg, avg - solo, solo - none)
    chain = mos > avg > solo >= none and all(g >= 2.0 for g in gaps)
    trend = mos >= latest
    fast = ordering_runs["seconds"] < 600
    detail = (f"AP x100 over seeds {SEEDS}: MOS {mos:.2f}, Mean {avg:.2f}, w/o Ens {solo:.2f}, "
              f"No Adapt {none:.2f}, latest-first K=5 {latest:.2f}; gaps "
              f"{gaps[0]:+.2f}/{gaps[1]:+.2f}/{gaps[2]:+.2f} (need >= 2 each); "
              f"chain {chain}, SW K=3 >= LF K=5 {trend}, {ordering_runs['seconds']:.0f}s")
    report(7, chain and trend and fast, detail)


def test_criterion_8_replay(report, ordering_runs):
    pairs = [(r["final_bank"]["ap"], r["warmup_checkpoint"]["ap"])
             for r in ordering_runs["replays"]]
    ok = all(b > w for b, w in pairs)
    detail = ", ".join(f"seed {s}: bank {b:.4f} vs warm-up {w:.4f}"
                       for s, (b, w) in zip(SEEDS, pairs))
    report(8, ok, detail)


def test_criterion_9_determinism(report, source_params, tmp_path):
    base = load_config(ROOT / "configs" / "ordering.yaml")
    cfg = replace(base, stream=replace(base.stream, num_batches=48), seed=4)
    runner.run_tta(cfg, source_params, out_dir=str(tmp_path / "a"))
    runner.run_tta(cfg, source_params, out_dir=str(tmp_path / "b"))
    a = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    b = (tmp_path / "b" / "metrics.jsonl").read_bytes()
    sa = (tmp_path / "a" / "summary.json").read_bytes()
    sb = (tmp_path / "b" / "summary.json").read_bytes()
    report(9, a == b and sa == sb, f"48-batch runs, metrics {len(a)} bytes, identical {a == b}, "
                                   f"summary identical {sa == sb}")
