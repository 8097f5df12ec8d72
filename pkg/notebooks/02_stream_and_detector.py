# %% [markdown]
# The synthetic stream and the source detector
#
# Scenes are ray-cast point clouds of car-sized boxes plus clutter. The target
# domain has fewer beams and slightly larger cars, and each stretch of the
# stream carries one corruption. Here we look at what the corruptions do to
# the point clouds and how the pretrained detector copes.

# %%
from dataclasses import replace

import numpy as np

from synergy_tta import detector as det
from synergy_tta.config import RunConfig
from synergy_tta.evaluation import evaluate
from synergy_tta.runner import source_model
from synergy_tta.simstream import CORRUPTIONS, StreamConfig, generate_stream

cfg = RunConfig()
params = source_model(cfg)   # trains once (about a minute), then loads from cache

# %% Point counts per corruption on the same underlying scenes
rows = []
for kind in CORRUPTIONS:
    stream_cfg = replace(cfg.stream, num_batches=8, schedule=((kind, "heavy", 1),))
    stream = generate_stream(stream_cfg, seed=0)
    points = np.mean([len(p) for b in stream for p in b.inputs])
    preds, gts = [], []
    for batch in stream:
        preds += [b for _, b in det.infer(params, batch, cfg.detector)]
        gts += batch.ground_truth
    ap7 = evaluate(preds, gts, 0.7)["ap"]
    ap5 = evaluate(preds, gts, 0.5)["ap"]
    rows.append((kind, points, ap5, ap7))

print(f"{'corruption':16s} {'points':>7s} {'AP@0.5':>7s} {'AP@0.7':>7s}")
for kind, points, ap5, ap7 in rows:
    print(f"{kind:16s} {points:7.0f} {ap5:7.3f} {ap7:7.3f}")

# %% Source versus target domain, no corruption
for domain in ("source", "target"):
    s = replace(cfg.stream, num_batches=8, domain=domain)
    stream = generate_stream(s, seed=1)
    preds = [b for batch in stream for _, b in det.infer(params, batch, cfg.detector)]
    gts = [g for batch in stream for g in batch.ground_truth]
    print(domain, "AP@0.7 =", round(evaluate(preds, gts, 0.7)["ap"], 3))
