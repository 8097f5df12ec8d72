# %% [markdown]
# One adaptation run, step by step
#
# A short corrupted stream, a bank of three checkpoints refreshed every 16
# batches, and the comparison against leaving the source model alone.

# %%
from dataclasses import replace

import numpy as np

from synergy_tta.config import RunConfig
from synergy_tta.runner import replay_early_set, run_tta, source_model
from synergy_tta.simstream import StreamConfig, generate_stream

stream_cfg = StreamConfig(num_batches=96, schedule=(("fog", "heavy", 32),
                                                    ("snow", "moderate", 32)))
cfg = RunConfig(bank_size=3, update_period=16, stream=stream_cfg, seed=0)
f0 = source_model(cfg)
stream = generate_stream(cfg.stream, cfg.seed)

# %% Adapt with synergy weights
mos = run_tta(cfg, f0, stream)
print("final AP@0.7 with the bank:", round(mos.final_ap, 4))
print("evicted checkpoint ids:", mos.evictions)

# %% How the weights moved between bank refreshes
for r in mos.records[3::8]:
    w = np.round(r["weights"], 3)
    print(f"batch {r['batch']:3d}  {r['corruption']:18s} bank {r['bank_ids']}  weights {w}")

# %% Baselines on the same stream
for mode in ("mean_ensemble", "no_ensemble", "no_adapt"):
    res = run_tta(replace(cfg, mode=mode), f0, stream)
    print(f"{mode:14s} AP@0.7 = {res.final_ap:.4f}")

# %% Does the final bank still handle the first stretch of the stream?
rep = replay_early_set(mos)
print("final bank on early batches :", round(rep["final_bank"]["ap"], 4))
print("warm-up model on same batches:", round(rep["warmup_checkpoint"]["ap"], 4))
