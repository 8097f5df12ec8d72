"""Fixed-capacity model bank with synergy-weight history and eviction."""

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fileio
from .errors import BankFull, UpdateDue, UpdateNotDue
from .params import ParamVector

DEFAULT_CAPACITY = 5
DEFAULT_UPDATE_PERIOD = 112


@dataclass
class Checkpoint:
    """A stored model. Parameters live either in memory or in ``path``."""

    id: int
    created_at_batch: int
    path: Optional[str] = None
    _params: Optional[ParamVector] = field(default=None, repr=False)

    @property
    def params(self):
        if self._params is not None:
            return self._params
        return fileio.load_checkpoint(self.path)


def mean_weights(history):
    """Column means of an (L, K) weight history."""
    h = np.asarray(history, dtype=np.float64)
    return h.mean(axis=0)


def eviction_index(history, ids):
    """Index of the lowest mean weight; ties go to the smallest id."""
    means = mean_weights(history)
    low = means.min()
    tied = [i for i, m in enumerate(means) if m == low]
    return min(tied, key=lambda i: ids[i])


class ModelBank:
    """K historical checkpoints and the weights they received since the last update.

    With ``store_dir`` set, checkpoint parameters are written to disk and read
    back on demand instead of being held in memory.
    """

    def __init__(self, capacity=DEFAULT_CAPACITY, update_period=DEFAULT_UPDATE_PERIOD,
                 store_dir=None):
        if capacity < 1 or update_period < 1:
            raise ValueError("capacity and update period must be positive")
        self.capacity = capacity
        self.update_period = update_period
        self.store_dir = store_dir
        self.checkpoints = []
        self.weight_history = []
        self._next_id = 1
        if store_dir:
            os.makedirs(store_dir, exist_ok=True)

    def __len__(self):
        return len(self.checkpoints)

    @property
    def is_full(self):
        return len(self.checkpoints) >= self.capacity

    @property
    def warmed_up(self):
        return self.is_full

    @property
    def update_due(self):
        return len(self.weight_history) >= self.update_period

    @property
    def ids(self):
        return [c.id for c in self.checkpoints]

    def make_checkpoint(self, params, batch_index):
        ckpt_id = self._next_id
        self._next_id += 1
        if self.store_dir:
            path = os.path.join(self.store_dir, f"ckpt_{ckpt_id:06d}.mosc")
            fileio.save_checkpoint(path, params)
            return Checkpoint(ckpt_id, batch_index, path)
        return Checkpoint(ckpt_id, batch_index, None, params.copy())

    def push_warmup(self, params, batch_index=0):
        if self.is_full:
            raise BankFull(f"bank already holds {self.capacity} checkpoints")
        ckpt = self.make_checkpoint(params, batch_index)
        self.checkpoints.append(ckpt)
        return ckpt

    def record_weights(self, weights):
        if not self.warmed_up:
            raise UpdateNotDue("weights are only recorded after warm-up")
        if self.update_due:
            raise UpdateDue("weight history is full; call update() first")
        w = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
        if len(w) != len(self.checkpoints):
            raise ValueError(f"expected {len(self.checkpoints)} weights, got {len(w)}")
        self.weight_history.append(w.copy())

    def update(self, params, batch_index=0, policy="synergy"):
        """Evict one checkpoint, insert ``params`` and clear the history.

        ``policy="synergy"`` evicts the lowest mean weight (oldest on ties);
        ``policy="oldest"`` always evicts the oldest checkpoint.
        Returns the evicted checkpoint id.
        """
        if not self.update_due:
            raise UpdateNotDue(
                f"history has {len(self.weight_history)} of {self.update_period} rows")
        ids = self.ids
        if policy == "synergy":
            idx = eviction_index(self.weight_history, ids)
        elif policy == "oldest":
            idx = int(np.argmin(ids))
        else:
            raise ValueError(f"unknown eviction policy {policy!r}")
        evicted = self.checkpoints.pop(idx)
        if evicted.path and os.path.exists(evicted.path):
            os.remove(evicted.path)
        self.checkpoints.append(self.make_checkpoint(params, batch_index))
        self.weight_history = []
        return evicted.id

    def iter_params(self):
        """Yield each checkpoint's parameters in bank order, loading lazily."""
        for ckpt in list(self.checkpoints):
            yield ckpt.params
