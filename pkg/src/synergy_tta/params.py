"""Flat parameter vectors with a named-tensor layout."""

from dataclasses import dataclass

import numpy as np

from .errors import LayoutMismatch


@dataclass
class ParamVector:
    """Model parameters as one float32 array plus a (name, shape) manifest."""

    manifest: tuple
    values: np.ndarray

    def __post_init__(self):
        self.manifest = tuple((str(n), tuple(int(d) for d in s)) for n, s in self.manifest)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)
        expected = sum(int(np.prod(s)) for _, s in self.manifest)
        if expected != self.values.size:
            raise LayoutMismatch(
                f"manifest describes {expected} values, got {self.values.size}")

    @classmethod
    def from_tensors(cls, tensors):
        manifest = tuple((name, np.shape(t)) for name, t in tensors.items())
        flat = [np.asarray(t, dtype=np.float32).reshape(-1) for t in tensors.values()]
        values = np.concatenate(flat) if flat else np.zeros(0, np.float32)
        return cls(manifest, values)

    def tensors(self, dtype=np.float64):
        """Dict of name -> array copies in ``dtype``."""
        out = {}
        offset = 0
        for name, shape in self.manifest:
            size = int(np.prod(shape))
            out[name] = self.values[offset:offset + size].astype(dtype).reshape(shape)
            offset += size
        return out

    def __len__(self):
        return self.values.size

    def copy(self):
        return ParamVector(self.manifest, self.values.copy())

    def with_values(self, values):
        return ParamVector(self.manifest, values)

    def check_layout(self, other):
        if self.manifest != other.manifest:
            raise LayoutMismatch("parameter layouts differ")

    def all_finite(self):
        return bool(np.all(np.isfinite(self.values)))
