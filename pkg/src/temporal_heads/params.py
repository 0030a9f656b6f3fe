"""Named trainable tensors with deterministic initialisation."""
from __future__ import annotations

import hashlib
from collections.abc import Iterator, Mapping

import numpy as np

from .tensor import DTYPE, Tensor


class ParameterSet(dict):
    """Ordered ``name -> Tensor`` mapping holding every trainable weight of a head."""

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def count(self) -> int:
        return int(sum(t.size for t in self.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.items()}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParameterSet":
        ps = cls()
        for k, v in arrays.items():
            ps.add(k, np.asarray(v, dtype=DTYPE))
        return ps

    def checksum(self) -> str:
        """SHA-256 over names, shapes and raw float64 bytes in insertion order."""
        h = hashlib.sha256()
        for k, t in self.items():
            h.update(k.encode())
            h.update(np.asarray(t.shape, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(t.data, dtype=DTYPE).tobytes())
        return h.hexdigest()

    def prefixed(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for k, t in self.items():
            if k.startswith(prefix):
                yield k, t


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the classic Torch7 default."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)
