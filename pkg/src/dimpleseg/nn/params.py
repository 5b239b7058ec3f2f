"""Named registry of trainable tensors and non-trainable buffers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..autodiff import Tensor


@dataclass
class Entry:
    tensor: Tensor
    trainable: bool


class ParamStore:
    """Ordered ``name -> (tensor, trainable)`` map.

    Names are slash-delimited paths such as ``enc1/rdb/unit0/conv/weight``.
    Insertion order is preserved and drives checkpoint layout.
    """

    def __init__(self):
        self._entries: dict[str, Entry] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=trainable)
        self._entries[name] = Entry(t, trainable)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def is_trainable(self, name: str) -> bool:
        return self._entries[name].trainable

    def items(self) -> Iterator[tuple[str, Entry]]:
        return iter(self._entries.items())

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        for name, e in self._entries.items():
            if e.trainable:
                yield name, e.tensor

    def buffers(self) -> Iterator[tuple[str, Tensor]]:
        for name, e in self._entries.items():
            if not e.trainable:
                yield name, e.tensor

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._entries if n.startswith(prefix)]

    def param_count(self) -> int:
        return sum(t.size for _, t in self.trainable())

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.tensor.grad = None

    def set_data(self, name: str, value: np.ndarray) -> None:
        """Replace the values of an entry in place, keeping shape and dtype."""
        t = self[name]
        value = np.asarray(value)
        if value.shape != t.shape:
            raise ValueError(f"{name}: shape {value.shape} does not match {t.shape}")
        t.data[...] = value

    def astype(self, dtype) -> None:
        """Cast every entry in place (e.g. float64 for gradient checks)."""
        for e in self._entries.values():
            e.tensor.data = np.ascontiguousarray(e.tensor.data.astype(dtype))
            e.tensor.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: e.tensor.data.copy() for n, e in self._entries.items()}

    def signature(self) -> list[tuple[str, tuple[int, ...], bool]]:
        return [(n, e.tensor.shape, e.trainable) for n, e in self._entries.items()]
