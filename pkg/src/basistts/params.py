"""Named, shaped, flat parameter tensors with per-name trainability flags."""

from __future__ import annotations

import fnmatch

import numpy as np

from .autodiff import Node, constant, leaf
from .errors import ConfigurationError


class ParameterStore:
    """Flat mapping name -> numpy tensor, plus a trainable flag per name.

    Running batch-norm statistics live here too, marked non-trainable.
    """

    def __init__(self):
        self.tensors: dict[str, np.ndarray] = {}
        self.trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        if name in self.tensors:
            raise ConfigurationError(f"duplicate parameter name: {name}")
        self.tensors[name] = np.asarray(value, dtype=np.float64)
        self.trainable[name] = trainable

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self.tensors:
            raise ConfigurationError(f"unknown parameter name: {name}")
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def names(self, pattern: str = "*") -> list[str]:
        return [n for n in self.tensors if fnmatch.fnmatchcase(n, pattern)]

    def trainable_names(self) -> list[str]:
        return [n for n, t in self.trainable.items() if t]

    def leaves(self) -> dict[str, Node]:
        """Fresh graph leaves for one forward/backward pass."""
        return {n: leaf(v, name=n) for n, v in self.tensors.items()}

    def constants(self) -> dict[str, Node]:
        """Graph nodes that never receive gradients (frozen-path evaluation)."""
        return {n: constant(v) for n, v in self.tensors.items()}

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for n, v in self.tensors.items():
            out.add(n, v.copy(), self.trainable[n])
        return out

    def equals_bitwise(self, other: "ParameterStore", pattern: str = "*") -> bool:
        names = self.names(pattern)
        if names != other.names(pattern):
            return False
        return all(np.array_equal(self.tensors[n], other.tensors[n]) for n in names)
