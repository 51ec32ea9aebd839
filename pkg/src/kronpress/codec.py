"""Recursive-bisection position codes.

A position in a ``2^l_1 x ... x 2^l_D`` box is described by the sequence
of half/quadrant choices made while halving every still-divisible mode.
Digits are 1 (first half), 2 (second half) or 0 once a mode is exhausted.

The model consumes the same information as integer tokens: at step ``k``
the digits of the active modes, taken in ascending-``l`` order, are packed
as ``sum (digit - 1) * 2**(s - 1 - r)``. For a matrix this is row-major
indexing into a 2x2 (or 1x2) factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def digit(i: int, k: int, l: int) -> int:
    """Digit of 1-based index ``i`` at step ``k`` for a mode of depth ``l``."""
    if not 1 <= i <= (1 << l):
        raise ValueError(f"index {i} outside [1, {1 << l}]")
    if k < 1:
        raise ValueError("steps start at 1")
    if k > l:
        return 0
    return (((i - 1) >> (l - k)) & 1) + 1


@dataclass(frozen=True)
class PositionCode:
    steps: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.steps)


def encode(pos: Sequence[int], padded_log_dims: Sequence[int]) -> PositionCode:
    if len(pos) != len(padded_log_dims):
        raise ValueError("position and dims have different orders")
    L = max(padded_log_dims)
    return PositionCode(
        tuple(tuple(digit(i, k, l) for i, l in zip(pos, padded_log_dims)) for k in range(1, L + 1))
    )


def decode(code: PositionCode, padded_log_dims: Sequence[int]) -> tuple[int, ...]:
    """Reassemble the 1-based position from its digits."""
    out = []
    for d, l in enumerate(padded_log_dims):
        v = 0
        for k in range(l):
            v = 2 * v + code.steps[k][d] - 1
        out.append(v + 1)
    return tuple(out)


def step_shape(step: Sequence[int]) -> frozenset[int]:
    """1-based modes still active (digit != 0) at this step."""
    return frozenset(d + 1 for d, t in enumerate(step) if t != 0)


class ModeLayout:
    """Mode bookkeeping shared by encoder and model.

    Modes of depth 0 (dimension 1) carry no information and are dropped.
    The remaining modes are ordered by ascending depth (stable), so the
    modes active at any step are a suffix of ``mode_order`` and each step
    is identified by its active-mode count ``s``.
    """

    def __init__(self, padded_log_dims: Sequence[int]):
        self.padded_log_dims = tuple(int(l) for l in padded_log_dims)
        if any(l < 0 for l in self.padded_log_dims):
            raise ValueError("negative log dim")
        self.mode_order = tuple(
            sorted((d for d, l in enumerate(self.padded_log_dims) if l > 0),
                   key=lambda d: self.padded_log_dims[d])
        )
        if not self.mode_order:
            raise ValueError("at least one mode must have more than one index")
        self.order = len(self.padded_log_dims)
        self.model_order = len(self.mode_order)
        self.depth = max(self.padded_log_dims)
        self.step_sizes = np.array(
            [sum(1 for d in self.mode_order if self.padded_log_dims[d] >= k)
             for k in range(1, self.depth + 1)],
            dtype=np.int64,
        )

    def __eq__(self, other):
        return isinstance(other, ModeLayout) and self.padded_log_dims == other.padded_log_dims

    @property
    def cells(self) -> int:
        return 1 << sum(self.padded_log_dims)

    def tokens(self, positions: np.ndarray) -> np.ndarray:
        """``(n, L)`` tokens for 0-based padded positions ``(n, D)``."""
        pos = np.asarray(positions, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != self.order:
            raise ValueError(f"positions must have shape (n, {self.order})")
        tok = np.zeros((pos.shape[0], self.depth), dtype=np.int64)
        for k in range(self.depth):
            for d in self.mode_order:
                l = self.padded_log_dims[d]
                if l > k:
                    tok[:, k] = 2 * tok[:, k] + ((pos[:, d] >> (l - 1 - k)) & 1)
        return tok

    def tokens_from_codes(self, codes: Sequence[PositionCode]) -> np.ndarray:
        tok = np.zeros((len(codes), self.depth), dtype=np.int64)
        for n, code in enumerate(codes):
            if len(code.steps) != self.depth:
                raise ValueError(f"code length {len(code.steps)} != depth {self.depth}")
            for k, step in enumerate(code.steps):
                v = 0
                for d in self.mode_order:
                    if self.padded_log_dims[d] > k:
                        if step[d] not in (1, 2):
                            raise ValueError(f"digit {step[d]} invalid for mode {d + 1} at step {k + 1}")
                        v = 2 * v + step[d] - 1
                    elif step[d] != 0:
                        raise ValueError(f"mode {d + 1} exhausted at step {k + 1}")
                tok[n, k] = v
        return tok

    def factor_axes(self, s: int) -> tuple[int, ...]:
        """Original modes (0-based) indexed by a step-shape-``s`` factor."""
        return self.mode_order[self.model_order - s:]
