"""Position-independent Kronecker baseline and synthetic data generators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import ModeLayout
from .model import (
    FORMAT_VERSION,
    FactorModel,
    _l,
    shared_factor_grad,
    shared_factor_term,
    sigmoid,
    softplus,
)
from .store import SparseArray


class SeedModel(FactorModel):
    """One learnable seed per step shape, reused at every level.

    For a matrix this is ``K_square^[l_row] (x) K_rect^[l_col - l_row]``
    with the same normalisation as the full model, so the closed-form
    square sum still applies.
    """

    kind = "seed"

    @classmethod
    def init(cls, layout: ModeLayout, rng: np.random.Generator) -> "SeedModel":
        p = {"log_q": np.zeros(1)}
        for s in range(1, layout.model_order + 1):
            p[f"seed{s}"] = rng.normal(0.0, 0.1, 1 << s)
        return cls(layout, p)

    def forward(self, tok: np.ndarray, keep_cache: bool = True):
        P = self.params
        sizes = self.layout.step_sizes
        seeds = {s: softplus(P[f"seed{s}"]) for s in set(sizes.tolist())}
        log_a = np.full(tok.shape[0], 0.5 * self.layout.depth * P["log_q"][0])
        for k, s in enumerate(sizes):
            log_a = log_a + shared_factor_term(seeds[s], tok[:, k])
        cache = {"tok": tok, "K": [seeds[s] for s in sizes]} if keep_cache else None
        return log_a, cache

    def backward(self, cache: dict, g: np.ndarray) -> dict[str, np.ndarray]:
        grads = self.zero_grads()
        grads["log_q"][0] = 0.5 * self.layout.depth * g.sum()
        tok = cache["tok"]
        for k, s in enumerate(self.layout.step_sizes):
            grads[f"seed{s}"] += shared_factor_grad(cache["K"][k], tok[:, k], g)
        for s in range(1, self.layout.model_order + 1):
            grads[f"seed{s}"] *= sigmoid(self.params[f"seed{s}"])
        return grads

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "D": self.layout.order,
            "padded_log_dims": list(self.layout.padded_log_dims),
            "mode_permutation": [d + 1 for d in self.layout.mode_order],
            "log_q": float(self.params["log_q"][0]),
            "seeds": {
                self.shape_key(s): _l(self.params[f"seed{s}"])
                for s in range(1, self.layout.model_order + 1)
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SeedModel":
        layout = ModeLayout(obj["padded_log_dims"])
        tmp = cls(layout, {})
        p = {"log_q": np.array([obj["log_q"]])}
        for s in range(1, layout.model_order + 1):
            p[f"seed{s}"] = np.array(obj["seeds"][tmp.shape_key(s)])
        return cls(layout, p)


@dataclass(frozen=True)
class RmatConfig:
    p: float = 0.8
    order: int = 3
    log_dims: tuple[int, ...] = (4, 4, 4)
    total: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not 0.5 < self.p < 1.0:
            raise ValueError(f"skew p must lie in (0.5, 1), got {self.p}")
        if len(self.log_dims) != self.order:
            raise ValueError("log_dims must have one entry per mode")
        if any(l < 1 for l in self.log_dims):
            raise ValueError("log dims must be >= 1")
        if self.total < 1:
            raise ValueError("total mass must be positive")


def rmat_generate(config: RmatConfig, chunk: int = 1 << 18) -> SparseArray:
    """Drop ``total`` unit increments by recursive biased halving.

    At every level each mode independently keeps the first half with
    probability ``p``; modes stop halving once exhausted.
    """
    rng = np.random.default_rng(config.seed)
    dims = tuple(1 << l for l in config.log_dims)
    keys_all = []
    left = int(config.total)
    while left:
        n = min(chunk, left)
        left -= n
        flat = np.zeros(n, dtype=np.int64)
        for l, size in zip(config.log_dims, dims):
            bits = rng.random((n, l)) >= config.p
            idx = bits.astype(np.int64) @ (1 << np.arange(l - 1, -1, -1, dtype=np.int64))
            flat = flat * size + idx
        keys_all.append(flat)
    keys, cnt = np.unique(np.concatenate(keys_all), return_counts=True)
    idx = np.stack(np.unravel_index(keys, dims), axis=1)
    return SparseArray(dims, idx, cnt.astype(np.float64))


def uniform_sparse(
    dims: Sequence[int], nnz: int, rng: np.random.Generator, integer_values: bool = True
) -> SparseArray:
    """Uniformly scattered distinct non-zeros with small positive values."""
    cells = math.prod(dims)
    if nnz > cells:
        raise ValueError("more non-zeros than cells")
    keys = np.unique(rng.integers(0, cells, size=int(nnz * 1.2) + 16))
    while keys.size < nnz:
        keys = np.unique(np.concatenate([keys, rng.integers(0, cells, size=nnz)]))
    keys = rng.permutation(keys)[:nnz]
    idx = np.stack(np.unravel_index(np.sort(keys), tuple(dims)), axis=1)
    vals = rng.integers(1, 6, size=nnz).astype(np.float64) if integer_values else rng.uniform(0.1, 2.0, nnz)
    return SparseArray(tuple(dims), idx, vals)
