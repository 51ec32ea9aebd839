"""Similarity-aware slice reordering.

One call of :func:`update_order` proposes a set of disjoint swaps of
slices along one mode. Slices whose min-hash shingles agree are steered
to positions one bit apart, the rest are paired at random. Every swap is
scored by its exact change in the sparse loss and kept with probability
``min(1, exp(-gamma * delta))``.

Positions here are 0-based slots in the padded index space; the
pseudocode-style helper :func:`nearby` is 1-based.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .store import OrderState, SparseArray

log = logging.getLogger(__name__)

EMPTY_SHINGLE = np.iinfo(np.int64).max


def sample_bit_distance(l: int, rng: np.random.Generator) -> int:
    """``P(k = i) = 2**-(i+1)``, clamped to ``l - 1``."""
    if l < 1:
        raise ValueError("mode must have at least two slots")
    return min(int(rng.geometric(0.5)) - 1, l - 1)


def nearby(i: int, k: int) -> int:
    """1-based position whose binary form differs from ``i``'s in bit ``k``."""
    if i < 1 or k < 0:
        raise ValueError(f"invalid position/bit ({i}, {k})")
    return ((i - 1) ^ (1 << k)) + 1


@dataclass
class ShingleTable:
    mode: int
    bijections: dict[int, np.ndarray]
    shingles: np.ndarray  # (2**l_mode, D - 1), EMPTY_SHINGLE for empty slices

    def groups(self) -> np.ndarray:
        """Integer label per slot; equal iff every shingle agrees."""
        if self.shingles.shape[1] == 1:
            return self.shingles[:, 0]
        return np.unique(self.shingles, axis=0, return_inverse=True)[1].reshape(-1)


def random_bijections(padded_log_dims, mode: int, rng: np.random.Generator) -> dict[int, np.ndarray]:
    return {e: rng.permutation(1 << l) for e, l in enumerate(padded_log_dims) if e != mode}


def compute_shingles(
    positions: np.ndarray, padded_log_dims, mode: int, bijections: dict[int, np.ndarray]
) -> ShingleTable:
    n = 1 << padded_log_dims[mode]
    cols = []
    for e in sorted(bijections):
        col = np.full(n, EMPTY_SHINGLE, dtype=np.int64)
        np.minimum.at(col, positions[:, mode], bijections[e][positions[:, e]])
        cols.append(col)
    return ShingleTable(mode, bijections, np.stack(cols, axis=1))


@dataclass
class CandidatePairs:
    first: np.ndarray
    second: np.ndarray
    matched: np.ndarray  # True where the pair came from a shingle match

    def __len__(self):
        return int(self.first.size)

    def positions(self) -> np.ndarray:
        return np.concatenate([self.first, self.second])


def sample_pairs(
    n_slots: int,
    k: int,
    rng: np.random.Generator,
    groups: np.ndarray | None = None,
) -> CandidatePairs:
    """Disjoint candidate swaps covering all ``n_slots`` positions.

    Without ``groups`` every candidate is a uniform random pairing.
    """
    slots = np.arange(n_slots, dtype=np.int64)
    low = slots[((slots >> k) & 1) == 0]
    R = np.where(rng.random(low.size) < 0.5, low, low + (1 << k))

    firsts, seconds, tags = [], [], []
    if groups is not None and R.size > 1:
        order = np.argsort(groups[R], kind="stable")
        Rs = R[order]
        gs = groups[R][order]
        start = np.r_[True, gs[1:] != gs[:-1]]
        run_first = np.flatnonzero(start)
        run = np.cumsum(start) - 1
        rank = np.arange(Rs.size) - run_first[run]
        run_len = np.diff(np.r_[run_first, Rs.size])[run]
        lead = np.flatnonzero((rank % 2 == 0) & (rank + 1 < run_len))
        i1, i2 = Rs[lead], Rs[lead + 1]
        flip = 1 << k
        firsts += [i1, i2]
        seconds += [i2 ^ flip, i1 ^ flip]
        tags += [np.ones(2 * i1.size, dtype=bool)]
        keep = np.ones(Rs.size, dtype=bool)
        keep[lead] = keep[lead + 1] = False
        rest = Rs[keep]
    else:
        rest = R
    rest = rng.permutation(np.concatenate([rest, rest ^ (1 << k)]))
    firsts.append(rest[0::2])
    seconds.append(rest[1::2])
    tags.append(np.zeros(rest.size // 2, dtype=bool))
    return CandidatePairs(np.concatenate(firsts), np.concatenate(seconds), np.concatenate(tags))


def entry_terms(values: np.ndarray, approx: np.ndarray) -> np.ndarray:
    """Per-non-zero share of the sparse loss: ``(x - x~)^2 - x~^2``."""
    return (values - approx) ** 2 - approx * approx


def pair_deltas(
    model,
    values: np.ndarray,
    positions: np.ndarray,
    mode: int,
    pairs: CandidatePairs,
    approx: np.ndarray,
    n_slots: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Loss change of each candidate swap, judged against the current state.

    Only non-zeros in swapped slices are re-approximated. Returns the
    deltas, the affected-entry mask and those entries' new approximations.
    """
    partner = np.arange(n_slots, dtype=np.int64)
    partner[pairs.first] = pairs.second
    partner[pairs.second] = pairs.first
    pair_of = np.full(n_slots, -1, dtype=np.int64)
    ids = np.arange(len(pairs))
    pair_of[pairs.first] = ids
    pair_of[pairs.second] = ids

    owner = pair_of[positions[:, mode]]
    hit = np.flatnonzero(owner >= 0)
    moved = positions[hit].copy()
    moved[:, mode] = partner[moved[:, mode]]
    new = model.predict(moved)
    change = entry_terms(values[hit], new) - entry_terms(values[hit], approx[hit])
    deltas = np.bincount(owner[hit], weights=change, minlength=len(pairs))
    return deltas, hit, new


def delta_error(model, data: SparseArray, orders: OrderState, pair: tuple[int, int], mode: int) -> float:
    """Loss change from swapping 1-based positions ``pair`` along ``mode``."""
    a, b = pair[0] - 1, pair[1] - 1
    if a == b:
        return 0.0
    positions = orders.positions(data)
    approx = model.predict(positions)
    pairs = CandidatePairs(np.array([a]), np.array([b]), np.array([False]))
    n = orders.perms[mode].size
    return float(pair_deltas(model, data.values, positions, mode, pairs, approx, n)[0][0])


def accept(delta, gamma: float, u):
    """``u < exp(-gamma * delta)``; with ``gamma = inf`` only strict improvements."""
    delta = np.asarray(delta, dtype=np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        expo = -gamma * delta
    expo = np.where(np.isnan(expo), -np.inf, np.minimum(expo, 0.0))
    out = np.asarray(u) < np.exp(expo)
    return bool(out) if out.ndim == 0 else out


@dataclass
class OrderUpdate:
    mode: int
    k: int
    pairs: int
    matched: int
    accepted: int
    delta_sum: float
    approx: np.ndarray = field(repr=False)


def update_order(
    model,
    data: SparseArray,
    orders: OrderState,
    mode: int,
    gamma: float,
    rng: np.random.Generator,
    *,
    use_minhash: bool = True,
    positions: np.ndarray | None = None,
    approx: np.ndarray | None = None,
    accept_rng: np.random.Generator | None = None,
) -> OrderUpdate:
    """One round of swaps along ``mode``; mutates ``orders`` (and ``positions``).

    ``positions``/``approx`` may be passed to reuse the caller's current
    model-space positions and approximations; both are kept in sync.
    """
    l = data.padded_log_dims[mode]
    n = 1 << l
    if positions is None:
        positions = orders.positions(data)
    if approx is None:
        approx = model.predict(positions)
    accept_rng = accept_rng or rng

    k = sample_bit_distance(l, rng)
    groups = None
    if use_minhash:
        bij = random_bijections(data.padded_log_dims, mode, rng)
        groups = compute_shingles(positions, data.padded_log_dims, mode, bij).groups()
    pairs = sample_pairs(n, k, rng, groups)

    deltas, hit, new = pair_deltas(model, data.values, positions, mode, pairs, approx, n)
    u = accept_rng.random(len(pairs))
    ok = accept(deltas, gamma, u)

    a, b = pairs.first[ok], pairs.second[ok]
    orders.swap(mode, a, b)
    partner = np.arange(n, dtype=np.int64)
    partner[a] = b
    partner[b] = a
    positions[:, mode] = partner[positions[:, mode]]
    pair_of = np.full(n, -1, dtype=np.int64)
    pair_of[pairs.first] = np.arange(len(pairs))
    pair_of[pairs.second] = np.arange(len(pairs))
    # ``positions`` already moved; the owner of ``hit`` entries is unchanged by the swap
    moved = ok[pair_of[positions[hit, mode]]]
    approx = approx.copy()
    approx[hit[moved]] = new[moved]

    out = OrderUpdate(mode, k, len(pairs), int(pairs.matched.sum()), int(ok.sum()),
                      float(deltas[ok].sum()), approx)
    log.debug("mode=%d k=%d pairs=%d matched=%d accepted=%d delta_sum=%.6g",
              mode, k, out.pairs, out.matched, out.accepted, out.delta_sum)
    return out


def init_orders(data: SparseArray, strategy: str, rng: np.random.Generator) -> OrderState:
    """Random permutations, or a per-mode sort by (shingles, -nnz, index)."""
    if strategy == "random":
        return OrderState([rng.permutation(1 << l) for l in data.padded_log_dims], data.dims)
    if strategy != "shingle":
        raise ValueError(f"unknown init strategy {strategy!r}")
    perms = []
    for d, l in enumerate(data.padded_log_dims):
        n = 1 << l
        if data.order == 1:
            sh = np.zeros((n, 1), dtype=np.int64)
            sh[np.setdiff1d(np.arange(n), data.indices[:, 0])] = EMPTY_SHINGLE
        else:
            bij = random_bijections(data.padded_log_dims, d, rng)
            sh = compute_shingles(data.indices, data.padded_log_dims, d, bij).shingles
        count = np.bincount(data.indices[:, d], minlength=n)
        keys = [np.arange(n), -count] + [sh[:, j] for j in range(sh.shape[1] - 1, -1, -1)]
        perms.append(np.lexsort(keys))
    return OrderState(perms, data.dims)


def total_squared(values: np.ndarray, approx: np.ndarray, model) -> float:
    return float(np.sum(entry_terms(values, approx)) + model.square_sum())

