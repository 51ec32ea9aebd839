"""Constant-size Kronecker-factor model driven by an LSTM over position codes.

An entry is approximated as ``prod_k sqrt(q) * K_k[tok_k] / ||K_k||_F``
over the ``L`` levels, where ``K_1`` is a free positive factor and ``K_2..K_L`` are produced by
softplus heads on the LSTM state after consuming the embeddings of steps
``1..L-1``. Because every factor is normalised, the squared outputs sum to
``q**L`` over the padded box, whatever the other parameters are.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import ModeLayout, PositionCode

FORMAT_VERSION = 1
ROW_BLOCK = 256
EVAL_BLOCK = 1 << 14


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def rowmm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` with each output row independent of the other rows.

    BLAS kernels round differently for different matrix heights, so rows
    are always multiplied in zero-padded blocks of fixed height.
    """
    n, m = x.shape
    nb = -(-n // ROW_BLOCK)
    if nb * ROW_BLOCK != n:
        xp = np.zeros((nb * ROW_BLOCK, m))
        xp[:n] = x
    else:
        xp = x
    out = np.matmul(xp.reshape(nb, ROW_BLOCK, m), w)
    return out.reshape(nb * ROW_BLOCK, w.shape[1])[:n]


def shared_factor_term(K: np.ndarray, tok: np.ndarray) -> np.ndarray:
    return np.log(K)[tok] - 0.5 * math.log(float(np.sum(K * K)))


def shared_factor_grad(K: np.ndarray, tok: np.ndarray, g: np.ndarray) -> np.ndarray:
    S = float(np.sum(K * K))
    return np.bincount(tok, weights=g, minlength=K.size) / K - g.sum() * K / S


@dataclass
class FactorSequence:
    factors: list[np.ndarray]
    norms: list[float]


class FactorModel:
    """Shared machinery for models whose outputs follow the normalised product."""

    kind = "abstract"

    def __init__(self, layout: ModeLayout, params: dict[str, np.ndarray]):
        self.layout = layout
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.frozen: set[str] = set()

    # subclasses implement ``forward(tok, keep_cache) -> (log_a, cache)``
    # and ``backward(cache, g) -> grads`` with ``g = dLoss/dlog_a``

    @property
    def q(self) -> float:
        return float(np.exp(self.params["log_q"][0]))

    def set_q(self, q: float) -> None:
        self.params["log_q"] = np.array([math.log(q)])

    @property
    def n_params(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def square_sum(self) -> float:
        """Exact sum of squared outputs over every padded cell."""
        return self.q ** self.layout.depth

    def log_approx_tokens(self, tok: np.ndarray) -> np.ndarray:
        out = np.empty(tok.shape[0])
        for s in range(0, tok.shape[0], EVAL_BLOCK):
            out[s:s + EVAL_BLOCK] = self.forward(tok[s:s + EVAL_BLOCK], keep_cache=False)[0]
        return out

    def approximate_tokens(self, tok: np.ndarray) -> np.ndarray:
        return np.exp(self.log_approx_tokens(tok))

    def predict(self, positions: np.ndarray) -> np.ndarray:
        """Approximations at 0-based padded positions ``(n, D)``."""
        return self.approximate_tokens(self.layout.tokens(positions))

    def approximate(self, code: PositionCode) -> float:
        return float(self.approximate_batch([code])[0])

    def approximate_batch(self, codes: Sequence[PositionCode]) -> np.ndarray:
        if not codes:
            return np.zeros(0)
        return self.approximate_tokens(self.layout.tokens_from_codes(codes))

    def forward_factors(self, code: PositionCode) -> FactorSequence:
        tok = self.layout.tokens_from_codes([code])
        _, cache = self.forward(tok, keep_cache=True)
        factors = [K[0].copy() if K.ndim == 2 else K.copy() for K in cache["K"]]
        return FactorSequence(factors, [float(np.linalg.norm(K)) for K in factors])

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self):
        new = type(self)(self.layout, {k: v.copy() for k, v in self.params.items()}, **self._ctor_kwargs())
        new.frozen = set(self.frozen)
        return new

    def _ctor_kwargs(self) -> dict:
        return {}

    def shape_key(self, s: int) -> str:
        return ",".join(str(d + 1) for d in sorted(self.layout.factor_axes(s)))

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        raise NotImplementedError

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _l(a: np.ndarray):
    return np.asarray(a, dtype=np.float64).tolist()


class KronModel(FactorModel):
    """LSTM-conditioned factors: the full model."""

    kind = "lstm"

    def __init__(self, layout: ModeLayout, params: dict[str, np.ndarray], hidden: int):
        super().__init__(layout, params)
        self.hidden = int(hidden)
        # evaluate each distinct token prefix once; off gives one recurrence per row
        self.share_prefixes = True

    def _ctor_kwargs(self):
        return {"hidden": self.hidden}

    @classmethod
    def init(cls, layout: ModeLayout, hidden: int, rng: np.random.Generator) -> "KronModel":
        h = int(hidden)
        D = layout.model_order
        bound = 1.0 / math.sqrt(h)
        p = {
            "log_q": np.zeros(1),
            "raw_K1": rng.normal(0.0, 0.1, 1 << D),
            "Wi": rng.uniform(-bound, bound, (h, 4 * h)),
            "Wh": rng.uniform(-bound, bound, (h, 4 * h)),
            "b": rng.uniform(-bound, bound, 4 * h),
            "h0": np.zeros(h),
            "c0": np.zeros(h),
        }
        p["b"][h:2 * h] = 1.0
        for s in range(1, D + 1):
            p[f"emb{s}"] = rng.standard_normal((1 << s, h))
            p[f"head_W{s}"] = rng.uniform(-bound, bound, (1 << s, h))
            p[f"head_b{s}"] = rng.uniform(-bound, bound, 1 << s)
        return cls(layout, p, h)

    def forward(self, tok: np.ndarray, keep_cache: bool = True):
        """Log-approximations of token rows.

        The recurrent state after level ``k`` depends only on the first
        ``k`` tokens, so it is computed once per distinct prefix.
        """
        P = self.params
        sizes = self.layout.step_sizes
        L = self.layout.depth
        h = self.hidden

        K1 = softplus(P["raw_K1"])
        log_a = 0.5 * L * P["log_q"][0] + shared_factor_term(K1, tok[:, 0])
        cache = {"tok": tok, "K": [K1], "steps": []} if keep_cache else None

        group = np.zeros(tok.shape[0], dtype=np.int64)
        hs = P["h0"][None, :]
        cs = P["c0"][None, :]
        for k in range(1, L):
            if self.share_prefixes:
                width = 1 << int(sizes[k - 1])
                prefix, group = np.unique(group * width + tok[:, k - 1], return_inverse=True)
                group = group.reshape(-1)
                parent, last = prefix // width, prefix % width
            else:
                parent, last = group, tok[:, k - 1]
                group = np.arange(tok.shape[0])
            x = P[f"emb{sizes[k - 1]}"][last]
            h_prev, c_prev = hs[parent], cs[parent]
            z = rowmm(x, P["Wi"]) + rowmm(h_prev, P["Wh"]) + P["b"]
            gi = sigmoid(z[:, :h])
            gf = sigmoid(z[:, h:2 * h])
            gg = np.tanh(z[:, 2 * h:3 * h])
            go = sigmoid(z[:, 3 * h:])
            c_new = gf * c_prev + gi * gg
            tc = np.tanh(c_new)
            h_new = go * tc
            s = sizes[k]
            zK = rowmm(h_new, P[f"head_W{s}"].T) + P[f"head_b{s}"]
            K = softplus(zK)
            log_norm = 0.5 * np.log(np.sum(K * K, axis=1))
            log_a = log_a + np.log(K[group, tok[:, k]]) - log_norm[group]
            if keep_cache:
                cache["K"].append(K)
                cache["steps"].append((parent, last, group, x, h_prev, c_prev, gi, gf, gg, go, tc, h_new, zK))
            hs, cs = h_new, c_new
        return log_a, cache

    def backward(self, cache: dict, g: np.ndarray) -> dict[str, np.ndarray]:
        P = self.params
        sizes = self.layout.step_sizes
        L = self.layout.depth
        tok = cache["tok"]
        h = self.hidden
        grads = self.zero_grads()

        grads["log_q"][0] = 0.5 * L * g.sum()
        grads["raw_K1"] = shared_factor_grad(cache["K"][0], tok[:, 0], g) * sigmoid(P["raw_K1"])

        dh_next = dc_next = None
        for k in range(L - 1, 0, -1):
            parent, last, group, x, h_prev, c_prev, gi, gf, gg, go, tc, h_cur, zK = cache["steps"][k - 1]
            n_groups = h_cur.shape[0]
            s = sizes[k]
            K = cache["K"][k]
            # per-prefix factor gradient of sum_b g_b * (log K[tok_b] - log ||K||)
            g_sum = np.bincount(group, weights=g, minlength=n_groups)
            dK = -(g_sum / np.sum(K * K, axis=1))[:, None] * K
            np.add.at(dK, (group, tok[:, k]), g / K[group, tok[:, k]])
            dzK = dK * sigmoid(zK)
            grads[f"head_W{s}"] += dzK.T @ h_cur
            grads[f"head_b{s}"] += dzK.sum(axis=0)
            dh = dzK @ P[f"head_W{s}"]
            if dh_next is not None:
                dh += dh_next
            dc = dh * go * (1.0 - tc * tc)
            if dc_next is not None:
                dc += dc_next
            dz = np.empty((n_groups, 4 * h))
            dz[:, :h] = dc * gg * gi * (1.0 - gi)
            dz[:, h:2 * h] = dc * c_prev * gf * (1.0 - gf)
            dz[:, 2 * h:3 * h] = dc * gi * (1.0 - gg * gg)
            dz[:, 3 * h:] = dh * tc * go * (1.0 - go)
            grads["Wi"] += x.T @ dz
            grads["Wh"] += h_prev.T @ dz
            grads["b"] += dz.sum(axis=0)
            np.add.at(grads[f"emb{sizes[k - 1]}"], last, dz @ P["Wi"].T)
            n_parents = int(parent.max()) + 1
            dh_next = np.zeros((n_parents, h))
            dc_next = np.zeros((n_parents, h))
            np.add.at(dh_next, parent, dz @ P["Wh"].T)
            np.add.at(dc_next, parent, dc * gf)
        if dh_next is not None:
            grads["h0"] += dh_next[0]
            grads["c0"] += dc_next[0]
        return grads

    def to_dict(self) -> dict:
        P = self.params
        D = self.layout.model_order
        return {
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "D": self.layout.order,
            "h": self.hidden,
            "padded_log_dims": list(self.layout.padded_log_dims),
            "mode_permutation": [d + 1 for d in self.layout.mode_order],
            "log_q": float(P["log_q"][0]),
            "raw_K1": _l(P["raw_K1"]),
            "embeddings": {self.shape_key(s): _l(P[f"emb{s}"]) for s in range(1, D + 1)},
            "lstm": {k: _l(P[k]) for k in ("Wi", "Wh", "b", "h0", "c0")},
            "heads": {
                self.shape_key(s): {"W": _l(P[f"head_W{s}"]), "b": _l(P[f"head_b{s}"])}
                for s in range(1, D + 1)
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "KronModel":
        layout = ModeLayout(obj["padded_log_dims"])
        tmp = cls(layout, {}, obj["h"])
        p = {
            "log_q": np.array([obj["log_q"]]),
            "raw_K1": np.array(obj["raw_K1"]),
        }
        for k in ("Wi", "Wh", "b", "h0", "c0"):
            p[k] = np.array(obj["lstm"][k])
        for s in range(1, layout.model_order + 1):
            key = tmp.shape_key(s)
            p[f"emb{s}"] = np.array(obj["embeddings"][key])
            p[f"head_W{s}"] = np.array(obj["heads"][key]["W"])
            p[f"head_b{s}"] = np.array(obj["heads"][key]["b"])
        return cls(layout, p, obj["h"])


def load_model(path: str | Path) -> FactorModel:
    from .baselines import SeedModel

    obj = json.loads(Path(path).read_text())
    if obj.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {obj.get('version')!r}")
    kinds = {KronModel.kind: KronModel, SeedModel.kind: SeedModel}
    try:
        return kinds[obj["kind"]].from_dict(obj)
    except KeyError as exc:
        raise ValueError(f"{path}: malformed model file (missing {exc})") from None

