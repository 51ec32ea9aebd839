"""Sparse-loss training: alternating slice reordering and Adam updates."""

from __future__ import annotations

import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import SeedModel
from .codec import ModeLayout
from .model import FactorModel, KronModel
from .reorder import entry_terms, init_orders, update_order
from .store import OrderState, SparseArray

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    hidden: int = 30
    lr: float = 1e-2
    gamma: float = 10.0
    tp: int = 2
    tol: float = 1e-5
    patience: int = 100
    batch_size: int = 1 << 12
    seed: int = 0
    max_epochs: int | None = None
    init: str | None = None  # "shingle" | "random"; None picks by order
    no_minhash: bool = False
    random_init: bool = False
    fixed_q: bool = False
    no_autoregressive: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.tp < 0:
            raise ValueError("tp must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.hidden < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("hidden, batch_size and patience must be positive")
        if self.init not in (None, "shingle", "random"):
            raise ValueError(f"unknown init {self.init!r}")

    def init_strategy(self, order: int) -> str:
        if self.random_init:
            return "random"
        return self.init or ("shingle" if order == 2 else "random")

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["gamma"]):
            d["gamma"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("gamma") == "inf":
            d["gamma"] = math.inf
        return cls(**d)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def new_model(layout: ModeLayout, config: TrainConfig, rng: np.random.Generator) -> FactorModel:
    if config.no_autoregressive:
        return SeedModel.init(layout, rng)
    return KronModel.init(layout, config.hidden, rng)


def matched_q(data: SparseArray, layout: ModeLayout) -> float:
    """Scale whose square sum equals the data's."""
    if data.value_sq_sum <= 0:
        return 1.0
    return math.exp(math.log(data.value_sq_sum) / layout.depth)


def loss(model: FactorModel, data: SparseArray, orders: OrderState | None = None) -> float:
    """Squared Frobenius error over the padded box, touching only non-zeros."""
    pos = data.indices if orders is None else orders.positions(data)
    approx = model.predict(pos) if data.nnz else np.zeros(0)
    return float(np.sum(entry_terms(data.values, approx)) + model.square_sum())


def gradients(
    model: FactorModel, tok: np.ndarray, values: np.ndarray, batch_fraction: float
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch share of the sparse loss and its exact gradient.

    The batch owns ``batch_fraction`` of the closed-form ``q**L`` term.
    """
    L = model.layout.depth
    qL = model.square_sum()
    if tok.shape[0] == 0:
        grads = model.zero_grads()
        grads["log_q"][0] = batch_fraction * L * qL
        return batch_fraction * qL, grads
    log_a, cache = model.forward(tok, keep_cache=True)
    a = np.exp(log_a)
    value = float(np.sum(entry_terms(values, a)) + batch_fraction * qL)
    # d/da [(x - a)^2 - a^2] = -2x, so d/dlog a = -2 x a
    grads = model.backward(cache, -2.0 * values * a)
    grads["log_q"][0] += batch_fraction * L * qL
    return value, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, model: FactorModel, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        adam_step(model.params, grads, self.m, self.v, self.lr, self.t,
                  self.beta1, self.beta2, self.eps, skip=model.frozen)


def adam_step(params, grads, m, v, lr, t, beta1=0.9, beta2=0.999, eps=1e-8, skip=()):
    """In-place bias-corrected Adam update of every non-skipped parameter."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        if k in skip:
            continue
        m[k] *= beta1
        m[k] += (1.0 - beta1) * g
        v[k] *= beta2
        v[k] += (1.0 - beta2) * g * g
        params[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    elapsed: float
    order_seconds: float
    model_seconds: float
    accepted: int


@dataclass
class TrainResult:
    model: FactorModel
    orders: OrderState
    best_loss: float
    history: list[EpochRecord] = field(default_factory=list)
    epochs: int = 0
    converged: bool = False


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch\tloss\telapsed_s\torder_s\tmodel_s\n")
        for r in history:
            fh.write(f"{r.epoch}\t{r.loss!r}\t{r.elapsed:.6f}\t{r.order_seconds:.6f}\t{r.model_seconds:.6f}\n")


class Trainer:
    """Stateful training loop; :func:`train` runs it to convergence."""

    def __init__(self, data: SparseArray, config: TrainConfig,
                 model: FactorModel | None = None, orders: OrderState | None = None):
        self.data = data
        self.config = config
        self.layout = ModeLayout(data.padded_log_dims)
        self.rngs = {name: rng_stream(config.seed, name)
                     for name in ("init", "orders", "bijections", "batching", "acceptance")}
        if model is None:
            model = new_model(self.layout, config, self.rngs["init"])
            model.set_q(matched_q(data, self.layout))
        if config.fixed_q:
            model.set_q(matched_q(data, self.layout))
            model.frozen.add("log_q")
        self.model = model
        self.orders = orders if orders is not None else init_orders(
            data, config.init_strategy(data.order), self.rngs["orders"])
        self.positions = self.orders.positions(data)
        self.approx = model.predict(self.positions) if data.nnz else np.zeros(0)
        self.opt = Adam(model.params, config.lr)
        self.epoch = 0
        self.history: list[EpochRecord] = []
        self.best_loss = math.inf
        self.best: tuple[FactorModel, OrderState] | None = None
        self._stall = 0
        self._t0 = time.perf_counter()

    def reorder_round(self) -> int:
        accepted = 0
        for d, l in enumerate(self.data.padded_log_dims):
            if l == 0 or self.data.nnz == 0:
                continue
            res = update_order(
                self.model, self.data, self.orders, d, self.config.gamma, self.rngs["bijections"],
                use_minhash=not self.config.no_minhash, positions=self.positions,
                approx=self.approx, accept_rng=self.rngs["acceptance"],
            )
            self.approx = res.approx
            accepted += res.accepted
        return accepted

    def model_pass(self) -> float:
        data, bs = self.data, self.config.batch_size
        tok = self.layout.tokens(self.positions)
        perm = self.rngs["batching"].permutation(data.nnz)
        n_batches = max(1, -(-data.nnz // bs))
        for b in range(n_batches):
            rows = perm[b * bs:(b + 1) * bs]
            frac = rows.size / data.nnz if data.nnz else 1.0
            _, grads = gradients(self.model, tok[rows], data.values[rows], frac)
            self.opt.step(self.model, grads)
        self.approx = self.model.approximate_tokens(tok) if data.nnz else np.zeros(0)
        return float(np.sum(entry_terms(data.values, self.approx)) + self.model.square_sum())

    def step(self) -> EpochRecord:
        t0 = time.perf_counter()
        accepted = 0
        for _ in range(self.config.tp):
            accepted += self.reorder_round()
        t1 = time.perf_counter()
        current = self.model_pass()
        t2 = time.perf_counter()
        self.epoch += 1

        if current < self.best_loss:
            gain = (self.best_loss - current) / abs(self.best_loss) if math.isfinite(self.best_loss) else math.inf
            self.best_loss = current
            self.best = (self.model.copy(), self.orders.copy())
        else:
            gain = 0.0
        self._stall = self._stall + 1 if gain < self.config.tol else 0

        rec = EpochRecord(self.epoch, current, t2 - self._t0, t1 - t0, t2 - t1, accepted)
        self.history.append(rec)
        log.info("epoch %d loss %.6g best %.6g accepted %d", rec.epoch, current, self.best_loss, accepted)
        return rec

    @property
    def converged(self) -> bool:
        return self._stall >= self.config.patience

    def run(self) -> TrainResult:
        cap = self.config.max_epochs
        while not self.converged and (cap is None or self.epoch < cap):
            self.step()
        model, orders = self.best if self.best else (self.model, self.orders)
        return TrainResult(model, orders, loss(model, self.data, orders), self.history,
                           self.epoch, self.converged)


def train(data: SparseArray, config: TrainConfig) -> TrainResult:
    return Trainer(data, config).run()
