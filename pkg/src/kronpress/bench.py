"""Timing harnesses for per-entry inference and per-epoch training cost."""

from __future__ import annotations

import dataclasses
import sys
import time
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .codec import ModeLayout
from .model import KronModel
from .store import SparseArray
from .training import TrainConfig, Trainer


@dataclass
class InferenceRow:
    size: int
    mean_latency_ns: float
    std: float


@dataclass
class EpochRow:
    nnz: int
    model_opt_s: float
    order_opt_s: float
    total_s: float


@dataclass
class HiddenRow:
    hidden: int
    epoch_s: float


def bench_inference(
    min_log: int = 7,
    max_log: int = 16,
    samples: int = 100_000,
    reps: int = 5,
    hidden: int = 30,
    seed: int = 0,
) -> list[InferenceRow]:
    """Mean per-entry approximation latency on square ``2^l x 2^l`` models.

    Each row is evaluated with its own recurrence (no prefix sharing), so
    the figure is the cost of approximating one entry. Models are randomly
    initialised; latency does not depend on trained values.
    """
    if samples <= 0:
        return []
    rng = np.random.default_rng(seed)
    rows = []
    for l in range(min_log, max_log + 1):
        layout = ModeLayout((l, l))
        model = KronModel.init(layout, hidden, rng)
        model.share_prefixes = False
        pos = rng.integers(0, 1 << l, size=(samples, 2))
        model.predict(pos[: min(samples, 1024)])  # warm-up
        per_entry = []
        for _ in range(reps):
            t0 = time.perf_counter_ns()
            model.predict(pos)
            per_entry.append((time.perf_counter_ns() - t0) / samples)
        rows.append(InferenceRow(1 << l, float(np.mean(per_entry)), float(np.std(per_entry))))
    return rows


def nested_subsets(data: SparseArray, sizes: Sequence[int], rng: np.random.Generator) -> list[SparseArray]:
    """Subsets of ``data`` where each smaller one is contained in the larger; dims unchanged."""
    if any(not 0 < n <= data.nnz for n in sizes):
        raise ValueError(f"subset sizes must lie in [1, {data.nnz}]")
    perm = rng.permutation(data.nnz)
    return [data.subset(np.sort(perm[:n])) for n in sizes]


def time_epochs(data: SparseArray, config: TrainConfig, epochs: int = 3, warmup: int = 1) -> EpochRow:
    """Median order- and model-optimisation seconds per epoch."""
    trainer = Trainer(data, config)
    for _ in range(warmup):
        trainer.step()
    recs = [trainer.step() for _ in range(epochs)]
    order_s = float(np.median([r.order_seconds for r in recs]))
    model_s = float(np.median([r.model_seconds for r in recs]))
    return EpochRow(data.nnz, model_s, order_s, order_s + model_s)


def bench_epoch_scaling(
    data: SparseArray,
    fractions: Iterable[float] = (0.125, 0.25, 0.5, 1.0),
    config: TrainConfig | None = None,
    epochs: int = 3,
    seed: int = 0,
) -> list[EpochRow]:
    fractions = list(fractions)
    if any(not 0 < f <= 1 for f in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    config = config or TrainConfig(seed=seed)
    sizes = [max(1, round(f * data.nnz)) for f in fractions]
    subsets = nested_subsets(data, sizes, np.random.default_rng(seed))
    return [time_epochs(sub, config, epochs) for sub in subsets]


def bench_hidden(
    data: SparseArray, hiddens: Iterable[int] = (15, 30, 60), config: TrainConfig | None = None, epochs: int = 3
) -> list[HiddenRow]:
    config = config or TrainConfig()
    out = []
    for h in hiddens:
        row = time_epochs(data, dataclasses.replace(config, hidden=int(h)), epochs)
        out.append(HiddenRow(int(h), row.total_s))
    return out


def write_tsv(rows: Sequence, out: TextIO | str | None = None) -> None:
    """Header from the dataclass fields, one line per row."""
    if isinstance(out, str):
        with open(out, "w") as fh:
            return write_tsv(rows, fh)
    out = out or sys.stdout
    if not rows:
        return
    names = [f.name for f in dataclasses.fields(rows[0])]
    out.write("\t".join(names) + "\n")
    for r in rows:
        out.write("\t".join(_fmt(getattr(r, n)) for n in names) + "\n")


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def read_tsv(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        body = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    cols = list(zip(*body)) if body else [()] * len(header)
    return {h: np.array(c, dtype=float) for h, c in zip(header, cols)}
