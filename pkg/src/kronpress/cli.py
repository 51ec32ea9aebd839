"""Command line entry point: ``kronpress <command> ...``.

Exit codes: 0 success, 1 runtime failure (bad data, inconsistent
artifacts), 2 usage error (bad flags, missing input file).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import RunManifest, sha256_file
from .baselines import RmatConfig, rmat_generate, uniform_sparse
from .bench import bench_epoch_scaling, bench_hidden, bench_inference, write_tsv
from .model import load_model
from .store import (
    DataError,
    SparseArray,
    exact_error,
    load_coo,
    load_orders,
    read_dims_comment,
    report,
    save_coo,
    save_orders,
)
from .training import TrainConfig, loss, train, write_history

log = logging.getLogger("kronpress")


class UsageError(Exception):
    """Bad invocation; exits with status 2."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _gamma(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def _existing(path: str | None, what: str = "input") -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return p


def read_data(path: str, order: int | None, dims: list[int] | None, zero_indexed: bool) -> SparseArray:
    p = _existing(path)
    if dims is None:
        dims = read_dims_comment(p)
    return load_coo(p, order=order, one_indexed=not zero_indexed, dims=dims)


def _data_args(p: argparse.ArgumentParser, required: bool = True, flag: str = "--input") -> None:
    p.add_argument(flag, required=required, help="COO text or Matrix Market file (1-based indices)")
    p.add_argument("--order", type=int, help="number of modes (default: inferred from the first line)")
    p.add_argument("--dims", type=_int_list, help="logical dims, e.g. 1000,500 (default: header or max index)")
    p.add_argument("--zero-indexed", action="store_true", help="input indices start at 0")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kronpress", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"kronpress {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    ap.add_argument("--threads", type=int, help="cap BLAS threads (default: $KRONPRESS_THREADS; 1 is bitwise deterministic)")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", help="train a model and slice orders for a sparse array")
    _data_args(c)
    c.add_argument("--out-dir", help="artifact directory (default: <input stem>.kronpress)")
    c.add_argument("--hidden", type=int, default=30)
    c.add_argument("--lr", type=float, default=1e-2)
    c.add_argument("--gamma", type=_gamma, default=10.0, help="acceptance sharpness; 'inf' = hill climbing")
    c.add_argument("--tp", type=int, default=2, help="reorder rounds per epoch")
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--patience", type=int, default=100)
    c.add_argument("--batch-size", type=int, default=1 << 12)
    c.add_argument("--max-epochs", type=int)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--init", choices=("shingle", "random"), help="initial slice order (default: shingle for matrices)")
    c.add_argument("--no-minhash", action="store_true", help="pair slices uniformly at random")
    c.add_argument("--fixed-q", action="store_true", help="freeze the scale at the data's square sum")
    c.add_argument("--no-autoregressive", action="store_true", help="train the position-independent seed baseline")
    c.add_argument("--plot", action="store_true", help="also write loss.png")

    q = sub.add_parser("query", help="approximate entries at original positions")
    q.add_argument("--model", required=True)
    q.add_argument("--orders", required=True)
    q.add_argument("--positions", required=True, help="one 1-based position per line; a trailing value column is ignored")
    q.add_argument("--output", help="TSV path (default: stdout)")

    e = sub.add_parser("evaluate", help="report squared error and fitness against data")
    e.add_argument("--model", required=True)
    e.add_argument("--orders", required=True)
    _data_args(e, flag="--data")
    e.add_argument("--dense-cap", type=int, default=1 << 22,
                   help="cross-check by enumerating every padded cell when there are at most this many")
    e.add_argument("--manifest", help="verify the data checksum recorded at compress time")
    e.add_argument("--output", help="JSON path (default: stdout)")

    x = sub.add_parser("export", help="decompress every logical cell above a threshold to COO")
    x.add_argument("--model", required=True)
    x.add_argument("--orders", required=True)
    x.add_argument("--output", required=True)
    x.add_argument("--threshold", type=float, default=0.0, help="keep cells whose approximation exceeds this")
    x.add_argument("--dense-cap", type=int, default=1 << 22)

    g = sub.add_parser("generate", help="R-MAT style synthetic sparse array")
    g.add_argument("--p", type=float, default=0.8, help="skew in (0.5, 1)")
    g.add_argument("--order", type=int, default=3)
    g.add_argument("--logdims", type=_int_list, default=[4, 4, 4])
    g.add_argument("--sum", type=int, default=10_000, help="total mass (unit increments)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", help="COO path (default: stdout)")

    b = sub.add_parser("bench", help="timing benchmarks")
    bsub = b.add_subparsers(dest="bench", required=True)
    bi = bsub.add_parser("inference", help="per-entry latency vs matrix size")
    bi.add_argument("--min-log", type=int, default=7)
    bi.add_argument("--max-log", type=int, default=16)
    bi.add_argument("--samples", type=int, default=100_000)
    bi.add_argument("--reps", type=int, default=5)
    bi.add_argument("--hidden", type=int, default=30)
    bi.add_argument("--seed", type=int, default=0)
    bi.add_argument("--output", help="TSV path (default: stdout)")
    bi.add_argument("--plot", help="PNG path for the latency figure")
    for name, helptext in (("epochs", "epoch time vs non-zeros"), ("hidden", "epoch time vs hidden size")):
        be = bsub.add_parser(name, help=helptext)
        _data_args(be, required=False)
        be.add_argument("--synthetic-nnz", type=int, default=1 << 16,
                        help="without --input: uniform random 4096x4096 matrix with this many non-zeros")
        be.add_argument("--epochs", type=int, default=3, help="timed epochs per point (after one warm-up)")
        be.add_argument("--seed", type=int, default=0)
        be.add_argument("--output", help="TSV path (default: stdout)")
        be.add_argument("--plot", help="PNG path for the figure")
        if name == "epochs":
            be.add_argument("--fractions", type=_float_list, default=[0.125, 0.25, 0.5, 1.0])
            be.add_argument("--hidden", type=int, default=30)
        else:
            be.add_argument("--hiddens", type=_int_list, default=[15, 30, 60])
    return ap


def cmd_compress(args) -> int:
    data = read_data(args.input, args.order, args.dims, args.zero_indexed)
    config = TrainConfig(
        hidden=args.hidden, lr=args.lr, gamma=args.gamma, tp=args.tp, tol=args.tol,
        patience=args.patience, batch_size=args.batch_size, seed=args.seed,
        max_epochs=args.max_epochs, init=args.init, no_minhash=args.no_minhash,
        fixed_q=args.fixed_q, no_autoregressive=args.no_autoregressive,
    )
    out = Path(args.out_dir or Path(args.input).with_suffix(".kronpress").name)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = train(data, config)
    wall = time.perf_counter() - t0

    paths = {k: out / v for k, v in
             (("model", "model.json"), ("orders", "orders.txt"), ("history", "history.tsv"))}
    result.model.save(paths["model"])
    save_orders(result.orders, paths["orders"])
    write_history(result.history, paths["history"])
    final = report(result.best_loss, data)
    manifest = RunManifest(
        input_path=str(Path(args.input).resolve()), input_sha256=sha256_file(args.input),
        config=config, final_loss=result.best_loss, epochs=result.epochs, converged=result.converged,
        wall_seconds=wall, model_path=paths["model"].name, orders_path=paths["orders"].name,
        history_path=paths["history"].name, version=__version__, dims=list(data.dims),
        nnz=data.nnz, fitness=final.fitness,
    )
    manifest.save(out / "manifest.json")
    if args.plot:
        from .plotting import plot_loss_history

        plot_loss_history(result.history, out / "loss.png")
    print(json.dumps({"out_dir": str(out), "final_loss": result.best_loss, "fitness": final.fitness,
                      "epochs": result.epochs, "converged": result.converged}))
    return 0


def load_artifacts(model_path: str, orders_path: str):
    model = load_model(_existing(model_path, "model"))
    orders = load_orders(_existing(orders_path, "orders"))
    expected = tuple(int(n - 1).bit_length() for n in orders.dims)
    if expected != model.layout.padded_log_dims:
        raise DataError(f"orders dims {orders.dims} do not fit model padded log dims "
                        f"{model.layout.padded_log_dims}")
    return model, orders


def model_positions(orders, original0: np.ndarray) -> np.ndarray:
    """Model-space positions of 0-based logical positions."""
    inv = orders.inverse_perms()
    return np.stack([inv[d][original0[:, d]] for d in range(len(inv))], axis=1) if original0.size else original0


def read_positions(path: Path, orders) -> np.ndarray:
    D = len(orders.dims)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "%#":
            continue
        tok = s.split()
        if len(tok) not in (D, D + 1):
            raise DataError(f"{path}:{lineno}: expected {D} indices")
        try:
            pos = [int(t) for t in tok[:D]]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer index") from None
        for d, (i, n) in enumerate(zip(pos, orders.dims)):
            if not 1 <= i <= n:
                raise DataError(f"{path}:{lineno}: index {i} of mode {d + 1} outside logical range 1..{n}")
        rows.append(pos)
    return np.array(rows, dtype=np.int64).reshape(-1, D)


def cmd_query(args) -> int:
    model, orders = load_artifacts(args.model, args.orders)
    pos = read_positions(_existing(args.positions, "positions"), orders)
    approx = model.predict(model_positions(orders, pos - 1)) if pos.shape[0] else np.zeros(0)
    with _open_out(args.output) as fh:
        for row, a in zip(pos, approx):
            fh.write("\t".join(map(str, row)) + f"\t{float(a)!r}\n")
    return 0


def cmd_evaluate(args) -> int:
    model, orders = load_artifacts(args.model, args.orders)
    data = read_data(args.data, args.order, args.dims, args.zero_indexed)
    if args.manifest:
        man = RunManifest.load(_existing(args.manifest, "manifest"))
        if not man.verify_input(args.data):
            raise DataError(f"{args.data}: checksum differs from the one recorded in {args.manifest}")
    if tuple(data.padded_log_dims) != model.layout.padded_log_dims:
        raise DataError(f"data padded log dims {data.padded_log_dims} differ from model's "
                        f"{model.layout.padded_log_dims}")
    if tuple(data.dims) != orders.dims:
        raise DataError(f"data dims {data.dims} differ from orders dims {orders.dims}")
    sparse = report(loss(model, data, orders), data)
    out = {"sq_error": sparse.sq_error, "fitness": sparse.fitness, "nnz": data.nnz,
           "padded_cells": math.prod(data.padded_dims)}
    if math.prod(data.padded_dims) <= args.dense_cap:
        ordered = SparseArray(data.padded_dims, model_positions(orders, data.indices), data.values)
        dense = exact_error(ordered, lambda p1: model.predict(p1 - 1), args.dense_cap)
        out["dense_sq_error"] = dense.sq_error
        out["dense_fitness"] = dense.fitness
    with _open_out(args.output) as fh:
        fh.write(json.dumps(out) + "\n")
    return 0


def cmd_export(args) -> int:
    model, orders = load_artifacts(args.model, args.orders)
    cells = math.prod(orders.dims)
    if cells > args.dense_cap:
        raise DataError(f"{cells} logical cells exceed --dense-cap {args.dense_cap}")
    grid = np.indices(orders.dims).reshape(len(orders.dims), -1).T
    approx = model.predict(model_positions(orders, grid))
    keep = approx > args.threshold
    save_coo(SparseArray(orders.dims, grid[keep], approx[keep]), args.output)
    log.info("exported %d of %d cells", int(keep.sum()), cells)
    return 0


def cmd_generate(args) -> int:
    cfg = RmatConfig(p=args.p, order=args.order, log_dims=tuple(args.logdims), total=args.sum, seed=args.seed)
    data = rmat_generate(cfg)
    if args.output:
        save_coo(data, args.output)
    else:
        sys.stdout.write("# " + " ".join(map(str, data.dims)) + "\n")
        for row, v in zip(data.indices + 1, data.values):
            sys.stdout.write(" ".join(map(str, row)) + f" {float(v)!r}\n")
    return 0


def _bench_data(args) -> SparseArray:
    if args.input:
        return read_data(args.input, args.order, args.dims, args.zero_indexed)
    return uniform_sparse((1 << 12, 1 << 12), args.synthetic_nnz, np.random.default_rng(args.seed))


def cmd_bench(args) -> int:
    from . import plotting

    if args.bench == "inference":
        rows = bench_inference(args.min_log, args.max_log, args.samples, args.reps, args.hidden, args.seed)
        if args.plot and rows:
            plotting.plot_inference(rows, args.plot)
    elif args.bench == "epochs":
        rows = bench_epoch_scaling(_bench_data(args), args.fractions,
                                   TrainConfig(hidden=args.hidden, seed=args.seed), args.epochs, args.seed)
        if args.plot:
            plotting.plot_epoch_scaling(rows, args.plot)
    else:
        rows = bench_hidden(_bench_data(args), args.hiddens, TrainConfig(seed=args.seed), args.epochs)
    with _open_out(args.output) as fh:
        write_tsv(rows, fh)
    return 0


@contextlib.contextmanager
def _open_out(path: str | None):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


COMMANDS = {
    "compress": cmd_compress,
    "query": cmd_query,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
    "generate": cmd_generate,
    "bench": cmd_bench,
}


def thread_limit(arg: int | None):
    n = arg
    if n is None and os.environ.get("KRONPRESS_THREADS"):
        try:
            n = int(os.environ["KRONPRESS_THREADS"])
        except ValueError:
            raise UsageError(f"KRONPRESS_THREADS must be an integer, got {os.environ['KRONPRESS_THREADS']!r}")
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kronpress: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError) as exc:
        print(f"kronpress: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
