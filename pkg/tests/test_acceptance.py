"""Acceptance criteria, one or more tests per criterion.

Test names carry the criterion number (``test_criterion_NN_...``); the
conftest hook turns their outcomes into one PASS/FAIL/SKIP line each.
"""

import math
import os

import numpy as np
import pytest

from kronpress.baselines import RmatConfig, SeedModel, rmat_generate, uniform_sparse
from kronpress.bench import bench_hidden, bench_inference, nested_subsets, time_epochs
from kronpress.codec import ModeLayout, encode
from kronpress.model import KronModel
from kronpress.reorder import accept, compute_shingles, init_orders, random_bijections, update_order
from kronpress.store import OrderState, SparseArray, load_coo, report
from kronpress.training import TrainConfig, loss, train
import oracles

# Epoch budget standing in for convergence on the criterion 10/11 runs; the
# slow learn-rate tail never meets the stall rule inside the runtime budget.
ABLATION_EPOCHS = 600
SEEDS = (0, 1, 2)


def random_small_instance(rng, order):
    while True:
        lds = tuple(int(v) for v in rng.integers(1, 5 if order == 2 else 4, size=order))
        if sum(lds) <= 10:
            break
    dims = tuple(int(rng.integers((1 << l) // 2 + 1, (1 << l) + 1)) for l in lds)
    cells = math.prod(dims)
    data = uniform_sparse(dims, int(rng.integers(1, cells // 2 + 2)), rng, integer_values=False)
    return data


@pytest.mark.criterion(1, "encoding goldens")
def test_criterion_01_encoding_goldens(detail):
    first = encode((3, 4), (3, 3)).steps
    second = encode((2, 3), (2, 3)).steps
    detail(f"{first}; {second}")
    assert first == ((1, 1), (2, 2), (1, 2))
    assert second == ((1, 1), (2, 2), (0, 1))


@pytest.mark.criterion(2, "square-sum identity on 200 random models")
def test_criterion_02_square_sum_identity(detail):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(200):
        order = int(rng.integers(2, 5))
        while True:
            lds = tuple(int(v) for v in rng.integers(0, 5, size=order))
            if 0 < sum(lds) <= 12:
                break
        layout = ModeLayout(lds)
        model = KronModel.init(layout, 4, rng) if trial % 2 else SeedModel.init(layout, rng)
        model.set_q(float(rng.uniform(0.2, 3.0)))
        approx = model.predict(oracles.all_cells(lds))
        brute = float(np.sum(approx * approx))
        worst = max(worst, abs(brute - model.square_sum()) / model.square_sum())
    detail(f"max rel err {worst:.2e}")
    assert worst <= 1e-8


@pytest.mark.criterion(3, "sparse loss equals dense loss on 100 instances")
def test_criterion_03_sparse_equals_dense(detail):
    rng = np.random.default_rng(303)
    worst = 0.0
    for trial in range(100):
        data = random_small_instance(rng, 2 if trial % 2 else 3)
        layout = ModeLayout(data.padded_log_dims)
        model = KronModel.init(layout, 4, rng)
        model.set_q(float(rng.uniform(0.3, 2.0)))
        orders = OrderState([rng.permutation(1 << l) for l in data.padded_log_dims], data.dims)
        dense = oracles.dense_loss(model, data, orders)
        worst = max(worst, abs(loss(model, data, orders) - dense) / dense)
    detail(f"max rel err {worst:.2e}")
    assert worst <= 1e-8


@pytest.mark.criterion(4, "finite-difference gradients for every parameter group")
@pytest.mark.parametrize("dims,kind", [((4, 8), "lstm"), ((3, 4, 4), "lstm"), ((2, 2, 2, 4), "lstm"),
                                       ((4, 8), "seed"), ((3, 4, 4), "seed")])
def test_criterion_04_gradients(dims, kind, detail):
    rng = np.random.default_rng(404)
    data = uniform_sparse(dims, math.prod(dims) // 3, rng, integer_values=False)
    layout = ModeLayout(data.padded_log_dims)
    model = KronModel.init(layout, 3, rng) if kind == "lstm" else SeedModel.init(layout, rng)
    model.set_q(float(rng.uniform(0.5, 1.5)))
    worst = oracles.finite_difference_errors(model, layout.tokens(data.indices), data.values, 0.5)
    assert set(worst) == set(model.params)
    top = max(worst.values())
    detail(f"{kind}{dims} max rel {top:.1e}")
    assert top < 1e-4, worst


@pytest.mark.criterion(5, "hill-climb monotonicity over 200 updates")
def test_criterion_05_hill_climb(detail):
    rng = np.random.default_rng(505)
    data = uniform_sparse((64, 64), 600, rng, integer_values=False)
    model = KronModel.init(ModeLayout(data.padded_log_dims), 8, rng)
    model.set_q(float(data.value_sq_sum ** (1 / model.layout.depth)))
    orders = init_orders(data, "random", rng)
    losses = [loss(model, data, orders)]
    for call in range(200):
        update_order(model, data, orders, call % 2, math.inf, rng)
        losses.append(loss(model, data, orders))
    rises = np.diff(losses)
    detail(f"{losses[0]:.3f} -> {losses[-1]:.3f}, max step {rises.max():.1e}")
    assert np.all(rises <= 1e-9 * losses[0])


@pytest.mark.criterion(6, "acceptance rate e^-1 +- 0.01")
def test_criterion_06_acceptance_rate(detail):
    rng = np.random.default_rng(606)
    draws = 100_000
    rate = float(np.mean(accept(np.full(draws, 0.1), 10.0, rng.random(draws))))
    detail(f"rate {rate:.4f}")
    assert abs(rate - math.exp(-1)) <= 0.01


@pytest.mark.criterion(7, "shingle collisions track Jaccard")
def test_criterion_07_shingle_jaccard(detail):
    rng = np.random.default_rng(707)
    planted = {0.25: ({0, 1, 2, 3, 4}, {3, 4, 5, 6, 7}), 0.5: (set(range(6)), set(range(2, 8))),
               1.0: (set(range(5)), set(range(5)))}
    gaps = []
    for target, (a, b) in planted.items():
        assert oracles.jaccard(a, b) == target
        idx = np.array([[0, j] for j in sorted(a)] + [[1, j] for j in sorted(b)])
        data = SparseArray((2, 64), idx, np.ones(len(idx)))
        hits = 0
        for _ in range(2000):
            bij = random_bijections(data.padded_log_dims, 0, rng)
            sh = compute_shingles(data.indices, data.padded_log_dims, 0, bij).shingles
            hits += bool(sh[0, 0] == sh[1, 0])
        gaps.append((target, hits / 2000))
    detail(", ".join(f"J={t}: {r:.3f}" for t, r in gaps))
    for target, rate in gaps:
        assert abs(rate - target) <= 0.05


@pytest.fixture(scope="module")
def latency_rows():
    return bench_inference(7, 16, samples=100_000, reps=5, hidden=30, seed=0)


@pytest.mark.slow
@pytest.mark.criterion(8, "inference latency grows with log M")
def test_criterion_08_latency_log_linear(latency_rows, detail):
    logs = np.log2([r.size for r in latency_rows])
    lat = np.array([r.mean_latency_ns for r in latency_rows])
    slope, intercept = np.polyfit(logs, lat, 1)
    fitted = slope * logs + intercept
    r2 = 1 - np.sum((lat - fitted) ** 2) / np.sum((lat - lat.mean()) ** 2)
    detail(f"R2 {r2:.3f}, {lat[0]:.0f}..{lat[-1]:.0f} ns")
    assert np.all(np.diff(lat) >= 0), lat.tolist()
    assert r2 >= 0.9


@pytest.mark.slow
@pytest.mark.criterion(8, "inference latency grows with log M")
def test_criterion_08_latency_ratio_band(latency_rows, detail):
    ratio = latency_rows[-1].mean_latency_ns / latency_rows[0].mean_latency_ns
    detail(f"ratio 2^16/2^7 {ratio:.2f}")
    assert ratio <= 16 / 7 * 2


@pytest.fixture(scope="module")
def epoch_scaling():
    rng = np.random.default_rng(909)
    base = uniform_sparse((4096, 4096), 1 << 18, rng)
    sizes = [1 << k for k in range(14, 19)]
    subsets = nested_subsets(base, sizes, rng)
    config = TrainConfig(seed=0)
    rows = [time_epochs(sub, config, epochs=3) for sub in subsets]
    return base, config, rows


@pytest.mark.slow
@pytest.mark.criterion(9, "epoch time near-linear in nnz")
def test_criterion_09_doubling_ratios(epoch_scaling, detail):
    _, _, rows = epoch_scaling
    model_ratios = [b.model_opt_s / a.model_opt_s for a, b in zip(rows, rows[1:])]
    order_ratios = [b.order_opt_s / a.order_opt_s for a, b in zip(rows, rows[1:])]
    detail("model " + ",".join(f"{r:.2f}" for r in model_ratios)
           + " order " + ",".join(f"{r:.2f}" for r in order_ratios))
    for r in model_ratios + order_ratios:
        assert 1.5 <= r <= 2.7


@pytest.mark.slow
@pytest.mark.criterion(9, "epoch time near-linear in nnz")
def test_criterion_09_repeatable(epoch_scaling, detail):
    base, config, rows = epoch_scaling
    again = time_epochs(base, config, epochs=3)
    spread = abs(again.total_s - rows[-1].total_s) / min(again.total_s, rows[-1].total_s)
    detail(f"repeat spread {spread:.1%}")
    assert spread <= 0.25


@pytest.mark.slow
@pytest.mark.criterion(9, "epoch time near-linear in nnz")
def test_criterion_09_hidden_sweep(epoch_scaling, detail):
    base, config, _ = epoch_scaling
    sub = nested_subsets(base, [1 << 15], np.random.default_rng(1))[0]
    rows = bench_hidden(sub, (15, 30, 60), config, epochs=3)
    ratio = rows[-1].epoch_s / rows[0].epoch_s
    detail(f"t(60)/t(15) {ratio:.2f}")
    assert ratio < 16


def trained_loss(data, seed, **flags):
    cfg = TrainConfig(seed=seed, max_epochs=ABLATION_EPOCHS, **flags)
    return train(data, cfg).best_loss


@pytest.mark.slow
@pytest.mark.criterion(10, "ablation order: full < N-A, N-H >= full")
def test_criterion_10_ablation(detail):
    full, no_hash, no_auto = [], [], []
    for seed in SEEDS:
        data = rmat_generate(RmatConfig(p=0.8, order=2, log_dims=(10, 10), total=12_000, seed=seed))
        full.append(trained_loss(data, seed))
        no_hash.append(trained_loss(data, seed, no_minhash=True))
        # the baseline stops on its own stall rule well inside this cap
        no_auto.append(train(data, TrainConfig(seed=seed, no_autoregressive=True, max_epochs=5000)).best_loss)
    means = {k: float(np.mean(v)) for k, v in (("full", full), ("N-H", no_hash), ("N-A", no_auto))}
    detail(", ".join(f"{k} {v:.0f}" for k, v in means.items()))
    assert means["full"] < means["N-A"]
    assert means["N-H"] >= means["full"]


@pytest.mark.slow
@pytest.mark.criterion(11, "fitness increases with R-MAT skew")
def test_criterion_11_skew_trend(detail):
    mean_fit = []
    for p in (0.65, 0.75, 0.85):
        fits = []
        for seed in SEEDS:
            data = rmat_generate(RmatConfig(p=p, order=3, log_dims=(4, 4, 4), total=10_000, seed=seed))
            fits.append(report(trained_loss(data, seed), data).fitness)
        mean_fit.append(float(np.mean(fits)))
    detail(", ".join(f"p={p}: {f:.3f}" for p, f in zip((0.65, 0.75, 0.85), mean_fit)))
    assert mean_fit[0] < mean_fit[1] < mean_fit[2]


EMAIL = os.environ.get("KRONPRESS_EMAIL")
EMAIL_ERROR = 58691.88


@pytest.fixture(scope="module")
def email_losses():
    data = load_coo(EMAIL)
    out = {}
    for gamma in (10.0, 1.0):
        cfg = TrainConfig(hidden=30, lr=1e-3, gamma=gamma, tp=2, seed=0)
        out[gamma] = train(data, cfg).best_loss
    return out


@pytest.mark.slow
@pytest.mark.criterion(12, "email reproduction")
@pytest.mark.skipif(not EMAIL, reason="set KRONPRESS_EMAIL to a COO copy of the email dataset")
def test_criterion_12_email_error(email_losses, detail):
    detail(f"gamma=10 error {email_losses[10.0]:.1f}")
    assert abs(email_losses[10.0] - EMAIL_ERROR) <= 0.2 * EMAIL_ERROR


@pytest.mark.slow
@pytest.mark.criterion(12, "email reproduction")
@pytest.mark.skipif(not EMAIL, reason="set KRONPRESS_EMAIL to a COO copy of the email dataset")
def test_criterion_12_email_gamma_ordering(email_losses, detail):
    detail(f"gamma=1 {email_losses[1.0]:.1f} vs gamma=10 {email_losses[10.0]:.1f}")
    assert email_losses[1.0] > email_losses[10.0]
