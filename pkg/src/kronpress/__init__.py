"""Constant-size lossy compression of sparse reorderable matrices and tensors."""

from .baselines import RmatConfig, SeedModel, rmat_generate, uniform_sparse
from .codec import ModeLayout, PositionCode, decode, digit, encode
from .model import KronModel, load_model
from .reorder import init_orders, update_order
from .store import (
    ApproxReport,
    DataError,
    OrderState,
    SparseArray,
    apply_order,
    exact_error,
    fitness,
    load_coo,
    load_orders,
    report,
    save_coo,
    save_orders,
)
from .training import TrainConfig, Trainer, loss, train

__version__ = "0.1.0"
