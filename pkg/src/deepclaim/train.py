"""Mini-batch multi-task training with Adam."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from . import diffkit as dk
from .featurize import stack
from .model import LOSS_NAMES, ModelConfig, ModelParams, Targets, as_segments, forward, init_params, total_loss

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("epoch",) + LOSS_NAMES + ("total",)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    missing = set(params) - set(grads)
    if missing:
        raise KeyError(f"no gradient for parameters: {sorted(missing)}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name in params:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        params[name] -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return params, state


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[dict[str, float]]
    optimizer: AdamState


def train(
    X,
    y: Targets,
    model_config: ModelConfig,
    train_config: TrainConfig = TrainConfig(),
    params: ModelParams | None = None,
) -> TrainResult:
    """Fit the network on ``(X, y)``.

    ``X`` is a ``(n, D)`` matrix with columns ``[x_c | x_d | x_o]``.  When no
    initial ``params`` are given, they are drawn from ``model_config.seed``
    and the response-day bias starts at the training median.
    """
    n = X.shape[0]
    if n == 0:
        raise ValueError("training data is empty")
    if len(y) != n:
        raise ValueError(f"X has {n} rows but y has {len(y)}")
    if params is None:
        params = init_params(model_config)
        params.arrays["head3.b"][:] = np.median(y.y3)
    if not model_config.baseline:
        X = as_segments(X, model_config.segments)
    elif sp.issparse(X):
        X = sp.csr_matrix(X)

    rng = np.random.default_rng(train_config.seed)
    state = AdamState()
    trace = []
    bs = train_config.batch_size
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        sums = dict.fromkeys(LOSS_NAMES + ("total",), 0.0)
        for b, start in enumerate(range(0, n, bs)):
            idx = order[start : start + bs]
            xb = [blk[idx] for blk in X] if isinstance(X, list) else X[idx]
            yb = y.take(idx)
            try:
                fwd = forward(params, xb, model_config, training=True)
                loss, comps = total_loss(fwd, yb, model_config.lambdas)
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            if not np.isfinite(comps["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {comps}")
            grads = dk.backward(loss, wrt=fwd.params.values())
            adam_step(params.arrays, grads, state, train_config)
            for k in sums:
                sums[k] += comps[k] * len(idx)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
        trace.append(row)
        logger.debug("epoch %d total=%.5f", epoch, row["total"])
    params.set_training(False)
    return TrainResult(params, trace, state)


def train_pairs(pairs, model_config: ModelConfig, train_config: TrainConfig = TrainConfig()) -> TrainResult:
    """:func:`train` on a list of ``(ClaimVector, TargetVector)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("training data is empty")
    vectors, targets = zip(*pairs)
    return train(stack(vectors), Targets.from_vectors(targets), model_config, train_config)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([row["epoch"]] + [f"{row[k]:.10g}" for k in TRACE_COLUMNS[1:]])
