"""The claim embedding network, its ablations and the single-layer baseline.

Network (per context ``i`` in procedure / diagnosis / other)::

    c0_i = relu(Wf0_i x_i + bf0_i) * softmax(Wg0_i x_i + bg0_i)
    c1_i = relu(Wf1_i c0_i + bf1_i) * softmax(Wg1_i c0_i + bg1_i)
    h    = relu(BN0(W0 (c1_c * c1_d)) + BN1(W1 (c1_o * c1_c)) + BN2(W2 (c1_d * c1_o)))
    s_l  = relu(Ws_l s_{l-1} + bs_l),   s_0 = h,  l = 1..L
    t_j  = relu(Wt_j s_L + bt_j)        (or t_j = s_L without towers)

Heads: sigmoid (denial), two softmaxes (reason codes), linear (days).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import diffkit as dk
from .diffkit import BatchNormState, Tensor

CONTEXTS = ("c", "d", "o")
# pairs multiplied in the fusion layer, as indices into CONTEXTS
FUSION_PAIRS = ((0, 1), (2, 0), (1, 2))

VARIANTS = {
    "deepclaim1": dict(n_shared=2, towers=True, gates=True, multipliers=True, baseline=False),
    "deepclaim2": dict(n_shared=2, towers=False, gates=True, multipliers=True, baseline=False),
    "no_multipliers": dict(n_shared=0, towers=False, gates=True, multipliers=False, baseline=False),
    "no_gates": dict(n_shared=0, towers=False, gates=False, multipliers=False, baseline=False),
    "baseline_nn": dict(n_shared=0, towers=False, gates=False, multipliers=False, baseline=True),
}

VARIANT_LABELS = {
    "deepclaim1": "DeepClaim1(L=2,w/ towers)",
    "deepclaim2": "DeepClaim2(L=2,w/o towers)",
    "no_multipliers": "DeepClaim2(L=0,w/o towers)-multipliers",
    "no_gates": "DeepClaim2(L=0,w/o towers)-multipliers-gates",
    "baseline_nn": "Baseline, NN model",
}


@dataclass(frozen=True)
class ModelConfig:
    segments: tuple[int, int, int]
    n_claim_codes: int
    n_service_codes: int
    context_dim: int = 96
    embed_dim: int = 94
    n_shared: int = 2
    towers: bool = False
    gates: bool = True
    multipliers: bool = True
    baseline: bool = False
    lambdas: tuple[float, float, float] = (1.0, 1.0, 0.01)
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(int(s) for s in self.segments))
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        dims = (self.n_claim_codes, self.n_service_codes, self.context_dim, self.embed_dim)
        if min(dims) < 1:
            raise ValueError(f"all dimensions must be >= 1: {dims}")
        if len(self.segments) != 3 or min(self.segments) < 0 or sum(self.segments) < 1:
            raise ValueError(f"segments must be three non-negative widths, got {self.segments}")
        # zero-width blocks only make sense for the baseline, which reads the whole row
        if not self.baseline and min(self.segments) < 1:
            raise ValueError(f"gated variants need every segment >= 1, got {self.segments}")
        if self.n_shared < 0:
            raise ValueError("n_shared must be >= 0")
        if len(self.lambdas) != 3 or min(self.lambdas) < 0:
            raise ValueError(f"lambdas must be three non-negative weights, got {self.lambdas}")

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "ModelConfig":
        try:
            arch = VARIANTS[variant]
        except KeyError:
            raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}") from None
        return cls(**{**kwargs, **arch})

    @property
    def n_features(self) -> int:
        return sum(self.segments)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModelConfig":
        obj = dict(obj)
        obj["segments"] = tuple(obj["segments"])
        obj["lambdas"] = tuple(obj["lambdas"])
        return cls(**obj)


@dataclass
class ModelParams:
    """Named weight arrays plus batch-norm running statistics."""

    arrays: dict[str, np.ndarray]
    bn: dict[str, BatchNormState] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, {k: s.copy() for k, s in self.bn.items()})

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))

    def set_training(self, training: bool) -> None:
        for state in self.bn.values():
            state.training = training

    def to_json(self) -> dict:
        return {
            "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.arrays.items()},
            "bn": {k: s.to_json() for k, s in self.bn.items()},
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ModelParams":
        arrays = {k: np.asarray(v["data"], float).reshape(v["shape"]) for k, v in obj["arrays"].items()}
        return cls(arrays, {k: BatchNormState.from_json(s) for k, s in obj["bn"].items()})


@dataclass
class Prediction:
    p_denial: np.ndarray
    claim_code_dist: np.ndarray
    service_code_dist: np.ndarray
    response_days: np.ndarray


@dataclass
class Targets:
    """Batch of targets: ``y0 (B,)``, ``y1 (B, K1)``, ``y2 (B, K2)``, ``y3 (B,)``."""

    y0: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, float)
        self.y1 = np.atleast_2d(np.asarray(self.y1, float))
        self.y2 = np.atleast_2d(np.asarray(self.y2, float))
        self.y3 = np.asarray(self.y3, float)
        n = len(self.y0)
        if not (len(self.y1) == len(self.y2) == len(self.y3) == n):
            raise ValueError("target arrays differ in length")

    def __len__(self) -> int:
        return len(self.y0)

    def take(self, idx) -> "Targets":
        return Targets(self.y0[idx], self.y1[idx], self.y2[idx], self.y3[idx])

    @classmethod
    def from_vectors(cls, targets: Sequence) -> "Targets":
        return cls(
            np.array([t.y0 for t in targets], float),
            np.array([t.y1 for t in targets], float),
            np.array([t.y2 for t in targets], float),
            np.array([t.y3 for t in targets], float),
        )


def _he_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_params(config: ModelConfig) -> ModelParams:
    """He-uniform weights, zero biases, unit BN scale; seeded by ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    a: dict[str, np.ndarray] = {}

    def affine(name, fan_out, fan_in, bias=True):
        a[f"{name}.W"] = _he_uniform(rng, fan_out, fan_in)
        if bias:
            a[f"{name}.b"] = np.zeros(fan_out)

    k = config.context_dim
    bn = {}
    if config.baseline:
        affine("hidden", k, config.n_features)
        head_in = k
    else:
        for i, ctx in enumerate(CONTEXTS):
            for layer, fan_in in ((0, config.segments[i]), (1, k)):
                affine(f"ctx{layer}.{ctx}.f", k, fan_in)
                if config.gates:
                    affine(f"ctx{layer}.{ctx}.g", k, fan_in)
        for j in range(3):
            affine(f"fuse{j}", config.embed_dim, k, bias=False)
            a[f"bn{j}.gamma"] = np.ones(config.embed_dim)
            a[f"bn{j}.beta"] = np.zeros(config.embed_dim)
            bn[f"bn{j}"] = BatchNormState(config.embed_dim, momentum=config.bn_momentum, eps=config.bn_eps)
        for l in range(1, config.n_shared + 1):
            affine(f"shared{l}", config.embed_dim, config.embed_dim)
        if config.towers:
            for j in range(4):
                affine(f"tower{j}", config.embed_dim, config.embed_dim)
        head_in = config.embed_dim
    affine("head0", 1, head_in)
    affine("head1", config.n_claim_codes, head_in)
    affine("head2", config.n_service_codes, head_in)
    affine("head3", 1, head_in)
    return ModelParams(a, bn)


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class Forward:
    """Graph handles produced by one forward pass."""

    h: Tensor
    p_denial: Tensor
    claim_codes: Tensor
    service_codes: Tensor
    days: Tensor
    inputs: list[Tensor]
    params: dict[str, Tensor]
    gates: list[Tensor] = field(default_factory=list)

    def prediction(self) -> Prediction:
        return Prediction(
            self.p_denial.value.copy(),
            self.claim_codes.value.copy(),
            self.service_codes.value.copy(),
            self.days.value.copy(),
        )


def _leaves(params: ModelParams) -> dict[str, Tensor]:
    return {name: Tensor(v, requires_grad=True, name=name) for name, v in params.arrays.items()}


def _input_leaf(x, name: str, requires_grad: bool) -> Tensor:
    if sp.issparse(x):
        if requires_grad:
            x = x.toarray()
        else:
            return Tensor(x, name=name)
    return Tensor(np.atleast_2d(np.asarray(x, float)), requires_grad=requires_grad, name=name)


def as_segments(X, segments: Sequence[int]) -> list:
    """Accept a ``(B, D)`` matrix or an already-split triple of blocks."""
    if isinstance(X, (list, tuple)):
        if len(X) != 3:
            raise ValueError("expected three segment blocks")
        return list(X)
    from .featurize import split_segments

    if not sp.issparse(X):
        X = np.atleast_2d(np.asarray(X, float))
    return split_segments(X, segments)


def gated_context(x: Tensor, layer: int, ctx: str, P: Mapping[str, Tensor], config: ModelConfig):
    """One gated context layer; returns ``(c, gate)`` (``gate`` is None when gates are off)."""
    pre = f"ctx{layer}.{ctx}"
    f = dk.relu(dk.dense(x, P[f"{pre}.f.W"], P[f"{pre}.f.b"]))
    if not config.gates:
        return f, None
    gate = dk.softmax(dk.dense(x, P[f"{pre}.g.W"], P[f"{pre}.g.b"]))
    return dk.hadamard(f, gate), gate


def fuse(contexts: Sequence[Tensor], P: Mapping[str, Tensor], bn: Mapping[str, BatchNormState], config: ModelConfig) -> Tensor:
    """Combine the three context vectors into the claim embedding ``h``."""
    if len({c.shape for c in contexts}) != 1:
        raise dk.ShapeError(f"context shapes differ: {[c.shape for c in contexts]}")
    terms = []
    for j in range(3):
        if config.multipliers:
            a, b = FUSION_PAIRS[j]
            z = dk.hadamard(contexts[a], contexts[b])
        else:
            z = contexts[j]
        proj = dk.dense(z, P[f"fuse{j}.W"])
        terms.append(dk.batchnorm(proj, P[f"bn{j}.gamma"], P[f"bn{j}.beta"], bn[f"bn{j}"]))
    return dk.relu(dk.add(*terms))


def _heads(t: Sequence[Tensor], P: Mapping[str, Tensor]):
    p = dk.squeeze_last(dk.sigmoid(dk.dense(t[0], P["head0.W"], P["head0.b"])))
    q1 = dk.softmax(dk.dense(t[1], P["head1.W"], P["head1.b"]))
    q2 = dk.softmax(dk.dense(t[2], P["head2.W"], P["head2.b"]))
    days = dk.squeeze_last(dk.dense(t[3], P["head3.W"], P["head3.b"]))
    return p, q1, q2, days


def forward(params: ModelParams, X, config: ModelConfig, *, training: bool = False, input_grad: bool = False) -> Forward:
    """Run the network on a batch.

    ``X`` is a ``(B, D)`` sparse or dense matrix with columns
    ``[x_c | x_d | x_o]`` (or a triple of those blocks).  With
    ``input_grad`` the inputs become differentiable dense leaves.
    """
    if config.baseline:
        return baseline_forward(params, X, config, input_grad=input_grad)
    params.set_training(training)
    P = _leaves(params)
    blocks = as_segments(X, config.segments)
    inputs = [_input_leaf(b, f"x_{ctx}", input_grad) for b, ctx in zip(blocks, CONTEXTS)]
    for leaf, n in zip(inputs, config.segments):
        if leaf.shape[1] != n:
            raise dk.ShapeError(f"input {leaf.name} has {leaf.shape[1]} columns, expected {n}")
    gates = []
    contexts = []
    for x, ctx in zip(inputs, CONTEXTS):
        c = x
        for layer in (0, 1):
            c, g = gated_context(c, layer, ctx, P, config)
            if g is not None:
                gates.append(g)
        contexts.append(c)
    h = fuse(contexts, P, params.bn, config)
    s = h
    for l in range(1, config.n_shared + 1):
        s = dk.relu(dk.dense(s, P[f"shared{l}.W"], P[f"shared{l}.b"]))
    if config.towers:
        t = [dk.relu(dk.dense(s, P[f"tower{j}.W"], P[f"tower{j}.b"])) for j in range(4)]
    else:
        t = [s] * 4
    p, q1, q2, days = _heads(t, P)
    return Forward(h, p, q1, q2, days, inputs, P, gates)


def baseline_forward(params: ModelParams, X, config: ModelConfig, *, input_grad: bool = False) -> Forward:
    """Bag-of-features baseline: one ReLU hidden layer over the concatenated input."""
    P = _leaves(params)
    if isinstance(X, (list, tuple)):
        X = sp.hstack(X, format="csr") if any(sp.issparse(b) for b in X) else np.hstack(X)
    x = _input_leaf(X, "x", input_grad)
    if x.shape[1] != config.n_features:
        raise dk.ShapeError(f"input has {x.shape[1]} columns, expected {config.n_features}")
    hidden = dk.relu(dk.dense(x, P["hidden.W"], P["hidden.b"]))
    p, q1, q2, days = _heads([hidden] * 4, P)
    return Forward(hidden, p, q1, q2, days, [x], P)


def predict(params: ModelParams, X, config: ModelConfig, batch_size: int = 1024) -> Prediction:
    """Evaluation-mode predictions, computed in chunks."""
    n = X.shape[0]
    parts = []
    for start in range(0, n, batch_size):
        parts.append(forward(params, X[start : start + batch_size], config, training=False).prediction())
    return Prediction(*(np.concatenate([getattr(p, f) for p in parts]) for f in Prediction.__dataclass_fields__))


# ---------------------------------------------------------------------------
# objective

LOSS_NAMES = ("bce", "cce_claim", "cce_service", "l1")


def combine_losses(components: Sequence[float], lambdas: Sequence[float]) -> float:
    """``bce + l0 * cce_claim + l1 * cce_service + l2 * l1``."""
    bce, c1, c2, l1 = components
    return bce + lambdas[0] * c1 + lambdas[1] * c2 + lambdas[2] * l1


def total_loss(fwd: Forward, y: Targets, lambdas: Sequence[float]) -> tuple[Tensor, dict[str, float]]:
    """Weighted multi-task loss (batch mean) and its unweighted components."""
    parts = [
        dk.loss_bce(fwd.p_denial, y.y0),
        dk.loss_cce(fwd.claim_codes, y.y1),
        dk.loss_cce(fwd.service_codes, y.y2),
        dk.loss_l1(fwd.days, y.y3),
    ]
    loss = dk.weighted_sum(parts, (1.0, *lambdas))
    comps = {name: float(t.value) for name, t in zip(LOSS_NAMES, parts)}
    comps["total"] = float(loss.value)
    return loss, comps


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, config: ModelConfig, vocab_digest: str | None = None, extra=None) -> None:
    obj = {
        "format": "deepclaim-checkpoint/1",
        "config": config.to_json(),
        "vocab_sha256": vocab_digest,
        "params": params.to_json(),
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_checkpoint(path, vocab_digest: str | None = None) -> tuple[ModelParams, ModelConfig, dict]:
    """Load a checkpoint, refusing it if ``vocab_digest`` does not match."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != "deepclaim-checkpoint/1":
        raise CheckpointError(f"{path}: not a checkpoint file")
    saved = obj.get("vocab_sha256")
    if vocab_digest is not None and saved is not None and saved != vocab_digest:
        raise CheckpointError(f"{path}: vocabulary hash mismatch ({saved[:12]} != {vocab_digest[:12]})")
    return ModelParams.from_json(obj["params"]), ModelConfig.from_json(obj["config"]), obj.get("extra", {})


def with_lambdas(config: ModelConfig, lambdas) -> ModelConfig:
    return replace(config, lambdas=tuple(lambdas))
