"""scikit-learn compatible wrapper around the claim network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import explain as _explain
from .model import ModelConfig, Targets, VARIANTS, forward, predict
from .train import TrainConfig, train


class DeepClaimClassifier(ClassifierMixin, BaseEstimator):
    """Multi-task payer-response model with a scikit-learn interface.

    ``fit`` takes the denial flag as ``y``; the reason-code distributions
    and response days are optional keyword targets.  When they are left
    out the corresponding auxiliary targets are derived from ``y`` (a
    two-class denied / paid distribution, zero days).

    Parameters
    ----------
    variant : {"deepclaim1", "deepclaim2", "no_multipliers", "no_gates", "baseline_nn"}
        Architecture.
    segments : tuple of int or None
        Column counts of the procedure, diagnosis and other blocks of ``X``
        (``ClaimVectorizer.segments_``).  Required except for ``baseline_nn``.
    context_dim, embed_dim : int
        Width of the gated context vectors and of the fused embedding.
    lambdas : tuple of float
        Weights of the claim-code, service-code and response-day losses.
    learning_rate, beta1, beta2, batch_size, epochs : Adam / loop settings.
    random_state : int
        Seeds both initialization and batch shuffling.

    Attributes
    ----------
    params_ : ModelParams
    config_ : ModelConfig
    loss_curve_ : list of dict
        Per-epoch mean losses.
    classes_ : ndarray of shape (2,)
    n_features_in_ : int
    """

    def __init__(
        self,
        variant="deepclaim2",
        segments=None,
        context_dim=96,
        embed_dim=94,
        lambdas=(1.0, 1.0, 0.01),
        learning_rate=0.001,
        beta1=0.9,
        beta2=0.999,
        batch_size=64,
        epochs=30,
        random_state=0,
    ):
        self.variant = variant
        self.segments = segments
        self.context_dim = context_dim
        self.embed_dim = embed_dim
        self.lambdas = lambdas
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def _check_X(self, X, reset=False):
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if reset:
            self.n_features_in_ = X.shape[1]
        elif X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the model was fit with {self.n_features_in_}")
        return X

    def _targets(self, y, y_claim, y_service, y_days) -> Targets:
        if isinstance(y, Targets):
            return y
        y0 = np.asarray(y, dtype=float).ravel()
        if not np.isin(y0, (0, 1)).all():
            raise ValueError("y must hold 0/1 denial labels")
        fallback = np.column_stack([y0, 1.0 - y0])
        return Targets(
            y0,
            fallback if y_claim is None else y_claim,
            fallback if y_service is None else y_service,
            np.zeros_like(y0) if y_days is None else y_days,
        )

    def fit(self, X, y, *, y_claim=None, y_service=None, y_days=None):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        X = self._check_X(X, reset=True)
        targets = self._targets(y, y_claim, y_service, y_days)
        if len(targets) != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows, targets have {len(targets)}")
        segments = self.segments
        if segments is None:
            if self.variant != "baseline_nn":
                raise ValueError("segments must be given for the gated variants")
            segments = (X.shape[1], 0, 0)
        if sum(segments) != X.shape[1]:
            raise ValueError(f"segments {tuple(segments)} do not sum to {X.shape[1]} features")
        self.config_ = ModelConfig.for_variant(
            self.variant,
            segments=tuple(segments),
            n_claim_codes=targets.y1.shape[1],
            n_service_codes=targets.y2.shape[1],
            context_dim=self.context_dim,
            embed_dim=self.embed_dim,
            lambdas=tuple(self.lambdas),
            seed=self.random_state,
        )
        tc = TrainConfig(
            lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.random_state,
        )
        result = train(X, targets, self.config_, tc)
        self.params_ = result.params
        self.loss_curve_ = result.trace
        self.classes_ = np.array([0, 1])
        return self

    def _predict_all(self, X):
        check_is_fitted(self, "params_")
        X = self._check_X(X)
        return predict(self.params_, X, self.config_)

    def predict_proba(self, X):
        p = self._predict_all(X).p_denial
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def predict_response_days(self, X):
        return self._predict_all(X).response_days

    def predict_reason_codes(self, X):
        """``(claim_level, service_level)`` reason-code distributions."""
        pred = self._predict_all(X)
        return pred.claim_code_dist, pred.service_code_dist

    def embed(self, X):
        """Claim embeddings ``h`` (evaluation mode)."""
        check_is_fitted(self, "params_")
        X = self._check_X(X)
        return forward(self.params_, X, self.config_, training=False).h.value.copy()

    def explain(self, X, threshold=0.8, feature_names=None):
        """One :class:`SuspiciousnessReport` per row of ``X``."""
        check_is_fitted(self, "params_")
        X = self._check_X(X)
        grads, p = _explain.input_gradients(self.params_, X, self.config_)
        return [
            _explain.report_from_gradient(g, float(pi), self.config_, threshold, feature_names)
            for g, pi in zip(grads, p)
        ]

