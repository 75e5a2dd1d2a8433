"""scikit-learn style wrapper around training and inference."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .embednet import NetworkSpec, emulate, encode
from .inference import build_posterior, log_normalizers, sample_posterior
from .losses import LossConfig
from .simulators.dataset import Dataset
from .simulators.priors import PriorSpec
from .training import TrainConfig, train


class RatioEstimator(TransformerMixin, BaseEstimator):
    """Contrastive ratio estimator: ``X`` are observations, ``y`` their parameters.

    ``transform`` returns the data embedding; ``predict`` returns the
    posterior mean estimated over ``n_norm`` prior draws.
    """

    def __init__(self, prior=None, hidden_width=60, n_blocks=2, embed_dim=2, tau=0.5, loss="sym",
                 intra_weight=0.0, bank_capacity=0, epochs=2000, batch_size=256, lr=1e-3, weight_decay=5e-4,
                 val_fraction=0.1, val_interval=20, n_norm=10_000, random_state=0):
        self.prior = prior
        self.hidden_width = hidden_width
        self.n_blocks = n_blocks
        self.embed_dim = embed_dim
        self.tau = tau
        self.loss = loss
        self.intra_weight = intra_weight
        self.bank_capacity = bank_capacity
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.val_interval = val_interval
        self.n_norm = n_norm
        self.random_state = random_state

    def fit(self, X, y, augmenter=None):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        if not isinstance(self.prior, PriorSpec):
            raise ValueError("prior must be a PriorSpec")
        if y.shape[1] != self.prior.dim:
            raise ValueError(f"parameters have {y.shape[1]} columns, prior has dim {self.prior.dim}")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")
        n_val = max(1, int(round(self.val_fraction * len(X))))
        if len(X) - n_val < 2:
            raise ValueError("need at least two training pairs after the validation split")
        order = np.random.default_rng([int(self.random_state), 7]).permutation(len(X))
        seeds = np.zeros(len(X), dtype=np.uint64)
        data = Dataset(y, X, seeds).subset(order[n_val:])
        val = Dataset(y, X, seeds).subset(order[:n_val])
        config = TrainConfig(
            epochs=self.epochs, batch_size=min(self.batch_size, len(data)), lr=self.lr,
            weight_decay=self.weight_decay,
            loss=LossConfig(self.loss, self.tau, self.intra_weight, self.bank_capacity),
            seed=int(self.random_state), val_interval=self.val_interval,
        )
        specs = (NetworkSpec(X.shape[1], self.hidden_width, self.n_blocks, self.embed_dim),
                 NetworkSpec(y.shape[1], self.hidden_width, self.n_blocks, self.embed_dim))
        result = train(data, val, *specs, config, self.prior, augmenter)
        self.model_ = result.model
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = X.shape[1]
        return self

    def _obs(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def transform(self, X):
        X = self._obs(X)
        return encode(self.model_, X)

    def emulate(self, params):
        check_is_fitted(self, "model_")
        return emulate(self.model_, check_array(params))

    def log_ratio(self, X, params):
        """``log r(phi_i, y_i)`` for paired rows, self-normalized over prior draws."""
        X = self._obs(X)
        params = check_array(params)
        log_c = log_normalizers(self.model_, X, self.prior, self.n_norm, self.random_state)
        sim = np.sum(encode(self.model_, X) * emulate(self.model_, params), axis=1) / self.model_.tau
        return math.log(self.n_norm) + sim - log_c

    def predict(self, X):
        """Posterior mean of each observation, weighting shared prior draws by the ratio."""
        X = self._obs(X)
        draws = self.prior.sample(self.n_norm, np.random.default_rng(self.random_state))
        logits = encode(self.model_, X) @ emulate(self.model_, draws).T / self.model_.tau
        return softmax(logits, axis=1) @ draws

    def score(self, X, y):
        """Mean log posterior density of the true parameters (higher is better)."""
        params = check_array(y.reshape(len(y), -1) if np.ndim(y) == 1 else y)
        with np.errstate(divide="ignore"):
            return float(np.mean(self.log_ratio(X, params) + np.log(self.prior.density(params))))

    def sample_posterior(self, x, n_samples=100, random_state=None):
        x = self._obs(np.atleast_2d(x))
        seed = self.random_state if random_state is None else random_state
        est = build_posterior(self.model_, x[0], self.prior, self.n_norm, seed)
        return sample_posterior(est, count=n_samples, seed=[int(seed), 1]).samples
