"""Synthetic task: vMF latent on the circle pushed through an invertible MLP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import i0e

from ..ndmath import DomainError
from .priors import ConfigurationError, PriorSpec
from .vmf import sample_vmf_circle

PAPER_MATRIX = np.array([[0.5, 0.2], [0.0, 0.8]])
LEAKY_SLOPE = 0.2


def _leaky(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_inv(x):
    return np.where(x > 0, x, x / LEAKY_SLOPE)


class InvertibleMLP:
    """Square leaky-ReLU network ``z -> y`` with an exact inverse.

    Each layer is ``h -> leaky(W h)``; ``W`` has its singular values clipped to
    ``[1 / cond_max, 1]`` so every layer is invertible and well conditioned.
    Per-layer bounds still let five layers compound into a map whose
    Jacobian condition number reaches 1e4 on parts of the circle, so draws
    whose end-to-end conditioning exceeds ``jacobian_cond_max`` are redrawn.
    """

    MAX_DRAWS = 10_000

    def __init__(self, weights):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.inverses = [np.linalg.inv(w) for w in self.weights]

    @classmethod
    def random(cls, seed, n_layers=5, dim=2, cond_max=10.0, jacobian_cond_max=150.0):
        if cond_max < 1:
            raise ConfigurationError("cond_max must be >= 1")
        if jacobian_cond_max is not None and jacobian_cond_max < 1:
            raise ConfigurationError("jacobian_cond_max must be >= 1 (or None to disable)")
        rng = np.random.default_rng(seed)
        for _ in range(cls.MAX_DRAWS):
            weights = []
            for _ in range(n_layers):
                u, s, vt = np.linalg.svd(rng.standard_normal((dim, dim)))
                weights.append(u @ np.diag(np.clip(s, 1.0 / cond_max, 1.0)) @ vt)
            net = cls(weights)
            if jacobian_cond_max is None or dim != 2 or net.circle_conditioning() <= jacobian_cond_max:
                return net
        raise ConfigurationError(f"no decoder with Jacobian condition <= {jacobian_cond_max} "
                                 f"in {cls.MAX_DRAWS} draws")

    def jacobians(self, z):
        """Per-row Jacobians ``dy/dz``, shape ``(n, dim, dim)``."""
        h = np.atleast_2d(np.asarray(z, dtype=np.float64))
        jac = np.broadcast_to(np.eye(h.shape[1]), (len(h), h.shape[1], h.shape[1]))
        for w in self.weights:
            pre = h @ w.T
            slope = np.where(pre > 0, 1.0, LEAKY_SLOPE)
            jac = slope[:, :, None] * (w[None] @ jac)
            h = _leaky(pre)
        return jac

    def circle_conditioning(self, n=4096) -> float:
        """Worst Jacobian condition number over ``n`` points of the unit circle.

        The map is positively homogeneous, so this covers every direction.
        """
        theta = (np.arange(n) + 0.5) * (2.0 * np.pi / n)
        return float(np.linalg.cond(self.jacobians(np.stack([np.cos(theta), np.sin(theta)], axis=1))).max())

    def __call__(self, z):
        h = np.asarray(z, dtype=np.float64)
        for w in self.weights:
            h = _leaky(h @ w.T)
        return h

    def inverse(self, y):
        h = np.asarray(y, dtype=np.float64)
        for w_inv in reversed(self.inverses):
            h = _leaky_inv(h) @ w_inv.T
        return h

    def condition_numbers(self):
        return [np.linalg.cond(w) for w in self.weights]


@dataclass
class SyntheticModel:
    """Generator ``phi -> z ~ vMF(A phi, kappa) -> y = MLP(z)``."""

    matrix: np.ndarray
    kappa: float
    decoder: InvertibleMLP
    redundant: bool = False
    decoder_seed: int = 0
    cond_max: float = 10.0
    jacobian_cond_max: float | None = 150.0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (2, 2) or abs(np.linalg.det(self.matrix)) < 1e-12:
            raise ConfigurationError("A must be an invertible 2x2 matrix")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be non-negative")

    @classmethod
    def build(cls, kappa, matrix=PAPER_MATRIX, redundant=False, decoder_seed=0, cond_max=10.0,
              jacobian_cond_max=150.0):
        decoder = InvertibleMLP.random(decoder_seed, cond_max=cond_max, jacobian_cond_max=jacobian_cond_max)
        return cls(matrix, float(kappa), decoder, redundant, int(decoder_seed), float(cond_max),
                   None if jacobian_cond_max is None else float(jacobian_cond_max))

    kind = "synthetic"

    @property
    def prior(self) -> PriorSpec:
        return PriorSpec.circle(self.matrix, redundant=self.redundant)

    @property
    def param_dim(self) -> int:
        return 3 if self.redundant else 2

    @property
    def obs_dim(self) -> int:
        return 2

    def generator(self, phi) -> np.ndarray:
        """True generating function ``g(phi) = A phi_eff`` (unit rows on the prior support)."""
        return self.prior.effective(phi) @ self.matrix.T

    def constraint(self, y) -> np.ndarray:
        """True constraint function ``f(y) = MLP^{-1}(y)``."""
        return self.decoder.inverse(np.atleast_2d(y))

    def fields(self) -> dict:
        return {
            "kappa": self.kappa,
            "matrix": self.matrix.ravel().tolist(),
            "redundant": self.redundant,
            "decoder_seed": self.decoder_seed,
            "cond_max": self.cond_max,
            "jacobian_cond_max": self.jacobian_cond_max,
        }


def synthetic_generate(model: SyntheticModel, phi, seed):
    """Draw one observation; returns ``(y, z)``.  ``phi_R`` never affects ``y``."""
    phi = np.asarray(phi, dtype=np.float64).reshape(1, -1)
    if phi.shape[1] != model.param_dim:
        raise DomainError(f"expected parameter dim {model.param_dim}, got {phi.shape[1]}")
    mean = model.generator(phi)[0]
    mean = mean / np.linalg.norm(mean)
    z = sample_vmf_circle(mean, model.kappa, 1, seed)[0]
    return model.decoder(z[None, :])[0], z


def synthetic_generate_batch(model: SyntheticModel, phis, seeds):
    """Vectorized over records; each record uses its own seed."""
    pairs = [synthetic_generate(model, p, s) for p, s in zip(np.atleast_2d(phis), seeds)]
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def synthetic_log_ratio(model: SyntheticModel, y, phi) -> np.ndarray:
    """Exact ``log p(phi|y) / p(phi)`` for every pair of rows (broadcast ``y`` over ``phi``)."""
    f = model.constraint(y)
    if np.any(np.abs(np.linalg.norm(f, axis=1) - 1.0) > 1e-6):
        raise DomainError("observation is not in the decoder image of the unit circle")
    g = model.generator(phi)
    k = model.kappa
    return k * (np.sum(f * g, axis=1) - 1.0) - np.log(i0e(k))


def synthetic_true_posterior(model: SyntheticModel, y, phi) -> np.ndarray:
    """``p(phi|y) = (2 pi / C_kappa) exp(kappa f(y).g(phi)) p(phi)`` with ``C_kappa = 2 pi I0(kappa)``."""
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    prior = model.prior
    dens = prior.density(phi)
    out = np.zeros(len(phi))
    on = dens > 0
    if np.any(on):
        y = np.atleast_2d(y)
        out[on] = np.exp(synthetic_log_ratio(model, y, phi[on])) * dens[on]
    return out
