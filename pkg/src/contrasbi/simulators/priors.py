"""Parameter priors: the transformed-circle prior and the uniform box."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ndmath import DomainError

CIRCLE = "circle"
BOX = "box"

# distance from the ellipse A^{-1} S^1 still counted as on-support
SUPPORT_TOL = 1e-9


class ConfigurationError(ValueError):
    """A simulator or prior was configured with invalid values."""


@dataclass(frozen=True)
class PriorSpec:
    """Prior over parameter vectors.

    ``kind == "circle"``: ``z`` uniform on the unit circle and ``phi = A^{-1} z``,
    so the support is an ellipse and the density with respect to its
    natural line measure is ``|det A| / (2 pi)``.

    ``kind == "box"``: independent uniforms on ``[low, high]``.

    With ``redundant=True`` a ``U(0, 1)`` coordinate is prepended, giving
    ``phi' = (phi_R, phi)``.
    """

    kind: str
    matrix: np.ndarray | None = None
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    redundant: bool = False
    _inv: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == CIRCLE:
            a = np.asarray(self.matrix, dtype=np.float64)
            if a.shape != (2, 2):
                raise ConfigurationError("circle prior needs a 2x2 matrix")
            if not np.isfinite(a).all() or abs(np.linalg.det(a)) < 1e-12:
                raise ConfigurationError("circle prior matrix is singular")
            object.__setattr__(self, "matrix", a)
            object.__setattr__(self, "_inv", np.linalg.inv(a))
        elif self.kind == BOX:
            lo = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
            hi = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ConfigurationError("box bounds must be equal-length vectors")
            if not np.all(lo < hi):
                raise ConfigurationError("box bounds need low < high per dimension")
            object.__setattr__(self, "low", lo)
            object.__setattr__(self, "high", hi)
        else:
            raise ConfigurationError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def circle(cls, matrix, redundant=False):
        return cls(CIRCLE, matrix=matrix, redundant=redundant)

    @classmethod
    def box(cls, low, high, redundant=False):
        return cls(BOX, low=low, high=high, redundant=redundant)

    @property
    def dim(self) -> int:
        base = 2 if self.kind == CIRCLE else len(self.low)
        return base + int(self.redundant)

    def effective(self, phi) -> np.ndarray:
        """Drop the redundant coordinate, if any."""
        phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
        return phi[:, 1:] if self.redundant else phi

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        if self.kind == CIRCLE:
            theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
            z = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            eff = z @ self._inv.T
        else:
            eff = rng.uniform(self.low, self.high, size=(count, len(self.low)))
        if self.redundant:
            red = rng.uniform(0.0, 1.0, size=(count, 1))
            return np.concatenate([red, eff], axis=1)
        return eff

    def in_support(self, phi) -> np.ndarray:
        phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
        if phi.shape[1] != self.dim:
            raise DomainError(f"expected parameters of dim {self.dim}, got {phi.shape[1]}")
        ok = np.all(np.isfinite(phi), axis=1)
        eff = self.effective(phi)
        if self.kind == CIRCLE:
            radius = np.linalg.norm(eff @ self.matrix.T, axis=1)
            ok &= np.abs(radius - 1.0) <= SUPPORT_TOL
        else:
            ok &= np.all((eff >= self.low) & (eff <= self.high), axis=1)
        if self.redundant:
            ok &= (phi[:, 0] >= 0.0) & (phi[:, 0] <= 1.0)
        return ok

    def density(self, phi) -> np.ndarray:
        """Prior density, zero off the support."""
        if self.kind == CIRCLE:
            value = abs(np.linalg.det(self.matrix)) / (2.0 * np.pi)
        else:
            value = 1.0 / np.prod(self.high - self.low)
        return np.where(self.in_support(phi), value, 0.0)

    def circle_points(self, theta) -> np.ndarray:
        """Effective parameters ``A^{-1}(cos t, sin t)`` on the circle prior support."""
        if self.kind != CIRCLE:
            raise ConfigurationError("circle_points needs a circle prior")
        theta = np.asarray(theta, dtype=np.float64)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1) @ self._inv.T

    def quadrature(self, n: int):
        """Nodes and weights integrating functions against the prior's base measure.

        For the circle prior the base measure is arc length of ``z = A phi``
        divided by ``|det A|``, so ``sum(w * density) == 1``.  For the box it
        is Lebesgue measure (midpoint rule, ``n`` nodes per dimension).  A
        redundant coordinate adds ``n`` midpoints on ``[0, 1]``.
        """
        if self.kind == CIRCLE:
            theta = (np.arange(n) + 0.5) * (2.0 * np.pi / n)
            nodes = self.circle_points(theta)
            weights = np.full(n, 2.0 * np.pi / n / abs(np.linalg.det(self.matrix)))
        else:
            axes = [lo + (np.arange(n) + 0.5) * (hi - lo) / n for lo, hi in zip(self.low, self.high)]
            mesh = np.meshgrid(*axes, indexing="ij")
            nodes = np.stack([m.ravel() for m in mesh], axis=1)
            weights = np.full(len(nodes), np.prod((self.high - self.low) / n))
        if self.redundant:
            red = (np.arange(n) + 0.5) / n
            nodes = np.concatenate(
                [np.repeat(red, len(nodes))[:, None], np.tile(nodes, (n, 1))], axis=1
            )
            weights = np.tile(weights, n) / n
        return nodes, weights

    def describe(self) -> dict:
        out = {"kind": self.kind, "redundant": self.redundant}
        if self.kind == CIRCLE:
            out["matrix"] = self.matrix.ravel().tolist()
        else:
            out["low"] = self.low.tolist()
            out["high"] = self.high.tolist()
        return out


def sample_prior(prior: PriorSpec, count: int, seed) -> np.ndarray:
    """Draw ``count`` parameter vectors as a ``(count, dim)`` array."""
    return prior.sample(count, np.random.default_rng(seed))
