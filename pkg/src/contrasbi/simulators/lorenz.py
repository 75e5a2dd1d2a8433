"""Two-scale Lorenz 96 system with forcing ``F = sqrt(F1^2 + F2^2)``.

State layout: slow ``u`` has shape ``(..., K)``; fast ``v`` has shape
``(..., K*J)`` with flat index ``k*J + j``.  The fast neighbours ``j+1``,
``j+2`` and ``j-1`` run cyclically over the flat ring, so they cross into the
adjacent block at block edges.  An observation is a crop of ``T`` consecutive
states, each the concatenation ``[u, v]``, flattened row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .priors import ConfigurationError, PriorSpec


class DivergenceError(RuntimeError):
    """The integrated state became non-finite."""


class UnsupportedOperation(RuntimeError):
    """Operation not defined for this simulator kind."""


@dataclass
class Lorenz96Model:
    K: int = 8
    J: int = 4
    c: float = 10.0
    dt: float = 0.005
    warmup_steps: int = 400
    crop_steps: int = 64
    augment_mode: str = "crop"

    kind = "lorenz"

    def __post_init__(self):
        if self.K < 4:
            raise ConfigurationError("K must be >= 4")
        if self.J < 1:
            raise ConfigurationError("J must be >= 1")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not 1 <= self.crop_steps <= self.warmup_steps:
            raise ConfigurationError("need 1 <= crop_steps <= warmup_steps")
        if self.augment_mode not in ("crop", "fresh"):
            raise ConfigurationError("augment_mode must be 'crop' or 'fresh'")

    @classmethod
    def paper_scale(cls):
        return cls(K=36, J=10, warmup_steps=2000, crop_steps=250)

    @property
    def state_dim(self) -> int:
        return self.K * (self.J + 1)

    @property
    def obs_dim(self) -> int:
        return self.crop_steps * self.state_dim

    @property
    def param_dim(self) -> int:
        return 2

    def default_prior(self) -> PriorSpec:
        return PriorSpec.box([-15.0, -15.0], [15.0, 15.0])

    def fields(self) -> dict:
        return {
            "K": self.K,
            "J": self.J,
            "c": self.c,
            "dt": self.dt,
            "warmup_steps": self.warmup_steps,
            "crop_steps": self.crop_steps,
            "augment_mode": self.augment_mode,
        }


def lorenz_rhs(model: Lorenz96Model, u, v, forcing):
    """Time derivatives ``(du/dt, dv/dt)``; leading axes are batch axes."""
    K, J, c = model.K, model.J, model.c
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    forcing = np.asarray(forcing, dtype=np.float64)
    if forcing.ndim:
        forcing = forcing[..., None]
    vbar = v.reshape(v.shape[:-1] + (K, J)).mean(axis=-1)
    du = (
        -np.roll(u, 1, axis=-1) * (np.roll(u, 2, axis=-1) - np.roll(u, -1, axis=-1))
        - u
        + forcing
        - c * vbar
    )
    coupling = np.repeat(u, J, axis=-1) / J
    dv = c * (
        -np.roll(v, -1, axis=-1) * (np.roll(v, -2, axis=-1) - np.roll(v, 1, axis=-1))
        - v
        + coupling
    )
    return du, dv


def rk4_step(model, u, v, forcing, dt):
    k1u, k1v = lorenz_rhs(model, u, v, forcing)
    k2u, k2v = lorenz_rhs(model, u + 0.5 * dt * k1u, v + 0.5 * dt * k1v, forcing)
    k3u, k3v = lorenz_rhs(model, u + 0.5 * dt * k2u, v + 0.5 * dt * k2v, forcing)
    k4u, k4v = lorenz_rhs(model, u + dt * k3u, v + dt * k3v, forcing)
    return (
        u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u),
        v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
    )


def integrate(model, u0, v0, forcing, n_steps, dt=None, record=True):
    """Classical RK4.  Returns the ``n_steps`` states after each step as
    ``(..., n_steps, K*(J+1))`` when ``record`` else the final ``(u, v)``."""
    dt = model.dt if dt is None else dt
    u, v = np.asarray(u0, dtype=np.float64), np.asarray(v0, dtype=np.float64)
    states = []
    for step in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            u, v = rk4_step(model, u, v, forcing, dt)
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise DivergenceError(f"non-finite Lorenz 96 state at step {step + 1}")
        if record:
            states.append(np.concatenate([u, v], axis=-1))
    if not record:
        return u, v
    return np.stack(states, axis=-2)


def forcing_of(phi) -> np.ndarray:
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    if not np.isfinite(phi).all():
        raise ValueError("parameters must be finite")
    return np.hypot(phi[:, 0], phi[:, 1])


def _initial_state(model, rng):
    return rng.standard_normal(model.K), rng.standard_normal(model.K * model.J)


def _crop_offset(model, rng):
    return int(rng.integers(0, model.warmup_steps - model.crop_steps + 1))


def lorenz_trajectories(model: Lorenz96Model, phis, seeds) -> np.ndarray:
    """Full trajectories ``(N, warmup_steps, state_dim)``, one seed per record.

    Each record's generator first draws the initial condition (standard
    normal) and then the crop offset used by :func:`lorenz_generate`.
    """
    forcing = forcing_of(phis)
    rngs = [np.random.default_rng(int(s)) for s in seeds]
    ics = [_initial_state(model, r) for r in rngs]
    u0 = np.array([ic[0] for ic in ics])
    v0 = np.array([ic[1] for ic in ics])
    return integrate(model, u0, v0, forcing, model.warmup_steps)


def _source_offsets(model, seeds):
    offsets = []
    for s in seeds:
        rng = np.random.default_rng(int(s))
        _initial_state(model, rng)
        offsets.append(_crop_offset(model, rng))
    return np.array(offsets)


def crop(model, trajectory, offset) -> np.ndarray:
    return trajectory[offset : offset + model.crop_steps].reshape(-1)


def lorenz_generate_batch(model: Lorenz96Model, phis, seeds) -> np.ndarray:
    traj = lorenz_trajectories(model, phis, seeds)
    offsets = _source_offsets(model, seeds)
    return np.array([crop(model, t, o) for t, o in zip(traj, offsets)])


def lorenz_generate(model: Lorenz96Model, phi, seed) -> np.ndarray:
    """Integrate from a standard-normal initial state and return a random crop."""
    return lorenz_generate_batch(model, np.atleast_2d(phi), [seed])[0]


def _distinct_offset(model, rng, avoid):
    span = model.warmup_steps - model.crop_steps + 1
    if span < 2:
        raise UnsupportedOperation("crop augmentation needs warmup_steps > crop_steps")
    offset = int(rng.integers(0, span - 1))
    return offset + 1 if offset >= avoid else offset


def augment(model, y, phi, seed, source_seed=None):
    """Another view with the same parameters, hence the same posterior.

    ``crop`` mode re-integrates the source trajectory (needs ``source_seed``)
    and takes a crop at a different offset; ``fresh`` mode simulates from a
    new initial condition drawn from ``seed``.
    """
    if not isinstance(model, Lorenz96Model):
        raise UnsupportedOperation(f"augmentation is not defined for {getattr(model, 'kind', model)!r}")
    rng = np.random.default_rng(seed)
    if model.augment_mode == "fresh":
        fresh_seed = int(rng.integers(0, 2**63))
        return lorenz_generate(model, phi, fresh_seed)
    if source_seed is None:
        raise ValueError("crop augmentation needs the source record seed")
    traj = lorenz_trajectories(model, np.atleast_2d(phi), [source_seed])[0]
    avoid = _source_offsets(model, [source_seed])[0]
    out = crop(model, traj, _distinct_offset(model, rng, avoid))
    if y is not None and np.array_equal(out, np.asarray(y)):
        raise RuntimeError("augmented view coincides with the source observation")
    return out


class LorenzViews:
    """Cached trajectories for a dataset; draws random crops on demand.

    Used by training for the intra-domain loss and for per-epoch re-cropping.
    """

    def __init__(self, model: Lorenz96Model, phis, seeds):
        self.model = model
        self.trajectories = lorenz_trajectories(model, phis, seeds)
        self.offsets = _source_offsets(model, seeds)

    def __call__(self, indices, rng: np.random.Generator, distinct=True) -> np.ndarray:
        out = []
        for i in indices:
            if distinct:
                offset = _distinct_offset(self.model, rng, self.offsets[i])
            else:
                offset = _crop_offset(self.model, rng)
            out.append(crop(self.model, self.trajectories[i], offset))
        return np.array(out)
