"""Ratio evaluation, posterior density and acceptance-rejection sampling.

Given an observation ``y`` the encoder runs once; every parameter query
afterwards costs one emulator row.  The normalizer is the Monte-Carlo sum
``C(y) = sum_i exp(f(y) . g(phi_i) / tau)`` over ``N'`` prior draws, and the
density is the self-normalized form ``(N' / C) exp(f . g / tau) p(phi)``.
Internally everything is carried in log space so small temperatures do not
overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .embednet import RatioModel, encode
from .ndmath import DomainError
from .simulators.priors import BOX, ConfigurationError, PriorSpec


class SamplingError(RuntimeError):
    """Acceptance-rejection sampling could not make progress."""


def _similarity(model: RatioModel, embedding, params) -> np.ndarray:
    g = model.emulator.forward(np.atleast_2d(params))
    return g @ np.asarray(embedding).reshape(-1) / model.tau


def ratio_log(model: RatioModel, phi, embedding, normalizer) -> np.ndarray:
    """``f . g(phi) / tau - log C``; one emulator pass, no encoder pass."""
    if not normalizer > 0:
        raise ValueError("normalizer must be positive")
    return _similarity(model, embedding, phi) - math.log(normalizer)


def _prior_draws(prior: PriorSpec, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("N' must be >= 1")
    return prior.sample(n, np.random.default_rng(seed))


def log_normalizers(model: RatioModel, observations, prior: PriorSpec, n_norm: int, seed) -> np.ndarray:
    """``log C(y)`` for each observation, sharing one set of prior draws."""
    draws = _prior_draws(prior, n_norm, seed)
    g = model.emulator.forward(draws)
    f = encode(model, np.atleast_2d(observations))
    return logsumexp(f @ g.T / model.tau, axis=1)


def estimate_normalizer(model: RatioModel, y, prior: PriorSpec, n_norm: int, seed) -> float:
    """``C(y) = sum_i exp(f(y) . g(phi_i) / tau)`` (a sum, not a mean)."""
    return float(np.exp(log_normalizers(model, y, prior, n_norm, seed)[0]))


@dataclass
class PosteriorEstimate:
    model: RatioModel
    prior: PriorSpec
    embedding: np.ndarray
    log_normalizer: float
    n_norm: int
    draws: np.ndarray
    draw_similarity: np.ndarray

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    def log_ratio(self, phi) -> np.ndarray:
        """Self-normalized ``log r(phi, y) = log N' + f . g / tau - log C``."""
        return math.log(self.n_norm) + _similarity(self.model, self.embedding, phi) - self.log_normalizer


def build_posterior(model: RatioModel, y, prior: PriorSpec, n_norm: int = 10_000, seed=0) -> PosteriorEstimate:
    """Encode ``y`` once and estimate its normalizer from ``n_norm`` prior draws."""
    f = encode(model, np.atleast_2d(y))[0]
    draws = _prior_draws(prior, n_norm, seed)
    sims = _similarity(model, f, draws)
    return PosteriorEstimate(model, prior, f, float(logsumexp(sims)), n_norm, draws, sims)


def posterior_density(estimate: PosteriorEstimate, phi) -> np.ndarray:
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    prior = estimate.prior.density(phi)
    out = np.zeros(len(phi))
    on = prior > 0
    if np.any(on):
        out[on] = np.exp(estimate.log_ratio(phi[on])) * prior[on]
    return out


def retarget_prior(estimate: PosteriorEstimate, new_prior: PriorSpec, n_norm: int | None = None,
                   seed=1) -> PosteriorEstimate:
    """Same embedding, normalizer re-estimated under an inference prior.

    The new prior's draws must lie inside the training prior's support, where
    the learned ratio is defined.
    """
    n = estimate.n_norm if n_norm is None else n_norm
    draws = _prior_draws(new_prior, n, seed)
    if not np.all(estimate.prior.in_support(draws)):
        raise DomainError("alternative prior puts mass outside the training prior support")
    sims = _similarity(estimate.model, estimate.embedding, draws)
    return PosteriorEstimate(estimate.model, new_prior, estimate.embedding, float(logsumexp(sims)), n, draws, sims)


def posterior_density_altprior(
    estimate: PosteriorEstimate, phi, new_prior: PriorSpec, n_norm: int | None = None, seed=1
) -> np.ndarray:
    """Density under an inference prior that differs from the training prior."""
    return posterior_density(retarget_prior(estimate, new_prior, n_norm, seed), phi)


@dataclass
class SampleResult:
    samples: np.ndarray
    ordinals: np.ndarray  # zero-based candidate index of each accepted sample
    acceptance_rate: float
    envelope: float
    candidates: int  # candidates evaluated by the emulator
    envelope_violations: int


def accept_reject(log_target, proposal, count, log_envelope, rng, batch=1024,
                  max_proposals=1_000_000, min_rate=1e-4):
    """Generic acceptance-rejection loop.

    ``log_target(x)`` returns ``log(target(x) / proposal_density(x))`` up to the
    envelope: a candidate is accepted iff ``u * B <= target / proposal``.
    ``proposal`` is a ``(n, rng) -> candidates`` callable.  Acceptance is decided
    in candidate order, so results depend only on ``rng``.
    """
    accepted, ordinals = [], []
    drawn = 0
    violations = 0
    while len(accepted) < count:
        cand = proposal(batch, rng)
        u = rng.uniform(size=batch)
        log_w = log_target(cand) - log_envelope
        violations += int(np.sum(log_w > 0))
        hits = np.flatnonzero(np.log(u) <= log_w)
        take = hits[: count - len(accepted)]
        accepted.extend(cand[take])
        ordinals.extend(drawn + take)
        drawn += batch
        if drawn >= max_proposals and len(accepted) / drawn < min_rate:
            raise SamplingError(
                f"acceptance rate {len(accepted) / drawn:.2e} after {drawn} proposals "
                f"(envelope {math.exp(log_envelope):.4g} too large or posterior misfit)"
            )
    ordinals = np.asarray(ordinals, dtype=np.int64)
    rate = count / (ordinals[-1] + 1) if count else 0.0
    return np.array(accepted), ordinals, rate, drawn, violations


def default_envelope(estimate: PosteriorEstimate, proposal: PriorSpec, inflate: float = 1.5) -> float:
    """``inflate * max r p / pi`` over the normalizer draws."""
    pi = proposal.density(estimate.draws)
    p = estimate.prior.density(estimate.draws)
    ok = pi > 0
    if not np.any(ok):
        raise SamplingError("proposal has no mass on the normalizer draws")
    log_r = math.log(estimate.n_norm) + estimate.draw_similarity[ok] - estimate.log_normalizer
    return inflate * float(np.max(np.exp(log_r) * p[ok] / pi[ok]))


def sample_posterior(estimate: PosteriorEstimate, proposal: PriorSpec | None = None, count: int = 100,
                     envelope: float | None = None, seed=0, batch: int = 1024) -> SampleResult:
    """Draw ``count`` posterior samples by acceptance-rejection.

    Accept ``phi ~ proposal`` iff ``u <= r(phi, y) p(phi) / (B pi(phi))``.  No
    encoder pass happens here; each candidate costs one emulator row.
    """
    proposal = estimate.prior if proposal is None else proposal
    envelope = default_envelope(estimate, proposal) if envelope is None else float(envelope)
    if not envelope > 0:
        raise ValueError("envelope constant must be positive")

    def log_target(cand):
        p = estimate.prior.density(cand)
        pi = proposal.density(cand)
        with np.errstate(divide="ignore", invalid="ignore"):
            return estimate.log_ratio(cand) + np.log(p) - np.log(pi)

    rng = np.random.default_rng(seed)
    samples, ordinals, rate, drawn, violations = accept_reject(
        log_target, proposal.sample, count, math.log(envelope), rng, batch=batch
    )
    return SampleResult(samples, ordinals, rate, envelope, drawn, violations)


def reference_circle_samples(phi0, prior: PriorSpec, count: int, seed) -> np.ndarray:
    """Uniform draws on the circle ``|phi| = |phi0|`` restricted to the prior box."""
    phi0 = np.asarray(phi0, dtype=np.float64)
    radius = float(np.linalg.norm(phi0))
    if radius == 0.0:
        raise ValueError("reference point must be nonzero")
    if prior.kind != BOX or prior.redundant or len(prior.low) != 2:
        raise ConfigurationError("reference circle needs a 2-D box prior")
    nearest = np.linalg.norm(np.clip(0.0, prior.low, prior.high))
    corners = np.array([[x, y] for x in (prior.low[0], prior.high[0]) for y in (prior.low[1], prior.high[1])])
    farthest = np.max(np.linalg.norm(corners, axis=1))
    if not nearest <= radius < farthest:
        raise DomainError("reference circle lies entirely outside the prior support")
    rng = np.random.default_rng(seed)
    out = []
    total = 0
    while total < count:
        theta = rng.uniform(0.0, 2.0 * np.pi, size=max(64, 2 * (count - total)))
        pts = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        pts = pts[prior.in_support(pts)][: count - total]
        out.append(pts)
        total += len(pts)
    return np.concatenate(out)
