"""Evaluation metrics and their per-instance reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp, softmax
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from .embednet import RatioModel, emulate, encode
from .inference import build_posterior, log_normalizers, reference_circle_samples, sample_posterior
from .ndmath import DimensionError
from .simulators.priors import BOX, PriorSpec
from .simulators.synthetic import SyntheticModel


class DegenerateInputError(ValueError):
    """A metric is undefined for the given inputs."""


class MetricUnavailable(ValueError):
    """The metric does not apply to this simulator."""


@dataclass
class MetricReport:
    """Per-instance values of one metric.

    Percentiles use linear interpolation between order statistics
    (``numpy.percentile`` default), so ``q25 <= median <= q75`` always holds.
    """

    metric: str
    values: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if len(self.values) == 0:
            raise DegenerateInputError(f"no values for metric {self.metric}")

    @property
    def median(self) -> float:
        return float(np.percentile(self.values, 50))

    @property
    def q25(self) -> float:
        return float(np.percentile(self.values, 25))

    @property
    def q75(self) -> float:
        return float(np.percentile(self.values, 75))

    def summary(self) -> str:
        return (f"{self.metric}: median {self.median:.4g} (25th {self.q25:.4g}, 75th {self.q75:.4g}) "
                f"over {len(self.values)} instances")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config = {json.dumps(self.config, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "instance", "value"])
        for i, v in enumerate(self.values):
            w.writerow([self.metric, i, repr(float(v))])
        for name in ("median", "q25", "q75"):
            w.writerow([self.metric, name, repr(getattr(self, name))])
        return buf.getvalue()


def l1_posterior_distance(estimate, truth) -> float:
    """``sum_i |q_i - p_i|`` over a shared set of evaluation points."""
    q = np.asarray(estimate, dtype=np.float64).ravel()
    p = np.asarray(truth, dtype=np.float64).ravel()
    if q.shape != p.shape:
        raise DimensionError(f"length mismatch: {len(q)} vs {len(p)}")
    return float(np.sum(np.abs(q - p)))


def posterior_masses(log_weights) -> np.ndarray:
    """Normalize unnormalized log posterior weights over prior draws to unit mass."""
    return softmax(np.asarray(log_weights, dtype=np.float64))


def synthetic_l1(model: RatioModel, simulator: SyntheticModel, y, n_eval: int = 10_000, seed=0) -> float:
    """l1 distance between estimated and exact posterior masses on ``n_eval`` prior draws.

    Draws come from the prior, so each posterior's mass at draw ``i`` is its
    ratio at ``phi_i`` divided by the sum over all draws.
    """
    est = build_posterior(model, y, simulator.prior, n_eval, seed)
    truth = simulator.kappa * np.sum(simulator.constraint(y) * simulator.generator(est.draws), axis=1)
    return l1_posterior_distance(posterior_masses(est.draw_similarity), posterior_masses(truth))


def synthetic_l1_report(model, simulator, observations, n_eval=10_000, seed=0) -> MetricReport:
    values = [synthetic_l1(model, simulator, y, n_eval, [int(seed), i]) for i, y in enumerate(observations)]
    return MetricReport("l1", values, {"n_eval": n_eval, "seed": seed})


def latent_recovery_r2(source, embeddings) -> float:
    """Uniform-average R^2 of an OLS fit (with intercept) of ``embeddings`` on ``source``."""
    x = np.atleast_2d(np.asarray(source, dtype=np.float64))
    t = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if len(x) != len(t):
        raise DimensionError("source and embeddings need equal counts")
    if len(x) < 2 or np.all(np.ptp(x, axis=0) == 0):
        raise DegenerateInputError("R^2 is undefined for a constant source")
    fit = LinearRegression().fit(x, t)
    return float(r2_score(t, fit.predict(x), multioutput="uniform_average"))


def mmd_squared(a, b, sigma: float) -> float:
    """Biased (V-statistic) squared MMD with a Gaussian kernel; diagonal terms included."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    gamma = 1.0 / (2.0 * sigma**2)

    def k(x, z):
        return np.exp(-gamma * cdist(x, z, "sqeuclidean")).mean()

    return float(k(a, a) - 2.0 * k(a, b) + k(b, b))


def to_unit_box(prior: PriorSpec, phi) -> np.ndarray:
    """Affine map of a box prior's support onto ``[0, 1]^d``."""
    if prior.kind != BOX:
        raise MetricUnavailable("unit-box rescaling needs a box prior")
    eff = prior.effective(phi)
    return (eff - prior.low) / (prior.high - prior.low)


def lorenz_mmd(model: RatioModel, y, phi_true, prior: PriorSpec, sigma=0.05, n_samples=100,
               n_norm=10_000, seed=0) -> tuple[float, float]:
    """MMD^2 of posterior samples and of prior samples against the reference circle.

    All samples are rescaled to the unit box before the kernel is applied.
    Returns ``(posterior_mmd, prior_mmd)``.
    """
    ss = np.random.SeedSequence(seed)
    s_norm, s_post, s_ref, s_prior = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
    est = build_posterior(model, y, prior, n_norm, s_norm)
    post = sample_posterior(est, count=n_samples, seed=s_post).samples
    ref = reference_circle_samples(prior.effective(phi_true)[0], prior, n_samples, s_ref)
    pri = prior.sample(n_samples, np.random.default_rng(s_prior))
    r = to_unit_box(prior, ref)
    return (mmd_squared(to_unit_box(prior, post), r, sigma), mmd_squared(to_unit_box(prior, pri), r, sigma))


def coefficient_of_variation(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        raise DegenerateInputError("CV needs at least two values")
    return float(np.std(v) / np.mean(v))


def normalizer_cv(model: RatioModel, observations, prior: PriorSpec, n_norm: int = 10_000, seed=0) -> float:
    """Population CV of ``C(y)`` across observations (one shared set of prior draws)."""
    obs = np.atleast_2d(observations)
    if len(obs) < 2:
        raise DegenerateInputError("CV needs at least two observations")
    log_c = log_normalizers(model, obs, prior, n_norm, seed)
    # the ratio is scale free, so shift before exponentiating
    return coefficient_of_variation(np.exp(log_c - logsumexp(log_c)))


def redundancy_sensitivity(model, effective_grid, redundant_values) -> float:
    """Largest spread of ``g(phi_R, phi)`` over ``phi_R`` for any grid point ``phi``."""
    grid = np.atleast_2d(np.asarray(effective_grid, dtype=np.float64))
    red = np.asarray(redundant_values, dtype=np.float64).ravel()
    net = model.emulator if isinstance(model, RatioModel) else model
    rows = np.concatenate([np.repeat(red, len(grid))[:, None], np.tile(grid, (len(red), 1))], axis=1)
    emb = net.forward(rows).reshape(len(red), len(grid), -1)
    if len(red) < 2:
        return 0.0
    return float(max(pdist(emb[:, j, :]).max() for j in range(len(grid))))


def redundancy_grid(prior: PriorSpec, n: int = 16):
    """``n`` effective parameters on the prior support and ``n`` redundant values in ``[0, 1]``."""
    if not prior.redundant:
        raise MetricUnavailable("redundancy sensitivity needs a prior with a redundant coordinate")
    if prior.kind == BOX:
        side = max(1, int(round(n ** (1.0 / len(prior.low)))))
        grid, _ = PriorSpec.box(prior.low, prior.high).quadrature(side)
    else:
        grid = prior.circle_points((np.arange(n) + 0.5) * (2.0 * np.pi / n))
    return grid, (np.arange(n) + 0.5) / n


def synthetic_r2(model: RatioModel, simulator: SyntheticModel, dataset) -> tuple[float, float]:
    """``(R^2(g, g_hat), R^2(f, f_hat))`` on held-out pairs."""
    g = simulator.generator(dataset.params)
    f = simulator.constraint(dataset.observations)
    return (latent_recovery_r2(g, emulate(model, dataset.params)),
            latent_recovery_r2(f, encode(model, dataset.observations)))
