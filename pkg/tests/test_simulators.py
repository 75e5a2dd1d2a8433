import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import i0

from contrasbi.simulators import (
    PAPER_MATRIX,
    ConfigurationError,
    DivergenceError,
    InvertibleMLP,
    Lorenz96Model,
    LorenzViews,
    PriorSpec,
    SyntheticModel,
    UnsupportedOperation,
    augment,
    integrate,
    lorenz_generate,
    lorenz_rhs,
    sample_prior,
    sample_vmf_circle,
    synthetic_generate,
    synthetic_log_ratio,
    synthetic_true_posterior,
)
from oracles import naive_lorenz_rhs, vmf_mean_resultant, vmf_second_moment

SMALL_LORENZ = Lorenz96Model(K=4, J=2, warmup_steps=30, crop_steps=5)


# ---------------------------------------------------------------- priors


def test_identity_circle_prior_has_unit_norm():
    phi = sample_prior(PriorSpec.circle(np.eye(2)), 1000, 0)
    np.testing.assert_allclose(np.linalg.norm(phi, axis=1), 1.0, atol=1e-12)


def test_ellipse_prior_satisfies_constraint():
    phi = sample_prior(PriorSpec.circle(PAPER_MATRIX), 1000, 1)
    np.testing.assert_allclose(np.linalg.norm(phi @ PAPER_MATRIX.T, axis=1), 1.0, atol=1e-12)


def test_box_prior_moments_and_bounds():
    phi = sample_prior(PriorSpec.box([-15, -15], [15, 15]), 100_000, 2)
    assert np.all(np.abs(phi.mean(axis=0)) < 0.3)
    assert phi.min() >= -15 and phi.max() <= 15


def test_singular_matrix_rejected():
    with pytest.raises(ConfigurationError):
        PriorSpec.circle([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(ConfigurationError):
        PriorSpec.box([1.0], [0.0])


def test_redundant_prior_prepends_unit_coordinate():
    prior = PriorSpec.circle(PAPER_MATRIX, redundant=True)
    phi = sample_prior(prior, 500, 3)
    assert phi.shape == (500, 3)
    assert np.all((phi[:, 0] >= 0) & (phi[:, 0] <= 1))
    assert np.all(prior.in_support(phi))


@given(st.integers(0, 2**32 - 1), st.booleans(), st.sampled_from(["circle", "box"]))
def test_prior_samples_in_support(seed, redundant, kind):
    prior = (PriorSpec.circle(PAPER_MATRIX, redundant) if kind == "circle"
             else PriorSpec.box([-2.0, 0.0], [3.0, 1.0], redundant))
    assert np.all(prior.in_support(sample_prior(prior, 50, seed)))


@pytest.mark.parametrize("prior", [PriorSpec.circle(PAPER_MATRIX), PriorSpec.circle(PAPER_MATRIX, True),
                                   PriorSpec.box([-1, 0], [1, 4]), PriorSpec.box([-1, 0], [1, 4], True)])
def test_quadrature_integrates_prior_density(prior):
    nodes, weights = prior.quadrature(32)
    assert np.sum(weights * prior.density(nodes)) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- vMF


def _mean_resultant(z, mean_dir):
    return float(np.mean(z @ mean_dir))


def test_vmf_zero_concentration_is_uniform():
    z = sample_vmf_circle(np.array([1.0, 0.0]), 0.0, 100_000, 0)
    assert np.linalg.norm(z.mean(axis=0)) <= 0.02


def test_vmf_extreme_concentration():
    mean = np.array([0.6, 0.8])
    z = sample_vmf_circle(mean, 1e6, 10_000, 1)
    assert np.max(np.arccos(np.clip(z @ mean, -1, 1))) <= 1e-2


@pytest.mark.parametrize("kappa", [0.5, 2.0, 8.0])
def test_vmf_mean_resultant_matches_quadrature(kappa):
    n = 20_000
    mean = np.array([np.cos(1.0), np.sin(1.0)])
    z = sample_vmf_circle(mean, kappa, n, 7)
    expected = vmf_mean_resultant(kappa)
    se = math.sqrt((vmf_second_moment(kappa) - expected**2) / n)
    assert abs(_mean_resultant(z, mean) - expected) <= 3 * se


def test_vmf_bad_mean_direction():
    with pytest.raises(ValueError):
        sample_vmf_circle(np.array([1.0, 1.0]), 1.0, 5, 0)


# ---------------------------------------------------------------- synthetic


def test_decoder_round_trip():
    mlp = InvertibleMLP.random(3)
    z = np.random.default_rng(0).normal(size=(1000, 2))
    assert np.max(np.abs(mlp.inverse(mlp(z)) - z)) <= 1e-8


def test_decoder_layers_respect_condition_bound():
    mlp = InvertibleMLP.random(4, cond_max=10.0)
    assert max(mlp.condition_numbers()) <= 10.0 + 1e-9
    assert mlp.circle_conditioning() <= 150.0


def test_decoder_is_seed_deterministic():
    a, b = InvertibleMLP.random(11), InvertibleMLP.random(11)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_generate_inverts_to_latent():
    model = SyntheticModel.build(2.0)
    y, z = synthetic_generate(model, model.prior.sample(1, np.random.default_rng(0))[0], 5)
    assert np.max(np.abs(model.constraint(y)[0] - z)) <= 1e-8


def test_noiseless_limit_follows_generator():
    model = SyntheticModel.build(1e6)
    phis = model.prior.sample(20, np.random.default_rng(1))
    for k, phi in enumerate(phis):
        y, _ = synthetic_generate(model, phi, k)
        pulled = model.constraint(y)[0]
        target = model.generator(phi)[0]
        angle = math.acos(np.clip(pulled @ target / np.linalg.norm(pulled) / np.linalg.norm(target), -1, 1))
        assert angle <= 1e-2


def test_redundant_coordinate_is_ignored():
    model = SyntheticModel.build(2.0, redundant=True)
    eff = model.prior.sample(1, np.random.default_rng(2))[0, 1:]
    y1, _ = synthetic_generate(model, np.r_[0.1, eff], 9)
    y2, _ = synthetic_generate(model, np.r_[0.9, eff], 9)
    assert np.array_equal(y1, y2)


def test_true_posterior_ratio_of_exponentials():
    model = SyntheticModel.build(3.0)
    prior = model.prior
    # y whose constraint is exactly the latent (1, 0)
    y = model.decoder(np.array([[1.0, 0.0]]))
    phi_par = prior.circle_points(np.array([0.0]))
    phi_perp = prior.circle_points(np.array([np.pi / 2]))
    ratio = synthetic_true_posterior(model, y, phi_par)[0] / synthetic_true_posterior(model, y, phi_perp)[0]
    assert ratio == pytest.approx(math.exp(3.0), rel=1e-12)


def test_true_posterior_is_prior_at_zero_concentration():
    model = SyntheticModel.build(0.0)
    y = model.decoder(np.array([[0.0, 1.0]]))
    phi = model.prior.sample(50, np.random.default_rng(3))
    np.testing.assert_allclose(synthetic_true_posterior(model, y, phi), model.prior.density(phi), rtol=1e-12)


@pytest.mark.parametrize("redundant", [False, True])
def test_true_posterior_integrates_to_one(redundant):
    model = SyntheticModel.build(8.0, redundant=redundant)
    y = model.decoder(np.array([[np.cos(0.3), np.sin(0.3)]]))
    nodes, weights = model.prior.quadrature(400)
    assert np.sum(weights * synthetic_true_posterior(model, y, nodes)) == pytest.approx(1.0, abs=1e-3)


def test_true_log_ratio_normalizer():
    model = SyntheticModel.build(2.0)
    y = model.decoder(np.array([[1.0, 0.0]]))
    phi = model.prior.circle_points(np.array([0.0]))
    assert synthetic_log_ratio(model, y, phi)[0] == pytest.approx(2.0 - math.log(i0(2.0)), rel=1e-12)


def test_true_posterior_rejects_observation_off_the_image():
    model = SyntheticModel.build(2.0)
    y = model.decoder(np.array([[2.0, 0.0]]))
    with pytest.raises(ValueError):
        synthetic_true_posterior(model, y, model.prior.circle_points(np.array([0.0])))


# ---------------------------------------------------------------- Lorenz


def test_rhs_fixed_point():
    du, dv = lorenz_rhs(Lorenz96Model(), np.zeros(8), np.zeros(32), 0.0)
    assert not du.any() and not dv.any()


@pytest.mark.parametrize("seed", range(20))
def test_rhs_matches_index_loops(seed):
    rng = np.random.default_rng(seed)
    K, J = int(rng.integers(4, 9)), int(rng.integers(1, 6))
    model = Lorenz96Model(K=K, J=J, c=float(rng.uniform(0, 12)))
    u, v, force = rng.normal(size=K), rng.normal(size=K * J), float(rng.normal() * 5)
    du, dv = lorenz_rhs(model, u, v, force)
    ndu, ndv = naive_lorenz_rhs(u, v, force, K, J, model.c)
    assert np.max(np.abs(du - ndu)) <= 1e-12
    assert np.max(np.abs(dv - ndv)) <= 1e-12


def test_rhs_single_perturbation():
    model = Lorenz96Model()
    u, v = np.zeros(8), np.zeros(32)
    v[5] = 1.0
    du, dv = lorenz_rhs(model, u, v, 2.0)
    ndu, ndv = naive_lorenz_rhs(u, v, 2.0, 8, 4, 10.0)
    assert np.max(np.abs(du - ndu)) <= 1e-12 and np.max(np.abs(dv - ndv)) <= 1e-12


def test_rhs_decoupled_at_zero_coupling():
    model = Lorenz96Model(c=0.0)
    rng = np.random.default_rng(0)
    u = rng.normal(size=8)
    a, _ = lorenz_rhs(model, u, rng.normal(size=32), 8.0)
    b, _ = lorenz_rhs(model, u, rng.normal(size=32), 8.0)
    assert np.array_equal(a, b)


def test_rk4_step_halving_ratio():
    model = Lorenz96Model()
    rng = np.random.default_rng(0)
    u0, v0 = rng.normal(size=8), 0.1 * rng.normal(size=32)

    def endpoint(dt):
        u, v = integrate(model, u0, v0, np.float64(8.0), int(round(0.2 / dt)), dt=dt, record=False)
        return np.concatenate([u, v])

    ref = endpoint(0.0025)
    ratio = np.max(np.abs(endpoint(0.01) - ref)) / np.max(np.abs(endpoint(0.005) - ref))
    assert 8 <= ratio <= 32


def test_rotation_redundancy_of_forcing():
    a = lorenz_generate(SMALL_LORENZ, [3.0, 4.0], 17)
    b = lorenz_generate(SMALL_LORENZ, [5.0, 0.0], 17)
    assert np.array_equal(a, b)


def test_observation_length():
    assert Lorenz96Model.paper_scale().obs_dim == 99_000
    assert Lorenz96Model().obs_dim == 64 * 8 * 5
    assert lorenz_generate(SMALL_LORENZ, [1.0, 1.0], 0).shape == (5 * 4 * 3,)


def test_divergence_names_step():
    model = Lorenz96Model(K=4, J=1, dt=10.0, warmup_steps=200, crop_steps=1)
    with pytest.raises(DivergenceError, match="step"):
        integrate(model, np.ones(4) * 5, np.ones(4), np.float64(50.0), 200)


def test_crop_augmentation():
    phi, seed = np.array([2.0, 3.0]), 21
    y = lorenz_generate(SMALL_LORENZ, phi, seed)
    a = augment(SMALL_LORENZ, y, phi, 1, source_seed=seed)
    b = augment(SMALL_LORENZ, y, phi, 2, source_seed=seed)
    assert a.shape == y.shape
    assert not np.array_equal(a, y)
    assert not np.array_equal(a, b)


def test_fresh_augmentation():
    model = Lorenz96Model(K=4, J=2, warmup_steps=30, crop_steps=5, augment_mode="fresh")
    y = lorenz_generate(model, [1.0, 2.0], 0)
    a = augment(model, y, [1.0, 2.0], 5)
    assert a.shape == y.shape and not np.array_equal(a, y)


def test_augment_rejects_synthetic():
    with pytest.raises(UnsupportedOperation):
        augment(SyntheticModel.build(2.0), None, [1.0, 0.0], 0)


def test_views_reproduce_source_crop_and_differ_when_distinct():
    phis = np.array([[1.0, 2.0], [4.0, -3.0]])
    seeds = [5, 6]
    views = LorenzViews(SMALL_LORENZ, phis, seeds)
    rng = np.random.default_rng(0)
    for i, (phi, s) in enumerate(zip(phis, seeds)):
        source = lorenz_generate(SMALL_LORENZ, phi, s)
        assert not np.array_equal(views([i], rng)[0], source)


def test_lorenz_config_validation():
    with pytest.raises(ConfigurationError):
        Lorenz96Model(K=3)
    with pytest.raises(ConfigurationError):
        Lorenz96Model(crop_steps=500)
