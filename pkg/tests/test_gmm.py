import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etnet import numerics as nx
from etnet.gmm import (
    GmmModel,
    MembershipNet,
    SingularCovarianceError,
    em_update,
    energy,
    energy_var,
    init_gmm,
    log_likelihood,
    log_membership,
    membership,
    mixture_weights,
    responsibilities,
)
from reference import em_naive, energy_naive


def random_gmm(rng, k, d):
    a = rng.normal(size=(k, d, d))
    sigma = a @ a.transpose(0, 2, 1) + 0.3 * np.eye(d)
    return GmmModel(rng.dirichlet(np.ones(k)), rng.normal(size=(k, d)) * 2, sigma)


def test_zero_membership_net_is_uniform():
    net = MembershipNet.create(4, 3, np.random.default_rng(0))
    for p in net.params():
        p.value[...] = 0.0
    np.testing.assert_allclose(membership(net, np.ones(4)).value, [1 / 3] * 3)


def test_single_component_membership_is_one():
    net = MembershipNet.create(3, 1, np.random.default_rng(0))
    assert np.all(membership(net, np.random.default_rng(1).normal(size=(5, 3))).value == 1.0)


@given(st.integers(0, 10_000))
def test_membership_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    net = MembershipNet.create(5, 4, rng)
    z = rng.normal(size=(6, 5)) * 10
    g = membership(net, z).value
    assert np.all(g > 0) and np.all(g <= 1)
    np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_membership(net, z).value), g, rtol=1e-12)


def test_mixture_weights_examples():
    np.testing.assert_allclose(mixture_weights(np.full((4, 3), 1 / 3)), [1 / 3] * 3)
    np.testing.assert_array_equal(mixture_weights([[0.2, 0.8]]), [0.2, 0.8])
    np.testing.assert_array_equal(mixture_weights([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
    with pytest.raises(ValueError):
        mixture_weights(np.empty((0, 2)))


def test_k1_closed_form_in_one_step():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(40, 3)) @ np.diag([1.0, 2.0, 0.5]) + 4.0
    model = GmmModel(np.ones(1), np.zeros((1, 3)), np.eye(3)[None])
    new = em_update(model, z)
    np.testing.assert_allclose(new.mu[0], z.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(new.sigma[0], np.cov(z, rowvar=False, bias=True) + 1e-6 * np.eye(3), rtol=1e-10)


def test_two_separated_clusters():
    rng = np.random.default_rng(2)
    z = np.concatenate([rng.normal(-10, 1, size=(50, 2)), rng.normal(10, 1, size=(50, 2))])
    model = GmmModel(np.array([0.5, 0.5]), np.array([[-1.0, 0.0], [1.0, 0.0]]), np.repeat(np.eye(2)[None] * 50, 2, 0))
    for _ in range(50):
        model = em_update(model, z)
    means = sorted(model.mu.tolist())
    np.testing.assert_allclose(means[0], z[:50].mean(axis=0), atol=0.1)
    np.testing.assert_allclose(means[1], z[50:].mean(axis=0), atol=0.1)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3))
def test_em_matches_naive_step(seed, k, d):
    rng = np.random.default_rng(seed)
    model = random_gmm(rng, k, d)
    z = rng.normal(size=(12, d)) * 2
    new = em_update(model, z)
    mu, sigma = em_naive(model.phi, model.mu, model.sigma, z, model.reg_epsilon)
    np.testing.assert_allclose(new.mu, mu, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(new.sigma, sigma, rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(new.phi, model.phi)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_em_monotone_and_covariances_valid(seed):
    rng = np.random.default_rng(seed)
    z = np.concatenate([rng.normal(c, 1.0, size=(30, 3)) for c in (-3, 0, 4)])
    model = init_gmm(z, 3, rng)
    model.phi = rng.dirichlet(np.ones(3))
    prev = log_likelihood(model, z)
    for _ in range(20):
        model = em_update(model, z)
        cur = log_likelihood(model, z)
        assert cur >= prev - 1e-9
        prev = cur
        for s in model.sigma:
            assert np.max(np.abs(s - s.T)) < 1e-12
            np.linalg.cholesky(s)


def test_starved_component_keeps_estimate():
    z = np.random.default_rng(0).normal(size=(20, 2))
    model = GmmModel(np.array([1.0, 0.0]), np.array([[0.0, 0.0], [1e3, 1e3]]), np.repeat(np.eye(2)[None], 2, 0))
    new = em_update(model, z)
    np.testing.assert_array_equal(new.mu[1], [1e3, 1e3])
    np.testing.assert_array_equal(new.sigma[1], np.eye(2))


def test_em_needs_k_samples():
    with pytest.raises(ValueError):
        em_update(random_gmm(np.random.default_rng(0), 3, 2), np.zeros((2, 2)))


def test_singular_covariance_is_reported():
    model = GmmModel(np.ones(1), np.zeros((1, 2)), np.zeros((1, 2, 2)), reg_epsilon=0.0)
    with pytest.raises(SingularCovarianceError):
        energy(model, np.zeros(2))
    with pytest.raises(SingularCovarianceError):
        em_update(model, np.zeros((3, 2)))


def test_energy_standard_normal_at_mean():
    model = GmmModel(np.ones(1), np.zeros((1, 1)), np.ones((1, 1, 1)))
    assert energy(model, np.zeros(1)) == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-12)


def test_energy_minimized_at_mean_for_k1():
    rng = np.random.default_rng(3)
    model = random_gmm(rng, 1, 3)
    direction = rng.normal(size=3)
    ts = np.linspace(-2, 2, 41)
    values = energy(model, model.mu[0] + ts[:, None] * direction)
    assert np.argmin(values) == 20


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
def test_energy_matches_direct_sum(seed, k, d):
    rng = np.random.default_rng(seed)
    model = random_gmm(rng, k, d)
    z = rng.normal(size=(5, d)) * 2
    got = energy(model, z)
    want = [energy_naive(model.phi, model.mu, model.sigma, row) for row in z]
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


def test_energy_finite_far_away():
    model = GmmModel(np.array([0.5, 0.5]), np.array([[0.0], [1.0]]), np.full((2, 1, 1), 1e-6))
    assert np.isfinite(energy(model, np.array([1e6])))


@given(st.integers(0, 10_000))
def test_k1_energy_orders_like_mahalanobis(seed):
    rng = np.random.default_rng(seed)
    model = random_gmm(rng, 1, 3)
    z = rng.normal(size=(8, 3)) * 3
    diff = z - model.mu[0]
    maha = np.einsum("ni,ij,nj->n", diff, np.linalg.inv(model.sigma[0]), diff)
    np.testing.assert_array_equal(np.argsort(energy(model, z)), np.argsort(maha))


@given(st.integers(0, 10_000))
def test_energy_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    model = random_gmm(rng, 3, 2)
    perm = rng.permutation(3)
    other = GmmModel(model.phi[perm], model.mu[perm], model.sigma[perm])
    z = rng.normal(size=(6, 2))
    np.testing.assert_allclose(energy(model, z), energy(other, z), rtol=1e-12)


def test_responsibilities_rows_sum_to_one():
    rng = np.random.default_rng(0)
    r = responsibilities(random_gmm(rng, 3, 2), rng.normal(size=(7, 2)))
    np.testing.assert_allclose(r.sum(axis=1), 1.0)


def test_energy_var_matches_energy_and_gradients():
    rng = np.random.default_rng(4)
    model = random_gmm(rng, 2, 3)
    z = nx.Param(rng.normal(size=(4, 3)))
    value = energy_var(z, np.log(model.phi), model).value
    np.testing.assert_allclose(value, energy(model, z.value), rtol=1e-12)
    assert nx.finite_diff_check(lambda: nx.total(energy_var(z, np.log(model.phi), model)), [z]) < 1e-6


def test_init_gmm_is_seeded_and_valid():
    z = np.random.default_rng(0).normal(size=(30, 4))
    a = init_gmm(z, 3, np.random.default_rng(1))
    b = init_gmm(z, 3, np.random.default_rng(1))
    np.testing.assert_array_equal(a.mu, b.mu)
    assert len({tuple(m) for m in a.mu}) == 3
    assert abs(a.phi.sum() - 1.0) < 1e-12
    with pytest.raises(ValueError):
        init_gmm(z[:2], 3, np.random.default_rng(0))
