import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid
from scipy.stats import norm

from barynet.autodiff import DimensionError
from barynet.nets import NetSpec, TransportNet
from barynet.objectives import LabeledSample
from barynet.transport import (NotFittedError, TransportPair, barycenter_kde, compose_pairwise,
                               density_from_jacobian, fit_inverse, push_to_barycenter,
                               round_trip_loss, sample_conditional, transport_jacobian)

LINEAR = NetSpec((2, 1))


def affine_1d(wx, wz, b=0.0):
    """Residual 1-D map ``T(x, z) = x + wx x + wz z + b``."""
    return TransportNet.create(LINEAR, 1, 1).with_params(np.array([wx, wz, b]))


@pytest.fixture
def sample(rng):
    return LabeledSample(rng.normal(size=(200, 1)), rng.normal(size=(200, 1)))


def test_push_identity(sample):
    np.testing.assert_array_equal(push_to_barycenter(sample, affine_1d(0, 0)), sample.xs)


def test_push_removes_label():
    z = np.linspace(-1, 1, 7)[:, None]
    ys = push_to_barycenter(LabeledSample(z.copy(), z), affine_1d(0, -1))
    np.testing.assert_array_equal(ys, 0.0)


def test_push_checks_dimension(sample):
    T = TransportNet.create(NetSpec((3, 2)), 2, 1)
    with pytest.raises(DimensionError):
        push_to_barycenter(sample, T)


def test_inverse_of_identity_is_immediate(sample):
    pair = fit_inverse(sample, affine_1d(0, 0), LINEAR, n_iter=5)
    assert pair.final_loss < 1e-6


def test_inverse_of_shift(sample):
    pair = fit_inverse(sample, affine_1d(0, 1), LINEAR, n_iter=3000, lr=0.1)
    y = np.linspace(-2, 2, 9)[:, None]
    for z in (-1.0, 0.0, 0.5):
        assert np.mean(np.abs(pair.inverse(y, z) - (y - z))) < 1e-3


def test_round_trip_equals_final_loss(sample):
    pair = fit_inverse(sample, affine_1d(0.3, 0.5, 0.1), LINEAR, n_iter=200, lr=0.05)
    assert round_trip_loss(pair, sample) == pytest.approx(pair.final_loss, rel=1e-12, abs=1e-15)
    assert len(pair.history.losses) == 200


def test_composition_bounded_by_round_trip(sample):
    pair = fit_inverse(sample, affine_1d(0.3, 0.5, 0.1), LINEAR, n_iter=200, lr=0.05)
    back = np.vstack([compose_pairwise(pair, pair, z, z)(x[None]) for x, z in zip(sample.xs, sample.zs)])
    assert np.mean((back - sample.xs) ** 2) <= 2 * pair.final_loss + 1e-15


def test_sample_conditional_exact_inverse(sample):
    T = affine_1d(0, 1)
    S = affine_1d(0, -1)
    pair = TransportPair(T, S)
    ys = pair.forward(sample.xs[:20], 0.7)
    np.testing.assert_allclose(sample_conditional(pair, ys, 0.7), sample.xs[:20], atol=1e-12)


def test_sample_conditional_identity():
    pair = TransportPair(affine_1d(0, 0), affine_1d(0, 0))
    ys = np.arange(4.0)[:, None]
    np.testing.assert_array_equal(sample_conditional(pair, ys, 1.0), ys)


def test_unfitted_pair_refuses():
    pair = TransportPair(affine_1d(0, 0))
    with pytest.raises(NotFittedError):
        sample_conditional(pair, np.zeros((2, 1)), 0.0)
    with pytest.raises(NotFittedError):
        compose_pairwise(pair, pair)


def test_discrete_pair_map_count(rng):
    K = 3
    spec = NetSpec((2, 4, 2))
    T = TransportNet.create(spec, 2, 0, n_labels=K, rng=rng)
    S = TransportNet.create(spec, 2, 0, n_labels=K, rng=rng)
    pair = TransportPair(T, S)
    assert pair.n_maps == 2 * K
    x = rng.normal(size=(5, 2))
    for k in range(K):
        for j in range(K):
            assert compose_pairwise(pair, pair, k, j)(x).shape == (5, 2)


def test_density_identity(rng):
    ys = rng.normal(size=(300, 1))
    mu = barycenter_kde(ys)
    x = np.linspace(-2, 2, 5)[:, None]
    np.testing.assert_allclose(density_from_jacobian(affine_1d(0, 0), 0.0, mu, x), mu(x))


def test_density_change_of_variables():
    x = np.linspace(-2, 2, 9)[:, None]
    got = density_from_jacobian(affine_1d(1.0, 0.0), 0.0, lambda y: norm.pdf(y[:, 0]), x)
    np.testing.assert_allclose(got, 2 * norm.pdf(2 * x[:, 0]), rtol=1e-12)


def test_density_integrates_to_one(rng):
    T = affine_1d(1.0, 0.0, 0.5)
    ys = T(rng.normal(size=(400, 1)), np.zeros((400, 1)))
    mu = barycenter_kde(ys)
    grid = np.linspace(-8, 8, 4001)[:, None]
    dens = density_from_jacobian(T, 0.0, mu, grid)
    assert np.all(dens >= 0)
    assert trapezoid(dens, grid[:, 0]) == pytest.approx(1.0, abs=0.05)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_fd_and_reverse_jacobians_agree(seed, d):
    rng = np.random.default_rng(seed)
    T = TransportNet.create(NetSpec((d + 1, 5, d), hidden_activation="leaky_relu"), d, 1,
                            rng=rng, zero_last=False)
    x = rng.normal(size=(6, d))
    rev = transport_jacobian(T, x, 0.3)
    fd = transport_jacobian(T, x, 0.3, method="fd")
    det_r, det_f = np.linalg.det(rev), np.linalg.det(fd)
    np.testing.assert_allclose(det_f, det_r, rtol=1e-4, atol=1e-9)
    mu = lambda y: np.ones(len(y))
    assert np.all(density_from_jacobian(T, 0.3, mu, x) >= 0)


def test_density_refuses_high_dimension():
    T = TransportNet.create(NetSpec((12, 11)), 11, 1)
    with pytest.raises(ValueError):
        density_from_jacobian(T, 0.0, lambda y: 1.0, np.zeros((1, 11)))


def test_jacobian_method_validated():
    with pytest.raises(ValueError):
        transport_jacobian(affine_1d(0, 0), np.zeros((1, 1)), 0.0, method="forward")
