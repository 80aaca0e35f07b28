import itertools

import gradient_configs as gc

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from barynet import autodiff as ad
from barynet.costs import CostSpec
from barynet.nets import DiscriminatorPair, LabelNet, NetSpec, TransportNet
from barynet.objectives import (BaePrior, LabeledSample, SemiSupConfig, bae_loss, center_psi_z,
                                factor_loss_deterministic, factor_loss_discrete,
                                inverse_regression_loss, mmd_independence_penalty,
                                semisup_loss_confounding, semisup_loss_partial, supervised_loss)
from barynet.oracle import kmeans_reference

C = CostSpec()


def nets(rng, d=2, k=1, K=None, zero_psi=False, random_T=True):
    if K is None:
        T = TransportNet.create(NetSpec((d + k, 4, d)), d, k, rng=rng, zero_last=not random_T)
        D = DiscriminatorPair.create(NetSpec((d, 4, 1), hidden_activation="leaky_relu"),
                                     NetSpec((k, 3, 1), hidden_activation="leaky_relu"), rng=rng)
    else:
        T = TransportNet.create(NetSpec((d, 4, d)), d, 0, n_labels=K, rng=rng, zero_last=not random_T)
        D = DiscriminatorPair.create(NetSpec((d, 4, 1), hidden_activation="leaky_relu"), None,
                                     n_labels=K, rng=rng)
    if not zero_psi:
        D = D.with_params(rng.normal(size=D.n_params) * 0.5)
    else:
        D = D.with_params(np.zeros(D.n_params))
    return T, D


# ---------------------------------------------------------------------------
# centering


def test_center_examples():
    assert np.array_equal(center_psi_z([5.0, 5.0, 5.0]), [0, 0, 0])
    assert np.array_equal(center_psi_z([1.0, -1.0]), [1, -1])
    assert np.allclose(center_psi_z([1.0, 2.0, 6.0]), [-2, -1, 3], atol=1e-15)


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)))
def test_center_sums_to_zero(v):
    out = center_psi_z(v)
    assert abs(out.sum()) <= 1e-12 * len(v) * max(1.0, np.abs(v).max())


# ---------------------------------------------------------------------------
# supervised


def loop_supervised(batch, T, D, c):
    ys = T(batch.xs, batch.zs)
    py = D.psi_y(ys).value
    pz = D.psi_z(batch.zs).value
    mean_pz = sum(pz) / len(pz)
    total = 0.0
    for i in range(len(ys)):
        total += float(c(batch.xs[i], ys[i])) - py[i] * (pz[i] - mean_pz)
    return total / len(ys)


def test_supervised_zero_nets_is_zero(rng):
    T, D = nets(rng, zero_psi=True, random_T=False)
    batch = LabeledSample(rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
    assert supervised_loss(batch, T, D, C).value == 0.0


def test_supervised_single_sample_is_cost(rng):
    T, D = nets(rng)
    batch = LabeledSample(rng.normal(size=(1, 2)), rng.normal(size=(1, 1)))
    y = T(batch.xs, batch.zs)
    assert float(supervised_loss(batch, T, D, C).value) == pytest.approx(float(C(batch.xs[0], y[0])), abs=1e-15)


def test_supervised_matches_loop_oracle(rng):
    T, D = nets(rng)
    batch = LabeledSample(rng.normal(size=(3, 2)), rng.normal(size=(3, 1)))
    assert float(supervised_loss(batch, T, D, C).value) == pytest.approx(loop_supervised(batch, T, D, C), abs=1e-13)


def test_discrete_supervised_uses_centered_q(rng):
    T, D = nets(rng, K=3)
    z = np.array([0, 1, 2, 2, 1])
    batch = LabeledSample(rng.normal(size=(5, 2)), z)
    q = np.asarray(D.q().value)
    qt = q[z] - q[z].mean()
    ys = T(batch.xs, z)
    want = np.mean(np.sum((batch.xs - ys) ** 2, axis=1) - D.psi_y(ys).value * qt)
    assert float(supervised_loss(batch, T, D, C).value) == pytest.approx(want, abs=1e-13)


# ---------------------------------------------------------------------------
# factor discovery


def label_net(rng, d=2, k=1, scale=1.0):
    net = LabelNet.create(NetSpec((d, 3, k), hidden_activation="leaky_relu"), rng=rng)
    return net.with_params(rng.normal(size=net.n_params) * scale)


def test_factor_zero_is_zero(rng):
    T, D = nets(rng, zero_psi=True, random_T=False)
    Z = label_net(rng, scale=0.0)
    assert float(factor_loss_deterministic(rng.normal(size=(4, 2)), Z, T, D, C).value) == 0.0


def test_factor_constant_labels_reduce_to_supervised(rng):
    T, D = nets(rng)
    Z = label_net(rng)
    params = np.zeros(Z.n_params)
    # bias-free last layer, so a constant output needs a constant hidden layer feeding it
    spec = Z.spec
    pos = 0
    for name, shape in spec.layout():
        n = int(np.prod(shape))
        if name == "b0":
            params[pos:pos + n] = 1.0
        if name == "W1":
            params[pos:pos + n] = 0.25
        pos += n
    Zc = Z.with_params(params)
    x = rng.normal(size=(6, 2))
    z0 = Zc.encode(x).value
    assert np.allclose(z0, z0[0])
    want = supervised_loss(LabeledSample(x, z0), T, D, C).value
    assert float(factor_loss_deterministic(x, Zc, T, D, C).value) == pytest.approx(float(want), abs=1e-12)


@given(st.integers(0, 10_000))
def test_factor_equals_supervised_on_encoded_labels(seed):
    rng = np.random.default_rng(seed)
    T, D = nets(rng)
    Z = label_net(rng)
    x = rng.normal(size=(7, 2))
    want = supervised_loss(LabeledSample(x, Z.encode(x).value), T, D, C).value
    assert float(factor_loss_deterministic(x, Z, T, D, C).value) == pytest.approx(float(want), abs=1e-12)


def translation_transport(betas):
    """Per-label T^k(x) = x + beta_k realised by a bias-only residual net."""
    K, d = betas.shape
    spec = NetSpec((d, d))
    params = np.concatenate([np.concatenate([np.zeros(d * d), b]) for b in betas])
    return TransportNet(spec, params, d, 0, n_labels=K)


def test_discrete_zero_q_identity_is_zero(rng):
    T = translation_transport(np.zeros((3, 2)))
    D = DiscriminatorPair(NetSpec((2, 3, 1)), np.zeros(NetSpec((2, 3, 1)).n_params + 3), None, 3)
    P = rng.dirichlet(np.ones(3), size=5)
    assert float(factor_loss_discrete(rng.normal(size=(5, 2)), P, T, D, C).value) == 0.0


def test_kmeans_equivalence_six_points():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0], [5.0, 7.0]])
    labels = np.array([0, 0, 0, 1, 1, 1])
    m = np.array([x[labels == k].mean(axis=0) for k in range(2)])
    sse = float(sum(np.sum((x[labels == k] - m[k]) ** 2) for k in range(2)))
    T = translation_transport(x.mean(axis=0) - m)
    D = DiscriminatorPair(NetSpec((2, 3, 1)), np.zeros(NetSpec((2, 3, 1)).n_params + 2), None, 2)
    P = np.eye(2)[labels]
    loss = float(factor_loss_discrete(x, P, T, D, C).value)
    total_var = float(np.sum(x.var(axis=0)))
    assert total_var - loss == pytest.approx(sse / len(x), abs=1e-12)
    pushed = T(x, labels)
    assert float(np.sum(pushed.var(axis=0))) == pytest.approx(sse / len(x), abs=1e-12)


def test_uniform_membership_centering(rng):
    T, D = nets(rng, K=2)
    x = rng.normal(size=(4, 2))
    P = np.full((4, 2), 0.5)
    q = np.asarray(D.q().value)
    qt = q - q.mean()
    want = 0.0
    for k in range(2):
        yk = T(x, np.full(4, k))
        want += 0.5 * np.sum(np.sum((x - yk) ** 2, axis=1) - D.psi_y(yk).value * qt[k])
    assert float(factor_loss_discrete(x, P, T, D, C).value) == pytest.approx(want / 4, abs=1e-13)


def test_discrete_rejects_unnormalised(rng):
    T, D = nets(rng, K=2)
    with pytest.raises(ValueError):
        factor_loss_discrete(rng.normal(size=(3, 2)), np.full((3, 2), 0.6), T, D, C)


@given(st.integers(0, 10_000))
def test_discrete_label_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    K = 3
    T, D = nets(rng, K=K)
    x = rng.normal(size=(6, 2))
    P = rng.dirichlet(np.ones(K), size=6)
    perm = rng.permutation(K)
    n = T.spec.n_params
    blocks = np.asarray(T.params).reshape(K, n)
    Tp = T.with_params(blocks[perm].ravel())
    py, q = D.parts()
    Dp = D.with_params(np.concatenate([np.asarray(py), np.asarray(q)[perm]]))
    a = float(factor_loss_discrete(x, P, T, D, C).value)
    b = float(factor_loss_discrete(x, P[:, perm], Tp, Dp, C).value)
    assert a == pytest.approx(b, abs=1e-12)


def test_kmeans_reference_matches_loss_on_blobs():
    from barynet.data import gen_clusters
    x, _ = gen_clusters(3, 3, N=90)
    labels, centers, sse = kmeans_reference(x, 3, seed=0)
    T = translation_transport(x.mean(axis=0) - centers)
    D = DiscriminatorPair(NetSpec((2, 3, 1)), np.zeros(NetSpec((2, 3, 1)).n_params + 3), None, 3)
    loss = float(factor_loss_discrete(x, np.eye(3)[labels], T, D, C).value)
    assert float(np.sum(x.var(axis=0))) - loss == pytest.approx(sse / len(x), abs=1e-8)


# ---------------------------------------------------------------------------
# semi-supervised and BAE


def test_semisup_partial_zero_psi_is_weighted_cost(rng):
    T, D = nets(rng, zero_psi=True)
    Z = label_net(rng)
    lab = LabeledSample(rng.normal(size=(4, 2)), rng.normal(size=(4, 1)))
    xu = rng.normal(size=(6, 2))
    lam = 0.3
    c1 = np.mean(np.sum((lab.xs - T(lab.xs, lab.zs)) ** 2, axis=1))
    c2 = np.mean(np.sum((xu - T(xu, Z.encode(xu).value)) ** 2, axis=1))
    got = float(semisup_loss_partial(SemiSupConfig(lam), lab, xu, Z, T, D, C).value)
    assert got == pytest.approx(lam * c1 + (1 - lam) * c2, abs=1e-13)


def test_semisup_partial_identical_blocks_equal_union(rng):
    T, D = nets(rng)
    Z = label_net(rng)
    x = rng.normal(size=(4, 2))
    lab = LabeledSample(x, Z.encode(x).value)
    got = float(semisup_loss_partial(SemiSupConfig(0.5), lab, x, Z, T, D, C).value)
    assert got == pytest.approx(float(supervised_loss(lab, T, D, C).value), abs=1e-12)


def test_semisup_config_rejects_bad_lambda():
    for lam in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ValueError):
            SemiSupConfig(lam)


def test_confounding_is_concatenated_supervised(rng):
    T, D = nets(rng, k=2)
    Z = label_net(rng)
    x, z1 = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
    full = LabeledSample(x, np.concatenate([z1, Z.encode(x).value], axis=1))
    got = float(semisup_loss_confounding(LabeledSample(x, z1), Z, T, D, C).value)
    assert got == pytest.approx(float(supervised_loss(full, T, D, C).value), abs=1e-12)


def test_confounding_identity_zero_psi(rng):
    T, D = nets(rng, k=2, zero_psi=True, random_T=False)
    Z = label_net(rng)
    batch = LabeledSample(rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
    assert float(semisup_loss_confounding(batch, Z, T, D, C).value) == 0.0


def test_bae_reduces_and_matches_oracle(rng):
    T, D = nets(rng)
    Z = label_net(rng)
    x = rng.normal(size=(6, 2))
    prior = BaePrior(NetSpec((1, 3, 1)), 1, seed=4)
    zero_phi = prior.with_params(np.zeros(prior.spec_phi.n_params))
    ps = prior.sample(8)
    base = float(factor_loss_deterministic(x, Z, T, D, C).value)
    assert float(bae_loss(x, Z, T, D, zero_phi, ps, C).value) == pytest.approx(base, abs=1e-14)
    pen = prior.phi(Z.encode(x).value).value.mean() - prior.phi(ps).value.mean()
    assert float(bae_loss(x, Z, T, D, prior, ps, C).value) == pytest.approx(base - pen, abs=1e-13)
    # identical samples on both sides cancel
    same = Z.encode(x).value
    assert float(bae_loss(x, Z, T, D, prior, same, C).value) == pytest.approx(base, abs=1e-13)
    with pytest.raises(ValueError):
        bae_loss(x, Z, T, D, prior, np.zeros((0, 1)), C)


def test_bae_prior_is_reproducible():
    a = BaePrior(NetSpec((1, 3, 1)), 1, seed=9).sample(5)
    b = BaePrior(NetSpec((1, 3, 1)), 1, seed=9).sample(5)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# MMD


def mmd_oracle(K, H):
    n = len(K)
    t1 = sum(K[i, j] * H[i, j] for i in range(n) for j in range(n)) / (n * (n - 1))
    t2 = sum(K[i, j] * H[i, l] for i in range(n) for j in range(n) for l in range(n)) * (-2.0 / n ** 3)
    t3 = sum(K[i, j] * H[l, m] for i, j, l, m in itertools.product(range(n), repeat=4)) / (n ** 2 * (n ** 2 - 1))
    return t1 + t2 + t3


def rbf(p, s):
    d = np.sum((p[:, None] - p[None]) ** 2, axis=-1)
    return np.exp(-d / (2 * s * s))


def test_mmd_matches_sum_oracle(rng):
    y, z = rng.normal(size=(3, 2)), rng.normal(size=(3, 1))
    got = float(mmd_independence_penalty(y, z, 0.7, 1.3).value)
    assert got == pytest.approx(mmd_oracle(rbf(y, 0.7), rbf(z, 1.3)), abs=1e-14)


def test_mmd_constant_labels_and_n2(rng):
    y = rng.normal(size=(3, 2))
    z = np.zeros((3, 1))
    K = rbf(y, 1.0)
    want = mmd_oracle(K, np.ones((3, 3)))
    assert float(mmd_independence_penalty(y, z, 1.0, 1.0).value) == pytest.approx(want, abs=1e-14)
    ones = np.zeros((2, 1))
    got = float(mmd_independence_penalty(ones, ones, 1.0, 1.0).value)
    assert got == pytest.approx(mmd_oracle(np.ones((2, 2)), np.ones((2, 2))), abs=1e-14)
    assert got == pytest.approx(4 / 2 - 2 * 8 / 8 + 16 / (4 * 3), abs=1e-14)
    with pytest.raises(ValueError):
        mmd_independence_penalty(np.zeros((1, 2)), np.zeros((1, 1)))


def test_mmd_deterministic(rng):
    y, z = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
    assert mmd_independence_penalty(y, z).value == mmd_independence_penalty(y, z).value


# ---------------------------------------------------------------------------
# inverse regression


def test_inverse_regression_examples(rng):
    spec = NetSpec((2, 1))
    T = TransportNet(spec, np.array([0.0, 0.0, 1.0]), 1, 1)
    S = TransportNet(spec, np.array([0.0, 0.0, -1.0]), 1, 1)
    batch = LabeledSample(rng.normal(size=(5, 1)), rng.normal(size=(5, 1)))
    assert float(inverse_regression_loss(batch, T, S, C).value) == pytest.approx(0.0, abs=1e-15)
    Tr, _ = nets(rng)
    Sr, _ = nets(rng)
    b2 = LabeledSample(rng.normal(size=(4, 2)), rng.normal(size=(4, 1)))
    back = Sr(Tr(b2.xs, b2.zs), b2.zs)
    want = np.mean([np.sum((b2.xs[i] - back[i]) ** 2) for i in range(4)])
    assert float(inverse_regression_loss(b2, Tr, Sr, C).value) == pytest.approx(want, abs=1e-13)


def test_inverse_regression_does_not_differentiate_t(rng):
    T, _ = nets(rng)
    S, _ = nets(rng)
    batch = LabeledSample(rng.normal(size=(4, 2)), rng.normal(size=(4, 1)))
    _, g = ad.value_and_grad(lambda p: inverse_regression_loss(batch, T.with_params(p), S, C),
                             np.asarray(T.params))
    assert np.array_equal(g, np.zeros_like(g))


# ---------------------------------------------------------------------------
# gradient suite: every objective, random architectures and batches


@pytest.mark.parametrize("seed", range(gc.N_CONFIGS))
def test_gradient_suite(seed):
    kind, analytic, fd = gc.gradients(seed)
    err = ad.relative_errors(analytic, fd)
    assert err.max() < 1e-5, f"{kind}: relative gradient error {err.max():.2e} at {err.argmax()}"


def test_gradient_suite_covers_all_objectives():
    kinds = {gc.config(s)[0] for s in range(gc.N_CONFIGS)}
    assert kinds >= {"supervised", "factor", "discrete", "partial", "confounding", "bae", "mmd"}
    assert gc.N_CONFIGS >= 100


def test_centering_kills_psi_y_offset(rng):
    """The last bias of psi_Y is a symmetry direction: its exact derivative is zero."""
    T, D = nets(rng)
    batch = LabeledSample(rng.normal(size=(5, 2)), rng.normal(size=(5, 1)))
    p = np.asarray(D.params, dtype=float)
    last_bias = D.spec_y.n_params - 1
    _, g = ad.value_and_grad(lambda q: supervised_loss(batch, T, D.with_params(q), C), p)
    assert abs(g[last_bias]) < 1e-15
