"""Scikit-learn style front ends for the BaryNet problems.

Each estimator builds the nets from architecture strings, assembles a
:class:`~barynet.training.SaddleProblem`, trains it and exposes the learned
maps through ``transform`` / ``predict`` style methods.
"""
from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .costs import CostSpec
from .nets import (DiscriminatorPair, LabelNet, NetSpec, TransportNet, calibrate_batch_norm,
                   clamp_vector)
from .objectives import (BaePrior, LabeledSample, SemiSupConfig, bae_loss,
                         factor_loss_deterministic, factor_loss_discrete, median_bandwidth,
                         mmd_supervised_loss, semisup_loss_confounding, semisup_loss_partial,
                         supervised_loss)
from .training import Block, SaddleProblem, train_descent, train_saddle
from .transport import (TransportPair, barycenter_kde, compose_pairwise, density_from_jacobian,
                        fit_inverse, push_to_barycenter)


def _cost(cost) -> CostSpec:
    if isinstance(cost, CostSpec):
        return cost
    return CostSpec.parse(cost)


def _labels(z, n: int):
    """Validate labels: 1-D integers mean a finite label set, anything else is Euclidean."""
    z = np.asarray(z)
    if z.ndim == 1 and np.issubdtype(z.dtype, np.integer):
        if len(z) != n:
            raise ValueError("X and z must have the same number of rows")
        return z.astype(np.int64)
    z = check_array(z.reshape(len(z), -1) if z.ndim == 1 else z, dtype=np.float64)
    if len(z) != n:
        raise ValueError("X and z must have the same number of rows")
    return z


class _SaddleEstimator(BaseEstimator):
    """Optimiser and inverse-map settings shared by all estimators."""

    def _train_kwargs(self, rng):
        return dict(optimizer=self.optimizer, n_iter=self.n_iter, batch_size=self.batch_size,
                    lr=self.lr, gamma=self.gamma, eps=self.eps, beta=self.beta,
                    lr_max=self.lr_max, rng=rng, disc_steps=self.disc_steps)

    def _run(self, problem, parts, sample, rng, **extra):
        w0 = problem.pack(**parts)
        start = time.time()
        w, hist = train_saddle(problem, w0, sample, **self._train_kwargs(rng), **extra)
        self.train_time_ = time.time() - start
        self.history_ = hist
        self.loss_curve_ = np.asarray(hist.losses)
        return problem.unpack(w)


def _spec(arch, default, **flags) -> NetSpec:
    return NetSpec.from_string(arch if arch is not None else default, **flags)


class SupervisedBaryNet(_SaddleEstimator, TransformerMixin):
    """Conditional barycenter of ``X`` given labels ``z``.

    ``z`` may be an (n, k) real array or a length-n integer array of labels
    ``0..K-1``; in the latter case one residual map per label is trained.
    ``objective='mmd'`` replaces the adversarial pair by the MMD penalty.
    """

    def __init__(self, arch_T=None, arch_psiY=None, arch_psiZ=None, psi_activation="relu",
                 objective="minimax", mmd_weight=1.0, cost="sqeuclid", optimizer="qitd",
                 n_iter=10_000, batch_size=None, lr=4e-3, gamma=0.75, eps=1e-3, beta=0.1,
                 lr_max=2e-2, disc_steps=1, arch_S=None, inverse_optimizer="sgd",
                 inverse_n_iter=20_000, inverse_lr=5e-2, inverse_batch_size=None,
                 random_state=0):
        self.arch_T = arch_T
        self.arch_psiY = arch_psiY
        self.arch_psiZ = arch_psiZ
        self.psi_activation = psi_activation
        self.objective = objective
        self.mmd_weight = mmd_weight
        self.cost = cost
        self.optimizer = optimizer
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.lr = lr
        self.gamma = gamma
        self.eps = eps
        self.beta = beta
        self.lr_max = lr_max
        self.disc_steps = disc_steps
        self.arch_S = arch_S
        self.inverse_optimizer = inverse_optimizer
        self.inverse_n_iter = inverse_n_iter
        self.inverse_lr = inverse_lr
        self.inverse_batch_size = inverse_batch_size
        self.random_state = random_state

    def _build(self, sample, rng):
        d = sample.x_dim
        act = self.psi_activation
        if sample.discrete:
            K = sample.n_labels
            T = TransportNet.create(_spec(self.arch_T, f"{d}-7-7-{d}"), d, 0, n_labels=K, rng=rng)
            D = DiscriminatorPair.create(_spec(self.arch_psiY, f"{d}-6-6-1", hidden_activation=act),
                                         None, n_labels=K, rng=rng)
        else:
            k = sample.z_dim
            T = TransportNet.create(_spec(self.arch_T, f"{d + k}-7-7-{d}"), d, k, rng=rng)
            D = DiscriminatorPair.create(_spec(self.arch_psiY, f"{d}-6-6-1", hidden_activation=act),
                                         _spec(self.arch_psiZ, f"{k}-5-1", hidden_activation=act),
                                         rng=rng)
        return T, D

    def fit(self, X, z):
        X = check_array(X, dtype=np.float64)
        z = _labels(z, len(X))
        n_labels = None
        if z.ndim == 1:
            n_labels = max(int(z.max()) + 1, 2)
        sample = LabeledSample(X, z, n_labels=n_labels)
        rng = np.random.default_rng(self.random_state)
        c = _cost(self.cost)
        T, D = self._build(sample, rng)
        self.n_features_in_ = X.shape[1]
        self.cost_ = c
        if self.objective == "minimax":
            problem = SaddleProblem(
                [Block("T", T.n_params, "min"), Block("D", D.n_params, "max")],
                lambda p, b: supervised_loss(b, T.with_params(p["T"]), D.with_params(p["D"]), c))
            parts = self._run(problem, {"T": T.params, "D": D.params}, sample, rng)
            self.T_ = T.with_params(parts["T"])
            self.D_ = D.with_params(parts["D"])
        elif self.objective == "mmd":
            zfeat = np.eye(n_labels)[z] if sample.discrete else z
            sy, sz = median_bandwidth(X), median_bandwidth(zfeat)

            def vg(p, b):
                return ad.value_and_grad(
                    lambda pn: mmd_supervised_loss(b, T.with_params(pn), c, self.mmd_weight, sy, sz), p)

            start = time.time()
            opt = self.optimizer if self.optimizer in ("sgd", "adam") else "adam"
            params, hist = train_descent(vg, T.params, sample, optimizer=opt, n_iter=self.n_iter,
                                         batch_size=self.batch_size, lr=self.lr, rng=rng)
            self.train_time_ = time.time() - start
            self.history_ = hist
            self.loss_curve_ = np.asarray(hist.losses)
            self.T_ = T.with_params(params)
            self.D_ = None
        else:
            raise ValueError("objective must be 'minimax' or 'mmd'")
        self.sample_ = sample
        self.barycenter_ = push_to_barycenter(sample, self.T_)
        self.pair_ = TransportPair(self.T_, None, c)
        return self

    def transform(self, X, z):
        check_is_fitted(self, "T_")
        X = check_array(X, dtype=np.float64)
        return self.T_(X, _labels(z, len(X)))

    def fit_inverse(self):
        """Regress the inverse maps on the training sample (T frozen)."""
        check_is_fitted(self, "T_")
        spec = NetSpec.from_string(self.arch_S) if self.arch_S else None
        self.pair_ = fit_inverse(self.sample_, self.T_, spec, optimizer=self.inverse_optimizer,
                                 n_iter=self.inverse_n_iter, lr=self.inverse_lr,
                                 batch_size=self.inverse_batch_size, c=self.cost_,
                                 seed=self.random_state)
        self.inverse_loss_ = self.pair_.final_loss
        return self

    def inverse_transform(self, Y, z):
        check_is_fitted(self, "T_")
        Y = check_array(Y, dtype=np.float64)
        z = np.asarray(z)
        return self.pair_.inverse(Y, z if z.ndim == 0 else _labels(z, len(Y)))

    def sample(self, z, n=None):
        """Conditional sample at label ``z`` pulled back from the learned barycenter."""
        ys = self.barycenter_ if n is None else self.barycenter_[:n]
        return self.pair_.inverse(ys, z)

    def transfer(self, X, source, target):
        """``S_target(T_source(x))`` for a finite label set."""
        check_is_fitted(self, "T_")
        return compose_pairwise(self.pair_, self.pair_, source, target)(check_array(X))

    def density(self, X, z, method="reverse"):
        check_is_fitted(self, "T_")
        kde = barycenter_kde(self.barycenter_)
        return density_from_jacobian(self.T_, z, kde, check_array(X, dtype=np.float64), method=method)


class _LabelNetMixin:
    """Label-net construction, clamping and batch-norm statistics."""

    def _label_spec(self, d, out):
        return _spec(self.arch_z, f"{d}-{out}", hidden_activation=self.label_activation,
                     batch_norm_hidden=self.label_batch_norm, lipschitz_clamp_bound=self.clamp)

    def _post_step(self, problem, spec):
        if not self.clamp:
            return None
        mask = problem.mask("z")

        def post(w):
            w = w.copy()
            w[mask] = clamp_vector(w[mask], self.clamp, spec, self.clamp_bias_and_bn)
            return w

        return post

    def _finalize_label_net(self, Z, X):
        """Evaluation-mode label net whose batch-norm statistics are those of the training set."""
        return calibrate_batch_norm(Z, X)


class FactorDiscovery(_SaddleEstimator, _LabelNetMixin, TransformerMixin):
    """Unsupervised discovery of a continuous latent factor ``z_theta(x)``.

    The label net is bias-free in its last layer and clamped to
    ``[-clamp, clamp]`` after every step; ``label_step_scale`` slows its
    updates relative to the transport map and discriminators.
    """

    def __init__(self, arch_T=None, arch_psiY=None, arch_psiZ=None, arch_z=None, z_dim=1,
                 psi_activation="leaky_relu", label_activation="leaky_relu",
                 label_batch_norm=True, clamp=1.0, clamp_bias_and_bn=True, label_step_scale=0.1,
                 cost="sqeuclid", optimizer="omd", n_iter=6000, batch_size=None, lr=1e-2,
                 gamma=0.75, eps=1e-3, beta=0.1, lr_max=2e-2, disc_steps=1, random_state=0):
        self.arch_T = arch_T
        self.arch_psiY = arch_psiY
        self.arch_psiZ = arch_psiZ
        self.arch_z = arch_z
        self.z_dim = z_dim
        self.psi_activation = psi_activation
        self.label_activation = label_activation
        self.label_batch_norm = label_batch_norm
        self.clamp = clamp
        self.clamp_bias_and_bn = clamp_bias_and_bn
        self.label_step_scale = label_step_scale
        self.cost = cost
        self.optimizer = optimizer
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.lr = lr
        self.gamma = gamma
        self.eps = eps
        self.beta = beta
        self.lr_max = lr_max
        self.disc_steps = disc_steps
        self.random_state = random_state

    def _nets(self, d, rng):
        k = self.z_dim
        act = self.psi_activation
        T = TransportNet.create(_spec(self.arch_T, f"{d + k}-7-7-{d}"), d, k, rng=rng)
        D = DiscriminatorPair.create(_spec(self.arch_psiY, f"{d}-6-6-1", hidden_activation=act),
                                     _spec(self.arch_psiZ, f"{k}-5-1", hidden_activation=act),
                                     rng=rng)
        Z = LabelNet.create(self._label_spec(d, k), rng=rng, clamp_bias_and_bn=self.clamp_bias_and_bn)
        if Z.spec.n_out != k:
            raise ValueError(f"label net must output {k} dims")
        return T, D, Z

    def _loss(self, T, D, Z, c):
        return lambda p, b: factor_loss_deterministic(
            b, Z.with_params(p["z"]), T.with_params(p["T"]), D.with_params(p["D"]), c)

    def _extra_parts(self, D, rng):
        return {}

    def _store_extra(self, values):
        pass

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        rng = np.random.default_rng(self.random_state)
        c = _cost(self.cost)
        T, D, Z = self._nets(X.shape[1], rng)
        extra = self._extra_parts(D, rng)
        d_params = np.concatenate([np.asarray(D.params)] + list(extra.values()))
        problem = SaddleProblem(
            [Block("T", T.n_params, "min"), Block("D", d_params.size, "max"),
             Block("z", Z.n_params, "max", self.label_step_scale)],
            self._loss(T, D, Z, c))
        parts = self._run(problem, {"T": T.params, "D": d_params, "z": Z.params}, X, rng,
                          post_step=self._post_step(problem, Z.spec), inner_blocks=["D"])
        self.n_features_in_ = X.shape[1]
        self.cost_ = c
        self.T_ = T.with_params(parts["T"])
        self.D_ = D.with_params(parts["D"][:D.n_params])
        self._store_extra(parts["D"][D.n_params:])
        self.label_net_ = self._finalize_label_net(Z.with_params(parts["z"]), X)
        self.labels_ = self.transform(X)
        self.barycenter_ = self.T_(X, self.labels_)
        return self

    def transform(self, X):
        check_is_fitted(self, "label_net_")
        X = check_array(X, dtype=np.float64)
        return self.label_net_.encode(X).value


class BarycentricAutoencoder(FactorDiscovery):
    """Factor discovery with the latent marginal pushed toward a unit Gaussian by ``phi``."""

    def __init__(self, arch_phi=None, prior_seed=0, arch_T=None, arch_psiY=None, arch_psiZ=None,
                 arch_z=None, z_dim=1, psi_activation="leaky_relu", label_activation="leaky_relu",
                 label_batch_norm=True, clamp=1.0, clamp_bias_and_bn=True, label_step_scale=0.1,
                 cost="sqeuclid", optimizer="omd", n_iter=6000, batch_size=None, lr=1e-2,
                 gamma=0.75, eps=1e-3, beta=0.1, lr_max=2e-2, disc_steps=1, random_state=0):
        super().__init__(arch_T, arch_psiY, arch_psiZ, arch_z, z_dim, psi_activation,
                         label_activation, label_batch_norm, clamp, clamp_bias_and_bn,
                         label_step_scale, cost, optimizer, n_iter, batch_size, lr, gamma, eps,
                         beta, lr_max, disc_steps, random_state)
        self.arch_phi = arch_phi
        self.prior_seed = prior_seed

    def _extra_parts(self, D, rng):
        k = self.z_dim
        self._prior = BaePrior(_spec(self.arch_phi, f"{k}-5-1", hidden_activation=self.psi_activation),
                               k, self.prior_seed)
        return {"phi": np.asarray(self._prior.params)}

    def _loss(self, T, D, Z, c):
        prior = self._prior
        n_d = D.n_params
        cache = {}

        def loss(p, b):
            n = len(b)
            if n not in cache:
                cache[n] = prior.sample(n)
            dpart = p["D"]
            Dn = D.with_params(ad.segment(dpart, 0, (n_d,)))
            phi = prior.with_params(ad.segment(dpart, n_d, (prior.spec_phi.n_params,)))
            return bae_loss(b, Z.with_params(p["z"]), T.with_params(p["T"]), Dn, phi, cache[n], c)

        return loss

    def _store_extra(self, values):
        self.prior_ = self._prior.with_params(values)

    def latent_score(self, Z):
        """Critic ``phi`` on latent codes; informative only after ``fit``."""
        check_is_fitted(self, "prior_")
        return self.prior_.phi(np.asarray(Z, dtype=np.float64).reshape(-1, self.z_dim)).value


class BaryNetClustering(_SaddleEstimator, ClusterMixin):
    """Soft clustering: SoftMax memberships over K labels, one transport map per label."""

    def __init__(self, n_clusters=2, arch_T=None, arch_psiY=None, arch_p=None,
                 psi_activation="relu", membership_step_scale=1.0, cost="sqeuclid",
                 optimizer="qitd", n_iter=1500, batch_size=None, lr=4e-3, gamma=0.75, eps=1e-3,
                 beta=0.1, lr_max=2e-2, disc_steps=1, random_state=0):
        self.n_clusters = n_clusters
        self.arch_T = arch_T
        self.arch_psiY = arch_psiY
        self.arch_p = arch_p
        self.psi_activation = psi_activation
        self.membership_step_scale = membership_step_scale
        self.cost = cost
        self.optimizer = optimizer
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.lr = lr
        self.gamma = gamma
        self.eps = eps
        self.beta = beta
        self.lr_max = lr_max
        self.disc_steps = disc_steps
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        K, d = self.n_clusters, X.shape[1]
        if K < 2 or K > len(X):
            raise ValueError("need 2 <= n_clusters <= n_samples")
        rng = np.random.default_rng(self.random_state)
        c = _cost(self.cost)
        T = TransportNet.create(_spec(self.arch_T, f"{d}-7-7-{d}"), d, 0, n_labels=K, rng=rng)
        D = DiscriminatorPair.create(_spec(self.arch_psiY, f"{d}-6-6-1", hidden_activation=self.psi_activation),
                                     None, n_labels=K, rng=rng)
        Pn = LabelNet.create(_spec(self.arch_p, f"{d}-8-{K}"), n_labels=K, rng=rng)
        problem = SaddleProblem(
            [Block("T", T.n_params, "min"), Block("D", D.n_params, "max"),
             Block("z", Pn.n_params, "max", self.membership_step_scale)],
            lambda p, b: factor_loss_discrete(b, Pn.with_params(p["z"]).memberships(b),
                                              T.with_params(p["T"]), D.with_params(p["D"]), c))
        parts = self._run(problem, {"T": T.params, "D": D.params, "z": Pn.params}, X, rng,
                          inner_blocks=["D"])
        self.n_features_in_ = X.shape[1]
        self.cost_ = c
        self.T_ = T.with_params(parts["T"])
        self.D_ = D.with_params(parts["D"])
        self.membership_net_ = Pn.with_params(parts["z"])
        self.labels_ = self.predict(X)
        self.barycenter_ = self.T_(X, self.labels_)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "membership_net_")
        return self.membership_net_.memberships(check_array(X, dtype=np.float64)).value

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class SemiSupervisedBaryNet(_SaddleEstimator, _LabelNetMixin, TransformerMixin):
    """Factor discovery with partial supervision.

    ``mode='partial'``: ``fit(X, z, X_unlabeled)`` with labels known on ``X``
    only, blocks weighted by ``lam`` and ``1 - lam``.
    ``mode='confounding'``: ``fit(X, z)`` where ``z`` is a known factor and a
    further ``z_dim`` factors are discovered; ``transform`` returns the latter.
    """

    def __init__(self, mode="partial", lam=0.5, z_dim=1, arch_T=None, arch_psiY=None,
                 arch_psiZ=None, arch_z=None, psi_activation="leaky_relu",
                 label_activation="leaky_relu", label_batch_norm=True, clamp=1.0,
                 clamp_bias_and_bn=True, label_step_scale=0.1, cost="sqeuclid", optimizer="omd",
                 n_iter=4000, batch_size=None, lr=1e-2, gamma=0.75, eps=1e-3, beta=0.1,
                 lr_max=2e-2, disc_steps=1, random_state=0):
        self.mode = mode
        self.lam = lam
        self.z_dim = z_dim
        self.arch_T = arch_T
        self.arch_psiY = arch_psiY
        self.arch_psiZ = arch_psiZ
        self.arch_z = arch_z
        self.psi_activation = psi_activation
        self.label_activation = label_activation
        self.label_batch_norm = label_batch_norm
        self.clamp = clamp
        self.clamp_bias_and_bn = clamp_bias_and_bn
        self.label_step_scale = label_step_scale
        self.cost = cost
        self.optimizer = optimizer
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.lr = lr
        self.gamma = gamma
        self.eps = eps
        self.beta = beta
        self.lr_max = lr_max
        self.disc_steps = disc_steps
        self.random_state = random_state

    def fit(self, X, z, X_unlabeled=None):
        X = check_array(X, dtype=np.float64)
        z = _labels(z, len(X))
        if z.ndim == 1:
            raise ValueError("semi-supervised modes need real-valued labels")
        rng = np.random.default_rng(self.random_state)
        c = _cost(self.cost)
        d = X.shape[1]
        act = self.psi_activation
        if self.mode == "partial":
            if X_unlabeled is None:
                raise ValueError("partial mode needs X_unlabeled")
            Xu = check_array(X_unlabeled, dtype=np.float64)
            k_total, k_out = z.shape[1], z.shape[1]
            cfg = SemiSupConfig(self.lam)
        elif self.mode == "confounding":
            Xu = None
            k_total, k_out = z.shape[1] + self.z_dim, self.z_dim
        else:
            raise ValueError("mode must be 'partial' or 'confounding'")
        T = TransportNet.create(_spec(self.arch_T, f"{d + k_total}-7-7-{d}"), d, k_total, rng=rng)
        D = DiscriminatorPair.create(_spec(self.arch_psiY, f"{d}-6-6-1", hidden_activation=act),
                                     _spec(self.arch_psiZ, f"{k_total}-5-1", hidden_activation=act),
                                     rng=rng)
        Z = LabelNet.create(self._label_spec(d, k_out), rng=rng, clamp_bias_and_bn=self.clamp_bias_and_bn)
        labeled = LabeledSample(X, z)
        if self.mode == "partial":
            def loss(p, b):
                return semisup_loss_partial(cfg, labeled, b, Z.with_params(p["z"]),
                                            T.with_params(p["T"]), D.with_params(p["D"]), c)
            data = Xu
        else:
            def loss(p, b):
                return semisup_loss_confounding(b, Z.with_params(p["z"]), T.with_params(p["T"]),
                                                D.with_params(p["D"]), c)
            data = labeled
        problem = SaddleProblem(
            [Block("T", T.n_params, "min"), Block("D", D.n_params, "max"),
             Block("z", Z.n_params, "max", self.label_step_scale)], loss)
        parts = self._run(problem, {"T": T.params, "D": D.params, "z": Z.params}, data, rng,
                          post_step=self._post_step(problem, Z.spec), inner_blocks=["D"])
        self.n_features_in_ = d
        self.cost_ = c
        self.T_ = T.with_params(parts["T"])
        self.D_ = D.with_params(parts["D"])
        fit_rows = Xu if self.mode == "partial" else X
        self.label_net_ = self._finalize_label_net(Z.with_params(parts["z"]), fit_rows)
        return self

    def transform(self, X):
        check_is_fitted(self, "label_net_")
        return self.label_net_.encode(check_array(X, dtype=np.float64)).value
