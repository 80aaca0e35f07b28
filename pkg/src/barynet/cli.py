"""Command-line entry point: ``barynet <subcommand> [flags]``.

Every run writes a directory holding ``manifest.json``, a loss curve
``loss.csv`` and the subcommand's outputs. Exit status is 0 on success, 1 on
a configuration error and 2 on a numerical abort.
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import time
import warnings

import numpy as np

from . import data as gen
from .autodiff import DimensionError
from .costs import CostDomainError, CostSpec
from .estimators import (BarycentricAutoencoder, BaryNetClustering, FactorDiscovery,
                         SemiSupervisedBaryNet, SupervisedBaryNet)
from .fileio import (FormatError, RunManifest, load_csv, load_image_ppm, load_model, ppm_shape,
                     save_model, write_csv, write_image_ppm, write_points_csv,
                     write_sample_csv)
from .nets import LabelError, NetSpec
from .optimizers import NumericalAbort
from .oracle import energy_distance, run_suite
from .transport import TransportPair, fit_inverse

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
ENERGY_SUBSAMPLE = 2000


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# argument groups


def _add_out(p, default):
    p.add_argument("--out", default=default, help="run directory (created if missing)")
    p.add_argument("--seed", type=int, default=0)


def _add_data(p):
    p.add_argument("--data", required=True, help="CSV with x1..xd and label or z1..zk columns")
    p.add_argument("--drop-incomplete", action="store_true", help="discard rows with missing values")


def _add_training(p, optimizers=("omd", "qitd", "sgd", "adam")):
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int, help="minibatch size (default: full sample)")
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=optimizers)
    p.add_argument("--cost", default="sqeuclid", help="sqeuclid | greatcircle | weighted:<Q.csv>")
    p.add_argument("--arch-T")
    p.add_argument("--arch-psiY")
    p.add_argument("--gamma", type=float, help="QITD step decrease factor")
    p.add_argument("--eps", type=float, help="QITD constraint slack")
    p.add_argument("--beta", type=float, help="QITD rank-one damping")
    p.add_argument("--lr-max", type=float, help="QITD step ceiling")


def _add_label_net(p):
    p.add_argument("--arch-psiZ")
    p.add_argument("--arch-z")
    p.add_argument("--clamp", type=float, help="label-net parameter bound")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="barynet", description="Optimal-transport barycenter toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic data set")
    kind = p.add_mutually_exclusive_group(required=True)
    for name in ("mixture", "clusters", "latent", "images"):
        kind.add_argument(f"--{name}", dest="kind", action="store_const", const=name)
    p.add_argument("-n", "--n", type=int, default=500, help="sample size")
    p.add_argument("-k", "--k", type=int, default=3, help="clusters")
    p.add_argument("--std", type=float, default=0.3)
    p.add_argument("--dim", type=int, default=5, help="ambient dimension of the latent curve")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--size", type=int, default=64, help="image side in pixels")
    _add_out(p, "runs/gen")

    p = sub.add_parser("fit-supervised", help="learn T(x, z) onto the conditional barycenter")
    _add_data(p)
    _add_training(p)
    p.add_argument("--arch-psiZ")
    p.add_argument("--objective", choices=("minimax", "mmd"), default="minimax")
    _add_out(p, "runs/fit-supervised")

    p = sub.add_parser("fit-unsupervised", help="discover a latent factor z(x)")
    _add_data(p)
    _add_training(p)
    _add_label_net(p)
    p.add_argument("--mode", choices=("factor", "bae", "confounding"), default="factor")
    p.add_argument("--labeled", help="CSV of labelled rows; enables semi-supervised training")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5,
                   help="weight of the labelled block in semi-supervised training")
    _add_out(p, "runs/fit-unsupervised")

    p = sub.add_parser("cluster", help="BaryNet clustering")
    _add_data(p)
    _add_training(p)
    p.add_argument("-k", "--k", type=int, required=True)
    p.add_argument("--arch-p", help="membership logit net")
    _add_out(p, "runs/cluster")

    p = sub.add_parser("invert", help="fit S(y, z) for a fit-supervised run")
    p.add_argument("--run", required=True, help="fit-supervised run directory")
    p.add_argument("--iters", type=int, default=20_000)
    p.add_argument("--lr", type=float, default=5e-2)
    p.add_argument("--batch", type=int)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--arch-S")
    _add_out(p, "runs/invert")

    p = sub.add_parser("sample-conditional", help="pull barycenter points back to a label")
    p.add_argument("--run", required=True, help="invert run directory")
    p.add_argument("--z", required=True, help="label: integer class or comma-separated vector")
    p.add_argument("-n", "--n", type=int, help="number of barycenter points to use")
    _add_out(p, "runs/sample-conditional")

    p = sub.add_parser("color-transfer", help="palette transfer between PPM images")
    p.add_argument("--images", nargs="+", required=True, help="two or more binary P6 files")
    _add_training(p)
    p.add_argument("--inverse-iters", type=int, default=2000)
    p.add_argument("--inverse-lr", type=float, default=1e-2)
    p.add_argument("--inverse-batch", type=int, default=1000)
    _add_out(p, "runs/color-transfer")

    p = sub.add_parser("validate", help="run the oracle suite and print a JSON report")
    _add_out(p, None)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _training_kwargs(args, **defaults) -> dict:
    """Map CLI flags onto estimator parameters, leaving unset ones at their defaults."""
    names = {"iters": "n_iter", "batch": "batch_size", "lr": "lr", "optimizer": "optimizer",
             "arch_T": "arch_T", "arch_psiY": "arch_psiY", "arch_psiZ": "arch_psiZ",
             "arch_z": "arch_z", "clamp": "clamp", "gamma": "gamma", "eps": "eps", "beta": "beta",
             "lr_max": "lr_max"}
    out = dict(defaults)
    for flag, param in names.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[param] = value
    out["cost"] = CostSpec.parse(args.cost)
    out["random_state"] = args.seed
    return out


def _params_for_manifest(est, args) -> dict:
    params = est.get_params()
    params["cost"] = args.cost
    return params


def _load(args):
    return load_csv(args.data, drop_incomplete=args.drop_incomplete)


def _finish(manifest: RunManifest, out: str, started: float, est=None) -> int:
    if est is not None:
        est.history_.write_csv(os.path.join(out, "loss.csv"))
        manifest.outputs["loss"] = "loss.csv"
        manifest.metrics["final_loss"] = est.history_.losses[-1]
    manifest.stamp(started).write(out)
    return EXIT_OK


def _rows(z, n: int, discrete: bool):
    if discrete:
        return np.full(n, int(z))
    return np.tile(np.asarray(z, dtype=np.float64).reshape(1, -1), (n, 1))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args, out, manifest):
    if args.kind == "mixture":
        write_sample_csv(os.path.join(out, "data.csv"), gen.gen_mixture(args.seed, args.n))
        manifest.outputs["data"] = "data.csv"
    elif args.kind == "clusters":
        pts, labels = gen.gen_clusters(args.seed, args.k, std=args.std, N=args.n)
        write_points_csv(os.path.join(out, "data.csv"), pts)
        write_csv(os.path.join(out, "truth.csv"), {"label": labels})
        manifest.outputs.update(data="data.csv", truth="truth.csv")
    elif args.kind == "latent":
        pts, z = gen.gen_latent_curve(args.seed, args.n, d=args.dim, noise=args.noise)
        write_points_csv(os.path.join(out, "data.csv"), pts)
        write_csv(os.path.join(out, "truth.csv"), {"z_star": z})
        manifest.outputs.update(data="data.csv", truth="truth.csv")
    else:
        for k, img in enumerate(gen.synthetic_images(args.seed, args.size)):
            name = f"image{k}.ppm"
            write_image_ppm(os.path.join(out, name), img)
            manifest.outputs[f"image{k}"] = name
    manifest.params.update(kind=args.kind, n=args.n, k=args.k, std=args.std, dim=args.dim,
                           noise=args.noise, size=args.size)
    return None


def cmd_fit_supervised(args, out, manifest):
    sample = _load(args)
    if sample.zs is None:
        raise ConfigError(f"{args.data}: supervised fitting needs label or z columns")
    est = SupervisedBaryNet(objective=args.objective, **_training_kwargs(args)).fit(sample.xs, sample.zs)
    write_points_csv(os.path.join(out, "barycenter.csv"), est.barycenter_, prefix="y")
    save_model(os.path.join(out, "model.json"), T=est.T_)
    manifest.params.update(_params_for_manifest(est, args))
    manifest.inputs["data"] = os.path.abspath(args.data)
    manifest.outputs.update(barycenter="barycenter.csv", model="model.json")
    return est


def cmd_fit_unsupervised(args, out, manifest):
    xs = _load(args).xs
    kw = _training_kwargs(args)
    if args.labeled:
        labeled = load_csv(args.labeled, drop_incomplete=args.drop_incomplete)
        if labeled.zs is None or labeled.discrete:
            raise ConfigError(f"{args.labeled}: needs real-valued z columns")
        est = SemiSupervisedBaryNet(mode="partial", lam=args.lam, **kw).fit(labeled.xs, labeled.zs, xs)
        manifest.inputs["labeled"] = os.path.abspath(args.labeled)
    elif args.mode == "confounding":
        sample = _load(args)
        if sample.zs is None or sample.discrete:
            raise ConfigError(f"{args.data}: confounding mode needs the known factor as z columns")
        est = SemiSupervisedBaryNet(mode="confounding", **kw).fit(sample.xs, sample.zs)
    elif args.mode == "bae":
        est = BarycentricAutoencoder(**kw).fit(xs)
    else:
        est = FactorDiscovery(**kw).fit(xs)
    z = est.transform(xs)
    write_csv(os.path.join(out, "latent.csv"), {f"z{i + 1}": z[:, i] for i in range(z.shape[1])})
    save_model(os.path.join(out, "model.json"), T=est.T_, label=est.label_net_)
    manifest.params.update(_params_for_manifest(est, args))
    manifest.inputs["data"] = os.path.abspath(args.data)
    manifest.outputs.update(latent="latent.csv", model="model.json")
    return est


def cmd_cluster(args, out, manifest):
    xs = _load(args).xs
    est = BaryNetClustering(n_clusters=args.k, arch_p=args.arch_p, **_training_kwargs(args)).fit(xs)
    proba = est.predict_proba(xs)
    cols = {"label": est.labels_}
    cols.update({f"p{k}": proba[:, k] for k in range(args.k)})
    write_csv(os.path.join(out, "labels.csv"), cols)
    write_points_csv(os.path.join(out, "barycenter.csv"), est.barycenter_, prefix="y")
    save_model(os.path.join(out, "model.json"), T=est.T_, membership=est.membership_net_)
    manifest.params.update(_params_for_manifest(est, args))
    manifest.inputs["data"] = os.path.abspath(args.data)
    manifest.outputs.update(labels="labels.csv", barycenter="barycenter.csv", model="model.json")
    manifest.metrics["cluster_sizes"] = np.bincount(est.labels_, minlength=args.k).tolist()
    return est


def cmd_invert(args, out, manifest):
    source = RunManifest.read(args.run)
    if source.subcommand != "fit-supervised":
        raise ConfigError(f"{args.run} is a {source.subcommand} run, not fit-supervised")
    T = load_model(os.path.join(args.run, "model.json"))["T"]
    sample = load_csv(source.inputs["data"], drop_incomplete=True)
    spec = NetSpec.from_string(args.arch_S) if args.arch_S else None
    cost = CostSpec.parse(source.params.get("cost", "sqeuclid"))
    pair = fit_inverse(sample, T, spec, optimizer=args.optimizer, n_iter=args.iters, lr=args.lr,
                       batch_size=args.batch, c=cost, seed=args.seed)
    save_model(os.path.join(out, "model.json"), T=pair.T, S=pair.S)
    shutil.copyfile(os.path.join(args.run, "barycenter.csv"), os.path.join(out, "barycenter.csv"))
    pair.history.write_csv(os.path.join(out, "loss.csv"))
    manifest.params.update(iters=args.iters, lr=args.lr, batch=args.batch, optimizer=args.optimizer,
                           arch_S=spec.arch if spec else T.spec.arch, cost=source.params.get("cost", "sqeuclid"))
    manifest.inputs.update(run=os.path.abspath(args.run), data=source.inputs["data"])
    manifest.outputs.update(model="model.json", barycenter="barycenter.csv", loss="loss.csv")
    manifest.metrics.update(final_loss=pair.final_loss, maps_trained=pair.n_maps)
    return None


def cmd_sample_conditional(args, out, manifest):
    nets = load_model(os.path.join(args.run, "model.json"))
    if "S" not in nets:
        raise ConfigError(f"{args.run} has no inverse map; run `invert` first")
    pair = TransportPair(nets["T"], nets["S"])
    ys = np.loadtxt(os.path.join(args.run, "barycenter.csv"), delimiter=",", skiprows=1, ndmin=2)
    if args.n is not None:
        ys = ys[:args.n]
    try:
        z = [float(v) for v in args.z.split(",")]
    except ValueError:
        raise ConfigError(f"--z: cannot parse {args.z!r}") from None
    discrete = pair.T.n_labels is not None
    if discrete and (len(z) != 1 or z[0] != int(z[0])):
        raise ConfigError("--z must be a single integer label for this model")
    if not discrete and len(z) != pair.T.z_dim:
        raise ConfigError(f"--z needs {pair.T.z_dim} comma-separated values")
    xs = pair.inverse(ys, _rows(z[0] if discrete else z, len(ys), discrete))
    write_points_csv(os.path.join(out, "conditional.csv"), xs)
    manifest.params.update(z=z, n=len(ys))
    manifest.inputs["run"] = os.path.abspath(args.run)
    manifest.outputs["conditional"] = "conditional.csv"
    return None


def cmd_color_transfer(args, out, manifest):
    if len(args.images) < 2:
        raise ConfigError("color transfer needs at least two images")
    dists = [load_image_ppm(p) for p in args.images]
    shapes = [ppm_shape(p) for p in args.images]
    X = np.concatenate([d.points for d in dists])
    z = np.concatenate([np.full(len(d.points), k) for k, d in enumerate(dists)])
    kw = _training_kwargs(args, arch_T="3-25-3-25-3", arch_psiY="3-25-3-25-1", optimizer="omd",
                          n_iter=2000, batch_size=500, lr=1e-2)
    est = SupervisedBaryNet(inverse_optimizer="adam", inverse_n_iter=args.inverse_iters,
                            inverse_lr=args.inverse_lr, inverse_batch_size=args.inverse_batch, **kw)
    est.fit(X, z).fit_inverse()
    rng = np.random.default_rng(args.seed)

    def sub(a):
        return a if len(a) <= ENERGY_SUBSAMPLE else a[rng.choice(len(a), ENERGY_SUBSAMPLE, replace=False)]

    pairs = {}
    for k, src in enumerate(dists):
        for j, dst in enumerate(dists):
            if k == j:
                continue
            moved = np.clip(est.transfer(src.points, k, j), 0.0, 1.0)
            name = f"transfer_{k}_to_{j}.ppm"
            write_image_ppm(os.path.join(out, name), moved, shape=shapes[k])
            manifest.outputs[f"transfer_{k}_{j}"] = name
            pairs[f"{k}->{j}"] = {"transferred": energy_distance(sub(moved), sub(dst.points)),
                                  "original": energy_distance(sub(src.points), sub(dst.points))}
    save_model(os.path.join(out, "model.json"), T=est.T_, S=est.pair_.S)
    manifest.params.update(_params_for_manifest(est, args))
    manifest.inputs["images"] = [os.path.abspath(p) for p in args.images]
    manifest.outputs["model"] = "model.json"
    manifest.metrics.update(energy=pairs, maps_trained=est.pair_.n_maps,
                            inverse_loss=est.inverse_loss_)
    return est


def cmd_validate(args):
    report = run_suite(args.seed)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK if all(r["pass"] for r in report) else EXIT_NUMERIC


COMMANDS = {
    "gen": cmd_gen,
    "fit-supervised": cmd_fit_supervised,
    "fit-unsupervised": cmd_fit_unsupervised,
    "cluster": cmd_cluster,
    "invert": cmd_invert,
    "sample-conditional": cmd_sample_conditional,
    "color-transfer": cmd_color_transfer,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "validate":
            return cmd_validate(args)
        started = time.time()
        os.makedirs(args.out, exist_ok=True)
        manifest = RunManifest(seed=args.seed, subcommand=args.command)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            est = COMMANDS[args.command](args, args.out, manifest)
        return _finish(manifest, args.out, started, est)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"barynet: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, CostDomainError, DimensionError, LabelError, FileNotFoundError,
            KeyError, ValueError) as exc:
        print(f"barynet: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
