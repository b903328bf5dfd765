"""Command-line interface.

Subcommands cover the full pipeline: ``toy`` generates benchmark datasets,
``train`` fits a metric and writes a model file, ``eval`` scores kNN
accuracy, ``margin`` reports the adversarial-margin distribution plus the
generalization diagnostic, ``noise-bench`` sweeps calibrated Gaussian noise,
and ``search`` runs the random hyperparameter search.  Report commands write
delimited output and render a figure next to it.

Exit codes: 0 success, 1 usage error, 2 invalid data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import toydata
from .core import Dataset, pca_fit, preprocess
from .datasets import load_dataset, save_dataset
from .errors import InvalidInput, NumericalFailure
from .evaluation import (
    DIAGONAL,
    SPHERICAL,
    NoiseSpec,
    SearchSpace,
    augment_test,
    euclidean_metric,
    knn_accuracy,
    mahalanobis_metric,
    random_search,
)
from .lmnn import LmnnConfig, train_lmnn_cr
from .model_io import (
    KIND_MAHALANOBIS,
    KIND_MAHALANOBIS_PCA,
    KIND_SPARSE,
    ModelFile,
    dataset_fingerprint,
    load_model,
    save_model,
)
from .robustness import PerturbationSpec, generalization_bound, margin_report
from .scml import BasisSet, ScmlConfig, SparseCompositionalMetric, generate_bases, train_scml_cr
from .seeding import substream_seed
from .triplets import generate_similar_pairs, generate_triplets

LMNN_METHODS = ("lmnn", "lmnn-cr")
SCML_METHODS = ("scml", "scml-cr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we reserve 2 for data errors
        raise UsageError(message)


def _add_dataset_flags(parser):
    parser.add_argument("--format", choices=("csv", "libsvm"), default="csv")
    parser.add_argument("--label-col", default="0",
                        help="label column index or (with --header) name")
    parser.add_argument("--header", action="store_true",
                        help="first row of a csv file is a header")
    parser.add_argument("--dims", type=int, default=None,
                        help="feature count for libsvm files (default: max index)")


def _load(path, args) -> Dataset:
    return load_dataset(path, fmt=args.format, label_col=args.label_col,
                        header=args.header, dims=args.dims)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_trace(path, trace):
    _write_csv(path, ["iteration", "J", "J_lmnn", "J_p", "lr"], trace.objectives)


# ---------------------------------------------------------------------------
# toy


def _cmd_toy(args):
    spec = toydata.ToySpec(which=args.which, n_per_class=args.n_per_class, seed=args.seed)
    data = toydata.generate(spec)
    if args.preprocess == "standardize":
        data, _ = preprocess(data, unit_norm=False)
    elif args.preprocess == "full":
        data, _ = preprocess(data, unit_norm=True)
    save_dataset(args.out, data)
    print(f"wrote {data.n_instances} x {data.n_features} dataset to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _validate_train_flags(args):
    if not 0.0 < args.mu < 1.0:
        raise UsageError("--mu must lie strictly in (0, 1)")
    if args.method in SCML_METHODS and args.mu_given:
        raise UsageError(f"--mu does not apply to {args.method}")
    if args.method in LMNN_METHODS and args.eta_given:
        raise UsageError(f"--eta does not apply to {args.method}")
    if args.method in ("lmnn", "scml"):
        if args.lambda_given or args.tau_given:
            raise UsageError(
                f"--lambda/--tau do not apply to {args.method}; use {args.method}-cr"
            )
    if args.tau < 0 or args.lam < 0:
        raise UsageError("--tau and --lambda must be nonnegative")
    if args.epsilon <= 0:
        raise UsageError("--epsilon must be positive")


def _train_metric(data, args, seed):
    """Shared by train and search: fit on preprocessed data, return pieces."""
    spec = PerturbationSpec(tau=args.tau, lam=args.lam, epsilon=args.epsilon)
    pca_map = None
    train_space = data
    if args.pca_variance is not None:
        pca_map = pca_fit(data, args.pca_variance)
        train_space = pca_map.apply_dataset(data)
    pairs = generate_similar_pairs(train_space, args.k_targets)
    triplets = generate_triplets(train_space, pairs, args.k_impostors)

    if args.method in LMNN_METHODS:
        config = LmnnConfig(mu=args.mu, spec=spec, tol=args.tol,
                            max_iter=args.max_iter, seed=seed)
        metric, trace = train_lmnn_cr(data, pairs, triplets, config, pca_map=pca_map)
        return metric, None, trace, pca_map, train_space, triplets, spec
    config = ScmlConfig(eta=args.eta, spec=spec, tol=args.tol,
                        max_iter=args.max_iter, seed=seed)
    bases = generate_bases(train_space, args.k_bases, regions=args.regions,
                           seed=substream_seed(seed, "bases"))
    sparse, trace = train_scml_cr(train_space, pairs, triplets, bases, config)
    return sparse.materialize(), sparse, trace, pca_map, train_space, triplets, spec


def _cmd_train(args):
    _validate_train_flags(args)
    raw = _load(args.data, args)
    data, pre_map = preprocess(raw)
    metric, sparse, trace, pca_map, train_space, triplets, spec = _train_metric(
        data, args, args.seed
    )

    # margins of a projected metric are certified in the unprojected space;
    # compositional metrics report margins in whatever space they act on
    if sparse is None and pca_map is not None:
        report = margin_report(metric, data, triplets, spec, pca_map=pca_map)
    else:
        report = margin_report(metric, train_space, triplets, spec)

    config_meta = {
        "trainer": "lmnn" if args.method in LMNN_METHODS else "scml",
        "mu": args.mu,
        "tau": args.tau,
        "lambda": args.lam,
        "epsilon": args.epsilon,
        "eta": args.eta,
        "k_targets": args.k_targets,
        "k_impostors": args.k_impostors,
        "max_iter": args.max_iter,
        "tol": args.tol,
        "seed": args.seed,
        "pca_variance": args.pca_variance,
        "k_bases": args.k_bases,
        "regions": args.regions,
    }
    metadata = {
        "config": config_meta,
        "dataset_fingerprint": dataset_fingerprint(raw),
        "margin_summary": {
            "mean": report.mean,
            "median": report.median,
            "n_hat": report.n_hat,
            "tau": report.tau,
        },
        "converged": trace.converged,
        "iterations": trace.iterations,
    }

    if sparse is not None:
        model = ModelFile(kind=KIND_SPARSE, preprocess=pre_map,
                          weights=sparse.w, bases=sparse.bases.bases,
                          pca=pca_map, metadata=metadata)
    elif pca_map is not None:
        model = ModelFile(kind=KIND_MAHALANOBIS_PCA, preprocess=pre_map,
                          metric=metric, pca=pca_map, metadata=metadata)
    else:
        model = ModelFile(kind=KIND_MAHALANOBIS, preprocess=pre_map,
                          metric=metric, metadata=metadata)
    save_model(args.out, model)

    if args.trace:
        _write_trace(args.trace, trace)
        if not args.no_figures:
            from . import plots

            plots.save_trace(trace, _with_suffix(args.trace, ".png"))
    status = "converged" if trace.converged else "stopped at max-iter"
    final_j = trace.objectives[-1][1] if trace.objectives else float("nan")
    print(f"{args.method}: {status} after {trace.iterations} iterations; "
          f"final J = {final_j:.6g}")
    print(f"mean adversarial margin on training triplets: {report.mean:.6g}")
    print(f"model written to {args.out}")
    return 0


def _with_suffix(path: str, suffix: str) -> str:
    stem = path[: path.rfind(".")] if "." in path.split("/")[-1] else path
    return stem + suffix


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args):
    model = load_model(args.model)
    train = _load(args.train, args)
    test = _load(args.test, args)
    if train.n_features != model.feature_dim or test.n_features != model.feature_dim:
        raise InvalidInput("dataset width does not match the model")
    train_t = Dataset(model.transform(train.instances), train.labels)
    accuracy = knn_accuracy(
        model.pairwise_metric(), train_t, Dataset(model.transform(test.instances), test.labels),
        args.k,
    )
    print(f"{args.k}NN accuracy: {accuracy:.6f} ({test.n_instances} test instances)")
    if args.out:
        _write_csv(args.out, ["k", "n_test", "accuracy"],
                   [(args.k, test.n_instances, float(accuracy))])
    return 0


# ---------------------------------------------------------------------------
# margin


def _cmd_margin(args):
    model = load_model(args.model)
    data = _load(args.data, args)
    if data.n_features != model.feature_dim:
        raise InvalidInput("dataset width does not match the model")
    pre = model.preprocess.apply_dataset(data)
    projected = model.pca.apply_dataset(pre) if model.pca is not None else pre
    pairs = generate_similar_pairs(projected, args.k_targets)
    triplets = generate_triplets(projected, pairs, args.k_impostors)

    tau = args.tau
    if tau is None:
        tau = float(model.metadata.get("config", {}).get("tau", 0.0) or 0.0)
    spec = PerturbationSpec(tau=tau, epsilon=args.epsilon)

    if model.kind == KIND_SPARSE:
        sparse = SparseCompositionalMetric(w=model.weights, bases=BasisSet(model.bases))
        report = margin_report(sparse.materialize(), projected, triplets, spec, bins=args.bins)
    elif model.kind == KIND_MAHALANOBIS_PCA:
        report = margin_report(model.metric, pre, triplets, spec, bins=args.bins,
                               pca_map=model.pca)
    else:
        report = margin_report(model.metric, pre, triplets, spec, bins=args.bins)

    print(report.to_text())
    summary = {
        "n_triplets": int(report.margins.size),
        "mean": report.mean, "median": report.median, "std": report.std,
        "min": report.min, "max": report.max,
        "tau": report.tau, "n_hat": report.n_hat,
    }
    if args.b_const is not None:
        if tau <= 0:
            raise InvalidInput("the generalization diagnostic needs --tau > 0")
        bound = generalization_bound(
            n=data.n_instances, p=data.n_features, classes=data.n_classes,
            tau=tau, n_hat=report.n_hat, n_triplets=len(triplets),
            b_const=args.b_const, delta=args.delta,
        )
        summary["bound"] = {
            "log_k": bound.log_k,
            "bound": bound.bound if np.isfinite(bound.bound) else "inf",
            "vacuous": bool(not np.isfinite(bound.bound) or bound.bound > bound.b_const),
            "b_const": bound.b_const, "delta": bound.delta,
        }
        print(f"generalization gap bound: {bound.bound:.6g} "
              f"(log K = {bound.log_k:.6g}, B = {bound.b_const:g}, delta = {bound.delta:g})")

    prefix = args.out_prefix
    _write_csv(prefix + ".margins.csv", ["i", "j", "l", "margin"],
               [(int(t[0]), int(t[1]), int(t[2]), float(mg))
                for t, mg in zip(triplets.triplets, report.margins)])
    _write_csv(prefix + ".hist.csv", ["bin_low", "bin_high", "count"],
               report.histogram_rows())
    with open(prefix + ".summary.json", "w") as handle:
        json.dump(summary, handle, indent=1, sort_keys=True)
        handle.write("\n")
    if not args.no_figures:
        from . import plots

        plots.save_margin_histogram(report, prefix + ".hist.png")
    return 0


# ---------------------------------------------------------------------------
# noise-bench


def _cmd_noise_bench(args):
    model = load_model(args.model)
    train = _load(args.train, args)
    test = _load(args.test, args)
    train_t = Dataset(model.transform(train.instances), train.labels)
    metric = model.pairwise_metric()
    try:
        snrs = [float(tok) for tok in args.snr.split(",") if tok.strip()]
    except ValueError:
        raise UsageError("--snr expects a comma-separated list of numbers") from None
    if not snrs:
        raise UsageError("--snr expects at least one value")
    kinds = [SPHERICAL, DIAGONAL] if args.kind == "both" else [args.kind]

    rows = []
    for kind in kinds:
        for snr in snrs:
            cell_seed = substream_seed(args.seed, "noise", kind, repr(snr))
            noisy = augment_test(test, args.augment_to,
                                 NoiseSpec(snr_db=snr, kind=kind, seed=cell_seed))
            noisy_t = Dataset(model.transform(noisy.instances), noisy.labels)
            acc = knn_accuracy(metric, train_t, noisy_t, args.k)
            rows.append((kind, snr, acc))
            print(f"{kind:10s} snr={snr:7.2f} dB  accuracy={acc:.6f}")

    prefix = args.out_prefix
    _write_csv(prefix + ".csv", ["kind", "snr_db", "n_eval", "accuracy"],
               [(kind, float(snr), args.augment_to, float(acc)) for kind, snr, acc in rows])
    if not args.no_figures:
        from . import plots

        plots.save_noise_bench(rows, prefix + ".png")
    return 0


# ---------------------------------------------------------------------------
# search


def _make_search_trainer(args):
    def trainer(train_part: Dataset, mu, tau, lam, seed):
        pairs = generate_similar_pairs(train_part, args.k_targets)
        triplets = generate_triplets(train_part, pairs, args.k_impostors)
        if args.method in LMNN_METHODS:
            effective_lam = lam if args.method == "lmnn-cr" else 0.0
            spec = PerturbationSpec(tau=tau, lam=effective_lam, epsilon=args.epsilon)
            config = LmnnConfig(mu=mu, spec=spec, tol=args.tol,
                                max_iter=args.max_iter, seed=seed)
            metric, _ = train_lmnn_cr(train_part, pairs, triplets, config)
            return mahalanobis_metric(metric)
        effective_lam = lam if args.method == "scml-cr" else 0.0
        spec = PerturbationSpec(tau=tau, lam=effective_lam, epsilon=args.epsilon)
        config = ScmlConfig(eta=args.eta, spec=spec, tol=args.tol,
                            max_iter=args.max_iter, seed=seed)
        bases = generate_bases(train_part, args.k_bases, regions=args.regions,
                               seed=substream_seed(seed, "bases"))
        sparse, _ = train_scml_cr(train_part, pairs, triplets, bases, config)
        from .evaluation import compositional_metric

        return compositional_metric(sparse)

    return trainer


def _cmd_search(args):
    raw = _load(args.data, args)
    data, _ = preprocess(raw)
    space = SearchSpace(n_samples=args.trials, folds=args.folds, knn_k=args.k)
    result = random_search(data, space, _make_search_trainer(args), seed=args.seed)

    n_folds = max(len(t.fold_accuracies) for t in result.trials)
    header = ["trial", "mu", "tau", "lambda"] + [f"fold{k}" for k in range(n_folds)] + ["mean"]
    rows = [
        [t.trial, float(t.mu), float(t.tau), float(t.lam)]
        + [float(a) for a in t.fold_accuracies]
        + [float(t.mean_accuracy)]
        for t in result.trials
    ]
    prefix = args.out_prefix
    _write_csv(prefix + ".trials.csv", header, rows)
    best = result.best
    with open(prefix + ".best.json", "w") as handle:
        json.dump({"trial": best.trial, "mu": best.mu, "tau": best.tau,
                   "lambda": best.lam, "mean_accuracy": best.mean_accuracy,
                   "tau_upper": result.tau_upper},
                  handle, indent=1, sort_keys=True)
        handle.write("\n")
    if not args.no_figures:
        from . import plots

        plots.save_search_trials(result.trials, prefix + ".png")
    print(f"best trial {best.trial}: mu={best.mu:.4f} tau={best.tau:.4f} "
          f"lambda={best.lam:.4f} accuracy={best.mean_accuracy:.6f}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="certmetric", allow_abbrev=False,
                     description="metric learning with certified adversarial margins")
    sub = parser.add_subparsers(dest="command", required=True)

    toy = sub.add_parser("toy", help="generate a benchmark dataset")
    toy.add_argument("--which", required=True,
                     choices=(toydata.TWO_GAUSSIANS, toydata.TWO_BANDS,
                              toydata.MULTICOLLINEAR, toydata.BLOBS))
    toy.add_argument("--n-per-class", type=int, default=None)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--preprocess", choices=("none", "standardize", "full"),
                     default="none")
    toy.add_argument("--out", required=True)
    toy.set_defaults(func=_cmd_toy)

    train = sub.add_parser("train", help="fit a metric and write a model file")
    train.add_argument("data")
    train.add_argument("--method", required=True, choices=LMNN_METHODS + SCML_METHODS)
    train.add_argument("--out", required=True)
    train.add_argument("--trace", default=None, help="write the training trace csv here")
    train.add_argument("--mu", type=float, default=0.5)
    train.add_argument("--tau", type=float, default=0.0)
    train.add_argument("--lambda", dest="lam", type=float, default=0.0)
    train.add_argument("--epsilon", type=float, default=1e-10)
    train.add_argument("--eta", type=float, default=0.0)
    train.add_argument("--k-targets", type=int, default=3)
    train.add_argument("--k-impostors", type=int, default=10)
    train.add_argument("--k-bases", type=int, default=50)
    train.add_argument("--regions", type=int, default=10)
    train.add_argument("--pca-variance", type=float, default=None)
    train.add_argument("--max-iter", type=int, default=1000)
    train.add_argument("--tol", type=float, default=1e-7)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--no-figures", action="store_true")
    _add_dataset_flags(train)
    train.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="kNN accuracy of a model on a test file")
    ev.add_argument("--model", required=True)
    ev.add_argument("--train", required=True)
    ev.add_argument("--test", required=True)
    ev.add_argument("--k", type=int, default=3)
    ev.add_argument("--out", default=None)
    _add_dataset_flags(ev)
    ev.set_defaults(func=_cmd_eval)

    margin = sub.add_parser("margin", help="adversarial-margin report")
    margin.add_argument("--model", required=True)
    margin.add_argument("--data", required=True)
    margin.add_argument("--out-prefix", required=True)
    margin.add_argument("--tau", type=float, default=None)
    margin.add_argument("--epsilon", type=float, default=1e-10)
    margin.add_argument("--bins", type=int, default=20)
    margin.add_argument("--b-const", type=float, default=None)
    margin.add_argument("--delta", type=float, default=0.05)
    margin.add_argument("--k-targets", type=int, default=3)
    margin.add_argument("--k-impostors", type=int, default=10)
    margin.add_argument("--no-figures", action="store_true")
    _add_dataset_flags(margin)
    margin.set_defaults(func=_cmd_margin)

    bench = sub.add_parser("noise-bench", help="accuracy under calibrated noise")
    bench.add_argument("--model", required=True)
    bench.add_argument("--train", required=True)
    bench.add_argument("--test", required=True)
    bench.add_argument("--snr", default="20,10,5,1",
                       help="comma-separated SNR values in dB")
    bench.add_argument("--kind", choices=(SPHERICAL, DIAGONAL, "both"), default="both")
    bench.add_argument("--augment-to", type=int, default=10000)
    bench.add_argument("--k", type=int, default=3)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out-prefix", required=True)
    bench.add_argument("--no-figures", action="store_true")
    _add_dataset_flags(bench)
    bench.set_defaults(func=_cmd_noise_bench)

    search = sub.add_parser("search", help="random hyperparameter search")
    search.add_argument("data")
    search.add_argument("--method", required=True, choices=LMNN_METHODS + SCML_METHODS)
    search.add_argument("--trials", type=int, default=50)
    search.add_argument("--folds", type=int, default=5)
    search.add_argument("--k", type=int, default=3)
    search.add_argument("--eta", type=float, default=0.0)
    search.add_argument("--epsilon", type=float, default=1e-10)
    search.add_argument("--k-targets", type=int, default=3)
    search.add_argument("--k-impostors", type=int, default=10)
    search.add_argument("--k-bases", type=int, default=50)
    search.add_argument("--regions", type=int, default=10)
    search.add_argument("--max-iter", type=int, default=200)
    search.add_argument("--tol", type=float, default=1e-7)
    search.add_argument("--seed", type=int, default=0)
    search.add_argument("--out-prefix", required=True)
    search.add_argument("--no-figures", action="store_true")
    _add_dataset_flags(search)
    search.set_defaults(func=_cmd_search)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if hasattr(args, "mu"):
            # remember which optional training flags were given explicitly
            given = set()
            raw_argv = sys.argv[1:] if argv is None else list(argv)
            for token in raw_argv:
                if token.startswith("--"):
                    given.add(token.split("=", 1)[0])
            args.mu_given = "--mu" in given
            args.eta_given = "--eta" in given
            args.lambda_given = "--lambda" in given
            args.tau_given = "--tau" in given
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InvalidInput as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
