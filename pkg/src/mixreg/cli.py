"""
Command-line interface.

Subcommands: ``simulate``, ``fit``, ``select``, ``evaluate``, ``wavelet``,
``represent`` and ``experiment``. Every JSON output records the schema
version and the effective settings; the worker count is deliberately left
out since it never changes results.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 empty or
unusable model collection.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as mio
from .core import Dataset, InvalidInputError, MixRegError, NumericalError, map_assign
from .evalsim import (
    ConditionalTruth,
    KLRejectionError,
    SimModelSpec,
    ari,
    count_tr_fr,
    generate,
    kl_mc,
    mape,
    model_spec,
    predict,
    true_pattern,
)
from .gem import GemConfig, e_step
from .procedures import PROCEDURES, FitSettings, fit_collection
from .selection import (
    EmptyCollectionError,
    InsufficientCollectionError,
    bic_select,
    slope_select,
)
from .wavelet import (
    FILTERS,
    EmptyRepresentativeError,
    WaveletBasis,
    WaveletProjection,
    project_dataset,
    reconstruct_representative,
    simulate_cosine_mixture,
)

logger = logging.getLogger("mixreg")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_EMPTY = 0, 2, 3, 4


def _notice(msg: str) -> None:
    print(f"notice: {msg}", file=sys.stderr)


def _sim_spec(args) -> SimModelSpec:
    if getattr(args, "spec", None):
        d = mio.load_json(args.spec)
        if "seed" not in d:
            d["seed"] = args.seed
        return SimModelSpec.from_dict(d)
    if args.model is None:
        raise InvalidInputError("give --model or --spec")
    return model_spec(args.model, seed=args.seed)


def _maybe_sim_spec(args) -> Optional[SimModelSpec]:
    if getattr(args, "model", None) is None and not getattr(args, "spec", None):
        return None
    return _sim_spec(args)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = _sim_spec(args)
    data = generate(spec)
    mio.write_dataset(data, args.out, manifest={"generator": spec.to_dict(),
                                                "model": args.model, "seed": spec.seed})
    return EXIT_OK


def _settings(args) -> FitSettings:
    gem = GemConfig(max_iter=args.max_iter, n_init=args.n_init)
    return FitSettings(K_range=tuple(range(args.kmin, args.kmax + 1)),
                       lambda_count=args.lambda_count, r_max=args.rmax, seed=args.seed, gem=gem)


def _fit_outputs(data: Dataset, procedure: str, settings: FitSettings, workers: int):
    collection = fit_collection(data, procedure, settings, workers=workers)
    config = {"procedure": procedure, **settings.to_dict()}
    return collection, config


def cmd_fit(args) -> int:
    if args.kmin < 1 or args.kmax < args.kmin:
        raise InvalidInputError("need 1 <= kmin <= kmax")
    data = mio.read_dataset(args.data)
    settings = _settings(args)
    collection, config = _fit_outputs(data, args.procedure, settings, args.workers)
    config["data"] = str(args.data)
    out = Path(args.out_dir)
    doc = mio.collection_to_dict(collection, data.n, config)
    mio.dump_json(doc, out / "collection.json")
    rows = []
    for s in collection:
        rows.append({"K": s.K, "lambda": "" if s.lam is None else float(s.lam),
                     "R": "" if s.R is None else " ".join(map(str, s.R)),
                     "J_size": len(s.J), "dim": s.dim, "loglik": float(s.loglik),
                     "D_over_n": s.dim / data.n, "loglik_over_n": float(s.loglik) / data.n,
                     "converged": int(s.converged)})
    mio.write_table(out / "slope_points.csv", rows)
    unconverged = sum(not s.converged for s in collection)
    if unconverged:
        _notice(f"{unconverged} of {len(collection)} models hit the iteration limit (kept, flagged)")
    return EXIT_OK


def _select(collection, n: int, criterion: str):
    if criterion == "bic":
        return bic_select(collection, n), None, None
    chosen, kappa, diag = slope_select(collection, n)
    return chosen, kappa, diag


def cmd_select(args) -> int:
    collection, n = mio.collection_from_dict(mio.load_json(args.collection))
    chosen, kappa, diag = _select(collection, n, args.criterion)
    doc = {"schema_version": mio.SCHEMA_VERSION, "kind": "selection",
           "config": {"criterion": args.criterion, "collection": str(args.collection)},
           "n": n, "kappa": kappa,
           "fallback": None if diag is None else diag.fallback,
           "chosen": mio.model_to_dict(chosen),
           "diagnostics": [] if diag is None else diag.table()}
    mio.dump_json(doc, args.out)
    return EXIT_OK


def evaluate_model(model, data: Optional[Dataset], spec: Optional[SimModelSpec],
                   n_mc: int, seed: int, weights: str = "posterior") -> dict:
    """Metrics available for ``model`` given labelled data and/or the generator."""
    out: dict = {"K": model.K, "dim": model.dim, "J_size": len(model.J)}
    if data is not None and data.labels is not None:
        out["ari"] = ari(data.labels, map_assign(e_step(model.params, data)))
    elif data is not None:
        _notice("data has no labels; ARI omitted")
    if data is not None:
        y_given = data.y if weights == "posterior" else None
        y_hat = predict(model.params, data.x, mode="mix", y=y_given)
        if np.all(data.y != 0):
            out["mape_mix"] = mape(y_hat, data.y)
            out["mape_map"] = mape(predict(model.params, data.x, mode="map", y=y_given), data.y)
        else:
            _notice("zero responses present; MAPE omitted")
    if spec is not None:
        if (spec.q, spec.p) != (model.params.q, model.params.p):
            raise InvalidInputError("generator dimensions do not match the model")
        try:
            est, se = kl_mc(ConditionalTruth.from_spec(spec), model.params, n_mc=n_mc, seed=seed)
            out["kl"], out["kl_se"] = est, se
        except KLRejectionError as exc:
            _notice(f"KL omitted: {exc}")
        tr, fr = count_tr_fr(model.J, true_pattern(spec), n_components=spec.K)
        out["tr"], out["fr"] = tr, fr
    else:
        _notice("no generator given; KL and TR/FR omitted")
    return out


def cmd_evaluate(args) -> int:
    model, _ = mio.read_model(args.fitted)
    data = mio.read_dataset(args.data) if args.data else None
    spec = _maybe_sim_spec(args)
    metrics = evaluate_model(model, data, spec, args.n_mc, args.seed, args.weights)
    doc = {"schema_version": mio.SCHEMA_VERSION, "kind": "evaluation",
           "config": {"fitted": str(args.fitted), "data": args.data, "model": args.model,
                      "spec": args.spec, "n_mc": args.n_mc, "seed": args.seed,
                      "weights": args.weights,
                      "generator": None if spec is None else spec.to_dict()},
           "metrics": metrics}
    mio.dump_json(doc, args.out)
    return EXIT_OK


def cmd_wavelet(args) -> int:
    basis_x = WaveletBasis(args.basis, args.level)
    basis_y = WaveletBasis(args.basis_y or args.basis, args.level_y or args.level)
    labels = None
    if args.simulate_cosine:
        F, G, labels = simulate_cosine_mixture(n=args.simulate_cosine, seed=args.seed)
    elif args.x and args.y:
        F, G = mio.read_matrix(args.x), mio.read_matrix(args.y)
    else:
        raise InvalidInputError("give --x and --y, or --simulate-cosine N")
    data, proj = project_dataset(F, G, basis_x, basis_y, center=args.center, labels=labels)
    config = {"basis": args.basis, "level": args.level, "basis_y": basis_y.family,
              "level_y": basis_y.level, "center": args.center, "seed": args.seed,
              "simulate_cosine": args.simulate_cosine, "x": args.x, "y": args.y}
    mio.write_dataset(data, args.out, manifest={"config": config, "projection": proj.to_dict()})
    if args.roundtrip:
        base = Path(args.out)
        mio.write_matrix(proj.reconstruct_x(data.x), base.with_name(base.stem + "_fx.csv"))
        mio.write_matrix(proj.reconstruct_y(data.y), base.with_name(base.stem + "_gy.csv"))
    return EXIT_OK


def cmd_represent(args) -> int:
    model, _ = mio.read_model(args.fitted)
    data = mio.read_dataset(args.data)
    manifest = mio.load_json(mio.manifest_path(args.data))
    if "projection" not in manifest:
        raise InvalidInputError(f"{args.data}: manifest has no wavelet projection metadata")
    proj = WaveletProjection.from_dict(manifest["projection"])
    tau = e_step(model.params, data)
    curves = []
    for k in range(model.K):
        try:
            c = reconstruct_representative(model.params, k, tau, args.threshold, data,
                                           proj.basis_x, proj.length_x, J=model.J)
        except EmptyRepresentativeError as exc:
            _notice(str(exc))
            continue
        if proj.mean_x is not None:
            c = c + proj.mean_x
        curves.append([k + 1] + c.tolist())
    if not curves:
        raise InvalidInputError("no cluster passes the threshold")
    header = ["cluster"] + [f"t{i + 1}" for i in range(proj.length_x)]
    mio._write_text(args.out, mio.rows_to_csv(header, curves))
    return EXIT_OK


def cmd_experiment(args) -> int:
    """Simulate, fit, select and evaluate over seeds; write metrics and optional figures."""
    out = Path(args.out_dir)
    rows = []
    first_diag = {}
    for seed in args.seeds:
        spec = model_spec(args.model, seed=seed)
        data = generate(spec)
        for procedure in args.procedure:
            ns = argparse.Namespace(**{**vars(args), "seed": seed})
            settings = _settings(ns)
            collection, _ = _fit_outputs(data, procedure, settings, args.workers)
            chosen, kappa, diag = _select(collection, data.n, args.criterion)
            metrics = evaluate_model(chosen, data, spec, args.n_mc, seed)
            rows.append({"seed": seed, "procedure": procedure, "model": args.model,
                         "K": chosen.K, "dim": chosen.dim,
                         "kappa": "" if kappa is None else float(kappa),
                         "ari": metrics.get("ari", ""), "kl": metrics.get("kl", ""),
                         "kl_se": metrics.get("kl_se", ""), "tr": metrics["tr"],
                         "fr": metrics["fr"]})
            if diag is not None:
                mio.write_table(out / f"slope_{procedure}_seed{seed}.csv", diag.table())
                first_diag.setdefault(procedure, (seed, diag))
    mio.write_table(out / "metrics.csv", rows)
    mio.dump_json({"schema_version": mio.SCHEMA_VERSION, "kind": "experiment",
                   "config": {k: v for k, v in vars(args).items()
                              if k not in ("workers", "func", "verbose")}},
                  out / "experiment.json")
    if args.plot:
        from . import plotting

        for metric in ("ari", "kl"):
            if any(r[metric] != "" for r in rows):
                plotting.metric_boxplot(rows, metric, out / f"{metric}.png")
        for procedure, (seed, diag) in first_diag.items():
            plotting.slope_graph(diag, out / f"slope_{procedure}_seed{seed}.png",
                                 title=f"{procedure}, seed {seed}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_fit_flags(p):
    p.add_argument("--kmin", type=int, default=2)
    p.add_argument("--kmax", type=int, default=5)
    p.add_argument("--lambda-count", type=int, default=20,
                   help="grid levels kept per K (quantile thinning)")
    p.add_argument("--rmax", type=int, default=3, help="largest rank per component")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixreg",
                                     description="Sparse mixtures of Gaussian regressions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from a benchmark model")
    p.add_argument("--model", type=int, choices=range(1, 6))
    p.add_argument("--spec", help="JSON file with custom generator settings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="build a model collection")
    p.add_argument("data")
    p.add_argument("--procedure", choices=PROCEDURES, default="lasso-mle")
    p.add_argument("--seed", type=int, default=0)
    _add_fit_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="pick a model from a collection")
    p.add_argument("collection")
    p.add_argument("--criterion", choices=("slope", "bic"), default="slope")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="metrics for a fitted model")
    p.add_argument("fitted", help="selection or model JSON")
    p.add_argument("--data")
    p.add_argument("--model", type=int, choices=range(1, 6), help="generator of the data")
    p.add_argument("--spec", help="custom generator JSON")
    p.add_argument("--n-mc", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", choices=("posterior", "prior"), default="posterior",
                   help="prediction weights: responsibilities given y, or proportions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("wavelet", help="project functional data onto wavelet coefficients")
    p.add_argument("--x", help="CSV of predictor functions, one per row")
    p.add_argument("--y", help="CSV of response functions, one per row")
    p.add_argument("--simulate-cosine", type=int, metavar="N",
                   help="use N simulated cosine-mixture functions instead of files")
    p.add_argument("--basis", choices=sorted(FILTERS), default="daubechies2")
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--basis-y", choices=sorted(FILTERS))
    p.add_argument("--level-y", type=int)
    p.add_argument("--center", action="store_true")
    p.add_argument("--roundtrip", action="store_true",
                   help="also write the functions reconstructed from the coefficients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_wavelet)

    p = sub.add_parser("represent", help="cluster representative curves from a wavelet fit")
    p.add_argument("fitted")
    p.add_argument("--data", required=True, help="coefficient dataset written by 'wavelet'")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_represent)

    p = sub.add_parser("experiment", help="repeated simulate/fit/select/evaluate with a report")
    p.add_argument("--model", type=int, choices=range(1, 6), required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--procedure", choices=PROCEDURES, nargs="+", default=["lasso-mle"])
    p.add_argument("--criterion", choices=("slope", "bic"), default="slope")
    p.add_argument("--n-mc", type=int, default=10_000)
    _add_fit_flags(p)
    p.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    try:
        return args.func(args)
    except (EmptyCollectionError, InsufficientCollectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MixRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
