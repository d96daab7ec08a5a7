"""Command-line entry point: ``kexfam {generate,fit,tune,eval,bench,hmc}``.

Exit codes: 0 success, 1 runtime failure (JSON error on stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, hmc
from .datasets import (Dataset, GaussianParams, GridParams, RingParams, generate,
                       true_logpdf_for, true_score_for)
from .estimators import (DEFAULT_JITTER, FULL_SIZE_CAP, NumericalError, ResourceError,
                         ScoreModel, fit_full, fit_lite, fit_nystrom, make_basis, zero_model)
from .objective import (GridSearchConfig, default_lambda_grid, default_sigma_grid,
                        fisher_divergence, grid_search, j_hat, train_validation_split)


class UsageError(Exception):
    pass


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _params_for(kind, args):
    if kind == "ring":
        return RingParams(tuple(args.radii), args.radial_std, args.noise_std)
    if kind == "grid":
        return GridParams(args.side, args.component_std)
    return GaussianParams()


# -- generate ------------------------------------------------------------------

def cmd_generate(args):
    if args.kind == "ring" and args.d < 2:
        raise UsageError("ring data needs --d >= 2")
    if args.n < 1 or args.d < 1:
        raise UsageError("--n and --d must be positive")
    data = generate(args.kind, args.n, args.d, args.seed, _params_for(args.kind, args))
    data.to_csv(args.output)
    return {"output": str(args.output), "n": data.n, "d": data.d}


# -- fit / tune ------------------------------------------------------------------

def _fitter(args, seed):
    est = args.estimator

    def fit(P, sigma, lam):
        if est == "full":
            return fit_full(P, sigma, lam, max_size=args.max_size, force=args.force)
        m = args.m if args.m is not None else len(P)
        m = min(m, len(P))
        if est == "lite":
            return fit_lite(P, make_basis(P, "all_components", m=m, seed=seed), sigma, lam,
                            reg=args.reg, jitter=args.lite_jitter)
        mode = "global" if est == "nystrom_d" else args.mode
        basis = make_basis(P, mode, m=m, p=args.p, ell=args.ell, seed=seed)
        return fit_nystrom(P, basis, sigma, lam, jitter=args.jitter, augmented=args.augmented)

    return fit


def _tune(args, data):
    if args.val_size:
        n_val = args.val_size
    else:
        n_val = max(1, int(round(args.val_fraction * data.n)))
    train, val = train_validation_split(data.n, n_val, args.seed)
    sg = args.sigma_grid or default_sigma_grid(data.points[train])
    lg = args.lambda_grid or default_lambda_grid()
    cfg = GridSearchConfig(sg, lg, args.criterion, (train, val))
    if args.criterion == "fisher" and data.true_score() is None:
        raise UsageError("fisher criterion needs a dataset with an analytic score")
    sigma, lam, table = grid_search(_fitter(args, args.seed), data, cfg)
    return sigma, lam, table, train


def cmd_tune(args):
    data = Dataset.from_csv(args.data)
    sigma, lam, table, _ = _tune(args, data)
    table.to_csv(args.table)
    return {"sigma": sigma, "lambda": lam, "table": str(args.table)}


def cmd_fit(args):
    data = Dataset.from_csv(args.data)
    out = {}
    if args.tune:
        sigma, lam, table, _ = _tune(args, data)
        table_path = args.table or Path(str(args.output) + ".tune.csv")
        table.to_csv(table_path)
        out["table"] = str(table_path)
    else:
        if args.sigma is None or args.lam is None:
            raise UsageError("give --sigma and --lambda, or --tune")
        sigma, lam = args.sigma, args.lam
    if args.estimator == "full" and data.n * data.d > args.max_size and not args.force:
        raise ResourceError(f"full system of size {data.n * data.d} exceeds cap {args.max_size}; use --force")
    model, report = _fitter(args, args.seed)(data.points, sigma, lam)
    model.save(args.output)
    report_path = args.report or Path(str(args.output) + ".report.json")
    _dump(dict(report.to_dict(), sigma=sigma, **{"lambda": lam}), report_path)
    out.update(model=str(args.output), report=str(report_path), sigma=sigma, **{"lambda": lam})
    return out


# -- eval -------------------------------------------------------------------------

def cmd_eval(args):
    model = ScoreModel.load(args.model)
    data = Dataset.from_csv(args.data)
    truth = data.true_score()
    if args.fisher and truth is None:
        raise UsageError(f"dataset generator {data.generator!r} has no analytic score")
    fisher = fisher_divergence(model, data, truth) if truth is not None and args.fisher is not False else None
    result = {"fisher": fisher, "j_hat": j_hat(model, data), "n_test": data.n,
              "conventions": {"half_factor": True}}
    print(json.dumps(result, sort_keys=True))
    return None


# -- bench / hmc ------------------------------------------------------------------

def _manifest(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"manifest not found: {path}")
    cfg = json.loads(path.read_text(encoding="utf-8"))
    if "seed" not in cfg:
        raise UsageError("manifest must give an explicit seed")
    return cfg


def cmd_bench(args):
    cfg = _manifest(args.manifest)
    common = dict(n_val=cfg.get("n_val"), sigma_grid=cfg.get("sigma_grid"),
                  lambda_grid=cfg.get("lambda_grid"), criterion=cfg.get("criterion", "fisher"),
                  timing=cfg.get("timing", True))
    if cfg.get("mode", "sweep") == "subsampling":
        rows = bench.subsampling_compare(cfg["dataset"], cfg["dim"], cfg["n_train"], cfg["m_values"],
                                         cfg.get("trials", 1), cfg["seed"],
                                         n_test=cfg.get("n_test", 1500), **common)
    else:
        rows = bench.convergence_sweep(cfg["dataset"], cfg["dims"], cfg["n_train"], cfg["n_test"],
                                       cfg["estimators"], cfg.get("m_values", [None]),
                                       cfg.get("trials", 1), cfg["seed"], **common)
    bench.write_table(rows, args.output, cfg)
    ok = sum(r["status"] == "ok" for r in rows)
    if rows and ok == 0:
        raise RuntimeError("every bench row failed")
    return {"output": str(args.output), "rows": len(rows), "ok": ok}


def _hmc_model(spec, target, d, seed, index):
    kind = spec.get("type", "file")
    if kind == "exact":
        return true_score_for(target.generator, target.params)
    if kind == "zero":
        return zero_model(d)
    if kind == "file":
        return ScoreModel.load(spec["path"])
    if kind == "fit":
        n = spec.get("n", 500)
        data = generate(target.generator, n, d, bench.derive_seed(seed, 10, index), target.params)
        fitter = bench.Fitter(spec.get("estimator", "nystrom"), spec.get("m"),
                              bench.derive_seed(seed, 11, index))
        model, _ = fitter(data.points, spec["sigma"], spec["lambda"])
        return model
    raise UsageError(f"unknown model type {kind!r}")


def cmd_hmc(args):
    cfg = _manifest(args.manifest)
    tgt = cfg.get("target", {"kind": "gaussian", "d": 2})
    d = tgt.get("d", 2)
    seed = cfg["seed"]
    target = generate(tgt.get("kind", "gaussian"), 1, d, bench.derive_seed(seed, 20))
    logp = true_logpdf_for(target.generator, target.params)
    starts_cfg = cfg.get("starts", {"n": 1})
    if isinstance(starts_cfg, list):
        starts = [np.asarray(s, dtype=float) for s in starts_cfg]
    else:
        starts = list(generate(target.generator, starts_cfg.get("n", 1), d,
                               bench.derive_seed(seed, 21), target.params).points)
    specs = cfg.get("models")
    if not specs:
        raise UsageError("manifest lists no models")
    models = [_hmc_model(s, target, d, seed, i) for i, s in enumerate(specs)]
    ids = [s.get("id", str(i)) for i, s in enumerate(specs)]
    hcfg = hmc.HmcConfig(cfg.get("num_steps", 100), cfg.get("step_size", 0.1), seed)
    rows = hmc.acceptance_experiment(models, logp, starts, hcfg, cfg.get("repetitions", 1), ids)
    hmc.acceptance_table_csv(rows, args.output)
    _dump({"config": cfg}, str(args.output) + ".manifest.json")
    if all(r.status != "ok" for r in rows):
        raise RuntimeError("every hmc row failed")
    return {"output": str(args.output), "rows": [{"model_id": r.model_id,
                                                   "mean_acceptance": r.mean_acceptance} for r in rows]}


# -- parser -------------------------------------------------------------------------

def _fit_options(p):
    p.add_argument("data", type=Path)
    p.add_argument("--estimator", choices=bench.ESTIMATORS, default="nystrom")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--mode", choices=["all_components", "bernoulli", "per_point", "global"],
                   default="all_components")
    p.add_argument("--p", type=float)
    p.add_argument("--ell", type=int)
    p.add_argument("--jitter", type=float, default=DEFAULT_JITTER)
    p.add_argument("--augmented", action="store_true")
    p.add_argument("--reg", choices=["rkhs_norm", "rkhs_plus_l2"], default="rkhs_plus_l2")
    p.add_argument("--lite-jitter", type=float, default=0.0)
    p.add_argument("--max-size", type=int, default=FULL_SIZE_CAP)
    p.add_argument("--force", action="store_true")
    p.add_argument("--criterion", choices=["j_hat", "fisher"], default="j_hat")
    p.add_argument("--sigma-grid", type=float, nargs="+")
    p.add_argument("--lambda-grid", type=float, nargs="+")
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--val-size", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="kexfam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a synthetic dataset to CSV + JSON sidecar")
    g.add_argument("kind", choices=["ring", "grid", "gaussian"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("-o", "--output", type=Path, required=True)
    g.add_argument("--radii", type=float, nargs="+", default=[1.0, 3.0, 5.0])
    g.add_argument("--radial-std", type=float, default=0.1)
    g.add_argument("--noise-std", type=float, default=0.1)
    g.add_argument("--side", type=float, default=4.0)
    g.add_argument("--component-std", type=float, default=1.0)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a score model")
    _fit_options(f)
    f.add_argument("--sigma", type=float)
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--tune", action="store_true")
    f.add_argument("--table", type=Path)
    f.add_argument("--report", type=Path)
    f.add_argument("-o", "--output", type=Path, required=True)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("tune", help="grid-search sigma and lambda on a validation split")
    _fit_options(t)
    t.add_argument("--table", type=Path, required=True)
    t.set_defaults(func=cmd_tune)

    e = sub.add_parser("eval", help="Fisher divergence and score-matching loss on a dataset")
    e.add_argument("model", type=Path)
    e.add_argument("data", type=Path)
    e.add_argument("--fisher", action=argparse.BooleanOptionalAction, default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run a benchmark sweep described by a JSON manifest")
    b.add_argument("manifest", type=Path)
    b.add_argument("-o", "--output", type=Path, required=True)
    b.set_defaults(func=cmd_bench)

    h = sub.add_parser("hmc", help="surrogate HMC acceptance experiment from a JSON manifest")
    h.add_argument("manifest", type=Path)
    h.add_argument("-o", "--output", type=Path, required=True)
    h.set_defaults(func=cmd_hmc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kexfam {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ResourceError, NumericalError, RuntimeError, ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc),
               "diagnostics": getattr(exc, "diagnostics", {})}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    if result is not None:
        print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
