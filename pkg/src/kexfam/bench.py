"""Experiment pipelines on the synthetic densities: score versus dimension and
basis size, fit timings, and component-subsampling comparisons.

Every random draw is keyed off the master seed, so a table is reproducible
from its manifest, and every row carries the sigma, lambda, seed, m and |I|
needed to rerun it alone.
"""
from __future__ import annotations

import csv
import json
import time
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .datasets import generate
from .estimators import fit_full, fit_lite, fit_nystrom, make_basis
from .objective import (GridSearchConfig, default_lambda_grid, default_sigma_grid,
                        fisher_divergence, grid_search, j_hat)

ESTIMATORS = ("full", "nystrom", "nystrom_d", "lite")

COLUMNS = ["dataset", "dim", "estimator", "m", "trial", "seed", "basis_seed", "sigma", "lambda",
           "basis_size", "retained_points", "fisher", "j_hat", "fit_seconds", "eval_seconds", "status"]


def derive_seed(master, *keys) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


@dataclass
class Fitter:
    """Callable (points, sigma, lam) -> (model, report) for one estimator tag."""

    estimator: str
    m: int | None = None
    basis_seed: int = 0

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")

    def __call__(self, P, sigma, lam):
        n = len(P)
        m = n if self.m is None else min(self.m, n)
        if self.estimator == "full":
            return fit_full(P, sigma, lam)
        if self.estimator == "nystrom":
            return fit_nystrom(P, make_basis(P, "all_components", m=m, seed=self.basis_seed), sigma, lam)
        if self.estimator == "nystrom_d":
            return fit_nystrom(P, make_basis(P, "global", m=m, seed=self.basis_seed), sigma, lam)
        basis = make_basis(P, "all_components", m=m, seed=self.basis_seed)
        return fit_lite(P, basis, sigma, lam)


def _single_thread(timing):
    return threadpool_limits(limits=1) if timing else nullcontext()


def tune(fitter, kind, d, n_train, n_val, seed, sigma_grid=None, lambda_grid=None,
         criterion="fisher", params=None):
    """Grid-search (sigma, lambda) on a fresh train/validation draw."""
    data = generate(kind, n_train + n_val, d, seed, params)
    P = data.points
    split = (np.arange(n_train), np.arange(n_train, n_train + n_val))
    cfg = GridSearchConfig(sigma_grid or default_sigma_grid(P[:n_train]),
                           lambda_grid or default_lambda_grid(), criterion, split)
    return grid_search(fitter, data, cfg)


def _evaluate(fitter, train, test, sigma, lam):
    t0 = time.perf_counter()
    model, report = fitter(train.points, sigma, lam)
    t1 = time.perf_counter()
    fisher = fisher_divergence(model, test, test.true_score())
    jh = j_hat(model, test)
    t2 = time.perf_counter()
    if model.kind == "nystrom":
        size, retained = len(model.index_set), len(model.points)
    else:
        size, retained = report.system_size, len(model.points)
    return {"fisher": fisher, "j_hat": jh, "fit_seconds": t1 - t0, "eval_seconds": t2 - t1,
            "basis_size": size, "retained_points": retained}


def convergence_sweep(dataset_kind, dims, n_train, n_test, estimators, m_values, trials, seed,
                      n_val=None, sigma_grid=None, lambda_grid=None, criterion="fisher",
                      timing=True, params=None):
    """Fisher distance on fresh test points for every (dim, estimator, m, trial).

    (sigma, lambda) are tuned once per (dim, estimator, m) on an independent
    draw and reused across trials.  With ``timing`` on, BLAS is pinned to one
    thread and cells run sequentially.
    """
    if n_train < 1 or n_test < 1 or trials < 1:
        raise ValueError("sizes and trials must be positive")
    n_val = n_val or n_train
    rows = []
    with _single_thread(timing):
        for d in dims:
            for est in estimators:
                for m in ([None] if est == "full" else m_values):
                    bseed = derive_seed(seed, d, 3, m or 0)
                    fitter = Fitter(est, m, bseed)
                    base = {"dataset": dataset_kind, "dim": d, "estimator": est,
                            "m": m if m is not None else n_train, "basis_seed": bseed}
                    try:
                        sigma, lam, _ = tune(fitter, dataset_kind, d, n_train, n_val,
                                             derive_seed(seed, d, 0), sigma_grid, lambda_grid,
                                             criterion, params)
                    except Exception as exc:  # noqa: BLE001 - recorded as failed cells
                        for t in range(trials):
                            rows.append(_failed(base, t, derive_seed(seed, d, 1, t), exc))
                        continue
                    for t in range(trials):
                        dseed = derive_seed(seed, d, 1, t)
                        row = dict(base, trial=t, seed=dseed, sigma=sigma, **{"lambda": lam})
                        try:
                            train = generate(dataset_kind, n_train, d, dseed, params)
                            test = generate(dataset_kind, n_test, d, derive_seed(seed, d, 2, t), params)
                            row.update(_evaluate(fitter, train, test, sigma, lam), status="ok")
                        except Exception as exc:  # noqa: BLE001
                            row = _failed(row, t, dseed, exc)
                        rows.append(row)
    return rows


def subsampling_compare(dataset_kind, dim, n, m_values, trials, seed, n_test=1500, n_val=None,
                        sigma_grid=None, lambda_grid=None, criterion="fisher", timing=False,
                        params=None):
    """Nystrom on m points with all components versus md components drawn from all of X."""
    return convergence_sweep(dataset_kind, [dim], n, n_test, ["nystrom", "nystrom_d"], m_values,
                             trials, seed, n_val, sigma_grid, lambda_grid, criterion, timing, params)


def _failed(row, t, dseed, exc):
    out = {c: float("nan") for c in ("sigma", "lambda", "fisher", "j_hat", "fit_seconds", "eval_seconds")}
    out.update({"basis_size": -1, "retained_points": -1})
    out.update({k: v for k, v in row.items() if k not in ("status",) and not _isnan(v)})
    out.update(trial=t, seed=dseed, status=f"failed: {type(exc).__name__}: {exc}")
    return out


def _isnan(v):
    return isinstance(v, float) and np.isnan(v)


def summarize(rows, key=("dim", "estimator", "m"), value="fisher", stat=np.median):
    groups = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault(tuple(r[k] for k in key), []).append(r[value])
    return {k: float(stat(v)) for k, v in groups.items()}


def write_table(rows, path, config=None, columns=COLUMNS):
    """Write rows as CSV plus a ``<path>.manifest.json`` echoing the config."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    manifest = {"config": config or {}, "version": __version__, "rows": len(rows),
                "conventions": {"fisher_half_factor": True}}
    Path(str(path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)
