"""Score-matching loss, Fisher divergence and validation-set hyperparameter search.

Conventions: ``fisher_divergence`` carries the factor 1/2, and ``j_hat`` drops
the additive constant that depends only on the data density and q0, so j_hat
values are comparable only on a fixed evaluation set.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .datasets import Dataset, make_rng

HALF_FACTOR = True


class EvaluationError(ValueError):
    pass


class SearchError(RuntimeError):
    pass


def _eval_points(model, X):
    P = X.points if isinstance(X, Dataset) else np.atleast_2d(np.asarray(X, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    if P.shape[1] != model.d:
        raise ValueError(f"model has dimension {model.d}, data has {P.shape[1]}")
    return P


def j_hat(model, X_eval) -> float:
    """Empirical loss 1/n sum_b sum_i [d_i^2 f + 1/2 (d_i f)^2 + d_i f d_i log q0] at X_eval."""
    P = _eval_points(model, X_eval)
    grad, sec = model.derivatives(P)
    terms = sec + 0.5 * grad**2
    if model.q0_grad is not None:
        terms = terms + grad * np.asarray(model.q0_grad(P), dtype=float)
    return float(np.mean(np.sum(terms, axis=1)))


def fisher_divergence(model, X_eval, true_score) -> float:
    """1/2 mean over X_eval of ||score_model(x) - score_true(x)||^2."""
    P = _eval_points(model, X_eval)
    truth = np.asarray(true_score(P), dtype=float)
    bad = ~np.all(np.isfinite(truth), axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise EvaluationError(f"true score is not finite at point {i}: {P[i].tolist()}")
    diff = model.score(P) - truth
    return float(0.5 * np.mean(np.sum(diff**2, axis=1)))


# -- grid search ---------------------------------------------------------------

def median_heuristic(X, max_points=1000, seed=0) -> float:
    """Median pairwise squared distance (the sigma scale of exp(-||x - y||^2 / sigma))."""
    P = X.points if isinstance(X, Dataset) else np.atleast_2d(np.asarray(X, dtype=float))
    if len(P) > max_points:
        P = P[make_rng(seed).choice(len(P), max_points, replace=False)]
    if len(P) < 2:
        return 1.0
    med = float(np.median(pdist(P, "sqeuclidean")))
    return med if med > 0 else 1.0


def default_sigma_grid(X):
    med = median_heuristic(X)
    return [med * 2.0**k for k in range(-3, 4)]


def default_lambda_grid():
    return list(np.logspace(-6, 0, 7))


def train_validation_split(n, n_val, seed):
    if not 0 < n_val < n:
        raise ValueError("need 0 < n_val < n")
    perm = make_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass
class GridSearchConfig:
    sigma_grid: list
    lambda_grid: list
    criterion: str = "j_hat"
    split: tuple = field(default=None)

    def __post_init__(self):
        if not self.sigma_grid or not self.lambda_grid:
            raise ValueError("grids must be nonempty")
        if any(s <= 0 for s in self.sigma_grid) or any(l <= 0 for l in self.lambda_grid):
            raise ValueError("grid values must be positive")
        if self.criterion not in ("j_hat", "fisher"):
            raise ValueError(f"unknown criterion {self.criterion!r}")

    def check_split(self, n):
        train, val = (np.asarray(s, dtype=int) for s in self.split)
        if len(np.intersect1d(train, val)) or len(np.union1d(train, val)) != n:
            raise ValueError("split must be disjoint and cover all points")
        return train, val


@dataclass
class ScoreTable:
    rows: list

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "lambda", "criterion_value", "fit_seconds", "status"])
        for r in self.rows:
            w.writerow([repr(r["sigma"]), repr(r["lambda"]), repr(r["criterion_value"]),
                        f"{r['fit_seconds']:.6f}", r["status"]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def values(self):
        """criterion values as a (len(sigma_grid), len(lambda_grid)) array, NaN where failed."""
        sig = sorted({r["sigma"] for r in self.rows})
        lam = sorted({r["lambda"] for r in self.rows})
        V = np.full((len(sig), len(lam)), np.nan)
        for r in self.rows:
            V[sig.index(r["sigma"]), lam.index(r["lambda"])] = r["criterion_value"]
        return V


def grid_search(fitter, X: Dataset, cfg: GridSearchConfig, true_score=None):
    """Fit on the train split at every (sigma, lambda), score on the validation split.

    ``fitter(train_points, sigma, lam)`` returns a ScoreModel (or a
    ``(model, report)`` pair).  Failed cells get status ``failed`` and are
    excluded from the argmin; exact ties go to the larger lambda, then the
    larger sigma.  Returns ``(sigma, lam, table)``.
    """
    P = X.points if isinstance(X, Dataset) else np.atleast_2d(np.asarray(X, dtype=float))
    train, val = cfg.check_split(len(P))
    if cfg.criterion == "fisher" and true_score is None:
        true_score = X.true_score() if isinstance(X, Dataset) else None
        if true_score is None:
            raise ValueError("fisher criterion needs a true score")
    Xt, Xv = P[train], P[val]

    rows = []
    for sigma in cfg.sigma_grid:
        for lam in cfg.lambda_grid:
            t0 = time.perf_counter()
            try:
                out = fitter(Xt, float(sigma), float(lam))
                model = out[0] if isinstance(out, tuple) else out
                if cfg.criterion == "j_hat":
                    value = j_hat(model, Xv)
                else:
                    value = fisher_divergence(model, Xv, true_score)
                status = "ok" if np.isfinite(value) else "failed"
            except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                value, status = float("nan"), f"failed: {type(exc).__name__}"
            rows.append({"sigma": float(sigma), "lambda": float(lam), "criterion_value": float(value),
                         "fit_seconds": time.perf_counter() - t0, "status": status})

    ok = [r for r in rows if r["status"] == "ok"]
    if not ok:
        raise SearchError("every grid cell failed")
    best = min(ok, key=lambda r: (r["criterion_value"], -r["lambda"], -r["sigma"]))
    return best["sigma"], best["lambda"], ScoreTable(rows)
