"""Acceptance suite: one test per criterion, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run.
"""
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from kexfam import bench
from kexfam import kernels as K
from kexfam.datasets import GaussianParams, gaussian_logpdf, generate
from kexfam.estimators import (BasisSpec, assemble_full, assemble_lite, assemble_nystrom,
                               eval_f, eval_second_diag, fit_full, fit_lite, fit_nystrom,
                               make_basis, zero_model)
from kexfam.hmc import HmcConfig, acceptance_experiment
from kexfam.objective import GridSearchConfig, grid_search, j_hat, train_validation_split

from oracles import (central_jacobian, lite_prop1_terms, random_problem, rel_err, rkhs_norm_sq,
                     second_diag_fd)


def random_fits(seed=2024, count=25):
    """25 random problems (n <= 20, d <= 3), each solved by full, nystrom and lite."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        X, sigma, lam = random_problem(rng)
        n = len(X)
        m = int(rng.integers(1, n + 1))
        basis = make_basis(X, "all_components", m=m, seed=int(rng.integers(2**31)))
        Y = X[np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))]
        full, rep_full = fit_full(X, sigma, lam)
        ext, _, _ = assemble_full(X, sigma, lam)
        ny, rep_ny = fit_nystrom(X, basis, sigma, lam)
        lite, rep_lite = fit_lite(X, Y, sigma, lam)
        yield {
            "X": X, "lam": lam,
            "full": (full, rep_full, ext, np.r_[full.xi_scale, full.beta]),
            "nystrom": (ny, rep_ny, assemble_nystrom(X, basis.compact(), sigma, lam), ny.beta),
            "lite": (lite, rep_lite, assemble_lite(X, Y, sigma, lam), lite.beta),
        }


def test_criterion_01_kernel_oracles(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = np.zeros(4)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        sigma = float(rng.uniform(0.3, 5.0)) * d
        x = rng.normal(size=d)
        y = x + rng.normal(scale=np.sqrt(sigma) / 2, size=d)
        errs = [
            rel_err(K.kernel_grad_x(sigma, x, y), central_jacobian(lambda u: K.kernel_eval(sigma, u, y), x)),
            rel_err(K.kernel_cross_hessian(sigma, x, y),
                    central_jacobian(lambda v: K.kernel_grad_x(sigma, x, v), y)),
            rel_err(K.kernel_dx_dyy(sigma, x, y),
                    np.einsum("ijj->ij", central_jacobian(lambda v: K.kernel_cross_hessian(sigma, x, v), y))),
            rel_err(K.kernel_dxx_dyy(sigma, x, y),
                    np.einsum("iji->ij", central_jacobian(lambda u: K.kernel_dx_dyy(sigma, u, y), x))),
        ]
        worst = np.maximum(worst, errs)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max rel err by order {np.array2string(worst, precision=1)}, {elapsed:.2f}s")
    assert np.all(worst[:3] < 1e-5) and worst[3] < 1e-4
    assert elapsed < 5


def test_criterion_02_solver_stationarity(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_resid, worst_drop = 0.0, -np.inf
    for prob in random_fits():
        for kind in ("full", "nystrom", "lite"):
            model, report, quad, coef = prob[kind]
            worst_resid = max(worst_resid, report.residual_norm)
            base = quad.objective(coef)
            for _ in range(100):
                delta = rng.normal(size=coef.shape)
                delta *= 10 ** rng.uniform(-6, 0) * (1 + np.linalg.norm(coef)) / np.linalg.norm(delta)
                worst_drop = max(worst_drop, base - quad.objective(coef + delta))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max residual {worst_resid:.1e}, max decrease {worst_drop:.1e}, {elapsed:.1f}s")
    assert worst_resid < 1e-6
    assert worst_drop <= 1e-10
    assert elapsed < 30


def test_criterion_03_objective_identity(record_property):
    worst = 0.0
    for prob in random_fits():
        X, lam = prob["X"], prob["lam"]
        for kind in ("full", "nystrom", "lite"):
            model, _, quad, coef = prob[kind]
            reg = 0.5 * lam * rkhs_norm_sq(model)
            if kind == "nystrom":
                reg += 0.5 * quad.jitter * coef @ coef
            if kind == "lite":
                reg += 0.5 * lam * coef @ coef
            pointwise = j_hat(model, X) + reg
            worst = max(worst, abs(pointwise - quad.objective(coef)) / abs(quad.objective(coef)))
    record_property("detail", f"max rel gap {worst:.1e}")
    assert worst < 1e-8


def test_criterion_04_lite_equivalence(record_property):
    rng = np.random.default_rng(3)
    tau, lam, n = 0.5, 1.0, 8
    worst = 0.0
    for d in (1, 2, 3):
        X = 2.0 * rng.normal(size=(n, d))
        A, b, Kmat = lite_prop1_terms(X, tau)
        prob = assemble_lite(X, X, tau, lam, reg="rkhs_norm")
        model, _ = fit_lite(X, X, tau, lam, reg="rkhs_norm")
        beta = -(tau / 2) * np.linalg.pinv(A + 0.25 * n * tau**2 * lam * Kmat, rcond=1e-10, hermitian=True) @ b
        errs = [rel_err(prob.h, 2.0 / (n * tau) * b), rel_err(prob.B.T @ prob.B, 4.0 / tau**2 * A),
                rel_err(prob.R, Kmat), rel_err(model.beta, beta)]
        worst = max(worst, *errs)
    record_property("detail", f"max rel err {worst:.1e}")
    assert worst < 1e-8


def test_criterion_05_score_derivatives(record_property):
    rng = np.random.default_rng(5)
    worst1 = worst2 = 0.0
    for prob in random_fits(seed=99, count=10):
        d = prob["X"].shape[1]
        for kind in ("full", "nystrom", "lite"):
            model = prob[kind][0]
            for _ in range(3):
                x = prob["X"].mean(axis=0) + rng.normal(size=d)
                f = lambda z: eval_f(model, z)
                worst1 = max(worst1, rel_err(model.grad_f(x), central_jacobian(f, x)))
                worst2 = max(worst2, rel_err(eval_second_diag(model, x), second_diag_fd(f, x)))
    record_property("detail", f"score {worst1:.1e}, second {worst2:.1e}")
    assert worst1 < 1e-5 and worst2 < 1e-4


@pytest.mark.slow
def test_criterion_06_convergence_trend(record_property):
    t0 = time.perf_counter()
    med = {}
    for n in (50, 200, 500):
        rows = bench.convergence_sweep("ring", [2], n, 1500, ["full", "nystrom"], [n], 10, seed=11,
                                       timing=True)
        s = bench.summarize(rows)
        med[n] = (s[(2, "full", n)], s[(2, "nystrom", n)])
    elapsed = time.perf_counter() - t0
    full = [med[n][0] for n in (50, 200, 500)]
    ny = [med[n][1] for n in (50, 200, 500)]
    gap = abs(med[200][1] - med[200][0]) / med[200][0]
    record_property("detail", f"full {np.round(full, 2)}, nystrom {np.round(ny, 2)}, "
                              f"gap@200 {gap:.2f}, {elapsed:.0f}s")
    assert full[0] > full[1] > full[2]
    assert ny[0] > ny[1] > ny[2]
    assert gap < 0.25
    assert elapsed < 300


@pytest.mark.slow
def test_criterion_07_nystrom_cost_scaling(record_property):
    t0 = time.perf_counter()

    def fit_time(n):
        X = generate("ring", n, 2, seed=n).points
        basis = make_basis(X, "all_components", m=50, seed=0)
        best = np.inf
        for _ in range(5):
            s = time.perf_counter()
            fit_nystrom(X, basis, 2.0, 1e-3)
            best = min(best, time.perf_counter() - s)
        return best

    with threadpool_limits(limits=1):
        fit_time(500)
        small, large = fit_time(500), fit_time(2000)
    ratio = large / small
    elapsed = time.perf_counter() - t0
    record_property("detail", f"ratio {ratio:.2f} ({small * 1e3:.1f}ms vs {large * 1e3:.1f}ms), {elapsed:.1f}s")
    assert ratio < 8
    assert elapsed < 120


def test_criterion_08_subsampling_nesting(record_property):
    rng = np.random.default_rng(8)
    worst = -np.inf
    for _ in range(10):
        X, sigma, lam = random_problem(rng)
        n, d = X.shape
        pairs = [(a, i) for a in range(n) for i in range(d)]
        big_idx = np.sort(rng.choice(len(pairs), size=int(rng.integers(2, len(pairs) + 1)), replace=False))
        small_idx = np.sort(rng.choice(big_idx, size=int(rng.integers(1, len(big_idx))), replace=False))
        vals = []
        for idx in (small_idx, big_idx):
            basis = BasisSpec("explicit", X, [pairs[k] for k in idx])
            model, _ = fit_nystrom(X, basis, sigma, lam)
            vals.append(assemble_nystrom(X, basis.compact(), sigma, lam).objective(model.beta))
        worst = max(worst, vals[1] - vals[0])
    record_property("detail", f"max increase {worst:.1e}")
    assert worst <= 1e-10


@pytest.mark.slow
def test_criterion_09_hmc_sanity(record_property):
    t0 = time.perf_counter()
    logp = lambda x: float(gaussian_logpdf(GaussianParams(), np.atleast_2d(x))[0])
    starts = generate("gaussian", 20, 2, seed=31).points
    exact = acceptance_experiment([lambda x: -np.asarray(x)], logp, starts,
                                  HmcConfig(100, 0.01, seed=1))[0]

    data = generate("gaussian", 2000, 2, seed=32).points
    train, val = train_validation_split(2000, 1500, seed=33)
    fitter = lambda P, s, l: fit_nystrom(P, make_basis(P, "all_components", m=100, seed=34), s, l)
    cfg = GridSearchConfig([0.5, 1, 2, 4, 8, 16], list(np.logspace(-6, 0, 7)), "j_hat", (train, val))
    sigma, lam, _ = grid_search(fitter, data, cfg)
    target = generate("gaussian", 500, 2, seed=35).points
    model, _ = fitter(target, sigma, lam)
    rows = acceptance_experiment([model, zero_model(2)], logp, starts, HmcConfig(100, 0.1, seed=2),
                                 model_ids=["nystrom", "zero"])
    gap = rows[0].mean_acceptance - rows[1].mean_acceptance
    elapsed = time.perf_counter() - t0
    record_property("detail", f"exact {exact.mean_acceptance:.5f}, nystrom {rows[0].mean_acceptance:.3f}, "
                              f"zero {rows[1].mean_acceptance:.3f}, {elapsed:.1f}s")
    assert exact.mean_acceptance > 0.999
    assert gap >= 0.2
    assert elapsed < 120


def _cli(cwd, *args):
    env = dict(os.environ, OMP_NUM_THREADS="1")
    out = subprocess.run([sys.executable, "-m", "kexfam.cli", *map(str, args)], cwd=cwd, env=env,
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    return out.stdout


def _strip_timing(text):
    lines = text.splitlines()
    header = lines[0].split(",")
    keep = [i for i, c in enumerate(header) if not c.endswith("seconds")]
    return [[row.split(",")[i] for i in keep] for row in lines]


def _session(cwd):
    (cwd / "bench.json").write_text(json.dumps({
        "dataset": "grid", "dims": [2], "n_train": 40, "n_test": 40, "estimators": ["full", "nystrom"],
        "m_values": [10], "trials": 2, "seed": 4, "sigma_grid": [1.0, 4.0], "lambda_grid": [1e-3, 1e-1]}))
    (cwd / "hmc.json").write_text(json.dumps({
        "seed": 6, "num_steps": 30, "step_size": 0.1, "starts": {"n": 3}, "repetitions": 2,
        "target": {"kind": "gaussian", "d": 2},
        "models": [{"id": "file", "type": "file", "path": "m.json"},
                   {"id": "fit", "type": "fit", "estimator": "lite", "m": 20, "n": 100,
                    "sigma": 2.0, "lambda": 0.01}]}))
    out = {
        "generate": _cli(cwd, "generate", "ring", "--n", 150, "--d", 2, "--seed", 7, "-o", "ring.csv"),
        "generate_test": _cli(cwd, "generate", "ring", "--n", 100, "--d", 2, "--seed", 8, "-o", "test.csv"),
        "tune": _cli(cwd, "tune", "ring.csv", "--seed", 1, "--m", 20, "--sigma-grid", 1, 4,
                     "--lambda-grid", 1e-3, 1e-1, "--table", "tune.csv"),
        "fit": _cli(cwd, "fit", "ring.csv", "--estimator", "nystrom", "--m", 42, "--seed", 1, "--tune",
                    "--sigma-grid", 1, 4, "--lambda-grid", 1e-3, 1e-1, "-o", "m.json"),
        "eval": _cli(cwd, "eval", "m.json", "test.csv"),
        "bench": _cli(cwd, "bench", "bench.json", "-o", "bench.csv"),
        "hmc": _cli(cwd, "hmc", "hmc.json", "-o", "hmc.csv"),
    }
    for name in ("ring.csv", "ring.csv.json", "test.csv", "m.json", "hmc.csv", "hmc.csv.manifest.json",
                 "bench.csv.manifest.json"):
        out[name] = (cwd / name).read_bytes()
    for name in ("tune.csv", "m.json.tune.csv", "bench.csv"):
        out[name] = _strip_timing((cwd / name).read_text())
    report = json.loads((cwd / "m.json.report.json").read_text())
    out["report"] = {k: v for k, v in report.items() if not k.endswith("seconds")}
    return out


def test_criterion_10_cli_determinism(tmp_path, record_property):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a, b = _session(tmp_path / "a"), _session(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b[k])
    record_property("detail", f"{len(a)} outputs compared, differing: {differing or 'none'}")
    assert not differing
