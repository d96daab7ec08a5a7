"""Score-matching fitters for the kernel exponential family.

Every fitter minimizes the regularized empirical score-matching loss

    J(f) + lambda/2 ||f||_H^2,
    J(f) = 1/n sum_b sum_i [d_i^2 f(X_b) + 1/2 (d_i f(X_b))^2 + d_i f(X_b) d_i log q0(X_b)]

over some subspace of the RKHS.  For f = sum_c beta_c y_c this is the
quadratic

    1/(2n) ||B beta||^2 + beta' h + lambda/2 beta' R beta (+ jitter/2 ||beta||^2)

with B_{(b,i),c} = d_i y_c(X_b), h_c = <xi, y_c>, and R the Gram matrix of
the y_c (plus the identity for the "rkhs_plus_l2" lite variant).  Three bases:

* full:    f = -xi/lambda + sum beta_(a,i) d_i k(X_a, .)
* nystrom: y = d_i k(Y_a, .) for (a, i) in the index set; optionally also
           d_i^2 k(Y_a, .) ("augmented")
* lite:    y = k(Y_a, .)

Coefficients are point-major: beta[(a - 1) d + i].
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from . import kernels as kern
from .datasets import Dataset, make_rng
from .kernels import KernelConfig

MODEL_FORMAT = "kexfam-model-v1"
PINV_CUTOFF = 1e-10
DEFAULT_JITTER = 1e-5
FULL_SIZE_CAP = 10_000


class NumericalError(RuntimeError):
    """Raised when a linear solve produces non-finite output."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ResourceError(RuntimeError):
    pass


def _points(X) -> np.ndarray:
    if isinstance(X, Dataset):
        return X.points
    return np.atleast_2d(np.asarray(X, dtype=float))


def _q0_at(q0_grad, X):
    if q0_grad is None:
        return None
    g = np.asarray(q0_grad(X), dtype=float)
    if g.shape != X.shape:
        raise ValueError("q0_grad must map (n, d) points to (n, d) gradients")
    return g


# -- basis selection ---------------------------------------------------------

BASIS_MODES = ("all_components", "bernoulli", "per_point", "explicit", "global")


@dataclass(frozen=True)
class BasisSpec:
    """Basis points and the (point, dim) pairs whose d_i k(Y_a, .) span the subspace.

    ``index_set`` rows are (row of ``points``, dimension), sorted point-major.
    ``source_ids`` records which training rows the points came from.
    """

    mode: str
    points: np.ndarray
    index_set: np.ndarray
    seed: int | None = None
    p: float | None = None
    ell: int | None = None
    source_ids: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        I = np.asarray(self.index_set, dtype=np.int64).reshape(-1, 2)
        if I.size:
            order = np.lexsort((I[:, 1], I[:, 0]))
            I = I[order]
            if np.any((I[:, 0] < 0) | (I[:, 0] >= len(pts)) | (I[:, 1] < 0) | (I[:, 1] >= pts.shape[1])):
                raise ValueError("index set out of range")
            if len(np.unique(I, axis=0)) != len(I):
                raise ValueError("index set has duplicates")
        if not np.all(np.isfinite(pts)):
            raise ValueError("basis points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "index_set", I)

    @property
    def size(self) -> int:
        return len(self.index_set)

    def compact(self) -> "BasisSpec":
        """Drop points that no component references."""
        used = np.unique(self.index_set[:, 0])
        remap = np.full(len(self.points), -1)
        remap[used] = np.arange(len(used))
        I = np.column_stack([remap[self.index_set[:, 0]], self.index_set[:, 1]])
        src = None if self.source_ids is None else np.asarray(self.source_ids)[used]
        return BasisSpec(self.mode, self.points[used], I, self.seed, self.p, self.ell, src)


def _all_pairs(m, d):
    a, i = np.meshgrid(np.arange(m), np.arange(d), indexing="ij")
    return np.column_stack([a.ravel(), i.ravel()])


def make_basis(X, mode="all_components", m=None, p=None, ell=None, index_set=None, seed=None) -> BasisSpec:
    """Choose a Nystrom basis from the training points.

    all_components / bernoulli / per_point first draw ``m`` distinct points
    uniformly; then keep every dimension, each (point, dim) independently with
    probability ``p``, or ``ell`` distinct dimensions per point.  ``global``
    draws ``m * d`` components uniformly from all n * d.  ``explicit`` takes
    ``index_set`` as (training row, dim) pairs.
    """
    P = _points(X)
    n, d = P.shape
    if mode not in BASIS_MODES:
        raise ValueError(f"unknown basis mode {mode!r}")
    if mode == "explicit":
        if index_set is None or len(index_set) == 0:
            raise ValueError("explicit mode needs a nonempty index set")
        return BasisSpec(mode, P, index_set, seed, source_ids=np.arange(n))

    rng = make_rng(seed)
    m = n if m is None else int(m)
    if m < 1 or m > n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if mode == "global":
        flat = np.sort(rng.choice(n * d, size=m * d, replace=False))
        I = np.column_stack([flat // d, flat % d])
        return BasisSpec(mode, P, I, seed, source_ids=np.arange(n))

    ids = np.sort(rng.choice(n, size=m, replace=False))
    if mode == "all_components":
        I = _all_pairs(m, d)
    elif mode == "bernoulli":
        if p is None or not 0 < p <= 1:
            raise ValueError("bernoulli mode needs p in (0, 1]")
        keep = rng.random((m, d)) < p
        I = np.argwhere(keep)
    else:
        if ell is None or not 1 <= ell <= d:
            raise ValueError("per_point mode needs 1 <= ell <= d")
        rows = [np.column_stack([np.full(ell, a), np.sort(rng.choice(d, size=ell, replace=False))])
                for a in range(m)]
        I = np.vstack(rows)
    return BasisSpec(mode, P[ids], I, seed, p, ell, ids)


# -- models --------------------------------------------------------------------

@dataclass
class FitReport:
    assembly_seconds: float
    solve_seconds: float
    jitter_used: float
    system_size: int
    residual_norm: float
    effective_rank: int

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """Fitted f; the model log-density is f + log q0 (up to normalization).

    ``points`` holds only what evaluation needs: the training set for
    ``full``, the referenced basis points for ``nystrom``, Y for ``lite``.
    """

    kind: str
    sigma: float
    lam: float
    points: np.ndarray
    beta: np.ndarray
    index_set: np.ndarray | None = None
    xi_scale: float = 0.0
    augmented: bool = False
    reg: str | None = None
    jitter: float = 0.0
    basis_mode: str | None = None
    seed: int | None = None
    q0_grad: Callable | None = field(default=None, repr=False)
    q0_grad_points: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("full", "nystrom", "lite"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        beta = np.asarray(self.beta, dtype=float).ravel()
        if not np.all(np.isfinite(beta)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        if self.index_set is not None:
            object.__setattr__(self, "index_set", np.asarray(self.index_set, dtype=np.int64).reshape(-1, 2))

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(self.sigma)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @cached_property
    def _coefficients(self):
        m, d = self.points.shape
        a0 = a1 = a2 = None
        if self.kind == "lite":
            a0 = self.beta
        elif self.kind == "nystrom":
            a, i = self.index_set[:, 0], self.index_set[:, 1]
            k = len(a)
            a1 = np.zeros((m, d))
            a1[a, i] = self.beta[:k]
            if self.augmented:
                a2 = np.zeros((m, d))
                a2[a, i] = self.beta[k:]
        else:
            xi1, xi2 = kern.xi_expansion(self.points, self.q0_grad_points)
            a1 = self.beta.reshape(m, d) + self.xi_scale * xi1
            a2 = self.xi_scale * xi2
        return a0, a1, a2

    def _eval(self, x, order):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        Q = np.atleast_2d(x)
        if Q.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {Q.shape[1]}")
        out = kern.expansion(self.kernel, Q, self.points, *self._coefficients, order=order)
        return out, single, Q

    def f(self, x):
        (g, _, _), single, _ = self._eval(x, 0)
        return float(g[0]) if single else g

    def score(self, x):
        (_, grad, _), single, Q = self._eval(x, 1)
        if self.q0_grad is not None:
            grad = grad + np.asarray(self.q0_grad(Q), dtype=float)
        return grad[0] if single else grad

    def grad_f(self, x):
        (_, grad, _), single, _ = self._eval(x, 1)
        return grad[0] if single else grad

    def second_diag(self, x):
        (_, _, sec), single, _ = self._eval(x, 2)
        return sec[0] if single else sec

    def derivatives(self, X):
        """Return (grad f, diag Hessian f) on a point set, sharing one pass."""
        (_, grad, sec), _, _ = self._eval(np.atleast_2d(X), 2)
        return grad, sec

    __call__ = score

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        if self.q0_grad is not None:
            raise ValueError("models with a custom q0_grad cannot be serialized")
        doc = {
            "format": MODEL_FORMAT,
            "kind": self.kind,
            "sigma": self.sigma,
            "lambda": self.lam,
            "basis": {
                "mode": self.basis_mode,
                "seed": self.seed,
                "points": self.points.tolist(),
                "index_set": None if self.index_set is None else self.index_set.tolist(),
            },
            "beta": self.beta.tolist(),
            "xi_scale": self.xi_scale,
            "augmented": self.augmented,
            "reg": self.reg,
            "jitter": self.jitter,
        }
        if self.q0_grad_points is not None:
            doc["q0_grad_points"] = np.asarray(self.q0_grad_points).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ScoreModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} document")
        basis = doc["basis"]
        idx = basis.get("index_set")
        q0p = doc.get("q0_grad_points")
        return cls(
            kind=doc["kind"], sigma=doc["sigma"], lam=doc["lambda"],
            points=np.array(basis["points"], dtype=float),
            beta=np.array(doc["beta"], dtype=float),
            index_set=None if idx is None else np.array(idx, dtype=np.int64).reshape(-1, 2),
            xi_scale=doc.get("xi_scale", 0.0), augmented=doc.get("augmented", False),
            reg=doc.get("reg"), jitter=doc.get("jitter", 0.0),
            basis_mode=basis.get("mode"), seed=basis.get("seed"),
            q0_grad_points=None if q0p is None else np.array(q0p, dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ScoreModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def zero_model(d: int, sigma: float = 1.0, lam: float = 1.0) -> ScoreModel:
    """A lite model with one basis point and beta = 0, so f = 0."""
    return ScoreModel("lite", sigma, lam, np.zeros((1, d)), np.zeros(1), reg="rkhs_norm")


def eval_f(model: ScoreModel, x):
    return model.f(x)


def eval_score(model: ScoreModel, x):
    return model.score(x)


def eval_second_diag(model: ScoreModel, x):
    return model.second_diag(x)


# -- quadratic problems ------------------------------------------------------------

@dataclass
class QuadraticProblem:
    """1/(2n) ||B b||^2 + b'h + lam/2 b'R b + jitter/2 ||b||^2 (+ const)."""

    B: np.ndarray
    h: np.ndarray
    R: np.ndarray
    lam: float
    n: int
    jitter: float = 0.0
    const: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        M = self.B.T @ self.B / self.n + self.lam * self.R
        M = 0.5 * (M + M.T)
        if self.jitter:
            M = M + self.jitter * np.eye(len(M))
        return M

    def objective(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        Bb = self.B @ beta
        val = 0.5 * (Bb @ Bb) / self.n + beta @ self.h + 0.5 * self.lam * (beta @ self.R @ beta)
        if self.jitter:
            val += 0.5 * self.jitter * (beta @ beta)
        return float(val + self.const)


def pinv_solve(M, h, cutoff=PINV_CUTOFF):
    """Return beta = -M^+ h via a symmetric eigensolve, the relative residual
    (rhs projected onto the kept range) and the effective rank."""
    w, V = np.linalg.eigh(M)
    if not np.all(np.isfinite(w)):
        raise NumericalError("eigendecomposition produced non-finite values")
    top = w.max() if w.size else 0.0
    if top <= 0:
        raise NumericalError("system matrix has no positive eigenvalues",
                             {"max_eigenvalue": float(top)})
    keep = w > cutoff * top
    Vk = V[:, keep]
    proj = Vk.T @ h
    beta = -Vk @ (proj / w[keep])
    if not np.all(np.isfinite(beta)):
        raise NumericalError("pseudo-inverse solve produced non-finite coefficients",
                             {"condition": float(top / w[keep].min())})
    hn = np.linalg.norm(h)
    resid = np.linalg.norm(M @ beta + Vk @ proj) / hn if hn > 0 else 0.0
    return beta, float(resid), int(keep.sum())


def _sub_block(H, rows_a, rows_i, cols_a, cols_i):
    return H[rows_a[:, None], cols_a[None, :], rows_i[:, None], cols_i[None, :]]


def assemble_nystrom(X, basis: BasisSpec, kernel, lam, q0_grad=None, jitter=DEFAULT_JITTER,
                     augmented=False) -> QuadraticProblem:
    kernel = kern._cfg(kernel)
    P = _points(X)
    n, d = P.shape
    if basis.size == 0:
        raise ValueError("empty index set")
    if basis.points.shape[1] != d:
        raise ValueError("basis dimension does not match data")
    Y = basis.points
    Ia, Ii = basis.index_set[:, 0], basis.index_set[:, 1]

    H = kern.cross_hessian_block(kernel, P, Y)              # (n, m, d, d)
    B = H.transpose(0, 2, 1, 3)[:, :, Ia, Ii].reshape(n * d, -1)
    HY = kern.cross_hessian_block(kernel, Y, Y)
    G = _sub_block(HY, Ia, Ii, Ia, Ii)

    xi1, xi2 = kern.xi_expansion(P, _q0_at(q0_grad, P))
    _, xi_grad, xi_sec = kern.expansion(kernel, Y, P, None, xi1, xi2, order=2)
    h = xi_grad[Ia, Ii]

    if augmented:
        T = kern.dx_dyy_block(kernel, P, Y)                  # d_{x_j} d^2_{y_i} k(X_b, Y_a)
        B2 = T.transpose(0, 2, 1, 3)[:, :, Ia, Ii].reshape(n * d, -1)
        G12 = _sub_block(kern.dx_dyy_block(kernel, Y, Y), Ia, Ii, Ia, Ii)
        G22 = _sub_block(kern.dxx_dyy_block(kernel, Y, Y), Ia, Ii, Ia, Ii)
        B = np.hstack([B, B2])
        G = np.block([[G, G12], [G12.T, G22]])
        h = np.concatenate([h, xi_sec[Ia, Ii]])
    return QuadraticProblem(B, h, G, lam, n, jitter)


def assemble_lite(X, Y, kernel, lam, reg="rkhs_plus_l2", q0_grad=None, jitter=0.0) -> QuadraticProblem:
    kernel = kern._cfg(kernel)
    P = _points(X)
    Y = _points(Y)
    n, d = P.shape
    if Y.shape[1] != d:
        raise ValueError("basis dimension does not match data")
    if reg not in ("rkhs_norm", "rkhs_plus_l2"):
        raise ValueError(f"unknown lite regularizer {reg!r}")
    D = kern.grad_x_block(kernel, P, Y)                     # (n, m, d)
    B = D.transpose(0, 2, 1).reshape(n * d, -1)
    G = kern.gram(kernel, Y, Y)
    xi1, xi2 = kern.xi_expansion(P, _q0_at(q0_grad, P))
    h, _, _ = kern.expansion(kernel, Y, P, None, xi1, xi2, order=0)
    R = G + np.eye(len(G)) if reg == "rkhs_plus_l2" else G
    return QuadraticProblem(B, h, R, lam, n, jitter)


def assemble_full(X, kernel, lam, q0_grad=None) -> tuple[QuadraticProblem, np.ndarray, np.ndarray]:
    """Quadratic in beta for f = -xi/lam + sum beta d_i k(X_a, .).

    Returns the problem in the extended coefficient vector (xi weight, beta)
    together with G and h of the (G + n lam I) beta = h / lam system.
    """
    kernel = kern._cfg(kernel)
    P = _points(X)
    n, d = P.shape
    G = kern.cross_hessian_matrix(kernel, P, P)
    G = 0.5 * (G + G.T)
    xi1, xi2 = kern.xi_expansion(P, _q0_at(q0_grad, P))
    _, xi_grad, xi_sec = kern.expansion(kernel, P, P, None, xi1, xi2, order=2)
    h = xi_grad.ravel()
    # <xi, xi> by the reproducing property applied to xi's own expansion
    xi_norm2 = float(np.sum(xi1 * xi_grad) + np.sum(xi2 * xi_sec))
    B_ext = np.column_stack([h, G])
    R_ext = np.block([[np.array([[xi_norm2]]), h[None, :]], [h[:, None], G]])
    h_ext = np.concatenate([[xi_norm2], h])
    return QuadraticProblem(B_ext, h_ext, R_ext, lam, n), G, h


def full_problem_in_beta(X, kernel, lam, q0_grad=None) -> QuadraticProblem:
    """The full objective as a function of beta alone (xi weight fixed at -1/lam)."""
    ext, _, _ = assemble_full(X, kernel, lam, q0_grad)
    t = -1.0 / lam
    B = ext.B[:, 1:]
    b0 = ext.B[:, 0] * t
    R = ext.R[1:, 1:]
    r0 = ext.R[0, 1:] * t
    n = ext.n
    # expand 1/(2n)||b0 + B beta||^2 + (t h0 + beta'h) + lam/2 (t^2 R00 + 2 t r0'beta + beta'R beta)
    h = B.T @ b0 / n + ext.h[1:] + lam * r0
    const = 0.5 * (b0 @ b0) / n + t * ext.h[0] + 0.5 * lam * t * t * ext.R[0, 0]
    return QuadraticProblem(B, h, R, lam, n, 0.0, const)


# -- fitters -------------------------------------------------------------------------

def _check_lam(lam):
    if not np.isfinite(lam) or lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def fit_full(X, kernel, lam, q0_grad=None, max_size=FULL_SIZE_CAP, force=False):
    """Fit f = -xi/lam + sum beta d_i k(X_a, .) by solving (G + n lam I) beta = h / lam."""
    _check_lam(lam)
    kernel = kern._cfg(kernel)
    P = _points(X)
    n, d = P.shape
    if n * d > max_size and not force:
        raise ResourceError(f"full system of size {n * d} exceeds cap {max_size}")
    t0 = time.perf_counter()
    _, G, h = assemble_full(P, kernel, lam, q0_grad)
    t1 = time.perf_counter()
    A = G + n * lam * np.eye(n * d)
    rhs = h / lam
    try:
        beta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A), rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        w = np.linalg.eigvalsh(A)
        raise NumericalError(f"full solve failed: {exc}",
                             {"min_eigenvalue": float(w.min()), "max_eigenvalue": float(w.max())}) from exc
    if not np.all(np.isfinite(beta)):
        raise NumericalError("full solve produced non-finite coefficients")
    t2 = time.perf_counter()
    rn = np.linalg.norm(rhs)
    resid = float(np.linalg.norm(A @ beta - rhs) / rn) if rn > 0 else 0.0
    model = ScoreModel("full", kernel.sigma, float(lam), P, beta, xi_scale=-1.0 / lam,
                       q0_grad=q0_grad, q0_grad_points=_q0_at(q0_grad, P))
    return model, FitReport(t1 - t0, t2 - t1, 0.0, n * d, resid, n * d)


def _solve_problem(prob: QuadraticProblem):
    t1 = time.perf_counter()
    beta, resid, rank = pinv_solve(prob.matrix, prob.h)
    return beta, resid, rank, time.perf_counter() - t1


def fit_nystrom(X, basis: BasisSpec, kernel, lam, q0_grad=None, jitter=DEFAULT_JITTER, augmented=False):
    """Minimize the regularized loss over span{d_i k(Y_a, .) : (a, i) in I}.

    The returned model keeps only basis points referenced by the index set.
    """
    _check_lam(lam)
    kernel = kern._cfg(kernel)
    basis = basis.compact()
    t0 = time.perf_counter()
    prob = assemble_nystrom(X, basis, kernel, lam, q0_grad, jitter, augmented)
    asm = time.perf_counter() - t0
    beta, resid, rank, solve = _solve_problem(prob)
    model = ScoreModel("nystrom", kernel.sigma, float(lam), basis.points, beta,
                       index_set=basis.index_set, augmented=augmented, jitter=jitter,
                       basis_mode=basis.mode, seed=basis.seed, q0_grad=q0_grad)
    return model, FitReport(asm, solve, jitter, len(beta), resid, rank)


def fit_lite(X, Y, kernel, lam, reg="rkhs_plus_l2", q0_grad=None, jitter=0.0):
    """Minimize over span{k(Y_a, .)}; ``reg`` picks lam/2 ||f||^2 or lam/2 (||f||^2 + ||beta||^2)."""
    _check_lam(lam)
    kernel = kern._cfg(kernel)
    mode = seed = None
    if isinstance(Y, BasisSpec):
        mode, seed = Y.mode, Y.seed
        Y = Y.points
    Y = _points(Y)
    t0 = time.perf_counter()
    prob = assemble_lite(X, Y, kernel, lam, reg, q0_grad, jitter)
    asm = time.perf_counter() - t0
    beta, resid, rank, solve = _solve_problem(prob)
    model = ScoreModel("lite", kernel.sigma, float(lam), Y, beta, reg=reg, jitter=jitter,
                       basis_mode=mode, seed=seed, q0_grad=q0_grad)
    return model, FitReport(asm, solve, jitter, len(beta), resid, rank)
