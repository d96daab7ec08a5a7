"""Gaussian kernel k(x, y) = exp(-||x - y||^2 / sigma) and its mixed partials.

Everything is written in terms of the profile phi(s) = exp(-||s||^2 / sigma),
s = x - y, with c = 2 / sigma.  Derivatives of phi:

    phi_i    = -c s_i phi
    phi_ij   = (c^2 s_i s_j - c delta_ij) phi
    phi_ijj  = (2 c^2 delta_ij s_j + c^2 s_i - c^3 s_i s_j^2) phi
    phi_iijj = (2 c^2 delta_ij + c^2 - c^3 (s_i^2 + s_j^2)
                - 4 c^3 delta_ij s_i s_j + c^4 s_i^2 s_j^2) phi

Since k(x, y) = phi(x - y), a derivative in the second argument picks up a
sign flip per order: d/dx_i d/dy_j k = -phi_ij, d/dx_i d^2/dy_j^2 k = phi_ijj,
d^2/dx_i^2 d^2/dy_j^2 k = phi_iijj.

Pointwise functions take single vectors; the ``*_block`` functions take point
sets of shape (n, d) and (m, d) and return arrays indexed [b, a, ...].  Each
entry is computed independently, so there is no reduction-order sensitivity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth of the Gaussian kernel, in squared-distance units."""

    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")

    @property
    def c(self) -> float:
        return 2.0 / self.sigma


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape or x.size == 0:
        raise ValueError(f"expected two vectors of equal dimension, got {x.shape} and {y.shape}")
    return x, y


def _sets(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    return X, Y


def _cfg(cfg) -> KernelConfig:
    return cfg if isinstance(cfg, KernelConfig) else KernelConfig(float(cfg))


# -- pointwise -------------------------------------------------------------

def kernel_eval(cfg, x, y) -> float:
    cfg = _cfg(cfg)
    x, y = _pair(x, y)
    s = x - y
    return float(np.exp(-(s @ s) / cfg.sigma))


def kernel_grad_x(cfg, x, y) -> np.ndarray:
    """Gradient of k(x, y) in x: -(2/sigma) (x - y) k(x, y)."""
    cfg = _cfg(cfg)
    x, y = _pair(x, y)
    return -cfg.c * (x - y) * kernel_eval(cfg, x, y)


def kernel_cross_hessian(cfg, x, y) -> np.ndarray:
    """Matrix of d/dx_i d/dy_j k(x, y)."""
    cfg = _cfg(cfg)
    x, y = _pair(x, y)
    return cross_hessian_block(cfg, x[None], y[None])[0, 0]


def kernel_dx_dyy(cfg, x, y) -> np.ndarray:
    """Matrix of d/dx_i d^2/dy_j^2 k(x, y)."""
    cfg = _cfg(cfg)
    x, y = _pair(x, y)
    return dx_dyy_block(cfg, x[None], y[None])[0, 0]


def kernel_dxx_dyy(cfg, x, y) -> np.ndarray:
    """Matrix of d^2/dx_i^2 d^2/dy_j^2 k(x, y)."""
    cfg = _cfg(cfg)
    x, y = _pair(x, y)
    return dxx_dyy_block(cfg, x[None], y[None])[0, 0]


# -- blocks ----------------------------------------------------------------

def _diffs(cfg, X, Y):
    X, Y = _sets(X, Y)
    S = X[:, None, :] - Y[None, :, :]
    K = np.exp(-np.einsum("bad,bad->ba", S, S) / cfg.sigma)
    return S, K


def gram(cfg, X, Y) -> np.ndarray:
    """K[b, a] = k(X_b, Y_a)."""
    cfg = _cfg(cfg)
    _, K = _diffs(cfg, X, Y)
    return K


def grad_x_block(cfg, X, Y) -> np.ndarray:
    """D[b, a, i] = d/dx_i k(X_b, Y_a)."""
    cfg = _cfg(cfg)
    S, K = _diffs(cfg, X, Y)
    return -cfg.c * S * K[..., None]


def cross_hessian_block(cfg, X, Y) -> np.ndarray:
    """H[b, a, i, j] = d/dx_i d/dy_j k(X_b, Y_a)."""
    cfg = _cfg(cfg)
    c = cfg.c
    S, K = _diffs(cfg, X, Y)
    d = S.shape[-1]
    H = c * np.eye(d) - c * c * (S[..., :, None] * S[..., None, :])
    return H * K[..., None, None]


def dx_dyy_block(cfg, X, Y) -> np.ndarray:
    """T[b, a, i, j] = d/dx_i d^2/dy_j^2 k(X_b, Y_a)."""
    cfg = _cfg(cfg)
    c = cfg.c
    S, K = _diffs(cfg, X, Y)
    d = S.shape[-1]
    Si = S[..., :, None]
    Sj = S[..., None, :]
    T = 2 * c**2 * np.eye(d) * Sj + c**2 * Si - c**3 * Si * Sj**2
    return T * K[..., None, None]


def dxx_dyy_block(cfg, X, Y) -> np.ndarray:
    """Q[b, a, i, j] = d^2/dx_i^2 d^2/dy_j^2 k(X_b, Y_a)."""
    cfg = _cfg(cfg)
    c = cfg.c
    S, K = _diffs(cfg, X, Y)
    d = S.shape[-1]
    Si2 = (S**2)[..., :, None]
    Sj2 = (S**2)[..., None, :]
    eye = np.eye(d)
    Q = (2 * c**2 * eye + c**2 - c**3 * (Si2 + Sj2)
         - 4 * c**3 * eye * Si2 + c**4 * (Si2 * Sj2))
    return Q * K[..., None, None]


def cross_hessian_matrix(cfg, X, Y) -> np.ndarray:
    """Gram block of shape (n d, m d), row (b, i) and column (a, j) point-major.

    Entry ((b, i), (a, j)) is d/dx_i d/dy_j k(X_b, Y_a).
    """
    H = cross_hessian_block(cfg, X, Y)
    n, m, d, _ = H.shape
    return H.transpose(0, 2, 1, 3).reshape(n * d, m * d)


# -- expansions --------------------------------------------------------------

def expansion(cfg, Q, P, a0=None, a1=None, a2=None, order=2):
    """Evaluate g(x) = sum_a [a0_a k(P_a, x) + sum_i a1_ai d_i k(P_a, x)
    + sum_i a2_ai d_i^2 k(P_a, x)] at each row of Q, derivatives on the first
    kernel argument.

    Returns ``(g, grad, second)`` with shapes (q,), (q, d), (q, d); ``grad``
    and ``second`` (diagonal of the Hessian in x) are None when ``order`` is
    lower than needed.  Coefficient arrays that are None are treated as zero.
    """
    cfg = _cfg(cfg)
    Q, P = _sets(Q, P)
    m, d = P.shape
    a0 = np.zeros(m) if a0 is None else np.asarray(a0, dtype=float)
    a1 = np.zeros((m, d)) if a1 is None else np.asarray(a1, dtype=float)
    a2 = np.zeros((m, d)) if a2 is None else np.asarray(a2, dtype=float)

    # rows are independent, so chunking does not change any output bit
    step = max(1, _CHUNK // max(1, m * d))
    if Q.shape[0] <= step:
        return _expansion(cfg, Q, P, a0, a1, a2, order)
    parts = [_expansion(cfg, Q[i:i + step], P, a0, a1, a2, order)
             for i in range(0, Q.shape[0], step)]
    return tuple(None if parts[0][k] is None else np.concatenate([p[k] for p in parts])
                 for k in range(3))


_CHUNK = 2_000_000


def _expansion(cfg, Q, P, a0, a1, a2, order):
    c = cfg.c
    # s = x - P_a; d_u^alpha k(u, x) = (-1)^|alpha| phi^(alpha)(x - u)
    S, K = _diffs(cfg, Q, P)
    S2 = S**2
    a1s = np.einsum("qad,ad->qa", S, a1)
    a2sum = a2.sum(axis=1)
    a2s2 = np.einsum("qad,ad->qa", S2, a2)

    w = a0 + c * a1s + c * c * a2s2 - c * a2sum
    g = np.einsum("qa,qa->q", K, w)
    if order < 1:
        return g, None, None

    # grad_j: -c a0 s_j - c^2 s_j (a1.s) + c a1_j + 2c^2 a2_j s_j
    #         + c^2 s_j sum(a2) - c^3 s_j (a2.s^2)
    coef_s = (-c * a0 - c * c * a1s + c * c * a2sum - c**3 * a2s2)[..., None]
    G = coef_s * S + c * a1[None] + 2 * c * c * a2[None] * S
    grad = np.einsum("qa,qad->qd", K, G)
    if order < 2:
        return g, grad, None

    # second_j: a0 (c^2 s_j^2 - c)
    #   - (2c^2 a1_j s_j + c^2 (a1.s) - c^3 s_j^2 (a1.s))
    #   + 2c^2 a2_j + c^2 sum(a2) - c^3 (a2.s^2) - c^3 s_j^2 sum(a2)
    #   - 4c^3 a2_j s_j^2 + c^4 s_j^2 (a2.s^2)
    const = (-c * a0 - c * c * a1s + c * c * a2sum - c**3 * a2s2)[..., None]
    quad = (c * c * a0 + c**3 * a1s - c**3 * a2sum + c**4 * a2s2)[..., None]
    H = (const + quad * S2 - 2 * c * c * a1[None] * S
         + 2 * c * c * a2[None] - 4 * c**3 * a2[None] * S2)
    second = np.einsum("qa,qad->qd", K, H)
    return g, grad, second


def xi_expansion(X, q0_grad_points=None):
    """Expansion coefficients of xi(.) = 1/n sum_a sum_i [d_i^2 k(X_a, .)
    + d_i k(X_a, .) d_i log q0(X_a)], for use with :func:`expansion`."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    a1 = np.zeros((n, d)) if q0_grad_points is None else np.asarray(q0_grad_points, float) / n
    a2 = np.full((n, d), 1.0 / n)
    return a1, a2
