"""Independent reference computations used as test oracles."""
import numpy as np

from kexfam import kernels as K


def central_jacobian(fun, x, h=1e-5):
    """Central differences of a (possibly array-valued) function; last axis = d/dx_k."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def second_diag_fd(fun, x, h=1e-4):
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    out = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out.append((fun(x + e) - 2 * f0 + fun(x - e)) / h**2)
    return np.array(out)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def naive_f(model, x):
    """Unvectorized sum over basis terms using only pointwise kernel functions."""
    cfg = model.kernel
    x = np.asarray(x, dtype=float)
    total = 0.0
    if model.kind == "lite":
        for a, y in enumerate(model.points):
            total += model.beta[a] * K.kernel_eval(cfg, y, x)
        return total
    if model.kind == "nystrom":
        k = len(model.index_set)
        for c, (a, i) in enumerate(model.index_set):
            y = model.points[a]
            total += model.beta[c] * K.kernel_grad_x(cfg, y, x)[i]
            if model.augmented:
                # d_i^2 k(u, x) = -d_{u_i} d_{x_i} k(u, x) for a stationary kernel
                total += model.beta[k + c] * -K.kernel_cross_hessian(cfg, y, x)[i, i]
        return total
    n, d = model.points.shape
    g = model.q0_grad_points
    for a in range(n):
        y = model.points[a]
        grad = K.kernel_grad_x(cfg, y, x)
        ch = K.kernel_cross_hessian(cfg, y, x)
        for i in range(d):
            total += model.beta[a * d + i] * grad[i]
            xi = -ch[i, i] + (0.0 if g is None else grad[i] * g[a, i])
            total += model.xi_scale * xi / n
    return total


def pointwise_full_system(sigma, X):
    """G and h of (G + n lam I) beta = h / lam built entry by entry."""
    n, d = X.shape
    G = np.zeros((n * d, n * d))
    h = np.zeros(n * d)
    for a in range(n):
        for b in range(n):
            G[a * d:(a + 1) * d, b * d:(b + 1) * d] = K.kernel_cross_hessian(sigma, X[a], X[b])
            h[b * d:(b + 1) * d] += K.kernel_dx_dyy(sigma, X[b], X[a]).sum(axis=1) / n
    return G, h


def random_problem(rng, n_max=20, d_max=3):
    n = int(rng.integers(4, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    X = rng.normal(size=(n, d))
    sigma = float(rng.uniform(0.5, 3.0)) * d
    lam = float(10 ** rng.uniform(-3, 0))
    return X, sigma, lam


def model_terms(model):
    """(coef, point, kind, i) with kind 0: k(y, .), 1: d_{y_i} k(y, .), 2: d_{y_i}^2 k(y, .)."""
    terms = []
    if model.kind == "lite":
        return [(b, y, 0, 0) for b, y in zip(model.beta, model.points)]
    if model.kind == "nystrom":
        k = len(model.index_set)
        for c, (a, i) in enumerate(model.index_set):
            terms.append((model.beta[c], model.points[a], 1, i))
            if model.augmented:
                terms.append((model.beta[k + c], model.points[a], 2, i))
        return terms
    n, d = model.points.shape
    g = model.q0_grad_points
    for a in range(n):
        for i in range(d):
            coef = model.beta[a * d + i] + (0.0 if g is None else model.xi_scale * g[a, i] / n)
            terms.append((coef, model.points[a], 1, i))
            terms.append((model.xi_scale / n, model.points[a], 2, i))
    return terms


def _inner(sigma, s, t):
    _, y, ks, i = s
    _, z, kt, j = t
    if ks > kt:
        return _inner(sigma, t, s)
    if (ks, kt) == (0, 0):
        return K.kernel_eval(sigma, y, z)
    if (ks, kt) == (1, 1):
        return K.kernel_cross_hessian(sigma, y, z)[i, j]
    if (ks, kt) == (1, 2):
        return K.kernel_dx_dyy(sigma, y, z)[i, j]
    if (ks, kt) == (2, 2):
        return K.kernel_dxx_dyy(sigma, y, z)[i, j]
    raise NotImplementedError((ks, kt))


def rkhs_norm_sq(model):
    """||f||_H^2 by the reproducing property, one pair of terms at a time."""
    terms = model_terms(model)
    return float(sum(s[0] * t[0] * _inner(model.sigma, s, t) for s in terms for t in terms))


def lite_prop1_terms(X, tau):
    """A, b and K of the closed-form lite estimator for Y = X and uniform q0."""
    n, d = X.shape
    Kmat = np.array([[K.kernel_eval(tau, a, b) for b in X] for a in X])
    one = np.ones(n)
    A = np.zeros((n, n))
    b = np.zeros(n)
    for i in range(d):
        x = X[:, i]
        s = x * x
        Dx = np.diag(x)
        C = Dx @ Kmat - Kmat @ Dx
        A -= C @ C
        b += 2.0 / tau * (Kmat @ s + np.diag(s) @ Kmat @ one - 2.0 * Dx @ Kmat @ x) - Kmat @ one
    return A, b, Kmat
