"""
Gaussian kernel derivatives
===========================

The estimators only ever touch the kernel through a handful of derivative
blocks.  Here we compare each against central differences of the one below it.
"""

import numpy as np

from kexfam import kernels as K

rng = np.random.default_rng(0)
sigma = 2.0
x, y = rng.normal(size=3), rng.normal(size=3)


def fd(fun, z, h=1e-5):
    cols = []
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        cols.append((fun(z + e) - fun(z - e)) / (2 * h))
    return np.stack(cols, axis=-1)


###############################################################################
# first and mixed second derivatives

print("grad_x      ", np.abs(K.kernel_grad_x(sigma, x, y) - fd(lambda u: K.kernel_eval(sigma, u, y), x)).max())
print("cross hess  ", np.abs(K.kernel_cross_hessian(sigma, x, y)
                             - fd(lambda v: K.kernel_grad_x(sigma, x, v), y)).max())

###############################################################################
# the third and fourth order terms used by the full estimator

J = fd(lambda v: K.kernel_cross_hessian(sigma, x, v), y)
print("dx_dyy      ", np.abs(K.kernel_dx_dyy(sigma, x, y) - np.einsum("ijj->ij", J)).max())
J = fd(lambda u: K.kernel_dx_dyy(sigma, u, y), x)
print("dxx_dyy     ", np.abs(K.kernel_dxx_dyy(sigma, x, y) - np.einsum("iji->ij", J)).max())

###############################################################################
# block versions stack the pointwise ones, point-major

X = rng.normal(size=(4, 3))
H = K.cross_hessian_matrix(sigma, X, X)
print("cross-Hessian Gram", H.shape, "min eigenvalue", np.linalg.eigvalsh(H).min())
