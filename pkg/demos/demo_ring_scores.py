"""
Score matching on the ring density
==================================

Fit the full, Nystrom and lite estimators to 500 ring samples and compare
their Fisher distance on fresh test points.
"""

import time

import numpy as np

import kexfam as kx

train = kx.generate("ring", 500, 2, seed=1)
test = kx.generate("ring", 2000, 2, seed=2)
truth = test.true_score()
sigma, lam = 2.0, 1e-4

###############################################################################
# the full estimator solves an nd x nd system

t = time.perf_counter()
full, report = kx.fit_full(train.points, sigma, lam)
print(f"full      fisher {kx.fisher_divergence(full, test, truth):7.3f}  "
      f"size {report.system_size:5d}  {time.perf_counter() - t:.2f}s")

###############################################################################
# Nystrom keeps all d derivative directions at m basis points

for m in (25, 100, 500):
    basis = kx.make_basis(train.points, "all_components", m=m, seed=3)
    t = time.perf_counter()
    model, report = kx.fit_nystrom(train.points, basis, sigma, lam)
    print(f"nystrom   fisher {kx.fisher_divergence(model, test, truth):7.3f}  "
          f"size {report.system_size:5d}  {time.perf_counter() - t:.2f}s  m={m}")

###############################################################################
# lite uses plain kernel functions k(y, .) at the same points

for m in (25, 100, 500):
    Y = train.points[:m]
    model, report = kx.fit_lite(train.points, Y, sigma, lam)
    print(f"lite      fisher {kx.fisher_divergence(model, test, truth):7.3f}  "
          f"size {report.system_size:5d}  m={m}")

###############################################################################
# the fitted log-density along a ray through the rings

r = np.linspace(0.0, 6.0, 13)
ray = np.c_[r, np.zeros_like(r)]
for ri, fi in zip(r, kx.eval_f(full, ray)):
    print(f"r={ri:4.1f}  f={fi: .3f}")
