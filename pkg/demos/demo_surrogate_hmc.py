"""
Surrogate HMC with a learned score
==================================

Leapfrog trajectories are driven by a fitted score, while acceptance is judged
against the true Gaussian target.  A good surrogate keeps the Hamiltonian
nearly constant along the path.
"""

import numpy as np

import kexfam as kx
from kexfam.datasets import GaussianParams, gaussian_logpdf
from kexfam.hmc import HmcConfig, acceptance_experiment, acceptance_table_csv


def logp(x):
    return float(gaussian_logpdf(GaussianParams(), np.atleast_2d(x))[0])


samples = kx.generate("gaussian", 500, 2, seed=1).points
basis = kx.make_basis(samples, "all_components", m=100, seed=2)
nystrom, _ = kx.fit_nystrom(samples, basis, 4.0, 1e-3)

starts = kx.generate("gaussian", 20, 2, seed=3).points
models = [lambda x: -np.asarray(x), nystrom, kx.estimators.zero_model(2)]
rows = acceptance_experiment(models, logp, starts, HmcConfig(num_steps=100, step_size=0.1, seed=4),
                             model_ids=["exact", "nystrom", "zero"])
print(acceptance_table_csv(rows))
