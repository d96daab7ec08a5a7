"""
Subsampling points versus components
====================================

With a budget of md basis functions we can take all d components at m points,
or md components spread over the whole sample.  The second choice touches many
more points.
"""

import numpy as np

import kexfam as kx
from kexfam import bench

n, d = 500, 4
X = kx.generate("grid", n, d, seed=5).points

for m in (5, 10, 20, 50):
    a = kx.make_basis(X, "all_components", m=m, seed=0)
    b = kx.make_basis(X, "global", m=m, seed=0)
    expected = n * (1 - (1 - m / n) ** d)
    print(f"m={m:3d}  |I|={a.size:4d}  points: nystrom {len(np.unique(a.index_set[:, 0])):3d}  "
          f"nystrom_d {len(np.unique(b.index_set[:, 0])):3d} (expected {expected:.1f})")

###############################################################################
# Fisher distance of both variants after tuning, a few trials each

rows = bench.subsampling_compare("grid", d, n, [5, 20], trials=3, seed=7, n_test=1500)
for key, value in sorted(bench.summarize(rows, stat=np.mean).items()):
    print(key, round(value, 3))
