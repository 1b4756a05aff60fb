"""
Not every power diagram comes from a TopK encoder
=================================================

A second-order power diagram with generators p1..p4 has cell centroids
at the pairwise means (pi + pj) / 2. So a first-order diagram can only
be rewritten as a Top2 encoder if its centroids are such pairwise means.
Six points on a regular hexagon, listed in angular order, are not.
"""

import itertools

import numpy as np

from saegeom.geometry import fit_second_order

angles = np.arange(6) * np.pi / 3
hexagon = np.column_stack([np.cos(angles), np.sin(angles)])

# %%
# Least squares over four generators. The targets are matched to pairs
# in the order (0,1), (0,2), (0,3), (1,2), (1,3), (2,3).
_, residual = fit_second_order(hexagon)
print(f"hexagon, angular order:        residual {residual:.4f}  (exactly sqrt 3)")

# %%
# The answer depends on which vertex is assigned to which pair. Putting
# opposite vertices on complementary pairs makes the system solvable,
# so the claim is about a given labelling, not the bare point set.
_, residual = fit_second_order(hexagon[[0, 1, 2, 5, 4, 3]])
print(f"hexagon, antipodal labelling:  residual {residual:.1e}")

# %%
# Pairwise means of any four points are recovered exactly.
pts = np.random.default_rng(1).standard_normal((4, 2))
means = np.array([(pts[i] + pts[j]) / 2 for i, j in itertools.combinations(range(4), 2)])
recovered, residual = fit_second_order(means)
print(f"pairwise means of 4 points:    residual {residual:.1e}, "
      f"generator error {np.abs(recovered - pts).max():.1e}")
