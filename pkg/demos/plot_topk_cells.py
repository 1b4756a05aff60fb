"""
TopK encoders carve the plane into power cells
==============================================

A TopK encoder picks, for every input, the K code units with the largest
pre-activation. Which K units win depends only on where the input sits,
and the set of inputs sharing a winning set is a cell of a K-th order
power diagram. This script builds a small random encoder on the plane,
checks the correspondence point by point and writes one picture per K.
"""

from pathlib import Path

import numpy as np

from saegeom.geometry import cells_of, enc_to_diagram, reduce_to_power, power_cell_index, render_cells
from saegeom.sae import SaeParams, TopK, encode, support

out = Path("demo_output")
out.mkdir(exist_ok=True)
rng = np.random.default_rng(0)

# %%
# A random 2-D encoder with 7 units. The decoder does not matter for the
# geometry, so it is left at zero.
d = 7
params = SaeParams(rng.standard_normal((d, 2)), 0.5 * rng.standard_normal(d),
                   np.zeros((2, d)), np.zeros(2))

# %%
# Each unit becomes a centroid (its encoder row) with a weight built from
# its bias and squared norm. For K = 1, 2, 3 we compare the TopK support
# with the power-diagram cell on a few thousand random points.
x = rng.uniform(-2, 2, size=(5000, 2))
for k in (1, 2, 3):
    diag = enc_to_diagram(params, k)
    z = encode(x, params, TopK(k))
    cells = cells_of(x, diag)
    same = sum(support(zi) == tuple(c) for zi, c in zip(z, cells))
    print(f"K={k}: TopK support equals the power cell on {same}/{len(x)} points")
    render = render_cells(diag, (-2.0, 2.0, -2.0, 2.0), resolution=240)
    (out / f"topk_cells_k{k}.svg").write_text(render.svg)
    print(f"       {len(render.distinct_labels())} cells visible, picture in "
          f"{out / f'topk_cells_k{k}.svg'}")

# %%
# A K-th order diagram is also an ordinary power diagram over K-subsets:
# each subset gets the mean of its centroids and a matching weight. The
# labels agree everywhere.
diag = enc_to_diagram(params, 3)
flat = reduce_to_power(diag)
via_flat = [flat.labels[i] for i in power_cell_index(x, flat)]
via_k = [tuple(c) for c in cells_of(x, diag)]
print(f"order reduction: {len(flat.labels)} subset cells, "
      f"{sum(a == b for a, b in zip(via_flat, via_k))}/{len(x)} labels agree")
