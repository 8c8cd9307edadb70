"""
Three ways to compare two clips
===============================

Instance matching aligns frames in order (dynamic time warping), category
matching reconstructs one clip from another by cross-attention, and task
matching pairs every frame with its nearest neighbour regardless of order.
"""

import numpy as np

from m3net.matching import (
    CMParams,
    chamfer_directed,
    cm_reconstruct,
    cosine_distance_matrix,
    dtw_min_cost,
    instance_distance,
)

# A 2x2 cost matrix: the diagonal path (0.2 + 0.1) beats both detours.
m = np.array([[0.2, 0.9], [0.8, 0.1]])
cost, path = dtw_min_cost(m)
print("DTW cost", cost, "path", path, "mean along path", m[tuple(np.array(path).T)].mean())

# Order matters to DTW but not to the chamfer distance.
rng = np.random.default_rng(1)
a = rng.standard_normal((4, 8))
reversed_a = a[::-1]
print("instance distance to itself      ", round(instance_distance(a, a), 6))
print("instance distance to its reversal", round(instance_distance(reversed_a, a), 6))
print("chamfer (both directions) to its reversal",
      chamfer_directed(a, reversed_a) + chamfer_directed(reversed_a, a))

# The pairwise cosine distances live in [0, 2].
print("cosine range", cosine_distance_matrix(a, -a).min().round(6), "to",
      cosine_distance_matrix(a, -a).max().round(6))

# Cross-attention reconstruction: a clip rebuilt from itself is close to its
# own projection; a clip rebuilt from an unrelated clip is not.
params = CMParams.init(8, 8, rng, np.float64)
for name, source in (("itself", a), ("another clip", rng.standard_normal((4, 8)))):
    recon, projected = cm_reconstruct(params, a, source)
    print(f"reconstruction error from {name}: {np.linalg.norm(recon - projected, axis=1).sum():.4f}")
