"""
Persistence diagrams of small point clouds
==========================================

Degree-0 diagrams record when connected components merge, degree-1
diagrams when loops are born and filled in. Filtration values are ball
radii, so two points at distance d connect at radius d / 2.
"""

import numpy as np

from topobo.datasets import gen_orbit
from topobo.persistence import compute_h0, compute_h1, enclosing_radius, subsample_maxmin

# the unit square: three merges at radius 1/2, one loop that dies when
# the diagonals connect at sqrt(2)/2
square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
print("square H0:", compute_h0(square).sorted_points().tolist())
print("square H1:", compute_h1(square).sorted_points().tolist())

# a noisy circle has one long-lived loop and a few short ones
rng = np.random.default_rng(0)
t = rng.uniform(0, 2 * np.pi, 80)
circle = np.column_stack([np.cos(t), np.sin(t)]) + rng.normal(0, 0.05, (80, 2))
h1 = compute_h1(circle)
print(f"\nnoisy circle: {len(h1)} loops, longest persistence {h1.persistence.max():.3f}")

# H1 is computed up to the enclosing radius by default; beyond it the
# complex is a cone and has no further homology
print(f"enclosing radius {enclosing_radius(circle):.3f}")

# orbit clouds of the linked twist map change topology with r
pool = gen_orbit(M=6, N=400, seed=1)
print("\n   r     #H1   total persistence")
for cloud in sorted(pool.clouds, key=lambda c: c.label):
    d = compute_h1(cloud)
    print(f"{cloud.label:5.2f} {len(d):6d} {d.persistence.sum():12.4f}")

# big clouds can be thinned by farthest-point sampling before H1
thin = subsample_maxmin(pool.clouds[0], 100, seed=0)
print(f"\nsubsampled {pool.clouds[0].n_points} -> {thin.n_points} points,",
      f"{len(compute_h1(thin))} loops")
