"""
How many noise draws does the guarantee need
============================================

The soft invalidation estimate plus a slack ``m``, divided by ``1 - t``,
bounds the true invalidation rate with probability ``1 - exp(-2 m^2 K)``.
Tabulate the draws needed, then check coverage against the quadrature oracle.

"""

# draws K needed per slack m and confidence level
from croco import bound_table
for row in bound_table([0.1, 0.05], [0.99, 0.999, 0.99995]):
    print(f"m={row['m']:<5} confidence={row['confidence']:<8} K={row['K']}")

# a random 2D classifier and a point near its boundary
import numpy as np
from croco import MlpClassifier, NoiseSpec
from croco.robustness import brute_force_invalidation, soft_invalidation_mc, upper_bound

model = MlpClassifier.initialize([2, 8, 1], seed=1, bias_scale=0.5)
x = np.array([0.6, -0.4])
noise = NoiseSpec.gaussian(0.2, 2, seed=0)

# exact invalidation rate by quadrature
gamma = brute_force_invalidation(model, x, noise).gamma
print(f"quadrature invalidation rate {gamma:.4f}")

# 2000 independent bounds from K=50 draws each; count how often the bound misses
bounds = np.array([upper_bound(soft_invalidation_mc(model, x, noise, 50, instance=r), 0.05)
                   for r in range(2000)])
print(f"mean bound {bounds.mean():.4f}, miss frequency {np.mean(gamma > bounds):.4f}, "
      f"allowed {np.exp(-2 * 0.05 ** 2 * 50):.4f}")
