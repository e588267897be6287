"""Effective capacity from collision counts.

When N virtual identities meet L unseen real ones, the number of colliding
pairs is close to Poisson. This walks through the estimators for a few
collision counts and checks interval coverage by simulation.
"""

import numpy as np

from bipkit.capacity import (
    collision_stats,
    expected_collisions,
    poisson_pmf,
    zero_collision_bound,
)
from bipkit.geometry import cap_volume

N, L = 1_000_000, 180_000

for c in (0, 1, 3, 30):
    s = collision_stats(N, L, c, 0.391)
    print(f"C={c:3d}  mle={s.mle}  95% CI=({s.ci_low:.3e}, {s.ci_high:.3e})"
          f"  zero-collision bound={s.zero_collision_lower}")

print("\none-sided bound with no collisions:", f"{zero_collision_bound(N, L):.3e}")

# What the geometry predicts for uniform points.
for t in (0.319, 0.391, 0.448):
    lam = expected_collisions(N, L, cap_volume(t, 269).linear)
    print(f"tau={t}: expected collisions {lam:.3g}, P(C=0)={poisson_pmf(lam, 0):.3f}")

# Coverage of the exact interval by simulation.
rng = np.random.default_rng(0)
lam = 2.43
truth = N * L / lam
stats = [collision_stats(N, L, int(c), 0.391) for c in rng.poisson(lam, 1000)]
hits = [s.ci_low <= truth <= s.ci_high for s in stats]
print(f"\ncoverage at lambda={lam}: {np.mean(hits):.3f}")
