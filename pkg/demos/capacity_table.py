"""How many non-colliding identities fit on the sphere?

Prints the cap volume, the Gilbert-Varshamov count 1/mu and the orthogonal
separation threshold for a handful of operating thresholds at d = 269, then
shows how fast the picture changes with dimension.
"""

from bipkit.geometry import cap_volume, gaussian_cap_approx, gv_bound, safety_buffer_analysis

TAUS = [0.319, 0.330, 0.341, 0.360, 0.391, 0.448]

print(f"{'tau':>6} {'mu':>10} {'log2 A':>7} {'A_GV':>10} {'alpha*':>7}")
for t in TAUS:
    r = gv_bound(t, 269)
    print(f"{t:6.3f} {r.mu.linear:10.3e} {r.log2_gv:7.2f} {r.gv_bound:10.3e} {r.alpha_star_orthogonal:7.3f}")

# The same threshold in a smaller ambient space leaves far less room.
print("\ncapacity at tau = 0.391 by dimension")
for d in (16, 64, 128, 269, 512):
    r = gv_bound(0.391, d)
    print(f"  d={d:4d}  log2 A_GV = {r.log2_gv:7.2f}")

# A Gaussian tail estimate of the cap is convenient but loose.
exact = cap_volume(0.391, 269).linear
print(f"\nGaussian approx / exact at d=269: {gaussian_cap_approx(0.391, 269) / exact:.2f}")

# Provisioning at a stricter threshold keeps a margin for later enrollments.
buf = safety_buffer_analysis(0.391, 0.031, 269)
print(f"buffer: tau_safe={buf.tau_safe:.3f}, A_GV={buf.capacity_at_tau_safe.gv_bound:.3e}, "
      f"alpha*={buf.capacity_at_tau_safe.alpha_star_orthogonal:.2f}")
