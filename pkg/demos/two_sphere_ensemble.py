"""Observed constant of the two-sphere one-cylinder bound on a small ensemble.

Solves eight laminate problems at eps = 0.1 and prints one report per
member. Members 3 and 7 have their lateral data switched on late, so they
are small near the centre at the final time. Takes about 10 seconds.

Run: python3 demos/two_sphere_ensemble.py
"""

from twosphere import Cylinder, builtin_field, generate_ensemble, homogenize, verify_ellipsoid_bound

field = builtin_field("laminate", 1)
T = homogenize(field, resolution=1024)
radii = (0.04, 0.08, 1.0)
members = generate_ensemble(field, 0.1, Cylinder(1.5, -1.05, 0.0), 8, seed=7)
print("member  delta/N     L/N       case  m  C_obs")
for u in members:
    r = verify_ellipsoid_bound(u, T, radii, 0.0)
    print(f"{u.meta['member']:6d}  {r.delta / r.N:.3e}  {r.L / r.N:.3e}  {r.case}  {r.m}  {r.C_obs:.3e}")
