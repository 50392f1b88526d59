"""Chebyshev extrapolation from a small segment to a larger one.

Prints the weights for a few orders and shows the remainder of an entire
function shrinking geometrically in the order.

Run: python3 demos/extrapolation_weights.py
"""

import numpy as np

from twosphere import build_system, residue_error

r1, r2, r3 = 1.0, 2.0, 25.0
for m in (1, 2, 4, 8):
    sys = build_system(r1, r2, r3, m)
    print(f"m={m}: max |c_i| = {np.max(np.abs(sys.weights)):9.3f}  "
          f"bound {sys.weight_bound:9.3f}  sum c_i = {sys.weights.sum():.12f}")

# a pole at z = 12 lies outside the contour of radius r3/(3 r1)
f = lambda z: 1.0 / (12.0 - z)
for m in range(1, 11):
    print(f"m={m:2d}  remainder {abs(residue_error(build_system(r1, r2, r3, m), f)):.3e}")
