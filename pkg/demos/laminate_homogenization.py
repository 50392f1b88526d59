"""Effective tensor of a laminate and the geometry it induces.

Run: python3 demos/laminate_homogenization.py
"""

import numpy as np

from twosphere import Ellipsoid, builtin_field, homogenize

field = builtin_field("laminate", 2)
T = homogenize(field, resolution=(1024, 8))
print("effective tensor\n", T.matrix)
print("harmonic mean sqrt(3) =", np.sqrt(3.0), " arithmetic mean =", 2.0)
print("S =\n", T.S, "\nS A S^T =\n", T.S @ T.matrix @ T.S.T)

E = Ellipsoid(T, 1.0)
for p in ([1.35, 0.0], [0.0, 1.4], [1.0, 1.0]):
    print(f"{p} in E_1: {bool(E.contains(np.array(p)))}")
