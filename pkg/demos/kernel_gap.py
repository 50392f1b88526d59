"""Distance between the oscillating kernel and the explicit homogenized one.

The gap should scale like eps, so gap/eps is roughly constant. Takes about
10 seconds.

Run: python3 demos/kernel_gap.py
"""

from twosphere import builtin_field, homogenize
from twosphere.kernels import kernel_gap_report

field = builtin_field("laminate", 1)
T = homogenize(field, resolution=1024)
rep = kernel_gap_report(field, T, [0.1, 0.05, 0.025])
for e, g, r, gg in zip(rep.eps, rep.gaps, rep.ratios, rep.grad_gaps):
    print(f"eps={e:<6g} gap={g:.3e} gap/eps={r:.4f} gradient gap={gg:.3e}")
print("fitted envelope C =", round(rep.C, 4), "kappa =", round(rep.kappa, 4), "passed:", rep.passed)
