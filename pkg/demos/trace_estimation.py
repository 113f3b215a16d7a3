"""Hutchinson on the trace hard instance.

With 16 Rademacher-Kronecker queries most runs see nothing and report 0.
Gaussian factors never return 0 but the estimate is heavy tailed: the
per-query relative variance is 3^q - 1.
"""

import numpy as np

from kronquery.estimators import hutchinson_trace
from kronquery.instances import make_trace_hard_instance
from kronquery.sampling import Alphabet, Gaussian, Rademacher, SeededStream

q, runs = 6, 2000
pm1 = Alphabet.parse("pm1")

zeros = 0
for i in range(runs):
    s = SeededStream(11, i)
    A = make_trace_hard_instance(pm1, 2, q, s)
    zeros += hutchinson_trace(A, Rademacher(2), 16, s).value == 0.0
print(f"rademacher t=16: {zeros / runs:.4f} of runs return 0 (predicted {(1 - 2.0**-q) ** 16:.4f})")

ratios = []
for i in range(200):
    s = SeededStream(12, i)
    A = make_trace_hard_instance(pm1, 2, q, s)
    ratios.append(hutchinson_trace(A, Gaussian(2), 1000, s).value / A.trace())
ratios = np.array(ratios)
print(f"gaussian t=1000: median ratio {np.median(ratios):.3f}, "
      f"within 20% in {np.mean(np.abs(ratios - 1) <= 0.2):.2f} of runs")
print("relative sd per run ~", np.sqrt((3.0**q - 1) / 1000))
