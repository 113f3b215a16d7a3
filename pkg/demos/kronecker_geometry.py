"""Random Kronecker unit vectors are nearly orthogonal, and Khatri-Rao
sketches with normalized columns are well conditioned."""

import numpy as np

from kronquery.core import KronVector, QueryMatrix, condition_number
from kronquery.oracles import concentration_probe
from kronquery.sampling import Gaussian, SeededStream, sample_kron_batch

for n in (2, 4):
    rep = concentration_probe(n, 12, 50_000, 1.0, SeededStream(3, n))
    print(f"n={n}")
    for q in (1, 4, 8, 12):
        print(f"  q={q:>2}  E log X = {rep.mean_log_X[q - 1]:8.3f}  digamma {rep.digamma_prediction[q - 1]:8.3f}"
              f"  f(1) = {rep.empirical_f_tau[q - 1]:.4f}")
    print(f"  slope of log f: {rep.fitted_decay_rate:.3f}  (R^2 {rep.fit_r2:.3f})")

kap_raw, kap_norm = [], []
for i in range(50):
    V = QueryMatrix([KronVector(f) for f in sample_kron_batch(Gaussian(4), 5, 16, SeededStream(4, i))])
    kap_raw.append(condition_number(V))
    kap_norm.append(condition_number(V.normalized()))
print(f"khatri-rao n=4 q=5 t=16: kappa raw median {np.median(kap_raw):.1f}, "
      f"normalized median {np.median(kap_norm):.2f}")
