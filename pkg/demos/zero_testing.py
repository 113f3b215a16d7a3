"""Why a {+1,-1} query alphabet needs exponentially many Kronecker queries.

Builds the rank-one hard instance, measures how often a single Rademacher
query sees a nonzero response, and compares with one Gaussian query.
"""

import math

from kronquery.core import KronVector, RankOne
from kronquery.estimators import zero_test
from kronquery.experiments import p_certificate, q_certificate
from kronquery.sampling import Alphabet, Gaussian, Rademacher, SeededStream, adversary_pm1_n2_pmf

TRIALS = 20_000

pm1 = Alphabet.parse("pm1")
print("exact game values for {+1,-1}, n=2:",
      p_certificate(pm1, 2).detection_prob, q_certificate(pm1, 2).detection_prob)

pmf = adversary_pm1_n2_pmf()
print(f"{'q':>3} {'rademacher':>11} {'2^-q':>9} {'gaussian':>9}")
for q in range(2, 9):
    rad = gau = 0
    for i in range(TRIALS):
        s = SeededStream(2024, (q << 32) | i)
        A = RankOne(KronVector(pmf.draw(s, q)))
        rad += zero_test(A, Rademacher(2), 1, s).nonzero
        gau += zero_test(A, Gaussian(2), 1, s).nonzero
    print(f"{q:>3} {rad / TRIALS:>11.5f} {2.0 ** -q:>9.5f} {gau / TRIALS:>9.5f}")

# a tester that repeats the query m times
q = 6
m = math.ceil(2 * 2**q)
ok = sum(zero_test(RankOne(KronVector(pmf.draw(SeededStream(7, i), q))), Rademacher(2), m,
                   SeededStream(8, i)).nonzero for i in range(500))
print(f"q={q}, m={m}: tester flagged NonZero in {ok}/500 runs")
