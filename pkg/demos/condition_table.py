"""Print predicted convergence rates for s = 2 over a grid of (k, r)."""
from fractions import Fraction as F

from hhons.laws import condition_report, format_interval

R = [F(3, 2), F(9, 5), 2, F(5, 2), 3]

print("k  " + "".join(f"{str(r):>26}" for r in R))
for k in (1, 2, 3):
    cells = []
    for r in R:
        rep = condition_report(r, 2, k=k)
        cells.append(f"{format_interval(rep.predicted_rate_velocity)} / {format_interval(rep.predicted_rate_pressure)}")
    print(f"{k}  " + "".join(f"{c:>26}" for c in cells))
