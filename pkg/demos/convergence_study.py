"""Manufactured-solution convergence study on distorted triangles.

    python demos/convergence_study.py [r] [k] [levels...]
"""
import sys

from hhons.laws import condition_report, format_interval
from hhons.verify import ConvergenceConfig, run_convergence

r = float(sys.argv[1]) if len(sys.argv) > 1 else 2.0
k = int(sys.argv[2]) if len(sys.argv) > 2 else 1
levels = tuple(int(n) for n in sys.argv[3:]) or (8, 16, 32)

rep = condition_report(r, 2, k=k)
print(f"r={rep.r} k={k}: predicted velocity {format_interval(rep.predicted_rate_velocity)}, "
      f"pressure {format_interval(rep.predicted_rate_pressure)} ({rep.rate_source})")


def show(rec, sol):
    print(f"  h={rec.h:.4f}  err_u={rec.err_u:.3e}  err_p={rec.err_p:.3e}  picard={sol.iterations}")


table = run_convergence(ConvergenceConfig(r=r, k=k, levels=levels), on_level=show)
print("observed velocity orders", [round(float(x), 3) for x in table.rates_u])
print("observed pressure orders", [round(float(x), 3) for x in table.rates_p])
