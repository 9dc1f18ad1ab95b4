"""Empirical convergence orders for Heston along parabolic rays.

Run: python demos/heston_orders.py
"""
from ivexpand import ConvergenceStudySpec, builtin_heston, run_convergence

model = builtin_heston(kappa=1.0, theta=0.04, delta=1.0, rho=-0.5)

print(f"{'N':>2} {'q':>2} {'m':>2} {'lambda':>6} {'slope':>7} {'predicted':>9} {'r2':>6}  status")
for N in (1, 2, 3):
    for q, m in ((0, 0), (0, 1)):
        for lam in (0.0, 1.0):
            report = run_convergence(ConvergenceStudySpec(model, N=N, q=q, m=m, lam=lam))
            print(f"{N:2d} {q:2d} {m:2d} {lam:6.1f} {report.slope:7.3f} {report.predicted:9.2f} "
                  f"{report.r2:6.3f}  {report.status}")

spec = ConvergenceStudySpec(model, N=2, lam=1.0)
report = run_convergence(spec)
print("\nPer-level errors for N=2, lambda=1:")
for tau, err, signed in zip(report.taus, report.errors, report.signed):
    print(f"  tau={tau:.6f}  |error|={err:.3e}  sign={'+' if signed > 0 else '-'}")
