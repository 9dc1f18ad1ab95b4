"""Short-dated CEV smile: expansion orders against the Bessel-density reference.

Run: python demos/cev_smile.py
"""
import math

from ivexpand import ExpansionContext, builtin_cev, iv_taylor_coeffs, reference_iv, sigma_bar_N

model = builtin_cev(sigma=1.0, beta=0.5)
T = 0.05
strikes = [-0.2, -0.1, 0.0, 0.1, 0.2]

print("Taylor coefficients of the second-order implied vol at expiry:")
for (q, m), v in iv_taylor_coeffs(ExpansionContext(model, 2)).rows():
    print(f"  d_T^{q} d_k^{m}: {v:+.6f}")

contexts = {N: ExpansionContext(model, N) for N in (0, 1, 2, 3)}
print(f"\nImplied vol at T={T}")
print(f"{'k':>6} {'reference':>10}" + "".join(f"  {'err N=' + str(N):>11}" for N in contexts))
for k in strikes:
    ref = reference_iv(model, T, k)
    errs = "".join(f"  {float(sigma_bar_N(ctx, T, k)) - ref:+11.2e}" for ctx in contexts.values())
    print(f"{k:6.2f} {ref:10.6f}{errs}")

# each order should shrink the error by roughly a factor sqrt(T) near the money
print(f"\nsqrt(T) = {math.sqrt(T):.3f}")
