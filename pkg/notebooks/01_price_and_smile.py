"""
Price corrections and the implied-volatility smile
==================================================

Term-by-term prices for one option and the smile produced by a set of
group parameters.  Run with ``python notebooks/01_price_and_smile.py``.
"""

import numpy as np

from msvol import asymptotics as asy
from msvol import blackscholes as bs

phi = asy.PUBLISHED_2010

# each correction is already multiplied by its power of eps and delta
terms = asy.price_terms(0.5, 100.0, 95.0, 0.02, phi, "call")
for name, value in terms.items():
    print(f"{name:>6s} {value: .6f}")

# the two agree up to terms beyond second order
iv = float(asy.iv_terms(0.5, bs.forward_log_moneyness(0.5, 100.0, 95.0, 0.02), phi)["total"])
print("iv of total price:", bs.implied_vol(terms["total"], 0.5, 100.0, 95.0, 0.02))
print("expanded iv:      ", iv)

# smile at three maturities on the same log-moneyness grid
d = np.linspace(-0.2, 0.2, 9)
print("\n    d " + "".join(f"  tau={t:<5}" for t in (0.25, 0.5, 2.0)))
rows = np.column_stack([asy.iv_terms(t, d, phi)["total"] for t in (0.25, 0.5, 2.0)])
for dj, row in zip(d, rows):
    print(f"{dj: .2f} " + "".join(f"  {v:.5f}  " for v in row))

# the same surface through its ten regression coefficients
theta = asy.theta_from_phi(phi)
print("\nmax gap via coefficients:",
      np.max(np.abs(asy.surface_eval(0.5, d, theta) - asy.iv_terms(0.5, d, phi)["total"])))
