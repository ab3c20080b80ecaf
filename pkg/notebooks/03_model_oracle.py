"""
A concrete fast/slow model against Monte Carlo
==============================================

Group parameters of the reference model come from Poisson solves on the
fast factor's invariant density.  The second-order price is then set
against a seeded Monte Carlo estimate at a few time scales.
"""

import numpy as np

from msvol import asymptotics as asy
from msvol import model_oracle as mo

model = mo.REFERENCE_MODEL
mg = mo.group_params_from_model(model)
print("sigma_bar =", mg.first_order.sigma_bar, " sigma* =", mg.phi.sigma_star)
print("fields above half of sigma*:", asy.check_regime(mg.phi, warn=False))

# the fast factor relaxes to N(m, nu^2)
mom = mo.mc_moments(model.with_scales(0.001, 0.0), 0.05, pairs=20_000, seed=1)
print(f"y mean {mom['y_mean']:.4f}, y var {mom['y_var']:.4f} (nu^2 = {model.nu ** 2})")

# error of the approximation shrinks with eps; a small budget shows the trend
tau, spot, strike = 0.5, 100.0, 100.0
print("\n  eps     mc price        approx     |error|")
for eps in (0.32, 0.16, 0.08):
    m = model.with_scales(eps, eps)
    mc = mo.mc_price(m, tau, spot, strike, "bump", pairs=100_000, seed=2,
                     control_variate=True)
    approx = mo.approximation_price(m, tau, spot, strike, "bump")
    print(f"{eps:5.2f}  {mc.price:.5f}+-{mc.stderr:.0e}  {approx:.5f}  {abs(mc.price - approx):.2e}")

# the full experiment is `msvol verify`; errors versus eps give the slope
eps = np.array(mo.DEFAULT_EPS_LADDER)
print("\nslope of a pure eps^1.5 error:", mo._log_slope(eps, eps**1.5, 1e-3 * eps**1.5)[0])
