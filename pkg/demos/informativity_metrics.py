"""Informativity metrics of a regressor matrix.

Compares a generic Gaussian design with a constant regressor, whose outlier
ratio is known in closed form (r / N).

Run: python3 demos/informativity_metrics.py
"""

import numpy as np

from lsmid import Dataset, compute_metrics, genericity_index, xi_single_mode_curve

rng = np.random.default_rng(0)
X = rng.standard_normal((2, 12))
print(f"genericity index of a Gaussian 2 x 12 design: {genericity_index(X)}")
X_dup = np.repeat(X[:, :3], 4, axis=1)
print(f"same design with columns repeated 4 times  : {genericity_index(X_dup)}")

curve = xi_single_mode_curve(X)
print("\nr   lower   exact   upper")
for r in range(6):
    print(f"{r}  {curve.lower[r]:.4f}  {curve.exact[r]:.4f}  {curve.upper[r]:.4f}")

N = 9
const = Dataset(np.ones((1, N)), rng.standard_normal(N))
rep = compute_metrics(const, 1)
print(f"\nconstant regressor, N={N}: xi_r = {np.round(rep.xi_upper, 4).tolist()}")
print(f"largest r with xi_r < 1/2: {rep.r_star_lower}")

y = X.T @ rng.standard_normal(2)
rep2 = compute_metrics(Dataset(X, y), 2, xi_samples=50, restarts=5)
print(f"\ntwo-mode report: nu = {rep2.nu_n}, D_hat = {rep2.D_hat:.4f}, "
      f"D upper estimate = {rep2.D_upper_estimate:.4f}, r* certified lower = {rep2.r_star_lower}")
