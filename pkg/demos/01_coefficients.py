"""How the transport coefficients depend on the noise.

For the self-propulsion potential V(r) = r^4/4 - r^2/2 the equilibrium puts
its mass near the sphere |v| = 1. Small noise pins the speed there, so c1
tends to 1. Large noise spreads the mass, and c1 drops. The second
coefficient c2 comes from the profile chi and is what bends the orientation
field.

Run:  python demos/01_coefficients.py
"""

from flockhydro.coefficients import c1_lambda_curve, compute_coefficients, laplace_limit_c1
from flockhydro.gci_chi import compute_chi
from flockhydro.quadrature import ModelParams, SelfPropulsion, build_polar_grid

N = 64  # grid points per direction

print(f"{'d':>2} {'sigma':>6} {'c1':>10} {'c2':>10}")
for d in (2, 3):
    for sigma in (0.1, 0.3, 1.0, 3.0):
        p = ModelParams(sigma, d, SelfPropulsion(1.0, 1.0))
        grid = build_polar_grid(p, N, N)
        co = compute_coefficients(p, grid, compute_chi(p, grid))
        print(f"{d:>2} {sigma:>6g} {co.c1:>10.6f} {co.c2:>10.6f}")

# Scaling the potential by lambda squeezes the speed onto |v| = 1 at fixed
# noise. The limit is a von Mises-Fisher average over directions only.
# At lambda = 1 c1 happens to sit close to the limit; the gap then opens
# and closes again like 1/lambda.
pot, sigma, d = SelfPropulsion(1.0, 1.0), 0.5, 2
limit = laplace_limit_c1(pot, sigma, d)
print(f"\nlambda -> infinity limit of c1 (d={d}, sigma={sigma}): {limit:.6f}")
for lam, c1 in c1_lambda_curve(pot, sigma, d, [1, 4, 16, 64, 256]):
    print(f"  lambda {lam:>5g}: c1 = {c1:.6f}  gap {abs(c1 - limit):.2e}")
