"""A sinusoidal orientation wave in the hydrodynamic model.

The density is carried at speed c1 along Omega. The orientation turns toward
regions of lower density, and the turning rate scales with c2. Here Omega
starts as a wave around e1 on a periodic line and we watch the density ripple
it creates.

Run:  python demos/02_orientation_wave.py
"""

import numpy as np

from flockhydro.coefficients import compute_coefficients
from flockhydro.gci_chi import compute_chi
from flockhydro.quadrature import ModelParams, SelfPropulsion, build_polar_grid
from flockhydro.soh import PeriodicMesh, SolverConfig, init_state, run

p = ModelParams(0.5, 2, SelfPropulsion(1.0, 1.0))
grid = build_polar_grid(p, 64, 64)
co = compute_coefficients(p, grid, compute_chi(p, grid))
print(f"c1 = {co.c1:.5f}, c2 = {co.c2:.5f}")

L = 4.0
k = 2 * np.pi / L
mesh = PeriodicMesh((400,), (L,))
state = init_state(mesh, lambda x: np.ones(x.shape[:-1]),
                   lambda x: np.stack([np.cos(0.6 * np.sin(k * x[..., 0])),
                                       np.sin(0.6 * np.sin(k * x[..., 0]))], axis=-1), co)

for s in run(state, SolverConfig(t_end=2.0, output_every=0.5)):
    angle = np.arctan2(s.omega[:, 1], s.omega[:, 0])
    print(f"t = {s.time:4.1f}  rho in [{s.rho.min():.4f}, {s.rho.max():.4f}]  "
          f"max |angle| {np.abs(angle).max():.4f}  mass {s.mass:.12f}  unit defect {s.unit_defect():.1e}")
