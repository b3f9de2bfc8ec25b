"""Energy ratio E_D1/E_D2 of the optimal currents as the regularization shrinks."""
import numpy as np

from eitlab import Conductivity, build_disk_mesh, build_pixel_partition
from eitlab.analysis import growth_factors, localized_potential
from eitlab.continuum import NtDModel, trig_basis

mesh = build_disk_mesh(1.0, 0.05, boundary_multiple=128)
part = build_pixel_partition(mesh, (4, 4), 0.2)
sigma = Conductivity.constant(1.0, part.n_pixels)
deltas = [10.0 ** -k for k in range(2, 9)]
for n in (16, 32, 64):
    model = NtDModel(mesh, part, trig_basis(mesh, n))
    res = localized_potential(model, sigma, part.triangles_of(12), part.triangles_of(5), deltas)
    print(f"n={n:3d}")
    for r in res:
        print(f"  delta={r.delta:.0e}  E1={r.energy_d1:.3e}  E2={r.energy_d2:.3e}  "
              f"E1/(E2+delta)={r.ratio:.3e}  E1/E2={r.energy_ratio:.3e}")
    print("  growth per decade:", np.round(growth_factors(res), 2).tolist())
