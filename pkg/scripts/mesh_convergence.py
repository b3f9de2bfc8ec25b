"""NtD diagonal error against 1/k for a homogeneous disk under mesh refinement."""
import numpy as np

from eitlab import Conductivity, build_disk_mesh, build_pixel_partition
from eitlab.continuum import NtDModel, trig_basis

modes = np.array([1, 1, 2, 2, 3, 3])
print(f"{'h_target':>8} {'h':>8} {'triangles':>9}  rel. error k=1,2,3")
rows = []
for h in (0.2, 0.1, 0.05, 0.025):
    m = build_disk_mesh(1.0, h)
    model = NtDModel(m, build_pixel_partition(m, (1, 1), 0.2), trig_basis(m, 6))
    d = np.diag(model.measurement(Conductivity.constant(1.0, 1)))
    err = np.abs(d * modes - 1)
    rows.append((m.h, err.max()))
    print(f"{h:8.3f} {m.h:8.4f} {m.n_triangles:9d}  " + " ".join(f"{e:.2e}" for e in err[::2]))
h, e = np.array(rows).T
print("log-log slope:", np.polyfit(np.log(h), np.log(e), 1)[0])
