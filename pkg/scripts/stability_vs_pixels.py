"""Empirical trend of the stability constant as the pixel ansatz is refined.

Each finer search also starts from the coarser argmin mapped onto the finer
grid, so the reported constants can only decrease along the sweep.
"""
import numpy as np

from eitlab import build_disk_mesh, build_pixel_partition
from eitlab.analysis import SearchSpec, refine_triple, stability_constant
from eitlab.continuum import NtDModel, trig_basis

mesh = build_disk_mesh(1.0, 0.05, boundary_multiple=128)
basis = trig_basis(mesh, 32)
spec = SearchSpec(samples=64, budget=120, seed=0)
prev_part, prev = None, None
for grid in ((1, 1), (2, 2), (4, 4)):
    part = build_pixel_partition(mesh, grid, 0.2)
    init = []
    if prev is not None:
        init = [refine_triple(prev_part, part, np.r_[prev.tau1, prev.tau2, prev.kappa])]
    rep = stability_constant(NtDModel(mesh, part, basis), (0.5, 2.0), spec, initial=init)
    print(f"P={part.n_pixels:3d}  c_hat={rep.c_hat:.4e}  evaluations={len(rep.sup_f_values)}")
    prev_part, prev = part, rep
