"""Particle cloud of the planar single-catalyst preset against the limit shape."""
import numpy as np

from cbrw import model_2d
from cbrw.front_geometry import front_shape
from cbrw.malthusian import malthusian_parameter
from cbrw.simulator import run_ensemble
from cbrw.verification import cloud_shape_check

m = model_2d()
nu = malthusian_parameter(m).nu
shape = front_shape(m.kernel, nu, n=360)
print(f"nu={nu:.6f}  front radius along an axis {np.linalg.norm(shape.z[0]):.4f}")
for t in (20.0, 40.0, 80.0):
    ens = run_ensemble(m, 500, t, checkpoints=[t / 2, t], master_seed=2, snapshot=True)
    rep = cloud_shape_check(ens, shape, 0.15 * nu, t)
    print(f"t={t:g}: fraction of particles beyond the front {rep.particle_fraction_in_O:.4f}, "
          f"runs reaching past the inner shape {rep.run_fraction_outside_Q:.4f} ({rep.n_runs} runs)")
