"""Growth rate, front speed and extinction probability of the two 1-d presets.

Prints the Malthusian parameter by three routes (linear systems, exact
hitting laws, Monte Carlo), the front speed nu / r, the extinction
probability from the offspring law and from simulation.
"""
import math

from cbrw import model_a, model_b
from cbrw.front_geometry import solve_r_on_ray
from cbrw.malthusian import HittingLawTransforms, MonteCarloTransforms, malthusian_parameter
from cbrw.phi_solver import phi_limit
from cbrw.simulator import extinction_probe

for name, m in (("model_a", model_a()), ("model_b", model_b())):
    nu = malthusian_parameter(m).nu
    nu_law = malthusian_parameter(m, HittingLawTransforms(m)).nu
    nu_mc = malthusian_parameter(m, MonteCarloTransforms(m, n=200_000, horizon=300.0), tol=1e-8).nu
    r = solve_r_on_ray(m.kernel, nu, [1.0])[0]
    probe = extinction_probe(m, 5000, 500, master_seed=1)
    print(f"{name}: nu={nu:.8f} (law {nu_law:.8f}, mc {nu_mc:.5f})  r={r:.6f}  speed={nu / r:.6f}")
    print(f"  extinction: phi(inf)={phi_limit(m)[0]:.4f}  simulated={probe.fraction:.4f} "
          f"[{probe.ci[0]:.4f}, {probe.ci[1]:.4f}]")
print("closed forms: nu_A =", math.sqrt(2) - 1, " nu_B =", math.sqrt(1.36) - 1)
