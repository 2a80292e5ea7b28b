"""Energy decay of unforced backward-Euler steps and the discrete inf-sup constant."""

from biotfem.biot import energy_check, infsup_estimate
from biotfem.forms import ModelParams
from biotfem.mesh import unit_square_mesh

params = ModelParams(dt=1 / 64)
for method in ("taylor-hood", "brezzi-pitkaranta", "p1-p0"):
    rep = energy_check(unit_square_mesh(8), method, params, steps=100)
    print(f"{method:18s} X_100/X_0 = {rep.ratio:.3e}  max increase = {rep.max_increase:.1e}")

# inf-sup constant in the parameter-dependent norms, unit parameters
for N in (4, 8, 16):
    beta = infsup_estimate(unit_square_mesh(N), "taylor-hood", ModelParams())
    print(f"N={N:3d}  beta_h = {beta:.6f}")
