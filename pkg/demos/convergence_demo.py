"""Manufactured-solution convergence for the three discretizations on small meshes.

Taylor-Hood errors fall like h^2 in every column except the p_p gradient norm
(h^1).  The stabilized pairs lose an order in the displacement.
"""

from biotfem.experiments import convergence_study
from biotfem.forms import ModelParams
from biotfem.report import convergence_markdown, to_markdown

params = ModelParams.from_lambda(10.0, 15.0, alpha=1.0, s0=1.0, kappa=1.0)

for method in ("taylor-hood", "brezzi-pitkaranta", "p1-p0"):
    rep = convergence_study(method, (4, 8, 16), params, log=print)
    header, rows = convergence_markdown(rep)
    print(to_markdown(header, rows, [f"### {method}"]))
