"""MinRes iteration counts with the block-diagonal preconditioner.

Over six orders of magnitude in mu, lambda/mu and kappa the counts stay
within a narrow band.
"""

from biotfem.experiments import precond_sweep

cells = precond_sweep(["taylor-hood"], [16], mus=(1.0, 1e6), ratios=(1.0, 1e6), kappas=(1.0, 1e-9), nrhs=3)
print(f"{'mu':>8} {'lam/mu':>8} {'kappa':>8} {'its':>5}")
for c in cells:
    print(f"{c.mu:8.0e} {c.lambda_ratio:8.0e} {c.kappa:8.0e} {c.max_iterations:5d}")
its = [c.max_iterations for c in cells]
print(f"spread max/min = {max(its) / min(its):.2f}")
