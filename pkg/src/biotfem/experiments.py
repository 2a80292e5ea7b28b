"""Drivers behind the command line: convergence tables, preconditioner sweeps,
energy and inf-sup diagnostics.  Everything returns plain rows; formatting
lives in :mod:`biotfem.report`.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .biot import (
    DEFAULT_BOUNDARY,
    BiotOperators,
    EigenNonConvergence,
    ErrorReport,
    assemble_operators,
    build_static_system,
    energy_check,
    get_discretization,
    infsup_estimate,
    manufactured_problem,
    run_manufactured,
)
from .forms import ModelParams
from .mesh import unit_square_mesh
from .solvers import (
    BlockPreconditioner,
    Jacobi,
    Scaled,
    check_nonsingular,
    cholesky_factorize,
    minres,
)


# ---------------------------------------------------------------------------
# convergence


def convergence_study(
    method: str,
    Ns: Sequence[int],
    params: ModelParams | None = None,
    final_time: float = 0.5,
    solver: str = "direct",
    rtol: float = 1e-10,
    boundary: Mapping = DEFAULT_BOUNDARY,
    log=None,
) -> ErrorReport:
    """Manufactured-solution errors at ``final_time`` for each mesh, ``dt = h^2``."""
    problem = dataclasses.replace(manufactured_problem(params), boundary=dict(boundary))
    report = ErrorReport()
    for N in Ns:
        res = run_manufactured(N, method, problem, final_time=final_time, solver=solver, rtol=rtol,
                               gamma2=params.gamma2 if params is not None else None)
        report.add(N, res.errors)
        if log:
            log(f"{method} N={N}: {res.steps} steps in {res.seconds:.1f}s")
    return report


# ---------------------------------------------------------------------------
# preconditioner robustness


@dataclass
class PrecondCell:
    method: str
    N: int
    mu: float
    lambda_ratio: float
    kappa: float
    iterations: list[int]
    converged: bool
    seconds: list[float]

    @property
    def max_iterations(self) -> int:
        return max(self.iterations)

    @property
    def mean_seconds(self) -> float:
        return float(np.mean(self.seconds))


class _UnitFactors:
    """Assembly and factorizations at mu = 1 for one (method, N).

    The displacement norm block scales like mu and the total-pressure block
    like 1/mu, so one factorization of each serves every mu.  Pore-pressure
    blocks depend on lambda and kappa and are cached per value pair.
    """

    def __init__(self, method: str, N: int, base: ModelParams, boundary: Mapping):
        self.disc = get_discretization(method)
        self.base = base.with_(mu=1.0)
        self.ops = assemble_operators(unit_square_mesh(N), self.disc, self.base, boundary)
        unit = build_static_system(self.ops)
        self.free = unit.free
        Au, At, _ = unit.norm_blocks()
        self.u_factor = cholesky_factorize(Au)
        self.At_unit = At
        self.t_factor = None if self.disc.default_inner[1] == "jacobi" else cholesky_factorize(At)
        self._pp: dict[tuple[float, float], object] = {}

    def cell_operators(self, params: ModelParams) -> BiotOperators:
        mu = params.mu
        S = None if self.ops.S is None else self.ops.S / mu
        return dataclasses.replace(self.ops, params=params, A=self.ops.A * mu, S=S)

    def preconditioner(self, params: ModelParams, ops: BiotOperators) -> BlockPreconditioner:
        mu = params.mu
        u = Scaled(self.u_factor, 1.0 / mu)
        if self.t_factor is None:
            t = Jacobi.from_matrix(self.At_unit / mu)
        else:
            t = Scaled(self.t_factor, mu)
        key = (params.storage, params.kappa_dt)
        if key not in self._pp:
            f = self.free[2]
            App = (params.storage * ops.Mp + params.kappa_dt * ops.K)[f][:, f]
            if params.storage == 0:
                check_nonsingular(App, "p_p")
            self._pp[key] = cholesky_factorize(App)
        sizes = [len(f) for f in self.free]
        return BlockPreconditioner([u, t, self._pp[key]], sizes, ["u", "p_t", "p_p"])


def random_rhs(seed: int, N: int, n: int, count: int) -> np.ndarray:
    """``count`` right-hand sides with entries uniform in [-1, 1]; same for every cell of one N."""
    rng = np.random.default_rng([seed, N])
    return rng.uniform(-1.0, 1.0, size=(count, n))


def precond_sweep(
    methods: Sequence[str],
    Ns: Sequence[int],
    mus: Sequence[float],
    ratios: Sequence[float],
    kappas: Sequence[float],
    base: ModelParams | None = None,
    boundary: Mapping = DEFAULT_BOUNDARY,
    rtol: float = 1e-6,
    maxit: int = 500,
    nrhs: int = 10,
    seed: int = 0,
    log=None,
) -> list[PrecondCell]:
    """MinRes iteration counts of the static system over a parameter grid.

    ``kappa`` stands for ``kappa * dt`` (``base.dt`` is normally 1).  Wall
    time is per solve, excluding factorization.
    """
    base = base or ModelParams()
    cells: list[PrecondCell] = []
    for method, N in itertools.product(methods, Ns):
        unit = _UnitFactors(method, N, base, boundary)
        rhs = None
        for mu, ratio, kappa in itertools.product(mus, ratios, kappas):
            params = ModelParams.from_lambda(mu, ratio * mu, alpha=base.alpha, s0=base.s0, kappa=kappa,
                                             gamma2=base.gamma2, dt=base.dt)
            ops = unit.cell_operators(params)
            A = build_static_system(ops).matrix()
            P = unit.preconditioner(params, ops)
            if rhs is None:
                rhs = random_rhs(seed, N, A.shape[0], nrhs)
            its, secs, ok = [], [], True
            for b in rhs:
                _, rep = minres(A, b, P, rtol=rtol, maxit=maxit)
                its.append(rep.iterations)
                secs.append(rep.seconds)
                ok &= rep.converged
            cell = PrecondCell(get_discretization(method).name, N, mu, ratio, kappa, its, ok, secs)
            cells.append(cell)
            if log:
                flag = "" if ok else " (not converged)"
                log(f"{cell.method} N={N} mu={mu:g} lambda/mu={ratio:g} kappa={kappa:g}: "
                    f"{cell.max_iterations} its{flag}")
    return cells


# ---------------------------------------------------------------------------
# inf-sup and energy


@dataclass
class InfsupCell:
    method: str
    N: int
    mu: float
    lambda_ratio: float
    kappa: float
    beta: float | None
    status: str = "ok"


def infsup_sweep(
    methods: Sequence[str],
    Ns: Sequence[int],
    mus: Sequence[float],
    ratios: Sequence[float],
    kappas: Sequence[float],
    base: ModelParams | None = None,
    boundary: Mapping = DEFAULT_BOUNDARY,
    method: str = "iterative",
) -> list[InfsupCell]:
    base = base or ModelParams()
    out = []
    for disc, N, mu, ratio, kappa in itertools.product(methods, Ns, mus, ratios, kappas):
        params = ModelParams.from_lambda(mu, ratio * mu, alpha=base.alpha, s0=base.s0, kappa=kappa,
                                         gamma2=base.gamma2, dt=base.dt)
        name = get_discretization(disc).name
        try:
            beta = infsup_estimate(unit_square_mesh(N), disc, params, boundary, method=method)
            out.append(InfsupCell(name, N, mu, ratio, kappa, beta))
        except EigenNonConvergence:
            out.append(InfsupCell(name, N, mu, ratio, kappa, None, "not converged"))
    return out


def energy_runs(methods: Sequence[str], N: int, params: ModelParams, steps: int, seed: int,
                boundary: Mapping = DEFAULT_BOUNDARY) -> dict:
    mesh = unit_square_mesh(N)
    return {get_discretization(m).name: energy_check(mesh, m, params, steps, seed, boundary) for m in methods}
