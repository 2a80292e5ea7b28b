"""Command line entry point: ``biotfem {converge,precond,energy,infsup}``.

Settings come from built-in defaults, then an optional flat TOML file
(``--config``), then command-line flags; later sources win.  Results go to
``<out>/<subcommand>.csv`` and ``<out>/<subcommand>.md``.

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import experiments, report
from .biot import PORE_LOAD_SIGN, EigenNonConvergence, SolverFailure, get_discretization
from .forms import ModelParams
from .mesh import parse_sides
from .solvers import NotPositiveDefiniteError, SingularBlockError

COMMANDS = ("converge", "precond", "energy", "infsup")

# desk-scale mesh limits; larger meshes need --allow-large
MAX_N = {"converge": 64, "precond": 64, "energy": 64, "infsup": 16}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    method: list[str] = field(default_factory=lambda: ["taylor-hood"])
    N: list[int] = field(default_factory=list)
    mu: list[float] = field(default_factory=list)
    lambda_ratio: list[float] = field(default_factory=list)
    kappa: list[float] = field(default_factory=list)
    alpha: float = 1.0
    s0: float = 1.0
    gamma2: float = 1.0
    stab_rhs: float = 1.0  # weight of the grad-grad consistency load (0 drops it)
    dt: float | None = None  # None: h^2 for transient runs, 1 for static sweeps
    final_time: float = 0.5
    steps: int = 100
    rtol: float | None = None
    maxit: int = 500
    nrhs: int = 10
    seed: int = 0
    solver: str = "direct"
    dirichlet_u: str = "left|right"
    dirichlet_p: str = "all"
    out: Path = Path("results")
    allow_large: bool = False

    def boundary(self) -> dict:
        return {"dirichlet_u": self.dirichlet_u, "dirichlet_p": self.dirichlet_p}

    def base_params(self, dt: float = 1.0) -> ModelParams:
        mu, ratio, kappa = self.mu[0], self.lambda_ratio[0], self.kappa[0]
        return ModelParams.from_lambda(mu, ratio * mu, alpha=self.alpha, s0=self.s0, kappa=kappa,
                                       gamma2=self.gamma2, dt=dt, stab_rhs=self.stab_rhs)


DEFAULTS = {
    # the manufactured problem: mu = 10, lambda = 15
    "converge": dict(N=[8, 16, 32], mu=[10.0], lambda_ratio=[1.5], kappa=[1.0], rtol=1e-10),
    "precond": dict(N=[16, 32, 64], mu=[1.0, 1e3, 1e6], lambda_ratio=[1.0, 1e3, 1e6],
                    kappa=[1.0, 1e-3, 1e-6, 1e-9], rtol=1e-6),
    "energy": dict(N=[8], mu=[1.0], lambda_ratio=[1.0], kappa=[1.0]),
    "infsup": dict(N=[4, 8, 16], mu=[1.0], lambda_ratio=[1.0], kappa=[1.0]),
}

_LISTS = {"method": str, "N": int, "mu": float, "lambda_ratio": float, "kappa": float}


def _as_list(key: str, value):
    conv = _LISTS[key]
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    elif not isinstance(value, (list, tuple)):
        value = [value]
    try:
        out = [conv(v.strip()) if isinstance(v, str) else conv(v) for v in value]
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None
    if key == "N" and any(isinstance(v, float) and not float(v).is_integer() for v in value):
        raise ConfigError("N must be integers")
    return out


def load_config_file(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat key = value pairs; found tables {nested}")
    return {k.replace("-", "_"): v for k, v in data.items()}


def build_config(command: str, file_values: dict, flag_values: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)} - {"command"}
    merged = dict(DEFAULTS[command])
    for source in (file_values, flag_values):
        unknown = set(source) - known
        if unknown:
            raise ConfigError(f"unknown setting(s): {', '.join(sorted(unknown))}")
        merged.update({k: v for k, v in source.items() if v is not None})
    for k in _LISTS:
        if k in merged:
            merged[k] = _as_list(k, merged[k])
    if "out" in merged:
        merged["out"] = Path(merged["out"])
    try:
        cfg = ExperimentConfig(command=command, **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    for name in ("method", "N", "mu", "lambda_ratio", "kappa"):
        if not getattr(cfg, name):
            raise ConfigError(f"{name} must not be empty")
    try:
        cfg.method = [get_discretization(m).name for m in cfg.method]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    positive = {"mu": cfg.mu, "lambda_ratio": cfg.lambda_ratio, "kappa": cfg.kappa, "N": cfg.N,
                "gamma2": [cfg.gamma2], "final_time": [cfg.final_time], "maxit": [cfg.maxit],
                "nrhs": [cfg.nrhs], "alpha": [cfg.alpha]}
    if cfg.dt is not None:
        positive["dt"] = [cfg.dt]
    if cfg.rtol is not None:
        positive["rtol"] = [cfg.rtol]
    for name, vals in positive.items():
        # lambda_ratio may be inf (incompressible solid)
        bad = [v for v in vals if not (v > 0) or (math.isinf(v) and name != "lambda_ratio")]
        if bad:
            raise ConfigError(f"{name} must be positive and finite, got {bad}")
    if not math.isfinite(cfg.stab_rhs):
        raise ConfigError("stab_rhs must be finite")
    if cfg.s0 < 0 or not math.isfinite(cfg.s0):
        raise ConfigError("s0 must be >= 0")
    if cfg.steps < 0:
        raise ConfigError("steps must be >= 0")
    for name in ("dirichlet_u", "dirichlet_p"):
        try:
            parse_sides(getattr(cfg, name))
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    if cfg.solver not in ("direct", "minres"):
        raise ConfigError("solver must be 'direct' or 'minres'")
    limit = MAX_N[cfg.command]
    if not cfg.allow_large and max(cfg.N) > limit:
        raise ConfigError(f"N > {limit} for '{cfg.command}' needs --allow-large")


# ---------------------------------------------------------------------------
# subcommands


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def cmd_converge(cfg: ExperimentConfig) -> int:
    params = cfg.base_params()
    written = []
    for method in cfg.method:
        rep = experiments.convergence_study(method, sorted(cfg.N), params, cfg.final_time, cfg.solver,
                                            cfg.rtol, cfg.boundary(), log=_log)
        header, rows = report.convergence_rows(rep)
        md_header, md_rows = report.convergence_markdown(rep)
        stem = "converge" if len(cfg.method) == 1 else f"converge_{method}"
        pre = [
            f"# Convergence: {get_discretization(method).label}",
            "",
            f"mu={params.mu:g}, lambda={params.lam:g}, alpha={params.alpha:g}, s0={params.s0:g}, "
            f"kappa={params.kappa:g}, gamma2={params.gamma2:g}, stab_rhs={params.stab_rhs:g}; "
            f"dt = h^2, errors at t = {cfg.final_time:g}; pore load {PORE_LOAD_SIGN}; step solver: {cfg.solver}.",
        ]
        written += write(cfg, stem, header, rows, md_header, md_rows, pre)
        print(report.to_markdown(md_header, md_rows))
    return 0


def cmd_precond(cfg: ExperimentConfig) -> int:
    base = cfg.base_params(cfg.dt or 1.0)
    cells = experiments.precond_sweep(cfg.method, cfg.N, cfg.mu, cfg.lambda_ratio, cfg.kappa, base,
                                      cfg.boundary(), cfg.rtol, cfg.maxit, cfg.nrhs, cfg.seed, log=_log)
    header = ["method", "N", "mu", "lambda_ratio", "kappa", "iterations", "iterations_min", "converged", "seed"]
    rows = [[c.method, str(c.N), f"{c.mu:g}", f"{c.lambda_ratio:g}", f"{c.kappa:g}", str(c.max_iterations),
             str(min(c.iterations)), "yes" if c.converged else "MAXIT", str(cfg.seed)] for c in cells]
    summary = []
    for m in cfg.method:
        its = [c.max_iterations for c in cells if c.method == m]
        summary.append(f"- {m}: iterations {min(its)}..{max(its)}, max/min = {max(its) / min(its):.2f}")
    pre = [
        "# Preconditioned MinRes on the static system",
        "",
        f"rtol = {cfg.rtol:g} (preconditioned residual norm), {cfg.nrhs} random right-hand sides, uniform in "
        f"[-1, 1], seed {cfg.seed}; iterations are the maximum over the right-hand sides. "
        f"Exact block solves (Cholesky; Jacobi on the Taylor-Hood total-pressure block). "
        f"kappa is kappa*dt with dt = {base.dt:g}, alpha = {base.alpha:g}, s0 = {base.s0:g}.",
        "Wall times (mean per solve, factorization excluded) are in precond_times.csv.",
        "",
        *summary,
    ]
    write(cfg, "precond", header, rows, preamble=pre)
    times = [[c.method, str(c.N), f"{c.mu:g}", f"{c.lambda_ratio:g}", f"{c.kappa:g}", f"{c.mean_seconds:.6f}"]
             for c in cells]
    (cfg.out / "precond_times.csv").write_bytes(
        report.to_csv(["method", "N", "mu", "lambda_ratio", "kappa", "mean_seconds"], times).encode())
    print("\n".join(summary))
    return 0 if all(c.converged for c in cells) else 1


def cmd_energy(cfg: ExperimentConfig) -> int:
    N = cfg.N[0]
    params = cfg.base_params(cfg.dt or 1.0 / N**2)
    runs = experiments.energy_runs(cfg.method, N, params, cfg.steps, cfg.seed, cfg.boundary())
    rows = [[m, str(i), f"{e:.17e}"] for m, r in runs.items() for i, e in enumerate(r.energies)]
    pre = [f"# Discrete energy, {cfg.steps} unforced steps, N={N}, dt={params.dt:g}", ""]
    for m, r in runs.items():
        verdict = "PASS" if r.passed else "FAIL"
        pre.append(f"- {m}: max increase {r.max_increase:.3e} (<= 1e-12: {verdict}), X_last/X_0 = {r.ratio:.12f}")
    write(cfg, "energy", ["method", "step", "energy"], rows, preamble=pre)
    print("\n".join(pre[2:]))
    return 0


def cmd_infsup(cfg: ExperimentConfig) -> int:
    base = cfg.base_params(cfg.dt or 1.0)
    cells = experiments.infsup_sweep(cfg.method, cfg.N, cfg.mu, cfg.lambda_ratio, cfg.kappa, base,
                                     cfg.boundary())
    header = ["method", "N", "mu", "lambda_ratio", "kappa", "beta", "status"]
    rows = [[c.method, str(c.N), f"{c.mu:g}", f"{c.lambda_ratio:g}", f"{c.kappa:g}",
             "" if c.beta is None else f"{c.beta:.10f}", c.status] for c in cells]
    summary = []
    for m in cfg.method:
        b = [c.beta for c in cells if c.method == m and c.beta is not None]
        if b:
            summary.append(f"- {m}: beta_h in [{min(b):.6f}, {max(b):.6f}], max/min = {max(b) / min(b):.4f}")
    pre = ["# Discrete inf-sup constants in the parameter-dependent norms", "", *summary]
    write(cfg, "infsup", header, rows, preamble=pre)
    print("\n".join(summary))
    return 0


def write(cfg, stem, header, rows, md_header=None, md_rows=None, preamble=()):
    paths = report.write_pair(cfg.out, stem, header, rows, md_header, md_rows, preamble)
    _log(f"wrote {paths[0]} and {paths[1]}")
    return list(paths)


HANDLERS = {"converge": cmd_converge, "precond": cmd_precond, "energy": cmd_energy, "infsup": cmd_infsup}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biotfem", description="Three-field Biot finite element experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat TOML file of settings")
        p.add_argument("--method", help="taylor-hood, brezzi-pitkaranta, p1-p0 (comma list)")
        p.add_argument("--N", dest="N", help="mesh sizes, comma list")
        p.add_argument("--mu", help="shear modulus values, comma list")
        p.add_argument("--lambda-ratio", dest="lambda_ratio", help="lambda/mu values, comma list")
        p.add_argument("--kappa", help="conductivity values, comma list")
        p.add_argument("--alpha", type=float)
        p.add_argument("--s0", type=float)
        p.add_argument("--gamma2", type=float)
        p.add_argument("--stab-rhs", dest="stab_rhs", type=float,
                       help="weight of the gradient-penalty consistency load (1 as derived, 0 omits it)")
        p.add_argument("--dt", type=float)
        p.add_argument("--final-time", dest="final_time", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--rtol", type=float)
        p.add_argument("--maxit", type=int)
        p.add_argument("--nrhs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--solver", choices=("direct", "minres"))
        p.add_argument("--dirichlet-u", dest="dirichlet_u")
        p.add_argument("--dirichlet-p", dest="dirichlet_p")
        p.add_argument("--out", type=Path)
        p.add_argument("--allow-large", dest="allow_large", action="store_true", default=None)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config") and v is not None}
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = build_config(args.command, file_values, flags)
        return HANDLERS[args.command](cfg)
    except (ConfigError, SingularBlockError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # invalid parameter combinations surface from ModelParams or tagging
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, EigenNonConvergence, NotPositiveDefiniteError, FloatingPointError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
