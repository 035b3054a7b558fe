"""Command-line drivers: simulate, compare-energy, convergence, verify.

Scenarios come from a flat ``key = value`` file (``#`` starts a comment)
merged with command-line flags; flags win.  Exit codes: 0 success, 1
numerical failure (or a failed verification), 2 configuration error.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
import time
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

from geomint import systems
from geomint.control import OcpError, OcpProblem, RegularityError, compose_generating, iterate_steps, solve_ocp
from geomint.integrator import IntegratorConfig, IntegratorError, run
from geomint.mechanics import (
    CompatibilityError,
    CotangentState,
    MassMatrixError,
    constraint_p,
    hamiltonian,
    legendre_inv,
    multiplier_force,
)
from geomint.oracle import ShootingError, _rk4_path, composition_check, rk4_integrate
from geomint.solvers import NewtonError, symplectic_defect

log = logging.getLogger("geomint")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2

NUMERICAL_ERRORS = (
    IntegratorError, ShootingError, OcpError, RegularityError, NewtonError,
    CompatibilityError, MassMatrixError, np.linalg.LinAlgError, FloatingPointError,
)

DEFAULT_STATES = {
    "nonholonomic-particle": ((1.0, 1.0, 0.0), (1.0, 0.0, 1.0)),
    "free-particle": ((0.0,), (1.0,)),
    "oscillator": ((1.0,), (0.0,)),
    "bead": ((0.5, 0.0), (1.25, 0.5)),
}

DEFAULT_OCP = {
    "lqr": ((1.0,), (0.0,), 1.0),
    "pendulum-control": ((1.0,), (0.0,), 1.0),
}


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    system: str = "nonholonomic-particle"
    integrator: str = "alpha-scheme"
    alpha: float = 0.5
    h: float = 0.01
    steps: int = 1000
    q0: Optional[tuple] = None
    p0: Optional[tuple] = None
    qF: Optional[tuple] = None
    T: Optional[float] = None
    N: int = 4
    levels: int = 4
    newton_tol: float = 1e-12
    tol: Optional[float] = None
    matching_tol: float = 1e-8
    out: Optional[str] = None


_VECTOR_KEYS = {"q0", "p0", "qF"}
_KEYS = {f.name: f for f in fields(ScenarioConfig)}


def _coerce(key: str, raw: str):
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    text = raw.strip()
    try:
        if key in _VECTOR_KEYS:
            return tuple(float(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
        kind = _KEYS[key].type
        if "int" in str(kind):
            return int(text)
        if "float" in str(kind):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return values


def build_config(args: argparse.Namespace) -> ScenarioConfig:
    values = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for key in ("system", "alpha", "h", "steps", "out", "tol", "integrator", "T", "N", "levels"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    cfg = replace(ScenarioConfig(), **values)
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    if cfg.system not in systems.CATALOG:
        raise ConfigError(f"unknown system {cfg.system!r}; choose from {', '.join(systems.CATALOG)}")
    if cfg.integrator not in ("alpha-scheme", "rk4"):
        raise ConfigError(f"unknown integrator {cfg.integrator!r}")
    if not cfg.h > 0:
        raise ConfigError("h must be positive")
    if cfg.steps < 1 or cfg.N < 1 or cfg.levels < 2:
        raise ConfigError("steps and N must be >= 1, levels >= 2")
    if not 0.0 <= cfg.alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    if cfg.T is not None and not cfg.T > 0:
        raise ConfigError("T must be positive")


def _mechanical(cfg: ScenarioConfig):
    if cfg.system not in systems.MECHANICAL:
        raise ConfigError(f"{cfg.system!r} is an optimal-control system; this command needs a mechanical one")
    sys_ = systems.MECHANICAL[cfg.system]()
    q0, p0 = DEFAULT_STATES[cfg.system]
    q0 = cfg.q0 if cfg.q0 is not None else q0
    p0 = cfg.p0 if cfg.p0 is not None else p0
    if len(q0) != sys_.n or len(p0) != sys_.n:
        raise ConfigError(f"{cfg.system} needs q0 and p0 of length {sys_.n}")
    return sys_, CotangentState(q0, p0)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(str(v) if isinstance(v, (int, np.integer)) else _fmt(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def _print_summary(items: dict, out=None) -> None:
    out = out or sys.stdout
    for key, val in items.items():
        if isinstance(val, float):
            val = repr(val)
        print(f"{key}: {val}", file=out)


def drift_slope(t, err) -> float:
    """Least-squares slope of ``err`` against ``t``."""
    return float(np.polyfit(np.asarray(t, dtype=float), np.asarray(err, dtype=float), 1)[0])


def _simulate_rows(sys_, cfg: ScenarioConfig, s0: CotangentState):
    """Return (times, qs, ps, energies, residuals, multipliers, iterations)."""
    if cfg.integrator == "alpha-scheme":
        icfg = IntegratorConfig(alpha=cfg.alpha, h=cfg.h, newton_tol=cfg.newton_tol)
        tr = run(sys_, icfg, s0, cfg.steps)
        return tr.times, tr.qs, tr.ps, tr.energies, tr.constraint_residuals, tr.multipliers, tr.newton_iters
    states = rk4_integrate(sys_, s0, cfg.h, cfg.steps)
    qs = np.array([s.q for s in states])
    ps = np.array([s.p for s in states])
    energies = np.array([hamiltonian(sys_, s) for s in states])
    res = np.array([constraint_p(sys_, s) for s in states]).reshape(len(states), sys_.m)
    lam = np.array(
        [multiplier_force(sys_, legendre_inv(sys_, s), check_feasible=False).lam for s in states]
    ).reshape(len(states), sys_.m)
    return cfg.h * np.arange(len(states)), qs, ps, energies, res, lam, np.zeros(len(states), dtype=int)


def cmd_simulate(cfg: ScenarioConfig) -> int:
    sys_, s0 = _mechanical(cfg)
    t0 = time.perf_counter()
    times, qs, ps, energies, res, lam, iters = _simulate_rows(sys_, cfg, s0)
    n, m = sys_.n, sys_.m
    header = (
        ["step", "t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["energy"]
        + [f"constraint_residual{a + 1}" for a in range(m)] + [f"lambda{a + 1}" for a in range(m)] + ["newton_iters"]
    )
    rows = [
        [k, times[k], *qs[k], *ps[k], energies[k], *res[k], *lam[k], int(iters[k])] for k in range(len(times))
    ]
    if cfg.out:
        _write_csv(cfg.out, header, rows)
    err = energies - energies[0]
    _print_summary({
        "command": f"simulate system={cfg.system} integrator={cfg.integrator} alpha={cfg.alpha} h={cfg.h} steps={cfg.steps}",
        "wall_time": time.perf_counter() - t0,
        "max_energy_drift": float(np.max(np.abs(err))),
        "drift_slope": drift_slope(times, err),
        "max_constraint_residual": float(np.max(np.abs(res))) if m else 0.0,
        "newton_iters_max": int(np.max(iters)),
        "newton_iters_mean": float(np.mean(iters[1:])) if len(iters) > 1 else 0.0,
        "exit_status": EXIT_OK,
    })
    return EXIT_OK


def cmd_compare_energy(cfg: ScenarioConfig) -> int:
    sys_, s0 = _mechanical(cfg)
    t0 = time.perf_counter()
    steps = int(round(cfg.T / cfg.h)) if cfg.T is not None else cfg.steps
    icfg = IntegratorConfig(alpha=cfg.alpha, h=cfg.h, newton_tol=cfg.newton_tol)
    tr = run(sys_, icfg, s0, steps)
    rk = rk4_integrate(sys_, s0, cfg.h, steps)
    E0 = hamiltonian(sys_, s0)
    err_alpha = tr.energies - E0
    err_rk4 = np.array([hamiltonian(sys_, s) for s in rk]) - E0
    if cfg.out:
        _write_csv(cfg.out, ["t", "energy_err_alpha", "energy_err_rk4"], zip(tr.times, err_alpha, err_rk4))
    slope_a = drift_slope(tr.times, err_alpha)
    slope_r = drift_slope(tr.times, err_rk4)
    _print_summary({
        "command": f"compare-energy system={cfg.system} alpha={cfg.alpha} h={cfg.h} steps={steps}",
        "wall_time": time.perf_counter() - t0,
        "max_energy_drift_alpha": float(np.max(np.abs(err_alpha))),
        "max_energy_drift_rk4": float(np.max(np.abs(err_rk4))),
        "drift_slope_alpha": slope_a,
        "drift_slope_rk4": slope_r,
        "oscillation_amplitude_alpha": 0.5 * float(np.ptp(err_alpha)),
        "max_constraint_residual": float(np.max(np.abs(tr.constraint_residuals))) if sys_.m else 0.0,
        "newton_iters_max": int(np.max(tr.newton_iters)),
        "exit_status": EXIT_OK,
    })
    return EXIT_OK


def observed_orders(errors: Sequence[float]) -> list:
    e = np.asarray(errors, dtype=float)
    return list(np.log2(e[:-1] / e[1:]))


def mechanical_convergence(sys_, s0: CotangentState, alpha: float, h0: float, levels: int, T: float = 1.0):
    """Final-position errors at ``h0 / 2^j`` against a reference run at ``h0 / 64``."""

    def final(h):
        return run(sys_, IntegratorConfig(alpha=alpha, h=h), s0, int(round(T / h))).qs[-1]

    ref = final(h0 / 64.0)
    hs = [h0 / 2 ** j for j in range(levels)]
    return hs, [float(np.linalg.norm(final(h) - ref)) for h in hs]


def lqr_closed_form(t, T: float = 1.0):
    """Optimal state of ``q' = u``, cost ``(q^2 + u^2)/2``, ``q(0) = 1``, ``q(T) = 0``."""
    return np.sinh(T - np.asarray(t)) / np.sinh(T)


def lqr_convergence(T: float = 1.0, Ns: Sequence[int] = (10, 20, 40)):
    cs = systems.lqr()
    hs, errs = [], []
    for N in Ns:
        sol = solve_ocp(OcpProblem(cs, np.array([1.0]), np.array([0.0]), T, N))
        t = np.linspace(0.0, T, N + 1)
        hs.append(T / N)
        errs.append(float(np.max(np.abs(sol.qs[:, 0] - lqr_closed_form(t, T)))))
    return hs, errs


def cmd_convergence(cfg: ScenarioConfig) -> int:
    t0 = time.perf_counter()
    if cfg.system == "lqr":
        T = cfg.T or 1.0
        hs, errs = lqr_convergence(T, [int(round(T / cfg.h)) * 2 ** j for j in range(cfg.levels)])
        label = f"convergence system=lqr h={cfg.h} levels={cfg.levels}"
    elif cfg.system in systems.MECHANICAL:
        sys_, s0 = _mechanical(cfg)
        hs, errs = mechanical_convergence(sys_, s0, cfg.alpha, cfg.h, cfg.levels, cfg.T or 1.0)
        label = f"convergence system={cfg.system} alpha={cfg.alpha} h={cfg.h} levels={cfg.levels}"
    else:
        raise ConfigError(f"convergence is not defined for {cfg.system!r}")
    orders = [float("nan")] + observed_orders(errs)
    print(f"{'level':>5} {'h':>12} {'error':>12} {'order':>8}")
    for j, (h, e, o) in enumerate(zip(hs, errs, orders)):
        print(f"{j:>5d} {h:>12.6g} {e:>12.4e} {o:>8.3f}")
    if cfg.out:
        _write_csv(cfg.out, ["level", "h", "error", "order"], [[j, h, e, o] for j, (h, e, o) in enumerate(zip(hs, errs, orders))])
    _print_summary({"command": label, "wall_time": time.perf_counter() - t0,
                    "min_observed_order": float(np.min(orders[1:])), "exit_status": EXIT_OK})
    return EXIT_OK


def _verify_mechanical(cfg: ScenarioConfig) -> tuple[dict, bool]:
    sys_, s0 = _mechanical(cfg)
    tol = 1e-5 if cfg.tol is None else cfg.tol
    h = cfg.h
    v0 = legendre_inv(sys_, s0).v
    q2 = _rk4_path(sys_, s0.q, v0, 2.0 * h, 256)[-1, : sys_.n]
    res = composition_check(sys_, s0.q, q2, h)
    ok = res.additivity_defect <= tol and res.matching_defect <= cfg.matching_tol
    return {"additivity_defect": res.additivity_defect, "matching_defect": res.matching_defect,
            "additivity_tol": tol, "matching_tol": cfg.matching_tol}, ok


def _verify_control(cfg: ScenarioConfig) -> tuple[dict, bool]:
    cs = systems.CONTROL[cfg.system]()
    tol = 1e-10 if cfg.tol is None else cfg.tol
    q0 = np.array(cfg.q0 if cfg.q0 is not None else DEFAULT_OCP[cfg.system][0])
    p0 = np.array(cfg.p0 if cfg.p0 is not None else (0.3,))
    h, N = cfg.h, cfg.N
    qs, ps, _ = iterate_steps(cs, h, N, q0, p0)
    comp = compose_generating(cs, h, N, q0, ps[-1])
    defect = max(float(np.max(np.abs(comp.qs - qs[1:]))), float(np.max(np.abs(comp.ps - ps[:-1]))))
    sdef = symplectic_defect(
        lambda x: np.concatenate([a[-1] for a in iterate_steps(cs, h, N, x[: cs.n], x[cs.n:])[:2]]),
        np.concatenate([q0, p0]),
    )
    return {"composition_defect": defect, "symplectic_defect": sdef, "composition_tol": tol}, defect <= tol and sdef <= 1e-6


def cmd_verify(cfg: ScenarioConfig) -> int:
    t0 = time.perf_counter()
    if cfg.system in systems.MECHANICAL:
        report, ok = _verify_mechanical(cfg)
    else:
        report, ok = _verify_control(cfg)
    status = EXIT_OK if ok else EXIT_NUMERICAL
    _print_summary({"command": f"verify system={cfg.system} h={cfg.h}", "wall_time": time.perf_counter() - t0,
                    **report, "passed": ok, "exit_status": status})
    return status


COMMANDS = {
    "simulate": cmd_simulate,
    "compare-energy": cmd_compare_energy,
    "convergence": cmd_convergence,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geomint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value scenario file")
        p.add_argument("--system", help=f"one of: {', '.join(systems.CATALOG)}")
        p.add_argument("--integrator", choices=("alpha-scheme", "rk4"))
        p.add_argument("--alpha", type=float)
        p.add_argument("--h", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--T", type=float)
        p.add_argument("--N", type=int)
        p.add_argument("--levels", type=int)
        p.add_argument("--out")
        p.add_argument("--tol", type=float)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
