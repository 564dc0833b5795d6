"""Command-line front end: ``edg <command> --config run.toml``.

Commands
--------
simulate      integrate and write the moments (and optionally states) CSV
gelation      integrate and fit the gelation time
converge      run several truncation sizes and compare moments
verify        integrate and check conservation and the applicable moment bounds
oracle-check  test the divergence-form identity on random inputs

Exit status is 0 when every check passes, 1 when a check fails and 2 on a
usage, configuration or runtime error.  Diagnostics go to stderr.

The config is a TOML document::

    N = 256
    tracked_moment_orders = [0, 1, 2]

    [kernel]
    family = "homogeneous_eta"   # product_power | sum_power | tabulated
    eta = 1.0
    C = 1.0

    [init]
    family = "monodisperse"

    [integrator]
    t_end = 1.0

    [outputs]
    moments_path = "moments.csv"

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import io
from .analysis import (
    conservation_report,
    convergence_study,
    divergence_oracle,
    estimate_gelation_time,
    jensen_lower_bound,
    verify_blowup_bound,
    verify_upper_bound,
)
from .integrator import IntegratorConfig, integrate
from .kernel import Kernel, KernelError, KernelSpec, classify_regime, gelation_lower_bound, make_kernel
from .state import InitSpec, StateError, make_state

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    pass


_KERNEL_KEYS = {"family", "C", "mu", "nu", "eta", "beta", "C1", "zero_receiver_row", "table_path"}
_FAMILY_KEYS = {
    "product_power": ("mu", "nu"),
    "homogeneous_eta": ("eta",),
    "sum_power": ("beta",),
    "tabulated": ("table_path",),
}
_INIT_KEYS = {"family", "amplitude", "s", "q", "values"}
_OUTPUT_KEYS = {"moments_path", "states_path", "report_path", "convergence_path", "bounds_path"}
_GELATION_KEYS = {"window", "method", "threshold_factor"}
_CONVERGE_KEYS = {"N_list"}
_VERIFY_KEYS = {"drift_tol", "lam", "slack", "t_max", "jensen_n", "jensen_beta"}
_TOP_KEYS = {"N", "tracked_moment_orders", "kernel", "init", "integrator", "outputs",
             "gelation", "converge", "verify"}


@dataclass
class SimulationConfig:
    kernel: KernelSpec
    init: InitSpec
    N: int
    integrator: IntegratorConfig
    tracked_moment_orders: tuple = (0.0, 1.0, 2.0)
    outputs: dict = field(default_factory=dict)
    gelation: dict = field(default_factory=dict)
    converge: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)


def _check_keys(section: str, table, allowed) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"{section} must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        prefix = f"{section}." if section else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    return table


def _number(key: str, value, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    return float(value)


def _resolve(base: Path, p) -> Path:
    if not isinstance(p, str):
        raise ConfigError(f"paths must be strings, got {p!r}")
    path = Path(p)
    return path if path.is_absolute() else base / path


def _kernel_spec(tbl: dict, base: Path) -> KernelSpec:
    _check_keys("kernel", tbl, _KERNEL_KEYS)
    if "family" not in tbl:
        raise ConfigError("missing required key kernel.family")
    fam = tbl["family"]
    if fam not in _FAMILY_KEYS:
        raise ConfigError(f"kernel.family must be one of {sorted(_FAMILY_KEYS)}, got {fam!r}")
    for key in _FAMILY_KEYS[fam]:
        if key not in tbl:
            raise ConfigError(f"missing required key kernel.{key} for family {fam}")
    kw = {}
    for key in ("C", "mu", "nu", "eta", "beta", "C1"):
        if key in tbl:
            kw[key] = _number(f"kernel.{key}", tbl[key])
    if "zero_receiver_row" in tbl:
        if not isinstance(tbl["zero_receiver_row"], bool):
            raise ConfigError("kernel.zero_receiver_row must be true or false")
        kw["zero_receiver_row"] = tbl["zero_receiver_row"]
    if fam == "tabulated":
        path = _resolve(base, tbl["table_path"])
        try:
            kw["table"] = io.read_matrix(path)
        except OSError as exc:
            raise ConfigError(f"kernel.table_path: cannot read {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"kernel.table_path: {exc}") from None
    return KernelSpec(fam, **kw)


def _init_spec(tbl: dict) -> InitSpec:
    _check_keys("init", tbl, _INIT_KEYS)
    kw = {}
    if "family" in tbl:
        kw["family"] = str(tbl["family"])
    if "amplitude" in tbl:
        kw["amplitude"] = _number("init.amplitude", tbl["amplitude"])
    if "s" in tbl:
        kw["s"] = _number("init.s", tbl["s"], integer=True)
    if "q" in tbl:
        kw["q"] = _number("init.q", tbl["q"])
    if "values" in tbl:
        if not isinstance(tbl["values"], list):
            raise ConfigError("init.values must be a list of numbers")
        kw["values"] = tuple(_number("init.values", v) for v in tbl["values"])
    return InitSpec(**kw)


def _integrator(tbl: dict) -> IntegratorConfig:
    types = {f.name: f.type for f in fields(IntegratorConfig)}
    _check_keys("integrator", tbl, types)
    kw = {}
    for key, value in tbl.items():
        if key in ("method", "rate_path"):
            if not isinstance(value, str):
                raise ConfigError(f"integrator.{key} must be a string")
            kw[key] = value
        elif key == "limex_order":
            kw[key] = _number(f"integrator.{key}", value, integer=True)
        elif key == "record_every" and value == 0:
            kw[key] = None  # record only the endpoints
        else:
            kw[key] = _number(f"integrator.{key}", value)
    try:
        return IntegratorConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"integrator: {exc}") from None


def parse_config(text: str, base_dir=".") -> SimulationConfig:
    """Parse a TOML config document into a :class:`SimulationConfig`.

    Raises
    ------
    ConfigError
        Syntax errors, missing required keys, type mismatches and unknown keys.
    """
    base = Path(base_dir)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    _check_keys("", doc, _TOP_KEYS)
    if "kernel" not in doc:
        raise ConfigError("missing required section [kernel]")
    if "N" not in doc:
        raise ConfigError("missing required key N")
    N = _number("N", doc["N"], integer=True)
    if N < 2:
        raise ConfigError("N must be at least 2")
    orders = doc.get("tracked_moment_orders", [0, 1, 2])
    if not isinstance(orders, list):
        raise ConfigError("tracked_moment_orders must be a list")
    orders = tuple(_number("tracked_moment_orders", p) for p in orders)
    if any(p < 0 for p in orders):
        raise ConfigError("tracked_moment_orders must be non-negative")
    outputs = {k: _resolve(base, v) for k, v in _check_keys("outputs", doc.get("outputs", {}), _OUTPUT_KEYS).items()}

    gel = dict(_check_keys("gelation", doc.get("gelation", {}), _GELATION_KEYS))
    if "window" in gel:
        w = gel["window"]
        if not isinstance(w, list) or len(w) != 2:
            raise ConfigError("gelation.window must be a two-element list")
        gel["window"] = (_number("gelation.window", w[0]), _number("gelation.window", w[1]))
    conv = dict(_check_keys("converge", doc.get("converge", {}), _CONVERGE_KEYS))
    if "N_list" in conv:
        if not isinstance(conv["N_list"], list):
            raise ConfigError("converge.N_list must be a list")
        conv["N_list"] = [_number("converge.N_list", n, integer=True) for n in conv["N_list"]]
    ver = dict(_check_keys("verify", doc.get("verify", {}), _VERIFY_KEYS))
    for key in ("drift_tol", "lam", "slack", "t_max", "jensen_beta"):
        if key in ver:
            ver[key] = _number(f"verify.{key}", ver[key])
    if "jensen_n" in ver:
        ver["jensen_n"] = _number("verify.jensen_n", ver["jensen_n"], integer=True)

    return SimulationConfig(
        kernel=_kernel_spec(doc["kernel"], base),
        init=_init_spec(doc.get("init", {})),
        N=N,
        integrator=_integrator(doc.get("integrator", {})),
        tracked_moment_orders=orders,
        outputs=outputs,
        gelation=gel,
        converge=conv,
        verify=ver,
    )


def load_config(path) -> SimulationConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def _symmetry_diagnostic(kernel: Kernel, N: int) -> Optional[str]:
    if kernel.symmetric:
        return None
    m = kernel.matrix(min(N, (kernel.table_size or N + 1) - 1))[1:, 1:]
    j, k = np.unravel_index(int(np.argmax(np.abs(m - m.T))), m.shape)
    return (f"kernel is not symmetric: K({j + 1},{k + 1}) = {m[j, k]!r} but K({k + 1},{j + 1}) = {m[k, j]!r}; "
            "the moment bounds assume K(j,k) = K(k,j) for j, k >= 1")


def _report_lines(pairs) -> str:
    return "".join(f"{k} = {io._fmt(v)}\n" for k, v in pairs)


def _write_report(cfg: SimulationConfig, text: str) -> None:
    path = cfg.outputs.get("report_path")
    if path is not None:
        io.write_text(path, text)
    sys.stdout.write(text)


def _simulate(cfg: SimulationConfig, kernel: Kernel):
    traj = integrate(make_state(cfg.init, cfg.N), kernel, cfg.integrator,
                     io.moment_columns(cfg.tracked_moment_orders))
    if "moments_path" in cfg.outputs:
        io.write_moments(traj, cfg.outputs["moments_path"], cfg.tracked_moment_orders)
    if "states_path" in cfg.outputs:
        io.write_states(traj, cfg.outputs["states_path"])
    return traj


def cmd_simulate(cfg: SimulationConfig, kernel: Kernel) -> int:
    traj = _simulate(cfg, kernel)
    d0, d1 = conservation_report(traj)
    _write_report(cfg, _report_lines([
        ("N", cfg.N),
        ("regime", classify_regime(kernel).regime),
        ("stop_reason", traj.stop_reason),
        ("t_final", float(traj.times[-1])),
        ("accepted_steps", traj.step_stats.accepted),
        ("rejected_steps", traj.step_stats.rejected),
        ("max_drift_M0", d0),
        ("max_drift_M1", d1),
    ]))
    return EXIT_OK


def cmd_gelation(cfg: SimulationConfig, kernel: Kernel) -> int:
    traj = _simulate(cfg, kernel)
    est = estimate_gelation_time(traj, kernel, cfg.gelation.get("window"),
                                 cfg.gelation.get("method", "inverse_m2_linear_fit"),
                                 cfg.gelation.get("threshold_factor", 10.0))
    pred = est.analytic_prediction
    _write_report(cfg, _report_lines([
        ("N", cfg.N),
        ("regime", classify_regime(kernel).regime),
        ("stop_reason", traj.stop_reason),
        ("method", est.method),
        ("t_gel", est.t_gel),
        ("gelling", est.gelling),
        ("slope", est.slope),
        ("intercept", est.intercept),
        ("fit_r2", est.fit_r2),
        ("window_lo", est.window[0]),
        ("window_hi", est.window[1]),
        ("n_samples", est.n_samples),
        ("analytic_prediction", "none" if pred is None else pred),
    ]))
    return EXIT_OK


def cmd_converge(cfg: SimulationConfig, kernel: Kernel) -> int:
    N_list = cfg.converge.get("N_list")
    if not N_list:
        raise ConfigError("converge requires converge.N_list")
    orders = io.moment_columns(cfg.tracked_moment_orders)
    rep = convergence_study(cfg.init, kernel, cfg.integrator, N_list, orders)
    header = ["N", "stop_reason"] + [f"sup_diff_{io.order_label(p)}" for p in orders]
    rows = [[n, rep.stop_reasons[n], *rep.sup_diffs[n]] for n in rep.N_values]
    text = io.csv_text(header, rows)
    if "convergence_path" in cfg.outputs:
        io.write_text(cfg.outputs["convergence_path"], text)
    _write_report(cfg, text)
    failed = [n for n, r in rep.stop_reasons.items() if r == "dt_underflow"]
    if failed:
        print(f"converge: runs with N = {failed} stopped on step-size underflow", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(cfg: SimulationConfig, kernel: Kernel) -> int:
    traj = _simulate(cfg, kernel)
    regime = classify_regime(kernel).regime
    ver = cfg.verify
    checks = []  # (name, passed, detail)
    drift_tol = ver.get("drift_tol", max(10.0 * cfg.integrator.rel_tol, 1e-12))
    d0, d1 = conservation_report(traj)
    checks.append(("conservation_M0", d0 <= drift_tol, d0))
    checks.append(("conservation_M1", d1 <= drift_tol, d1))
    checks.append(("positivity", all(bool(np.all(s.f >= 0)) for s in traj.states), 0.0))
    bounds = []
    if regime == "global_existence" and kernel.spec.family == "product_power" \
            and max(kernel.spec.mu, kernel.spec.nu) > 1:
        rep = verify_upper_bound(traj, kernel, ver.get("lam"))
        bounds.append(rep)
        checks.append(("upper_moment_bound", rep.all_satisfied, rep.worst_shortfall))
    if regime == "finite_gelation":
        alpha, c1 = gelation_lower_bound(kernel)
        rep = verify_blowup_bound(traj, alpha, c1, ver.get("slack", 0.02), ver.get("t_max"))
        bounds.append(rep)
        checks.append(("blowup_lower_bound", rep.all_satisfied, rep.worst_shortfall))
    n, beta = ver.get("jensen_n", 3), ver.get("jensen_beta", 3.0)
    jensen_ok = all(jensen_lower_bound(s, n, beta)[2] for s in traj.states if s.f[1:].any())
    checks.append(("jensen", jensen_ok, 0.0))

    if bounds and "bounds_path" in cfg.outputs:
        rows = []
        for rep in bounds:
            for i in range(rep.times.size):
                rows.append([rep.kind, rep.times[i], rep.simulated[i], rep.bound_value[i],
                             bool(rep.satisfied[i]), rep.margin[i]])
        io.write_text(cfg.outputs["bounds_path"],
                      io.csv_text(["kind", "t", "simulated", "bound", "satisfied", "margin"], rows))
    lines = [("N", cfg.N), ("regime", regime), ("stop_reason", traj.stop_reason)]
    for name, ok, detail in checks:
        lines.append((name, "pass" if ok else "FAIL"))
        if detail:
            lines.append((f"{name}_detail", float(detail)))
    _write_report(cfg, _report_lines(lines))
    failed = [name for name, ok, _ in checks if not ok]
    if failed:
        print(f"verify: failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_oracle(seed: int, cases: int) -> int:
    results = divergence_oracle(seed, cases)
    bad = [c for c in results if not c.passed]
    worst = max((c.rel_error for c in results), default=0.0)
    sys.stdout.write(f"cases = {cases}\nseed = {seed}\nfailed = {len(bad)}\nworst_rel_error = {worst!r}\n")
    for c in bad:
        print(f"oracle-check: case {c.index} ({c.family}, N={c.N}) lhs={c.lhs!r} rhs={c.rhs!r} "
              f"rel_error={c.rel_error!r}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "gelation": cmd_gelation,
    "converge": cmd_converge,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edg", description="Truncated exchange-driven growth solver.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config file")
    p = sub.add_parser("oracle-check")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    try:
        if args.command == "oracle-check":
            if args.cases < 1:
                raise ConfigError("--cases must be positive")
            return cmd_oracle(args.seed, args.cases)
        cfg = load_config(args.config)
        kernel = make_kernel(cfg.kernel)
        if args.command == "verify":
            diag = _symmetry_diagnostic(kernel, cfg.N)
            if diag:
                raise ConfigError(diag)
        return _COMMANDS[args.command](cfg, kernel)
    except (ConfigError, KernelError, StateError, ValueError, OSError) as exc:
        print(f"edg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
