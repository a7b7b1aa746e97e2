"""Command-line front end: reference tables, expansion reports, simulations.

Exit codes: 0 success, 2 configuration error, 3 numerical (ODE) error,
4 integrability or Monte Carlo domain error.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, replace

from valexp import expansion as _exp
from valexp import models as _models
from valexp import montecarlo as _mc
from valexp.models import BsModel, EaModel, KoModel, ModelSpec
from valexp.montecarlo import IntegrabilityError, SimConfig
from valexp.riccati import DEFAULT_N_STEPS, OdeBlowUpError
from valexp.utility import UtilitySpec, certainty_equivalent

__all__ = [
    "ConfigError",
    "RunConfig",
    "TableResult",
    "load_config",
    "render_config",
    "render_table",
    "render_csv",
    "cmd_table1",
    "cmd_table2",
    "cmd_table3",
    "cmd_expand",
    "cmd_simulate",
    "main",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INTEGRABILITY = 4

PAPER_SCALE = {"n_paths": 1_000_000, "dt": 0.001}

_MR_PARAMS = {"kappa": 0.0404, "theta": 0.117, "gamma": 0.04395, "T": 10.0}
_MR_LAM0 = (0.1, 0.5)
_MR_EPSILONS = (-0.01, -0.05, -0.10)
_SR_PARAMS = {"kappa": 5.0, "theta": 0.0169, "beta": -0.1, "gamma": 0.1744, "T": 10.0}
_SR_F0 = (0.01, 0.05)
_SR_EPSILONS = (0.10, 0.05, 0.01)

_STRATEGIES = ("base", "corrected", "zero", "custom-constant")

_MODEL_KEYS = {
    "bs": ("lam", "lam_prime", "T"),
    "ko": ("kappa", "theta", "gamma", "lambda0", "T"),
    "ea": ("kappa", "theta", "beta", "gamma", "F0", "T"),
}


class ConfigError(ValueError):
    """Invalid configuration file or command-line arguments."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run request shared by all subcommands."""

    variant: BsModel | KoModel | EaModel
    utility: UtilitySpec
    epsilons: tuple[float, ...]
    sim: SimConfig
    n_steps: int
    fmt: str = "table"
    out: str | None = None
    strategy: str = "base"
    strategy_value: float | None = None


@dataclass(frozen=True)
class TableResult:
    """Rendered-ready output: headers, cell rows, and footnote lines.

    Cells are floats (full precision in CSV, three decimals in tables),
    strings, ints, or None for empty.
    """

    headers: tuple[str, ...]
    rows: tuple[tuple, ...]
    notes: tuple[str, ...] = ()


def _default_config() -> RunConfig:
    return RunConfig(
        variant=KoModel(lam0=_MR_LAM0[0], **_MR_PARAMS),
        utility=UtilitySpec(p=-1.0),
        epsilons=_MR_EPSILONS,
        sim=SimConfig(),
        n_steps=DEFAULT_N_STEPS,
    )


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: not a number: {raw!r}") from exc


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: not an integer: {raw!r}") from exc


def _parse_eps_list(raw: str, where: str) -> tuple[float, ...]:
    parts = [s.strip() for s in raw.split(",") if s.strip()]
    if not parts:
        raise ConfigError(f"{where}: empty epsilon list")
    try:
        return tuple(float(s) for s in parts)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad epsilon list {raw!r}") from exc


def _build_variant(kind: str, params: dict[str, float]):
    try:
        if kind == "bs":
            return BsModel(lam=params["lam"], lam_prime=params["lam_prime"], T=params["T"])
        if kind == "ko":
            return KoModel(
                kappa=params["kappa"], theta=params["theta"], gamma=params["gamma"],
                lam0=params["lambda0"], T=params["T"],
            )
        return EaModel(
            kappa=params["kappa"], theta=params["theta"], beta=params["beta"],
            gamma=params["gamma"], F0=params["F0"], T=params["T"],
        )
    except KeyError as exc:
        raise ConfigError(f"[model] missing key {exc.args[0]!r} for variant {kind!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"[model] invalid parameters: {exc}") from exc


def load_config(path: str | None, allow_model: bool = True) -> RunConfig:
    """Parse an INI file into a RunConfig, rejecting unknown sections and keys."""
    cfg = _default_config()
    if path is None:
        return cfg

    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path!r}: {exc}") from exc

    allowed_sections = {"model", "utility", "sim", "ode", "output"}
    if not allow_model:
        allowed_sections.discard("model")
    for section in cp.sections():
        if section not in allowed_sections:
            raise ConfigError(f"unknown config section [{section}]")

    variant = cfg.variant
    epsilons = cfg.epsilons
    if cp.has_section("model"):
        sec = cp["model"]
        kind = sec.get("variant", "").strip()
        if kind not in _MODEL_KEYS:
            raise ConfigError(f"[model] variant must be one of {sorted(_MODEL_KEYS)}, got {kind!r}")
        allowed = set(_MODEL_KEYS[kind]) | {"variant", "epsilons"}
        unknown = set(sec.keys()) - allowed
        if unknown:
            raise ConfigError(f"[model] unknown keys for variant {kind!r}: {sorted(unknown)}")
        params = {k: _parse_float("model", k, sec[k]) for k in _MODEL_KEYS[kind] if k in sec}
        missing = set(_MODEL_KEYS[kind]) - set(params)
        if missing:
            raise ConfigError(f"[model] missing keys for variant {kind!r}: {sorted(missing)}")
        variant = _build_variant(kind, params)
        if "epsilons" in sec:
            epsilons = _parse_eps_list(sec["epsilons"], "[model] epsilons")

    utility = cfg.utility
    if cp.has_section("utility"):
        sec = cp["utility"]
        unknown = set(sec.keys()) - {"p"}
        if unknown:
            raise ConfigError(f"[utility] unknown keys: {sorted(unknown)}")
        if "p" in sec:
            try:
                utility = UtilitySpec(p=_parse_float("utility", "p", sec["p"]))
            except ValueError as exc:
                raise ConfigError(f"[utility] {exc}") from exc

    sim = cfg.sim
    strategy = cfg.strategy
    strategy_value = cfg.strategy_value
    if cp.has_section("sim"):
        sec = cp["sim"]
        allowed = {"n_paths", "dt", "seed", "strategy", "strategy_value"}
        unknown = set(sec.keys()) - allowed
        if unknown:
            raise ConfigError(f"[sim] unknown keys: {sorted(unknown)}")
        kwargs = {}
        if "n_paths" in sec:
            kwargs["n_paths"] = _parse_int("sim", "n_paths", sec["n_paths"])
        if "dt" in sec:
            kwargs["dt"] = _parse_float("sim", "dt", sec["dt"])
        if "seed" in sec:
            kwargs["seed"] = _parse_int("sim", "seed", sec["seed"])
        try:
            sim = replace(sim, **kwargs)
        except ValueError as exc:
            raise ConfigError(f"[sim] {exc}") from exc
        if "strategy" in sec:
            strategy = sec["strategy"].strip()
            if strategy not in _STRATEGIES:
                raise ConfigError(f"[sim] strategy must be one of {_STRATEGIES}")
        if "strategy_value" in sec:
            strategy_value = _parse_float("sim", "strategy_value", sec["strategy_value"])

    n_steps = cfg.n_steps
    if cp.has_section("ode"):
        sec = cp["ode"]
        unknown = set(sec.keys()) - {"n_steps"}
        if unknown:
            raise ConfigError(f"[ode] unknown keys: {sorted(unknown)}")
        if "n_steps" in sec:
            n_steps = _parse_int("ode", "n_steps", sec["n_steps"])
            if n_steps < 2:
                raise ConfigError("[ode] n_steps must be at least 2")

    fmt, out = cfg.fmt, cfg.out
    if cp.has_section("output"):
        sec = cp["output"]
        unknown = set(sec.keys()) - {"format", "path"}
        if unknown:
            raise ConfigError(f"[output] unknown keys: {sorted(unknown)}")
        if "format" in sec:
            fmt = sec["format"].strip()
            if fmt not in ("table", "csv"):
                raise ConfigError("[output] format must be 'table' or 'csv'")
        if "path" in sec:
            out = sec["path"].strip() or None

    return RunConfig(
        variant=variant, utility=utility, epsilons=epsilons, sim=sim,
        n_steps=n_steps, fmt=fmt, out=out, strategy=strategy, strategy_value=strategy_value,
    )


def render_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to INI text that parses back to an equal value."""
    variant = cfg.variant
    if isinstance(variant, BsModel):
        kind, fields = "bs", {"lam": variant.lam, "lam_prime": variant.lam_prime, "T": variant.T}
    elif isinstance(variant, KoModel):
        kind = "ko"
        fields = {
            "kappa": variant.kappa, "theta": variant.theta, "gamma": variant.gamma,
            "lambda0": variant.lam0, "T": variant.T,
        }
    else:
        kind = "ea"
        fields = {
            "kappa": variant.kappa, "theta": variant.theta, "beta": variant.beta,
            "gamma": variant.gamma, "F0": variant.F0, "T": variant.T,
        }
    lines = ["[model]", f"variant = {kind}"]
    lines += [f"{k} = {v!r}" for k, v in fields.items()]
    lines.append(f"epsilons = {', '.join(repr(e) for e in cfg.epsilons)}")
    lines += ["", "[utility]", f"p = {cfg.utility.p!r}"]
    lines += [
        "", "[sim]",
        f"n_paths = {cfg.sim.n_paths}",
        f"dt = {cfg.sim.dt!r}",
        f"seed = {cfg.sim.seed}",
        f"strategy = {cfg.strategy}",
    ]
    if cfg.strategy_value is not None:
        lines.append(f"strategy_value = {cfg.strategy_value!r}")
    lines += ["", "[ode]", f"n_steps = {cfg.n_steps}"]
    lines += ["", "[output]", f"format = {cfg.fmt}"]
    if cfg.out is not None:
        lines.append(f"path = {cfg.out}")
    return "\n".join(lines) + "\n"


def _cell_text(value, precise: bool) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    x = float(value)
    if precise:
        return repr(x)
    return f"{x:.3f}"


def render_table(result: TableResult) -> str:
    """Fixed-width table with three printed decimals."""
    grid = [list(result.headers)] + [
        [_cell_text(c, precise=False) for c in row] for row in result.rows
    ]
    widths = [max(len(r[j]) for r in grid) for j in range(len(result.headers))]
    lines = []
    for i, row in enumerate(grid):
        lines.append("  ".join(cell.rjust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(widths))))
    for note in result.notes:
        lines.append(note)
    return "\n".join(lines) + "\n"


def render_csv(result: TableResult) -> str:
    """Full-precision CSV (shortest round-trip float representation)."""
    lines = [",".join(result.headers)]
    for row in result.rows:
        lines.append(",".join(_cell_text(c, precise=True) for c in row))
    for note in result.notes:
        lines.append(f"# {note}")
    return "\n".join(lines) + "\n"


def _mr_model(cfg: RunConfig, lam0: float, eps: float) -> ModelSpec:
    variant = replace(cfg.variant, lam0=lam0) if isinstance(cfg.variant, KoModel) else KoModel(
        lam0=lam0, **_MR_PARAMS
    )
    return ModelSpec(variant=variant, utility=cfg.utility, epsilon=eps)


def cmd_table1(cfg: RunConfig) -> TableResult:
    """Deterministic expansion table for the mean-reverting model.

    Columns: certainty equivalents of the order-0/1/2 expansions and of the
    exactly computed perturbed value, per (epsilon, lam0).
    """
    rows = []
    for lam0 in _MR_LAM0:
        model = _mr_model(cfg, lam0, 0.0)
        report = _exp.build_report(model, cfg.epsilons, cfg.n_steps)
        for row in report.rows:
            exact_u = _models.ko_exact_value(model.variant, cfg.utility, row.eps, n_steps=cfg.n_steps)
            ce_exact = float(certainty_equivalent(exact_u, cfg.utility))
            rows.append(
                (row.eps, lam0, row.ce_order0, row.ce_order1, row.ce_order2, ce_exact)
            )
    return TableResult(
        headers=("eps", "lambda0", "ce_order0", "ce_order1", "ce_order2", "ce_exact"),
        rows=tuple(rows),
    )


def cmd_table2(cfg: RunConfig) -> TableResult:
    """Monte Carlo bounds for the mean-reverting model.

    Columns: base-strategy certainty equivalent in the perturbed market,
    primal (corrected-strategy) and dual bounds as 95 percent intervals, and
    the exact perturbed value.
    """
    rows = []
    for lam0 in _MR_LAM0:
        for eps in cfg.epsilons:
            model = _mr_model(cfg, lam0, eps)
            triple = _mc.estimate_bounds(model, eps, cfg.sim, n_steps=cfg.n_steps)
            exact_u = _models.ko_exact_value(model.variant, cfg.utility, eps, n_steps=cfg.n_steps)
            ce_exact = float(certainty_equivalent(exact_u, cfg.utility))
            rows.append(
                (
                    eps, lam0,
                    triple.base_ce.ci95_lo, triple.base_ce.ci95_hi,
                    triple.lower.ci95_lo, triple.lower.ci95_hi,
                    triple.upper.ci95_lo, triple.upper.ci95_hi,
                    ce_exact,
                )
            )
    return TableResult(
        headers=(
            "eps", "lambda0",
            "ce_base_lo", "ce_base_hi",
            "lb_lo", "lb_hi",
            "ub_lo", "ub_hi",
            "ce_exact",
        ),
        rows=tuple(rows),
        notes=(f"paths={cfg.sim.n_paths} dt={cfg.sim.dt!r} seed={cfg.sim.seed}",),
    )


def cmd_table3(cfg: RunConfig) -> TableResult:
    """Monte Carlo bounds for the square-root factor model.

    Rows with eps = 0 report the base certainty equivalent only; the bound
    columns are empty there.
    """
    utility = cfg.utility
    if isinstance(cfg.variant, EaModel):
        base_variant = cfg.variant
        f0_values: tuple[float, ...] = (cfg.variant.F0,)
        epsilons = cfg.epsilons
    else:
        base_variant = EaModel(F0=_SR_F0[0], **_SR_PARAMS)
        f0_values = _SR_F0
        epsilons = _SR_EPSILONS if cfg.epsilons == _MR_EPSILONS else cfg.epsilons

    rows = []
    for f0 in f0_values:
        variant = replace(base_variant, F0=f0)
        model = ModelSpec(variant=variant, utility=utility, epsilon=0.0)
        ce0 = _mc.estimate_ce(model, None, 0.0, cfg.sim, n_steps=cfg.n_steps)
        rows.append((0.0, f0, ce0.ci95_lo, ce0.ci95_hi, None, None, None, None))
        for eps in epsilons:
            model = ModelSpec(variant=variant, utility=utility, epsilon=eps)
            triple = _mc.estimate_bounds(model, eps, cfg.sim, n_steps=cfg.n_steps)
            rows.append(
                (
                    eps, f0,
                    triple.base_ce.ci95_lo, triple.base_ce.ci95_hi,
                    triple.lower.ci95_lo, triple.lower.ci95_hi,
                    triple.upper.ci95_lo, triple.upper.ci95_hi,
                )
            )
    return TableResult(
        headers=(
            "eps", "F0",
            "ce_base_lo", "ce_base_hi",
            "lb_lo", "lb_hi",
            "ub_lo", "ub_hi",
        ),
        rows=tuple(rows),
        notes=(f"paths={cfg.sim.n_paths} dt={cfg.sim.dt!r} seed={cfg.sim.seed}",),
    )


def cmd_expand(cfg: RunConfig, check_fd: bool = False) -> TableResult:
    """Expansion report for the configured model across its epsilon sweep."""
    model = ModelSpec(variant=cfg.variant, utility=cfg.utility, epsilon=cfg.epsilons[0])
    report = _exp.build_report(model, cfg.epsilons, cfg.n_steps, cfg.sim)
    notes = [
        f"p={cfg.utility.p!r} q={cfg.utility.q!r}",
        f"u0={report.u0!r} v0={report.v0!r}",
        f"delta0={report.delta0!r} delta00={report.delta00!r}"
        f" delta00_stderr={report.delta00_stderr!r}",
        f"delta_u1={report.delta_u1!r} delta_u2={report.delta_u2!r}",
    ]
    if check_fd:
        try:
            fd = _exp.finite_difference_check(model, n_steps=cfg.n_steps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for entry in fd.entries:
            notes.append(
                f"fd h={entry.h!r}: first_residual={entry.first_residual!r}"
                f" second_residual={entry.second_residual!r}"
            )
    rows = tuple(
        (
            row.eps,
            row.u_order1, row.u_order2,
            row.v_order1, row.v_order2,
            row.ce_order0, row.ce_order1, row.ce_order2,
        )
        for row in report.rows
    )
    return TableResult(
        headers=("eps", "u1", "u2", "v1", "v2", "ce0", "ce1", "ce2"),
        rows=rows,
        notes=tuple(notes),
    )


def cmd_simulate(cfg: RunConfig) -> TableResult:
    """Certainty equivalent of one strategy at the first configured epsilon."""
    eps = cfg.epsilons[0]
    model = ModelSpec(variant=cfg.variant, utility=cfg.utility, epsilon=eps)
    if cfg.strategy == "base":
        strategy = None
    elif cfg.strategy == "corrected":
        strategy, _ = _exp.corrected_controls(model, eps, cfg.n_steps, cfg.sim.f_min)
    elif cfg.strategy == "zero":
        strategy = _models.constant_strategy(0.0)
    else:
        if cfg.strategy_value is None:
            raise ConfigError("strategy 'custom-constant' requires strategy_value")
        strategy = _models.constant_strategy(cfg.strategy_value)

    sim_cfg = replace(cfg.sim, measure="P")
    stats = _mc.simulate(model, strategy=strategy, config=sim_cfg, n_steps=cfg.n_steps)
    est = _mc.ce_from_stats(stats, cfg.utility)
    row = (
        cfg.strategy, eps, cfg.sim.n_paths, cfg.sim.dt, cfg.sim.seed,
        est.mean, est.stderr, est.ci95_lo, est.ci95_hi, stats.clamp_count,
    )
    return TableResult(
        headers=(
            "strategy", "eps", "n_paths", "dt", "seed",
            "ce_mid", "ce_stderr", "ce_lo", "ce_hi", "clamps",
        ),
        rows=(row,),
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="valexp",
        description="Second-order value expansions with Monte Carlo bounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("table1", "deterministic expansion table (mean-reverting model)"),
        ("table2", "Monte Carlo bounds table (mean-reverting model)"),
        ("table3", "Monte Carlo bounds table (square-root model)"),
        ("expand", "expansion report for a configured model"),
        ("simulate", "certainty equivalent of one strategy"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None, help="INI configuration file")
        sp.add_argument("--paths", type=int, default=None, help="Monte Carlo path count")
        sp.add_argument("--dt", type=float, default=None, help="Monte Carlo time step")
        sp.add_argument("--seed", type=int, default=None, help="random seed")
        sp.add_argument("--eps", default=None, help="comma-separated epsilon list")
        sp.add_argument(
            "--paper-scale", action="store_true",
            help=f"use {PAPER_SCALE['n_paths']} paths at dt={PAPER_SCALE['dt']}",
        )
        sp.add_argument("--out", default=None, help="write full-precision CSV to this path")
        sp.add_argument("--format", choices=("table", "csv"), default=None, help="stdout format")
        if name == "expand":
            sp.add_argument(
                "--check-fd", action="store_true",
                help="add finite-difference residuals against the expansion",
            )
        if name == "simulate":
            sp.add_argument("--strategy", choices=_STRATEGIES, default=None)
            sp.add_argument("--strategy-value", type=float, default=None)
    return parser


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    sim = cfg.sim
    kwargs = {}
    if args.paper_scale:
        kwargs.update(PAPER_SCALE)
    if args.paths is not None:
        kwargs["n_paths"] = args.paths
    if args.dt is not None:
        kwargs["dt"] = args.dt
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if kwargs:
        try:
            sim = replace(sim, **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    epsilons = cfg.epsilons
    if args.eps is not None:
        epsilons = _parse_eps_list(args.eps, "--eps")
    fmt = args.format if args.format is not None else cfg.fmt
    out = args.out if args.out is not None else cfg.out
    strategy = cfg.strategy
    strategy_value = cfg.strategy_value
    if getattr(args, "strategy", None) is not None:
        strategy = args.strategy
    if getattr(args, "strategy_value", None) is not None:
        strategy_value = args.strategy_value
    return replace(
        cfg, sim=sim, epsilons=epsilons, fmt=fmt, out=out,
        strategy=strategy, strategy_value=strategy_value,
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, allow_model=args.command in ("expand", "simulate", "table3"))
        cfg = _apply_flags(cfg, args)
        if args.command == "table1":
            result = cmd_table1(cfg)
        elif args.command == "table2":
            result = cmd_table2(cfg)
        elif args.command == "table3":
            result = cmd_table3(cfg)
        elif args.command == "expand":
            result = cmd_expand(cfg, check_fd=args.check_fd)
        else:
            result = cmd_simulate(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OdeBlowUpError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IntegrabilityError as exc:
        print(f"integrability error: {exc}", file=sys.stderr)
        return EXIT_INTEGRABILITY

    if cfg.out is not None:
        with open(cfg.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_csv(result))
    if cfg.fmt == "csv":
        sys.stdout.write(render_csv(result))
    else:
        sys.stdout.write(render_table(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
