"""Benchmark command line: validate / converge / distance / sv / plotdata.

Experiments are described by a flat ``key = value`` config file (``#`` starts
a comment) and emit CSV.  All floating-point values are written with repr(),
i.e. the shortest digit string that round-trips to the same double, and output
files are written to a temporary sibling and renamed into place, so a crashed
run never leaves a half-written CSV behind.  Runs with the same config and
seed produce byte-identical output (set ``timing = off`` to zero the wall
clock columns, which are the only nondeterministic ones).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from dataclasses import dataclass

from .cev_schemes import AlfNonconvergenceError
from .harness import (
    COUPLINGS,
    distance_profile,
    fit_order,
    strong_error_profile,
    sv_profile,
)
from .model import (
    ASSET_SCHEMES,
    VARIANCE_SCHEMES,
    CevParams,
    GridSpec,
    SchemeConfig,
    SchemeId,
    ValidityReport,
    validate,
)
from .asset_schemes import SvParams

CONVERGE_HEADER = "scheme,dt,error,ci_low,ci_high,seconds_per_path"
ORDER_HEADER = "scheme,n_points,slope,intercept"
DISTANCE_HEADER = "scheme_a,scheme_b,dt,distance,ci_low,ci_high"
SV_HEADER = "rho,asset_scheme,var_scheme,dt,error,ci_low,ci_high,seconds_per_path"
PLOTDATA_HEADER = "scheme,log2_dt,log2_error,log2_ci_low,log2_ci_high"


class ConfigError(ValueError):
    """A config file could not be parsed or fails validation."""


class CliError(RuntimeError):
    """A run was refused or an input file is unusable."""


_VARIANCE_NAMES = ", ".join(sorted(s.value for s in VARIANCE_SCHEMES))
_ASSET_NAMES = ", ".join(sorted(s.value for s in ASSET_SCHEMES))


def parse_config_text(text: str) -> dict[str, tuple[str, int]]:
    """Raw key -> (value, line number) map of a flat config file."""
    entries: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"line {lineno}: expected 'key = value', got {raw.strip()!r}"
            )
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if not key:
            raise ConfigError(f"line {lineno}: missing key before '='")
        if key in entries:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} "
                f"(first set on line {entries[key][1]})"
            )
        entries[key] = (value.strip(), lineno)
    return entries


_KNOWN_KEYS = {
    "k1", "k2", "k3", "q", "x0", "t",
    "theta", "big_theta", "newton_tol", "newton_max_iter",
    "schemes", "ref_scheme", "levels", "ref_level", "dts",
    "m", "l", "seed", "timing", "workers", "coupling",
    "mu", "s0", "p", "rho", "asset_schemes",
}


@dataclass
class ExperimentConfig:
    """Typed view of one config file; command-specific keys may be None."""

    params: CevParams
    scheme_config: SchemeConfig
    schemes: list[SchemeId]
    levels: list[int] | None
    ref_level: int | None
    ref_scheme: SchemeId | None
    dts: list[float] | None
    m_batches: int
    l_paths: int
    seed: int
    timing: bool
    workers: int
    coupling: str
    mu: float | None
    s0: float | None
    p: float
    rhos: list[float] | None
    asset_schemes: list[SchemeId] | None


class _Entries:
    """Typed accessors over the raw entry map, with line-numbered errors."""

    _REQUIRED = object()

    def __init__(self, entries: dict[str, tuple[str, int]]):
        self.entries = entries

    def _raw(self, key: str, default):
        if key not in self.entries:
            if default is self._REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            return None, default
        value, lineno = self.entries[key]
        return lineno, value

    def _scalar(self, key: str, default, convert, kind: str):
        lineno, value = self._raw(key, default)
        if lineno is None:
            return value
        try:
            return convert(value)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: key {key!r} needs {kind}, got {value!r}"
            ) from None

    def get_float(self, key: str, default=_REQUIRED) -> float:
        return self._scalar(key, default, float, "a real number")

    def get_int(self, key: str, default=_REQUIRED) -> int:
        return self._scalar(key, default, int, "an integer")

    def get_bool(self, key: str, default=_REQUIRED) -> bool:
        def convert(value: str) -> bool:
            lowered = value.lower()
            if lowered in ("on", "true", "yes", "1"):
                return True
            if lowered in ("off", "false", "no", "0"):
                return False
            raise ValueError(value)

        return self._scalar(key, default, convert, "on or off")

    def get_choice(self, key: str, choices, default=_REQUIRED) -> str:
        def convert(value: str) -> str:
            lowered = value.lower()
            if lowered not in choices:
                raise ValueError(value)
            return lowered

        return self._scalar(
            key, default, convert, "one of " + ", ".join(choices)
        )

    def get_float_list(self, key: str, default=_REQUIRED) -> list[float]:
        lineno, value = self._raw(key, default)
        if lineno is None:
            return value
        out = []
        for item in filter(None, (part.strip() for part in value.split(","))):
            try:
                out.append(float(item))
            except ValueError:
                raise ConfigError(
                    f"line {lineno}: key {key!r} needs comma-separated reals, "
                    f"got {item!r}"
                ) from None
        return out

    def get_int_list(self, key: str, default=_REQUIRED) -> list[int]:
        lineno, value = self._raw(key, default)
        if lineno is None:
            return value
        out = []
        for item in filter(None, (part.strip() for part in value.split(","))):
            try:
                out.append(int(item))
            except ValueError:
                raise ConfigError(
                    f"line {lineno}: key {key!r} needs comma-separated "
                    f"integers, got {item!r}"
                ) from None
        return out

    def get_scheme_list(self, key: str, universe, universe_names: str,
                        default=_REQUIRED) -> list[SchemeId]:
        lineno, value = self._raw(key, default)
        if lineno is None:
            return value
        out = []
        for item in filter(None, (part.strip() for part in value.split(","))):
            try:
                scheme = SchemeId(item.upper())
            except ValueError:
                scheme = None
            if scheme is None or scheme not in universe:
                raise ConfigError(
                    f"line {lineno}: key {key!r}: unknown scheme {item!r} "
                    f"(choose from {universe_names})"
                )
            out.append(scheme)
        return out

    def get_scheme(self, key: str, universe, universe_names: str,
                   default=_REQUIRED) -> SchemeId | None:
        schemes = self.get_scheme_list(key, universe, universe_names, default)
        if schemes is default or schemes is None:
            return None
        if isinstance(schemes, SchemeId):
            return schemes
        if len(schemes) != 1:
            raise ConfigError(f"key {key!r} needs exactly one scheme")
        return schemes[0]


def load_config(path: str) -> ExperimentConfig:
    """Parse and type-check a config file; raises ConfigError with diagnostics."""
    try:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from None
    entries = parse_config_text(text)
    for key, (_, lineno) in entries.items():
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    ent = _Entries(entries)

    try:
        params = CevParams(
            k1=ent.get_float("k1"),
            k2=ent.get_float("k2"),
            k3=ent.get_float("k3"),
            q=ent.get_float("q"),
            x0=ent.get_float("x0"),
            T=ent.get_float("t"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid model parameters: {exc}") from None
    try:
        scheme_config = SchemeConfig(
            theta=ent.get_float("theta", 1.0),
            big_theta=ent.get_float("big_theta", 0.5),
            newton_tol=ent.get_float("newton_tol", 1e-12),
            newton_max_iter=ent.get_int("newton_max_iter", 100),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid scheme configuration: {exc}") from None

    levels = ent.get_int_list("levels", None)
    ref_level = ent.get_int("ref_level", None)
    m_batches = ent.get_int("m", 100)
    l_paths = ent.get_int("l", 100)
    if m_batches < 2 or l_paths < 1:
        raise ConfigError(
            f"need m >= 2 and l >= 1, got m={m_batches}, l={l_paths}"
        )
    rho_list = ent.get_float_list("rho", None)
    for rho in rho_list or ():
        if not -1.0 <= rho <= 1.0:
            raise ConfigError(f"key 'rho': correlations must lie in [-1, 1], got {rho}")

    return ExperimentConfig(
        params=params,
        scheme_config=scheme_config,
        schemes=ent.get_scheme_list("schemes", VARIANCE_SCHEMES, _VARIANCE_NAMES),
        levels=levels,
        ref_level=ref_level,
        ref_scheme=ent.get_scheme("ref_scheme", VARIANCE_SCHEMES,
                                  _VARIANCE_NAMES, None),
        dts=ent.get_float_list("dts", None),
        m_batches=m_batches,
        l_paths=l_paths,
        seed=ent.get_int("seed", 0),
        timing=ent.get_bool("timing", True),
        workers=ent.get_int("workers", 1),
        coupling=ent.get_choice("coupling", COUPLINGS, "subsample"),
        mu=ent.get_float("mu", None),
        s0=ent.get_float("s0", None),
        p=ent.get_float("p", 0.5),
        rhos=rho_list,
        asset_schemes=ent.get_scheme_list("asset_schemes", ASSET_SCHEMES,
                                          _ASSET_NAMES, None),
    )


def _require(cfg_value, key: str, command: str):
    if cfg_value is None:
        raise ConfigError(f"key {key!r} is required for the {command} command")
    return cfg_value


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_atomic(path: str, lines: list[str]) -> None:
    """Write lines to ``path`` via a temporary file and an atomic rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".cevsim-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write("\n".join(lines) + "\n")
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def _scheme_config_for(cfg: ExperimentConfig, scheme: SchemeId) -> SchemeConfig:
    base = cfg.scheme_config
    return SchemeConfig(
        scheme=scheme,
        theta=base.theta,
        big_theta=base.big_theta,
        newton_tol=base.newton_tol,
        newton_max_iter=base.newton_max_iter,
    )


def _level_grid(level: int, horizon: float) -> GridSpec:
    try:
        return GridSpec.from_level(level, horizon)
    except ValueError as exc:
        raise ConfigError(f"key 'levels': {exc}") from None


def _check_ref_level(levels: list[int], ref_level: int) -> None:
    bad = [level for level in levels if level >= ref_level]
    if bad:
        raise ConfigError(
            f"'ref_level' ({ref_level}) must be strictly greater than every "
            f"coarse level; offending levels: {bad}"
        )


def _grids(cfg: ExperimentConfig, command: str) -> list[GridSpec]:
    """Step grids named by the config: dyadic levels and/or explicit dts."""
    grids: list[GridSpec] = []
    horizon = cfg.params.T
    for level in cfg.levels or ():
        grids.append(_level_grid(level, horizon))
    for dt in cfg.dts or ():
        if not dt > 0.0:
            raise ConfigError(f"key 'dts': step sizes must be positive, got {dt}")
        n_steps = max(1, round(horizon / dt))
        grids.append(GridSpec.from_steps(n_steps, horizon))
    if not grids:
        raise ConfigError(
            f"the {command} command needs 'levels' or 'dts' in the config"
        )
    return grids


def _refuse_invalid(cfg: ExperimentConfig, schemes, grids) -> None:
    """Reject the run if any requested (scheme, dt) pair fails validation."""
    failures = []
    for scheme in schemes:
        config = _scheme_config_for(cfg, scheme)
        for grid in grids:
            report = validate(cfg.params, config, grid)
            if not report.overall:
                failed = [
                    name
                    for name in ValidityReport.CONDITION_NAMES
                    if not getattr(report, name)
                ]
                failures.append(
                    f"{scheme.value} at dt={_fmt(grid.dt)} fails: "
                    + ", ".join(failed)
                )
    if failures:
        raise CliError(
            "refusing to run with invalid scheme/step combinations:\n  "
            + "\n  ".join(failures)
        )


def run_validate(args) -> int:
    """Print the per-(scheme, dt) condition table; exit 0 iff all pass."""
    cfg = load_config(args.config)
    grids = _grids(cfg, "validate")
    names = ValidityReport.CONDITION_NAMES
    widths = [max(len(n), 4) for n in names]
    header = (
        f"{'scheme':<8} {'dt':>22} "
        + " ".join(f"{n:>{w}}" for n, w in zip(names, widths))
        + f" {'overall':>8}"
    )
    print(header)
    print("-" * len(header))
    all_ok = True
    for scheme in cfg.schemes:
        config = _scheme_config_for(cfg, scheme)
        for grid in grids:
            report = validate(cfg.params, config, grid)
            all_ok = all_ok and report.overall
            cells = " ".join(
                f"{'pass' if getattr(report, n) else 'FAIL':>{w}}"
                for n, w in zip(names, widths)
            )
            verdict = "valid" if report.overall else "INVALID"
            print(f"{scheme.value:<8} {_fmt(grid.dt):>22} {cells} {verdict:>8}")
    return 0 if all_ok else 1


def run_converge(args) -> int:
    """Strong-error table vs a fine reference, plus a companion order fit CSV."""
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    levels = _require(cfg.levels, "levels", "converge")
    ref_level = _require(cfg.ref_level, "ref_level", "converge")
    _check_ref_level(levels, ref_level)
    grids = [_level_grid(level, cfg.params.T) for level in levels]
    ref_grid = _level_grid(ref_level, cfg.params.T)
    _refuse_invalid(cfg, cfg.schemes, grids)
    # The reference run is a simulation too; its grid must pass for whichever
    # scheme anchors it (the coefficient condition can tighten as dt shrinks).
    if cfg.ref_scheme is not None:
        _refuse_invalid(cfg, [cfg.ref_scheme], [ref_grid])
    else:
        _refuse_invalid(cfg, cfg.schemes, [ref_grid])

    profile = {}
    if cfg.schemes:
        profile = strong_error_profile(
            cfg.schemes, cfg.params, cfg.scheme_config, levels, ref_level,
            cfg.m_batches, cfg.l_paths, cfg.seed,
            ref_scheme=cfg.ref_scheme, timing=cfg.timing, workers=cfg.workers,
            coupling=cfg.coupling,
        )

    lines = [CONVERGE_HEADER]
    for scheme in cfg.schemes:
        for level in levels:
            est = profile[(scheme, level)]
            lines.append(
                f"{scheme.value},{_fmt(est.dt)},{_fmt(est.error)},"
                f"{_fmt(est.ci_low)},{_fmt(est.ci_high)},"
                f"{_fmt(est.seconds_per_path)}"
            )
    _write_atomic(args.out, lines)

    order_lines = [ORDER_HEADER]
    for scheme in cfg.schemes:
        points = [
            (profile[(scheme, level)].dt, profile[(scheme, level)].error)
            for level in levels
        ]
        fits = []
        smallest = sorted(points)[:3]
        if len(points) > 3:
            fits.append((3, fit_order(smallest)))
        if len(points) >= 2:
            fits.append((len(points), fit_order(points)))
        for n_points, fit in fits:
            order_lines.append(
                f"{scheme.value},{n_points},{_fmt(fit.slope)},{_fmt(fit.intercept)}"
            )
    _write_atomic(_order_path(args.out), order_lines)
    return 0


def _order_path(out_path: str) -> str:
    stem, ext = os.path.splitext(out_path)
    return f"{stem}.order{ext or '.csv'}"


def run_distance(args) -> int:
    """Pairwise distance table: first-listed scheme vs each of the others."""
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    dts = _require(cfg.dts, "dts", "distance")
    step_counts = [max(1, round(cfg.params.T / dt)) for dt in dts]
    grids = [GridSpec.from_steps(n, cfg.params.T) for n in step_counts]
    _refuse_invalid(cfg, cfg.schemes, grids)

    lines = [DISTANCE_HEADER]
    if len(cfg.schemes) >= 2:
        base = cfg.schemes[0]
        for grid in grids:
            profile = distance_profile(
                cfg.schemes, cfg.params, cfg.scheme_config, grid.n_steps,
                cfg.m_batches, cfg.l_paths, cfg.seed, workers=cfg.workers,
            )
            for other in cfg.schemes[1:]:
                est = profile[(base, other)]
                lines.append(
                    f"{base.value},{other.value},{_fmt(est.dt)},"
                    f"{_fmt(est.error)},{_fmt(est.ci_low)},{_fmt(est.ci_high)}"
                )
    _write_atomic(args.out, lines)
    return 0


def run_sv(args) -> int:
    """Stochastic-volatility price-error table over rho x asset x variance x dt."""
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    levels = _require(cfg.levels, "levels", "sv")
    ref_level = _require(cfg.ref_level, "ref_level", "sv")
    mu = _require(cfg.mu, "mu", "sv")
    s0 = _require(cfg.s0, "s0", "sv")
    rhos = _require(cfg.rhos, "rho", "sv")
    asset_schemes = _require(cfg.asset_schemes, "asset_schemes", "sv")
    _check_ref_level(levels, ref_level)
    grids = [_level_grid(level, cfg.params.T) for level in levels]
    grids.append(_level_grid(ref_level, cfg.params.T))
    _refuse_invalid(cfg, cfg.schemes, grids)

    results = {}
    for rho in rhos:
        try:
            sv = SvParams(cev=cfg.params, mu=mu, rho=rho, s0=s0, p=cfg.p)
        except ValueError as exc:
            raise ConfigError(f"invalid stochastic-volatility parameters: {exc}")
        for var_scheme in cfg.schemes:
            profile = sv_profile(
                sv, asset_schemes, var_scheme, levels, ref_level,
                cfg.m_batches, cfg.l_paths, cfg.seed,
                config=_scheme_config_for(cfg, var_scheme),
                timing=cfg.timing, workers=cfg.workers, coupling=cfg.coupling,
            )
            for (asset, level), est in profile.items():
                results[(rho, asset, var_scheme, level)] = est

    lines = [SV_HEADER]
    for rho in rhos:
        for asset in asset_schemes:
            for var_scheme in cfg.schemes:
                for level in levels:
                    est = results[(rho, asset, var_scheme, level)]
                    lines.append(
                        f"{_fmt(rho)},{asset.value},{var_scheme.value},"
                        f"{_fmt(est.dt)},{_fmt(est.error)},{_fmt(est.ci_low)},"
                        f"{_fmt(est.ci_high)},{_fmt(est.seconds_per_path)}"
                    )
    _write_atomic(args.out, lines)
    return 0


def _log2_or_neg_inf(value: float) -> float:
    return math.log2(value) if value > 0.0 else -math.inf


def run_plotdata(args) -> int:
    """Transform a converge CSV into log2-log2 coordinates for plotting."""
    try:
        with open(args.input_csv, encoding="utf-8") as handle:
            rows = handle.read().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read input CSV {args.input_csv!r}: {exc}")
    if not rows:
        raise CliError(f"{args.input_csv}: line 1: empty file, expected header "
                       f"{CONVERGE_HEADER!r}")
    if rows[0] != CONVERGE_HEADER:
        raise CliError(
            f"{args.input_csv}: line 1: expected header {CONVERGE_HEADER!r}, "
            f"got {rows[0]!r}"
        )
    lines = [PLOTDATA_HEADER]
    for lineno, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        fields = row.split(",")
        if len(fields) != 6:
            raise CliError(
                f"{args.input_csv}: line {lineno}: expected 6 fields, "
                f"got {len(fields)}"
            )
        scheme, *numbers = fields
        try:
            dt, error, ci_low, ci_high, _ = (float(x) for x in numbers)
        except ValueError as exc:
            raise CliError(f"{args.input_csv}: line {lineno}: {exc}")
        if dt <= 0.0:
            raise CliError(
                f"{args.input_csv}: line {lineno}: dt must be positive, got {dt!r}"
            )
        lines.append(
            f"{scheme},{_fmt(math.log2(dt))},{_fmt(_log2_or_neg_inf(error))},"
            f"{_fmt(_log2_or_neg_inf(ci_low))},{_fmt(_log2_or_neg_inf(ci_high))}"
        )
    _write_atomic(args.out, lines)
    return 0


def _apply_overrides(cfg: ExperimentConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise CliError(f"--workers must be >= 1, got {args.workers}")
        cfg.workers = args.workers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cevsim",
        description="Benchmark harness for mean-reverting CEV schemes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, needs_out: bool) -> None:
        p.add_argument("--config", required=True, help="flat key=value config file")
        if needs_out:
            p.add_argument("--out", required=True, help="output CSV path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--workers", type=int, default=None,
                       help="override the config worker count")

    p = sub.add_parser("validate",
                       help="print the scheme applicability table")
    add_common(p, needs_out=False)
    p.set_defaults(func=run_validate)

    p = sub.add_parser("converge",
                       help="strong errors vs a fine reference, plus order fits")
    add_common(p, needs_out=True)
    p.set_defaults(func=run_converge)

    p = sub.add_parser("distance",
                       help="terminal distances between schemes on shared paths")
    add_common(p, needs_out=True)
    p.set_defaults(func=run_distance)

    p = sub.add_parser("sv",
                       help="stochastic-volatility price errors")
    add_common(p, needs_out=True)
    p.set_defaults(func=run_sv)

    p = sub.add_parser("plotdata",
                       help="transform a converge CSV to log2-log2 points")
    p.add_argument("input_csv", help="CSV produced by the converge command")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=run_plotdata)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CliError, AlfNonconvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
