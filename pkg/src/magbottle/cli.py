"""Batch command-line interface orchestrating the pipelines.

Five subcommands cover the workflows end to end: ``normalize`` builds a
normal form and serializes it, ``section`` compares numerically integrated
surface-of-section crossings against theoretical level sets, ``asymptotics``
scans remainder norms over (r, delta E), ``bifurcation`` locates equatorial
resonances on the series and numerically, and ``chaos-threshold`` estimates
the 1:1 transition energy both ways.

Every run directory is self-describing: the validated configuration is
persisted verbatim to ``run_config.json``, its SHA-256 is embedded in every
output header, and re-running with ``--config run_config.json`` reproduces
byte-identical JSON and CSV outputs.  Exit codes: 0 on success, 2 on a
configuration error, 3 on a computation error (the error name goes to
stderr).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .analysis import (
    DEFAULT_DELTA_E_GRID,
    bifurcation_energy,
    capture_remainder_profile,
    chaos_threshold_convergence,
    optimal_order_scan,
)
from .dynamics import numerical_bifurcation_energy, poincare_section
from .errors import (
    InvalidFrequencyError,
    MissingQuadraticError,
    ModeError,
    NonPolynomialError,
    ParseError,
    UnsupportedPotentialError,
)
from .invariants import GridSpec, back_transform, level_set_components, section_levels
from .model import (
    build_builtin_model,
    complexify_nonresonant,
    parse_potential,
    prepare_resonant,
)
from .normform import normalize
from .polyalg import to_records

SCHEMA = "magbottle/1"

#: errors that mean the request was malformed rather than the computation
#: failing; they map to exit code 2
_CONFIG_ERRORS = (
    ParseError,
    NonPolynomialError,
    MissingQuadraticError,
    UnsupportedPotentialError,
    InvalidFrequencyError,
    ModeError,
    FileNotFoundError,
)


class ConfigError(Exception):
    """Invalid run configuration (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    """One validated batch request; persisted verbatim for provenance.

    Fields not used by the requested subcommand stay at their defaults so
    a persisted config can be replayed without special-casing.
    """

    subcommand: str
    potential: str | None = None
    mode: str = "nonres"
    m1: int = 2
    m2: int = 1
    order: int = 5
    trunc: int | None = None
    locator_order: int = 8
    energies: tuple = (0.2,)
    delta_e: tuple | None = None
    beta: float = 0.0
    order_cap: int = 20
    seed_file: str | None = None
    out: str = "magbottle_out"
    threads: int = 1
    grid_n: int = 400
    n_crossings: int = 60
    pairs: tuple = ((3, 1), (2, 1))
    order_min: int = 10
    order_max: int = 10
    numeric: bool = True
    tol: float = 1e-11

    def validate(self):
        if self.mode not in ("nonres", "res"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "res" and (self.m1 < 1 or self.m2 < 1):
            raise ConfigError("resonant mode needs m1 >= 1 and m2 >= 1")
        if self.order < 0:
            raise ConfigError("--order must be >= 0")
        if self.trunc is not None and self.trunc < max(self.order, 1):
            raise ConfigError("--trunc must be at least max(order, 1)")
        if self.order_cap < 2:
            raise ConfigError("--order-cap must be >= 2")
        if not self.energies or any(E <= 0.0 for E in self.energies):
            raise ConfigError("energies must be positive")
        if self.delta_e is not None and any(d <= 0.0 for d in self.delta_e):
            raise ConfigError("--delta-e values must be positive")
        if not 0 < self.order_min <= self.order_max:
            raise ConfigError("need 0 < order-min <= order-max")
        if self.grid_n < 16:
            raise ConfigError("--grid-n must be >= 16")
        if self.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return self

    def canonical_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


# ------------------------------------------------------------- serialization


def _write_json(path: Path, payload: dict, config_hash: str):
    body = {"schema": SCHEMA, "config_sha256": config_hash}
    body.update(payload)
    path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, columns, rows, config_hash: str):
    lines = [f"# schema={SCHEMA} config_sha256={config_hash}", ",".join(columns)]
    for row in rows:
        lines.append(
            ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row)
        )
    path.write_text("\n".join(lines) + "\n")


def _load_seeds(config: RunConfig):
    if config.seed_file is None:
        raise ConfigError("this subcommand needs --seed-file")
    seeds = []
    for line in Path(config.seed_file).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ConfigError(f"seed line {line!r} is not 'z p_z'")
        seeds.append((float(parts[0]), float(parts[1])))
    return seeds


# -------------------------------------------------------------- construction


def _load_potential(config: RunConfig):
    if config.potential is None:
        return build_builtin_model()
    return parse_potential(Path(config.potential).read_text())


def _prepare(config: RunConfig, spec):
    """Prepared Hamiltonian for the requested mode.

    The resonant mode chains a nonresonant locator run: normalize to
    ``locator_order``, solve the resonance condition on its series, and
    detune the quadratic at the resulting (I1*, omega1*, omega2*).
    Returns (prepared, bifurcation-or-None).
    """
    if config.mode == "nonres":
        return complexify_nonresonant(spec), None
    locator = normalize(
        complexify_nonresonant(spec),
        r_max=config.locator_order,
        r_trunc=config.locator_order + 1,
    )
    bif = bifurcation_energy(locator, config.m1, config.m2)
    prepared = prepare_resonant(
        spec,
        config.m1,
        config.m2,
        I1_star=bif.I1_star,
        omega1=bif.omega1,
        omega2=bif.omega2,
    )
    return prepared, bif


def _bifurcation_dict(bif):
    return {
        "m1": bif.m1,
        "m2": bif.m2,
        "I1_star": bif.I1_star,
        "omega1": bif.omega1,
        "omega2": bif.omega2,
        "energy": bif.energy,
    }


# ---------------------------------------------------------------- subcommands


def cmd_normalize(config: RunConfig, out: Path, config_hash: str):
    spec = _load_potential(config)
    prepared, bif = _prepare(config, spec)
    trunc = config.trunc if config.trunc is not None else max(config.order + 1, 1)
    state = normalize(prepared, r_max=config.order, r_trunc=trunc)
    meta = {
        "mode": prepared.mode,
        "order": state.r,
        "trunc": state.r_trunc,
        "omega10": prepared.omega10,
    }
    if bif is not None:
        meta["resonance"] = _bifurcation_dict(bif)
    _write_json(
        out / "normalform.json",
        dict(meta, terms=to_records(state.normal_form)),
        config_hash,
    )
    _write_json(
        out / "generators.json",
        dict(meta, generators=[to_records(chi) for chi in state.generators]),
        config_hash,
    )
    _write_json(
        out / "remainder.json",
        dict(meta, terms=to_records(state.remainder)),
        config_hash,
    )


def cmd_section(config: RunConfig, out: Path, config_hash: str):
    spec = _load_potential(config)
    seeds = _load_seeds(config)
    if not seeds:
        print("seed file is empty; nothing to integrate", file=sys.stderr)
        return
    prepared, _bif = _prepare(config, spec)
    trunc = config.trunc if config.trunc is not None else max(config.order + 1, 1)
    state = normalize(prepared, r_max=config.order, r_trunc=trunc)
    integral = back_transform(state)
    for E in config.energies:
        tag = f"E{E:g}"
        sect = poincare_section(
            seeds, E, config.n_crossings, tol=config.tol, potential=spec
        )
        _write_csv(
            out / f"numeric_{tag}.csv",
            ("seed_id", "z", "p_z", "t"),
            [(int(i), z, pz, t) for i, z, pz, t in sect.points],
            config_hash,
        )
        grid = GridSpec.from_energy(E, config.grid_n)
        levels = section_levels(integral, E, seeds, grid=grid, potential=spec)
        field = levels[0]
        rows = []
        for i, z in enumerate(field.z_axis):
            for j, pz in enumerate(field.pz_axis):
                rows.append(
                    (
                        float(z),
                        float(pz),
                        float(field.values[i, j]),
                        int(field.valid[i, j]),
                    )
                )
        _write_csv(
            out / f"theoretical_{tag}_r{state.r}.csv",
            ("z", "p_z", "phi", "valid"),
            rows,
            config_hash,
        )
        per_seed = []
        for level in levels:
            components = level_set_components(level)
            per_seed.append(
                {
                    "seed": list(level.seed),
                    "level": level.level,
                    "islands": sum(1 for c in components if not c.encircles_center),
                    "rings": sum(1 for c in components if c.encircles_center),
                }
            )
        _write_json(
            out / f"levels_{tag}.json",
            {"energy": E, "order": state.r, "levels": per_seed},
            config_hash,
        )


def cmd_asymptotics(config: RunConfig, out: Path, config_hash: str):
    spec = _load_potential(config)
    prepared, bif = _prepare(config, spec)
    profile = capture_remainder_profile(prepared, N=config.order_cap)
    grid = config.delta_e if config.delta_e is not None else DEFAULT_DELTA_E_GRID
    rows = []
    fits = {}
    for E in config.energies:
        if len(grid) == 1:
            dE = grid[0]
            for r in profile.orders:
                value = profile.norm(r, profile.N, E, dE, config.beta)
                rows.append(
                    (prepared.mode, E, config.beta, dE, int(r), profile.N, value)
                )
            print(
                f"single delta-E value at E={E:g}: curve written, fits skipped",
                file=sys.stderr,
            )
            continue
        table, fit = optimal_order_scan(
            profile, E, beta=config.beta, delta_E_grid=grid
        )
        rows.extend(
            (prepared.mode, E, config.beta, dE, r, N, value)
            for dE, r, N, value in table.rows
        )
        fits[f"{E:g}"] = {
            "alpha": fit.alpha,
            "alpha_rms": fit.alpha_rms,
            "d": fit.d,
            "d_rms": fit.d_rms,
            "delta_E_0": fit.delta_E_0,
            "fit_max": fit.fit_max,
            "r_opt": {f"{dE:.6e}": r for dE, r in sorted(fit.r_opt.items())},
            "optimal_norms": {
                f"{dE:.6e}": v for dE, v in sorted(fit.optimal_norms.items())
            },
        }
    _write_csv(
        out / "asymptotics.csv",
        ("mode", "E", "beta", "deltaE", "r", "N", "norm"),
        rows,
        config_hash,
    )
    if fits:
        payload = {"mode": prepared.mode, "fits": fits}
        if bif is not None:
            payload["resonance"] = _bifurcation_dict(bif)
        _write_json(out / "fits.json", payload, config_hash)


def cmd_bifurcation(config: RunConfig, out: Path, config_hash: str):
    spec = _load_potential(config)
    locator = normalize(
        complexify_nonresonant(spec),
        r_max=config.locator_order,
        r_trunc=config.locator_order + 1,
    )
    results = []
    for m1, m2 in config.pairs:
        bif = bifurcation_energy(locator, m1, m2)
        entry = dict(_bifurcation_dict(bif), order=locator.r)
        if config.numeric:
            entry["numeric_energy"] = numerical_bifurcation_energy(
                m1, m2, potential=spec
            )
        results.append(entry)
    _write_json(out / "bifurcations.json", {"bifurcations": results}, config_hash)


def cmd_chaos_threshold(config: RunConfig, out: Path, config_hash: str):
    spec = _load_potential(config)
    payload = {}
    reference = None
    if config.numeric:
        reference = numerical_bifurcation_energy(1, 1, potential=spec)
        payload["numeric_E_t"] = reference
    state = normalize(
        complexify_nonresonant(spec),
        r_max=config.order_max,
        r_trunc=max(config.order_max, 1),
    )
    table = chaos_threshold_convergence(
        state, range(config.order_min, config.order_max + 1), reference_energy=reference
    )
    payload["reference"] = reference
    payload["table"] = [
        {"r": r, "energy": energy, "error": error} for r, energy, error in table
    ]
    _write_json(out / "chaos_threshold.json", payload, config_hash)


_COMMANDS = {
    "normalize": cmd_normalize,
    "section": cmd_section,
    "asymptotics": cmd_asymptotics,
    "bifurcation": cmd_bifurcation,
    "chaos-threshold": cmd_chaos_threshold,
}


# --------------------------------------------------------------------- parser


def _add_common(sub):
    sub.add_argument("--out", default="magbottle_out", help="output directory")
    sub.add_argument(
        "--potential",
        default=None,
        help="potential definition file (default: builtin magnetic bottle)",
    )
    sub.add_argument(
        "--threads",
        type=int,
        default=1,
        help="reserved for internal parallelism; recorded in run_config.json",
    )
    sub.add_argument(
        "--seed-file",
        default=None,
        help="text file of 'z p_z' section seeds, one per line, # comments",
    )
    sub.add_argument("--tol", type=float, default=1e-11, help="integrator tolerance")


def _add_mode(sub):
    sub.add_argument(
        "--mode", choices=("nonres", "res"), default="nonres", help="normal-form mode"
    )
    sub.add_argument("--m1", type=int, default=2, help="resonance numerator")
    sub.add_argument("--m2", type=int, default=1, help="resonance denominator")
    sub.add_argument(
        "--locator-order",
        type=int,
        default=8,
        help="nonresonant order used to locate the resonance (res mode)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magbottle",
        description=__doc__.split("\n\n")[0],
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--config",
        default=None,
        help="replay a persisted run_config.json (overrides the subcommand line)",
    )
    subs = parser.add_subparsers(dest="subcommand")

    p = subs.add_parser("normalize", help="build and serialize a normal form")
    _add_common(p)
    _add_mode(p)
    p.add_argument("--order", type=int, default=5, help="normalization order r")
    p.add_argument(
        "--trunc", type=int, default=None, help="truncation order (default order+1)"
    )

    p = subs.add_parser(
        "section", help="numeric crossings vs theoretical level sets"
    )
    _add_common(p)
    _add_mode(p)
    p.add_argument("--order", type=int, default=5, help="normalization order r")
    p.add_argument("--trunc", type=int, default=None)
    p.add_argument(
        "--energy",
        type=float,
        action="append",
        dest="energies",
        help="section energy (repeatable; default 0.1)",
    )
    p.add_argument("--n-crossings", type=int, default=60)
    p.add_argument("--grid-n", type=int, default=400, help="level-set grid resolution")

    p = subs.add_parser("asymptotics", help="remainder-norm scan and fits")
    _add_common(p)
    _add_mode(p)
    p.add_argument(
        "--order-cap", type=int, default=20, help="truncation cap N of the scan"
    )
    p.add_argument(
        "--energy",
        type=float,
        action="append",
        dest="energies",
        help="scan energy (repeatable; default 0.2)",
    )
    p.add_argument("--beta", type=float, default=0.0, help="magnetic moment parameter")
    p.add_argument(
        "--delta-e",
        type=float,
        action="append",
        dest="delta_e",
        help="delta-E value (repeatable; default log grid 1e-5..1e-1)",
    )

    p = subs.add_parser(
        "bifurcation", help="equatorial resonance energies, series and numeric"
    )
    _add_common(p)
    p.add_argument(
        "--pair",
        action="append",
        dest="pairs",
        help="resonance m1:m2 (repeatable; default 3:1 and 2:1)",
    )
    p.add_argument(
        "--locator-order", type=int, default=8, help="series order for the solve"
    )
    p.add_argument(
        "--no-numeric",
        action="store_false",
        dest="numeric",
        help="skip the monodromy-based numerical counterpart",
    )

    p = subs.add_parser(
        "chaos-threshold", help="1:1 transition energy, numeric and per order"
    )
    _add_common(p)
    p.add_argument("--order-min", type=int, default=10)
    p.add_argument("--order-max", type=int, default=10)
    p.add_argument(
        "--no-numeric",
        action="store_false",
        dest="numeric",
        help="skip the monodromy bisection",
    )

    return parser


def _parse_pairs(raw):
    pairs = []
    for item in raw:
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigError(f"--pair wants m1:m2, got {item!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ConfigError(f"--pair wants integers, got {item!r}") from None
    return tuple(pairs)


def _config_from_args(args) -> RunConfig:
    if args.subcommand is None:
        raise ConfigError("no subcommand given (see --help)")
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    values = {"subcommand": args.subcommand}
    for key, value in vars(args).items():
        if key not in fields or value is None:
            continue
        values[key] = value
    if values.get("pairs") is not None and args.subcommand == "bifurcation":
        raw = vars(args).get("pairs")
        values["pairs"] = _parse_pairs(raw) if raw else ((3, 1), (2, 1))
    if "energies" in values:
        values["energies"] = tuple(values["energies"])
    elif args.subcommand == "section":
        values["energies"] = (0.1,)
    if values.get("delta_e") is not None:
        values["delta_e"] = tuple(values["delta_e"])
    return RunConfig(**values)


def _config_from_file(path: str) -> RunConfig:
    raw = json.loads(Path(path).read_text())
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("energies", "delta_e", "pairs"):
        if raw.get(key) is not None:
            raw[key] = tuple(
                tuple(v) if isinstance(v, list) else v for v in raw[key]
            )
    return RunConfig(**raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            config = _config_from_file(args.config)
        else:
            config = _config_from_args(args)
        config.validate()
    except _CONFIG_ERRORS + (ConfigError,) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.json").write_text(config.canonical_json())
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            _COMMANDS[config.subcommand](config, out, config.sha256())
    except _CONFIG_ERRORS + (ConfigError,) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # computation failure: name the error for scripts
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
