"""Command-line front end: YAML config plus flag overrides, CSV/JSON bundles.

Exit codes: 0 ok, 2 config error, 3 solver failure, 4 a requested verdict failed.
The default output root is taken from ``XADM_OUTPUT_ROOT`` (else ``./xadm-out``).
"""
from __future__ import annotations

import csv
import json
import logging
import os
import struct
import sys
from pathlib import Path
from typing import Literal

import click
import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError, DomainError, LimitNotResolved, ParameterError, SolverError, XadmError

log = logging.getLogger("xadm")

ENV_OUTPUT_ROOT = "XADM_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERDICT = 0, 2, 3, 4
VERDICT_NAMES = ("positivity", "monotonicity", "rigidity", "coarea", "boundary")


# ---------------------------------------------------------------------------
# config schema


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PresetSpec(_Strict):
    name: str
    params: dict[str, float | bool] = Field(default_factory=dict)


class DriftSpec(_Strict):
    name: str = "auto"
    params: dict[str, float] = Field(default_factory=dict)


class SolverSpec(_Strict):
    path: Literal["auto", "radial", "grid"] = "auto"
    grid_n: int = Field(64, ge=16, le=256)
    grid_r_out: float = Field(12.0, gt=0)


class TGridSpec(_Strict):
    n: int = Field(48, ge=3)
    lo: float = Field(0.05, gt=0)
    hi: float = Field(500.0, gt=0)
    values: list[float] | None = None

    def grid(self) -> np.ndarray:
        if self.values:
            return np.array(sorted(self.values), float)
        if self.hi <= self.lo:
            raise ConfigError("t_grid.hi must exceed t_grid.lo")
        return np.geomspace(self.lo, self.hi, self.n)


class RadiusSpec(_Strict):
    r_min: float = Field(10.0, gt=0)
    r_max: float = Field(1000.0, gt=0)
    per_decade: int = Field(8, ge=1)


class Tolerances(_Strict):
    mono_c: float = 10.0
    zero: float = 1e-2
    limit_rel: float = 1e-2
    mass: float = 1e-6
    coarea_rel: float = 1e-3
    rigidity_vector: float = 1e-4
    rigidity_scalar: float = 1e-3


class OutputSpec(_Strict):
    dir: str | None = None
    mesh_t: list[float] = Field(default_factory=list)
    dump_u: bool = False


class RunConfig(_Strict):
    chart: PresetSpec
    drift: DriftSpec = Field(default_factory=DriftSpec)
    k: float | None = None
    solver: SolverSpec = Field(default_factory=SolverSpec)
    t_grid: TGridSpec = Field(default_factory=TGridSpec)
    radii: RadiusSpec = Field(default_factory=RadiusSpec)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    verdicts: list[str] = Field(default_factory=lambda: ["auto"])
    output: OutputSpec = Field(default_factory=OutputSpec)
    seed: int = 0

    @field_validator("verdicts")
    @classmethod
    def _known(cls, v):
        bad = [x for x in v if x not in VERDICT_NAMES + ("auto", "all")]
        if bad:
            raise ValueError(f"unknown verdicts {bad}; choose from {list(VERDICT_NAMES)} or auto/all")
        return v


def _format_validation(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())


def _set_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def build_config(path: str | None, overrides: dict) -> RunConfig:
    """Load the YAML file (if any) and apply dotted-path overrides; flags win."""
    raw: dict = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
    for key, value in overrides.items():
        if value is not None:
            _set_path(raw, key, value)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc


def output_dir(cfg: RunConfig) -> Path:
    if cfg.output.dir:
        return Path(cfg.output.dir)
    root = Path(os.environ.get(ENV_OUTPUT_ROOT, "xadm-out"))
    return root / cfg.chart.name


def embedded_config(cfg: RunConfig) -> dict:
    d = cfg.model_dump(mode="json")
    d["output"]["dir"] = None  # reruns choose their own directory
    return d


# ---------------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    from .theorem_checks import _jsonable

    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


F_COLUMNS = ["t", "F", "term_linear", "term_grad2", "term_H", "term_X", "area", "XM", "willmore_residual"]
U_MAGIC = b"XADMU001"


def dump_u(u, path: Path) -> dict:
    """Little-endian float64 dump.

    Grid: header magic, n (uint32), origin (3 x f64), h (f64), then n^3 node
    values of u in C order.  Radial: magic, count (uint32), then rows
    (r, 1 - u, d(1 - u)/dr) on a log-spaced radius table.
    """
    with open(path, "wb") as fh:
        fh.write(U_MAGIC)
        if u.kind == "grid":
            g = u.grid
            vals = np.ascontiguousarray(g.node_u, dtype="<f8")
            fh.write(struct.pack("<I4d", g.n, *map(float, g.origin), float(g.h)))
            fh.write(vals.tobytes())
            meta = {"layout": "grid", "n": g.n, "origin": list(map(float, g.origin)), "h": float(g.h),
                    "order": "C (x slowest)", "dtype": "<f8", "header_bytes": 8 + 4 + 32}
        else:
            r = np.geomspace(u.r_range[0], min(u.r_range[1], 1e6), 2001)
            rows = np.stack([r, u.v_r(r), u.dv_r(r)], axis=1).astype("<f8")
            fh.write(struct.pack("<I", rows.shape[0]))
            fh.write(rows.tobytes())
            meta = {"layout": "radial", "rows": int(rows.shape[0]), "columns": ["r", "v", "dv_dr"],
                    "dtype": "<f8", "header_bytes": 8 + 4}
    meta.update(magic=U_MAGIC.decode(), B=u.B, A=u.A, solver_residual=u.solver_residual)
    return meta


# ---------------------------------------------------------------------------
# pipeline


class Context:
    """Lazily built pieces of one run, shared by the subcommands."""

    def __init__(self, cfg: RunConfig):
        from .presets import get_preset, make_drift

        self.cfg = cfg
        self.inst = get_preset(cfg.chart.name, **cfg.chart.params)
        self.X = make_drift(cfg.drift.name, self.inst, **cfg.drift.params)
        self.k = self.inst.default_k if cfg.k is None else cfg.k
        self.out = output_dir(cfg)
        self._u = None
        self._mass = None

    @property
    def chart(self):
        return self.inst.chart

    @property
    def has_boundary(self) -> bool:
        return self.chart.boundary_radius is not None

    def potential(self):
        if self._u is None:
            from .theorem_checks import solve_potential

            s = self.cfg.solver
            log.info("solving for the potential (%s path)", s.path)
            self._u = solve_potential(self.chart, self.X, s.path, grid_n=s.grid_n, grid_r_out=s.grid_r_out)
        return self._u

    def radii(self) -> np.ndarray:
        from .mass_functionals import sweep_radii

        r = self.cfg.radii
        return sweep_radii(r.r_min, r.r_max, r.per_decade)

    def mass(self):
        if self._mass is None:
            from .mass_functionals import x_adm_mass

            self._mass = x_adm_mass(self.chart, self.X, self.radii())
        return self._mass

    def prepare(self):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.yaml").write_text(yaml.safe_dump(embedded_config(self.cfg), sort_keys=True))

    def write_mass(self) -> dict:
        from .mass_functionals import total_charge

        m = self.mass()
        write_csv(self.out / "mass.csv", ["r", "m_X_r", "abs_diff_from_limit"], m.table())
        summary = {"m_X": m.extrapolated, "kind": m.kind, "fit_residual": m.residual, "model": m.model}
        if self.inst.charge_field is not None:
            q = total_charge(self.inst.charge_field, self.radii())
            write_csv(self.out / "charge.csv", ["r", "Q_r", "abs_diff_from_limit"], q.table())
            summary["charge"] = q.extrapolated
        return summary

    def write_F(self, samples, skipped) -> None:
        write_csv(self.out / "F.csv", F_COLUMNS, ([s.as_row()[c] for c in F_COLUMNS] for s in samples))
        write_csv(self.out / "skipped_levels.csv", ["t", "reason"], ((d["t"], d["reason"]) for d in skipped))

    def write_potential(self) -> dict:
        u = self.potential()
        info = {"kind": u.kind, "B": u.B, "A": u.A, "tau": u.tau, "solver_residual": u.solver_residual,
                "regular_threshold": u.regular_threshold}
        if self.cfg.output.dump_u:
            info["dump"] = dump_u(u, self.out / "u.bin")
            write_json(self.out / "u.json", info["dump"])
        for t in self.cfg.output.mesh_t:
            from .level_set_flow import extract_level, write_mesh

            s = extract_level(u, float(t), with_mesh=True)
            write_mesh(s, self.out / f"level_t{float(t):.6g}.mesh")
        return info

    def resolve_verdicts(self) -> list[str]:
        req = self.cfg.verdicts
        if "all" in req:
            if self.has_boundary:
                return ["boundary", "positivity"]
            pole_radial = self.potential().kind != "grid"
            return ["positivity", "rigidity"] + (["coarea"] if pole_radial else [])
        if "auto" in req:
            return ["boundary"] if self.has_boundary else ["positivity"]
        return list(dict.fromkeys(req))

    def run_verdicts(self, names) -> tuple[list, list, list]:
        from . import theorem_checks as tc

        tol = self.cfg.tolerances
        out, samples, skipped = [], [], []
        for name in names:
            log.info("verdict: %s", name)
            if name == "positivity":
                res = tc.positivity_verdict(self.chart, self.X, self.k, self.cfg.solver.path,
                                            self.cfg.t_grid.grid(), self.radii(), tol.mono_c, tol.zero,
                                            tol.limit_rel, tol.mass, grid_n=self.cfg.solver.grid_n,
                                            grid_r_out=self.cfg.solver.grid_r_out)
                self._u, self._mass = res.potential, res.mass
                samples, skipped = res.samples, res.skipped
                out.extend([res.verdict] + res.sub_verdicts)
            elif name == "monotonicity":
                from .level_set_flow import sample_F

                u = self.potential()
                samples, skipped = sample_F(u, self.cfg.t_grid.grid())
                out.append(tc.monotonicity_check(samples, u.solver_residual, tol.mono_c))
            elif name == "rigidity":
                out.append(tc.rigidity_verdict(self.potential(), tol.rigidity_vector, tol.rigidity_scalar,
                                               self.mass().extrapolated, tol.mass))
            elif name == "coarea":
                out.append(tc.coarea_crosscheck(self.potential(), rel_tol=tol.coarea_rel))
            elif name == "boundary":
                out.append(tc.boundary_variant(self.chart, self.X, self.k, self.radii()))
        return out, samples, skipped

    def verdict_report(self, verdicts, requested) -> dict:
        return {"chart": self.cfg.chart.name, "drift": self.X.name, "k": self.k,
                "requested": requested, "all_passed": all(v.passed for v in verdicts),
                "verdicts": [v.to_json() for v in verdicts]}


# ---------------------------------------------------------------------------
# click commands


def _common(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML run config."),
        click.option("--chart", help="Chart preset name."),
        click.option("--m", type=float, help="Shortcut for chart parameter m."),
        click.option("--q", type=float, help="Shortcut for chart parameter q."),
        click.option("--r0", type=float, help="Shortcut for chart parameter r0."),
        click.option("--param", "params", multiple=True, metavar="KEY=VALUE", help="Any chart parameter."),
        click.option("--drift", help="Drift preset (auto uses the chart's own)."),
        click.option("--k", type=float, help="Exponent k of the curvature hypothesis."),
        click.option("--path", type=click.Choice(["auto", "radial", "grid"]), help="Solver path."),
        click.option("--grid-n", type=int, help="Grid resolution per axis."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("-v", "--verbose", is_flag=True, help="Progress logging on stderr."),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"--param value {text!r} is not a number or boolean") from exc


def _overrides(kw) -> dict:
    o = {"chart.name": kw.get("chart"), "drift.name": kw.get("drift"), "k": kw.get("k"),
         "solver.path": kw.get("path"), "solver.grid_n": kw.get("grid_n"), "output.dir": kw.get("out")}
    for name in ("m", "q", "r0"):
        if kw.get(name) is not None:
            o[f"chart.params.{name}"] = kw[name]
    for item in kw.get("params") or ():
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        o[f"chart.params.{key.strip()}"] = _parse_value(val.strip())
    return o


def _guarded(body):
    """Map library exceptions onto exit codes."""
    try:
        return body()
    except (ConfigError, ParameterError) as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except (SolverError, LimitNotResolved, DomainError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        diag = getattr(exc, "diagnostics", None) or getattr(exc, "history", None)
        if diag:
            click.echo(f"diagnostics: {diag}", err=True)
        return EXIT_SOLVER
    except XadmError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_SOLVER


def _context(kw) -> Context:
    if kw.get("verbose"):
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    cfg = build_config(kw.get("config_path"), _overrides(kw))
    return Context(cfg)


@click.group()
@click.version_option(package_name="artifact")
def cli():
    """Numerical checks for X-ADM masses and level-set monotonicity."""


@cli.command()
@_common
@click.option("--verdicts", "verdict_list", help="Comma list: positivity,monotonicity,rigidity,coarea,boundary,all.")
def run(verdict_list, **kw):
    """Full bundle: F curve, mass sweep, verdicts, optional dumps."""
    if verdict_list:
        kw["_verdicts"] = [v.strip() for v in verdict_list.split(",") if v.strip()]

    def body():
        cfg = build_config(kw.get("config_path"), _overrides(kw))
        if kw.get("_verdicts"):
            cfg = RunConfig.model_validate({**cfg.model_dump(), "verdicts": kw["_verdicts"]})
        if kw.get("verbose"):
            logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
        ctx = Context(cfg)
        ctx.prepare()
        names = ctx.resolve_verdicts()
        verdicts, samples, skipped = ctx.run_verdicts(names)
        if not samples:
            from .level_set_flow import sample_F

            samples, skipped = sample_F(ctx.potential(), cfg.t_grid.grid())
        ctx.write_F(samples, skipped)
        summary = {"mass": ctx.write_mass(), "potential": ctx.write_potential(),
                   "n_regular_levels": len(samples), "n_skipped_levels": len(skipped)}
        write_json(ctx.out / "summary.json", summary)
        report = ctx.verdict_report(verdicts, names)
        write_json(ctx.out / "verdicts.json", report)
        for v in verdicts:
            click.echo(f"{v.name:18s} {v.status:20s} margin={v.margin:.6g} tol={v.tolerance:.3g}")
        click.echo(f"m_X = {summary['mass']['m_X']:.12g}   bundle: {ctx.out}")
        return EXIT_OK if report["all_passed"] else EXIT_VERDICT

    sys.exit(_guarded(body))


@cli.command()
@_common
def mass(**kw):
    """Sphere-integral sweep of the mass (and the charge, when the preset has one)."""

    def body():
        ctx = _context(kw)
        ctx.prepare()
        s = ctx.write_mass()
        write_json(ctx.out / "mass.json", s)
        click.echo(f"m_X = {s['m_X']:.17g}" + (f"   Q = {s['charge']:.17g}" if "charge" in s else ""))
        return EXIT_OK

    sys.exit(_guarded(body))


@cli.command()
@_common
@click.option("--dump/--no-dump", default=True, help="Write the binary u dump.")
def potential(dump, **kw):
    """Solve for the Green potential and write its far-field constants."""

    def body():
        ctx = _context(kw)
        ctx.cfg.output.dump_u = dump
        ctx.prepare()
        info = ctx.write_potential()
        write_json(ctx.out / "potential.json", info)
        click.echo(f"B = {info['B']:.17g}   A = {info['A']:.17g}   ({info['kind']})")
        return EXIT_OK

    sys.exit(_guarded(body))


@cli.command()
@_common
def monotonicity(**kw):
    """F(t) on the t-grid and the monotonicity verdict only."""

    def body():
        ctx = _context(kw)
        ctx.prepare()
        verdicts, samples, skipped = ctx.run_verdicts(["monotonicity"])
        ctx.write_F(samples, skipped)
        write_json(ctx.out / "verdicts.json", ctx.verdict_report(verdicts, ["monotonicity"]))
        v = verdicts[0]
        click.echo(f"monotonicity {v.status}: worst step {v.margin:.6g}, tol {v.tolerance:.3g}")
        return EXIT_OK if v.passed else EXIT_VERDICT

    sys.exit(_guarded(body))


@cli.command()
@_common
def verify(**kw):
    """Every applicable verdict for the chart; exit 4 if any fails."""

    def body():
        ctx = _context(kw)
        ctx.prepare()
        names = ctx.resolve_verdicts() if ctx.cfg.verdicts != ["auto"] else None
        if names is None:
            ctx.cfg.verdicts = ["all"]
            names = ctx.resolve_verdicts()
        verdicts, _, _ = ctx.run_verdicts(names)
        report = ctx.verdict_report(verdicts, names)
        write_json(ctx.out / "verdicts.json", report)
        for v in verdicts:
            click.echo(f"{v.name:18s} {v.status:20s} margin={v.margin:.6g} tol={v.tolerance:.3g}")
        return EXIT_OK if report["all_passed"] else EXIT_VERDICT

    sys.exit(_guarded(body))


@cli.command("list-presets")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def list_presets_cmd(as_json):
    """Registered chart presets with parameter ranges and hypothesis metadata."""
    from .presets import list_presets

    rows = list_presets()
    if as_json:
        click.echo(json.dumps(rows, indent=2, default=str))
        return
    for r in rows:
        params = ", ".join(f"{k}={v['default']} [{v['min']}, {v['max']}]" for k, v in r["parameters"].items())
        click.echo(f"{r['name']:24s} path={r['default_path']:6s} hypotheses={r['hypotheses_expected']:8s} "
                   f"strong_decay={str(r['strong_decay']).lower():5s} {params}")
        click.echo(f"{'':24s} {r['description']}")


def main(argv=None):
    cli.main(args=argv, prog_name="xadm")


if __name__ == "__main__":
    main()
